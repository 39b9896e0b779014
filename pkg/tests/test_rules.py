from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from guardad.predicates import GroundAtom, PredicateCategory
from guardad.rules import (
    Constraint,
    DuplicateId,
    EmptyAllowedSet,
    HornRule,
    ParseError,
    RuleCatalog,
    SafetyState,
    UnknownReference,
    activate_rules,
    instantiate_constraints,
    parse_catalog,
)
from guardad.scene import Action

from conftest import SMALL_CATALOG_TEXT


class TestParseCatalog:
    def test_minimal_constraint(self):
        cat = parse_catalog('constraint C allow {Stop} severity 5 says "s"')
        assert len(cat.constraints) == 1
        c = cat.constraints[0]
        assert c.allowed == frozenset({Action.STOP})
        assert c.severity == 5
        assert c.template == "s"

    def test_small_catalog(self):
        cat = parse_catalog(SMALL_CATALOG_TEXT)
        assert {p.name for p in cat.predicates} >= {"Front_Center_Bicycle_Approach", "Solid_Red_Light"}
        assert {r.id for r in cat.horn_rules} == {"R_bike", "R_red", "R_ped"}
        assert {t.id for t in cat.temporal_rules} == {"T_persist", "T_count"}

    def test_unknown_predicate_reference(self):
        text = (
            'constraint C allow {Stop} severity 5 says "s"\n'
            "rule R: P_x => C\n"
        )
        with pytest.raises(UnknownReference):
            parse_catalog(text)

    def test_unknown_constraint_reference(self):
        text = (
            "predicate P : action(name=Stop)\n"
            "rule R: P => C_missing\n"
        )
        with pytest.raises(UnknownReference):
            parse_catalog(text)

    def test_empty_allowed_set(self):
        with pytest.raises(EmptyAllowedSet):
            parse_catalog('constraint C allow {} severity 5 says "s"')

    def test_duplicate_ids(self):
        text = (
            'constraint C allow {Stop} severity 5 says "s"\n'
            'constraint C allow {Stop} severity 4 says "t"\n'
        )
        with pytest.raises(DuplicateId):
            parse_catalog(text)

    def test_parse_error_carries_line_and_column(self):
        text = "predicate P : action(name=Stop)\npredicate Q ; action(name=Stop)\n"
        with pytest.raises(ParseError) as err:
            parse_catalog(text)
        assert err.value.line == 2
        assert err.value.col == 13

    def test_comments_and_blank_lines(self):
        text = (
            "# full-line comment\n"
            "\n"
            'constraint C allow {Stop} severity 5 says "has # inside"  # trailing\n'
        )
        cat = parse_catalog(text)
        assert cat.constraints[0].template == "has # inside"

    def test_bad_severity(self):
        with pytest.raises(ParseError):
            parse_catalog('constraint C allow {Stop} severity 9 says "s"')

    def test_unknown_declaration(self):
        with pytest.raises(ParseError):
            parse_catalog("axiom A: something")

    def test_temporal_negation_and_offsets(self):
        text = (
            'constraint C allow {Stop} severity 3 says "s"\n'
            "temporal T (w=-0.5): !C@-1 & C@-3 => C\n"
        )
        cat = parse_catalog(text)
        rule = cat.temporal_rules[0]
        assert rule.weight == -0.5
        assert rule.body[0].positive is False
        assert rule.body[1].offset == -3

    def test_positive_offset_rejected(self):
        text = (
            'constraint C allow {Stop} severity 3 says "s"\n'
            "temporal T (w=1.0): C@1 => C\n"
        )
        with pytest.raises(ParseError):
            parse_catalog(text)

    def test_empty_catalog_is_valid(self):
        cat = parse_catalog("")
        assert cat.predicates == () and cat.horn_rules == ()


class TestInstantiate:
    def test_cyclist_rule_from_documented_snippet(self, small_catalog):
        atoms = {GroundAtom("Front_Center_Bicycle_Approach", "e_bic", 5)}
        state = instantiate_constraints(atoms, small_catalog, 5)
        assert state.active == {"C_STOP_OR_DECEL"}
        allowed = small_catalog.constraint("C_STOP_OR_DECEL").allowed
        assert allowed == frozenset({Action.STOP, Action.DECELERATE})

    def test_empty_atoms_empty_state(self, small_catalog):
        state = instantiate_constraints(set(), small_catalog, 0)
        assert state.active == frozenset()

    def test_two_rules_same_consequent_yield_one_constraint(self, small_catalog):
        atoms = {
            GroundAtom("Front_Center_Bicycle_Approach", "e_bic", 2),
            GroundAtom("Solid_Red_Light", "e_light", 2),
        }
        state, fired = activate_rules(atoms, small_catalog, 2)
        assert state.active == {"C_STOP_OR_DECEL"}
        assert fired == ("R_bike", "R_red")

    def test_conjunction_requires_shared_entity(self, shipped_catalog):
        # Left_Region_Vehicle_Exists and Left_Vehicle_Approach on different
        # entities must not activate the left-blocked rule.
        split = {
            GroundAtom("Left_Region_Vehicle_Exists", "v1", 0),
            GroundAtom("Left_Vehicle_Approach", "v2", 0),
        }
        state = instantiate_constraints(split, shipped_catalog, 0)
        assert "C_LEFT_BLOCKED" not in state.active
        joint = {
            GroundAtom("Left_Region_Vehicle_Exists", "v1", 0),
            GroundAtom("Left_Vehicle_Approach", "v1", 0),
        }
        state = instantiate_constraints(joint, shipped_catalog, 0)
        assert "C_LEFT_BLOCKED" in state.active


def oracle_activation(atoms, catalog, t) -> SafetyState:
    """Exhaustive grounding over all (rule, entity-binding) pairs."""
    entity_ids = {a.entity_id for a in atoms} | {"__none__"}
    have = {(a.predicate, a.entity_id) for a in atoms}
    by_name = catalog.predicates_by_name
    active = set()
    for rule in catalog.horn_rules:
        for binding in entity_ids:
            ok = True
            for pname in rule.antecedent:
                if by_name[pname].category in (PredicateCategory.ACTION, PredicateCategory.ENVIRONMENT):
                    if not any(a.predicate == pname for a in atoms):
                        ok = False
                        break
                elif (pname, binding) not in have:
                    ok = False
                    break
            if ok:
                active.add(rule.consequent)
                break
    return SafetyState(t, frozenset(active))


@st.composite
def random_atom_sets(draw):
    preds = [f"P{i}" for i in range(6)]
    entities = [f"e{i}" for i in range(4)]
    n = draw(st.integers(0, 12))
    atoms = set()
    for _ in range(n):
        atoms.add(GroundAtom(draw(st.sampled_from(preds)), draw(st.sampled_from(entities)), 0))
    return atoms


@st.composite
def random_catalogs(draw):
    categories = [
        PredicateCategory.ACTION,
        PredicateCategory.ENVIRONMENT,
        PredicateCategory.TARGET_EXISTENCE,
    ]
    lines = []
    for i in range(6):
        cat = draw(st.sampled_from(categories))
        if cat is PredicateCategory.ACTION:
            lines.append(f"predicate P{i} : action(name=Stop)")
        elif cat is PredicateCategory.ENVIRONMENT:
            lines.append(f"predicate P{i} : environment(kind=TrafficLight)")
        else:
            lines.append(f"predicate P{i} : target_exists(region=Left, kind=Vehicle)")
    for c in range(3):
        lines.append(f'constraint C{c} allow {{Stop}} severity {c + 1} says "c{c}"')
    n_rules = draw(st.integers(1, 8))
    for r in range(n_rules):
        size = draw(st.integers(1, 3))
        ante = " & ".join(draw(st.sampled_from([f"P{i}" for i in range(6)])) for _ in range(size))
        head = draw(st.sampled_from(["C0", "C1", "C2"]))
        lines.append(f"rule R{r}: {ante} => {head}")
    return parse_catalog("\n".join(lines))


class TestGroundingProperties:
    @settings(max_examples=200, deadline=None)
    @given(random_catalogs(), random_atom_sets())
    def test_equivalent_to_exhaustive_grounder(self, catalog, atoms):
        got = instantiate_constraints(atoms, catalog, 0)
        assert got == oracle_activation(atoms, catalog, 0)

    @settings(max_examples=100, deadline=None)
    @given(random_catalogs(), random_atom_sets(), random_atom_sets())
    def test_monotone_in_evidence(self, catalog, atoms, more):
        base = instantiate_constraints(atoms, catalog, 0)
        grown = instantiate_constraints(atoms | more, catalog, 0)
        assert base.active <= grown.active

    @settings(max_examples=50, deadline=None)
    @given(random_catalogs(), random_atom_sets())
    def test_idempotent(self, catalog, atoms):
        first = instantiate_constraints(atoms, catalog, 0)
        second = instantiate_constraints(atoms, catalog, 0)
        assert first == second


class TestCatalogIntegrity:
    def test_programmatic_duplicate_detected(self):
        c = Constraint("C", frozenset({Action.STOP}), 3, "s")
        with pytest.raises(DuplicateId):
            RuleCatalog((), (c, c), (), ())

    def test_programmatic_unknown_reference(self):
        c = Constraint("C", frozenset({Action.STOP}), 3, "s")
        rule = HornRule("R", ("NoSuchPredicate",), "C")
        with pytest.raises(UnknownReference):
            RuleCatalog((), (c,), (rule,), ())

    def test_constraint_empty_allowed(self):
        with pytest.raises(EmptyAllowedSet):
            Constraint("C", frozenset(), 3, "s")
