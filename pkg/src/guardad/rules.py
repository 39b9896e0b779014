"""Rule catalog: the DSL, its parsed form, and Horn-rule constraint activation.

A catalog declares predicates, constraints (allowed-action sets with a
verbalization template), Horn rules (predicate conjunction on one entity
implies a constraint), and weighted temporal rules consumed by the
induction engine.  Catalogs are immutable once parsed.

DSL, one declaration per line, ``#`` starts a comment::

    predicate Front_Center_Bicycle_Approach : target_motion(region=FrontCenter, kind=Bicycle, trend=Approaching)
    predicate Solid_Red_Light : environment(kind=TrafficLight, signal=Red)
    constraint C_STOP_OR_DECEL allow {Stop, Decelerate} severity 4 says "Only actions that stop or decelerate are allowed."
    rule R_bike: Front_Center_Bicycle_Approach => C_STOP_OR_DECEL
    temporal T_persist (w=2.0): C_STOP_OR_DECEL@-1 & C_STOP_OR_DECEL@-2 => C_STOP_OR_DECEL
    temporal T_count  (w=1.5): count(C_PED_CAUTION >= 2 in last 4)       => C_PED_CAUTION

Temporal body atoms may be negated with ``!``.  Offsets count backward
from the current step; an offset that reaches past the live window simply
never holds, so one catalog stays valid for any window order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Optional, Union

from .predicates import GroundAtom, PredicateCategory, PredicateDef, PredicateIndex
from .scene import (
    Action,
    DistanceBand,
    EntityKind,
    MotionTrend,
    Region,
    SignalState,
)


class CatalogError(ValueError):
    """Base class for catalog parsing/validation failures."""


class ParseError(CatalogError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class UnknownReference(CatalogError):
    pass


class DuplicateId(CatalogError):
    pass


class EmptyAllowedSet(CatalogError):
    pass


@dataclass(frozen=True)
class Constraint:
    """A discrete safety constraint: which actions remain allowed while active."""

    id: str
    allowed: frozenset[Action]
    severity: int
    template: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "allowed", frozenset(self.allowed))
        if not self.allowed:
            raise EmptyAllowedSet(f"constraint {self.id!r} allows no action")
        if not 1 <= self.severity <= 5:
            raise CatalogError(f"constraint {self.id!r}: severity must be 1..5")


@dataclass(frozen=True)
class HornRule:
    """Predicate conjunction (one shared entity for target predicates) => constraint."""

    id: str
    antecedent: tuple[str, ...]
    consequent: str

    def __post_init__(self) -> None:
        if not self.antecedent:
            raise CatalogError(f"rule {self.id!r} has an empty antecedent")


@dataclass(frozen=True)
class AtOffset:
    """Body atom: constraint (in)active at a fixed negative step offset."""

    offset: int
    constraint: str
    positive: bool = True

    def __post_init__(self) -> None:
        if self.offset >= 0:
            raise CatalogError("temporal offsets must be negative")


@dataclass(frozen=True)
class CountAtLeast:
    """Body atom: constraint active in >= minimum of the last span states."""

    constraint: str
    minimum: int
    span: int

    def __post_init__(self) -> None:
        if self.minimum < 1 or self.span < 1:
            raise CatalogError("count atoms need minimum >= 1 and span >= 1")


BodyAtom = Union[AtOffset, CountAtLeast]


@dataclass(frozen=True)
class TemporalRule:
    """Weighted pattern over the recent constraint window supporting a head."""

    id: str
    weight: float
    head: str
    body: tuple[BodyAtom, ...]

    def __post_init__(self) -> None:
        if not self.body:
            raise CatalogError(f"temporal rule {self.id!r} has an empty body")


@dataclass(frozen=True)
class SafetyState:
    """Set of active constraint ids at one step."""

    t: int
    active: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "active", frozenset(self.active))

    @classmethod
    def empty(cls, t: int) -> "SafetyState":
        return cls(t, frozenset())

    def union(self, ids: Iterable[str]) -> "SafetyState":
        return SafetyState(self.t, self.active | set(ids))

    def sorted_ids(self) -> list[str]:
        return sorted(self.active)


# Categories whose atoms bind existentially (their own fixed entity) rather
# than through the rule's shared entity variable.
_LOOSE = frozenset({PredicateCategory.ACTION, PredicateCategory.ENVIRONMENT})


@dataclass(frozen=True)
class RuleCatalog:
    predicates: tuple[PredicateDef, ...]
    constraints: tuple[Constraint, ...]
    horn_rules: tuple[HornRule, ...]
    temporal_rules: tuple[TemporalRule, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "predicates", tuple(self.predicates))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "horn_rules", tuple(self.horn_rules))
        object.__setattr__(self, "temporal_rules", tuple(self.temporal_rules))
        self._check_integrity()
        object.__setattr__(self, "_index_cache", {})

    def _check_integrity(self) -> None:
        for name, items in (
            ("predicate", [p.name for p in self.predicates]),
            ("constraint", [c.id for c in self.constraints]),
            ("rule", [r.id for r in self.horn_rules]),
            ("temporal rule", [r.id for r in self.temporal_rules]),
        ):
            seen: set[str] = set()
            for item in items:
                if item in seen:
                    raise DuplicateId(f"duplicate {name} id {item!r}")
                seen.add(item)
        preds = {p.name for p in self.predicates}
        cons = {c.id for c in self.constraints}
        for r in self.horn_rules:
            for p in r.antecedent:
                if p not in preds:
                    raise UnknownReference(f"rule {r.id!r} references unknown predicate {p!r}")
            if r.consequent not in cons:
                raise UnknownReference(f"rule {r.id!r} references unknown constraint {r.consequent!r}")
        for tr in self.temporal_rules:
            if tr.head not in cons:
                raise UnknownReference(f"temporal rule {tr.id!r} references unknown constraint {tr.head!r}")
            for atom in tr.body:
                if atom.constraint not in cons:
                    raise UnknownReference(
                        f"temporal rule {tr.id!r} references unknown constraint {atom.constraint!r}"
                    )

    # -- lookups -----------------------------------------------------------

    @property
    def predicates_by_name(self) -> dict[str, PredicateDef]:
        return {p.name: p for p in self.predicates}

    @property
    def constraints_by_id(self) -> dict[str, Constraint]:
        return {c.id: c for c in self.constraints}

    def constraint(self, cid: str) -> Constraint:
        try:
            return self.constraints_by_id[cid]
        except KeyError:
            raise UnknownReference(f"unknown constraint id {cid!r}") from None

    @property
    def temporal_heads(self) -> tuple[str, ...]:
        return tuple(sorted({tr.head for tr in self.temporal_rules}))

    @property
    def environment_driven_constraints(self) -> frozenset[str]:
        """Constraints some Horn rule activates from an environment predicate."""
        by_name = self.predicates_by_name
        out = set()
        for r in self.horn_rules:
            if any(by_name[p].category is PredicateCategory.ENVIRONMENT for p in r.antecedent):
                out.add(r.consequent)
        return frozenset(out)

    def predicate_index(
        self, categories: Optional[frozenset[PredicateCategory]] = None
    ) -> PredicateIndex:
        cache: dict = self.__dict__["_index_cache"]
        key = categories
        if key not in cache:
            defs = self.predicates
            if categories is not None:
                defs = tuple(p for p in defs if p.category in categories)
            cache[key] = PredicateIndex(defs)
        return cache[key]

    @classmethod
    def empty(cls) -> "RuleCatalog":
        """Catalog with no rules: the guard never intervenes (unguarded baseline)."""
        return cls((), (), (), ())


def instantiate_constraints(atoms: set[GroundAtom], catalog: RuleCatalog, t: int) -> SafetyState:
    """Instantaneous safety state activated by the frame's ground atoms."""
    state, _ = activate_rules(atoms, catalog, t)
    return state


def activate_rules(
    atoms: set[GroundAtom], catalog: RuleCatalog, t: int
) -> tuple[SafetyState, tuple[str, ...]]:
    """Like instantiate_constraints but also reports which Horn rules fired.

    A rule fires when every action/environment antecedent predicate holds on
    some entity and there exists one entity satisfying all of its target
    predicates together.  Independent of atom iteration order.
    """
    present: set[str] = set()
    by_entity: dict[str, set[str]] = {}
    for atom in atoms:
        present.add(atom.predicate)
        by_entity.setdefault(atom.entity_id, set()).add(atom.predicate)

    by_name = catalog.predicates_by_name
    active: set[str] = set()
    fired: list[str] = []
    for rule in catalog.horn_rules:
        shared = []
        ok = True
        for p in rule.antecedent:
            if by_name[p].category in _LOOSE:
                if p not in present:
                    ok = False
                    break
            else:
                shared.append(p)
        if not ok:
            continue
        if shared and not any(
            all(p in preds for p in shared) for preds in by_entity.values()
        ):
            continue
        active.add(rule.consequent)
        fired.append(rule.id)
    return SafetyState(t, frozenset(active)), tuple(sorted(fired))


# -- DSL parser -------------------------------------------------------------

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_INT = re.compile(r"-?\d+")
_FLOAT = re.compile(r"-?\d+(?:\.\d+)?")
_STRING = re.compile(r'"([^"]*)"')


class _Cursor:
    """Single-line scanner with 1-based column reporting."""

    def __init__(self, text: str, line_no: int):
        self.text = text
        self.line = line_no
        self.pos = 0

    @property
    def col(self) -> int:
        return self.pos + 1

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.text)

    def fail(self, message: str):
        raise ParseError(message, self.line, self.col)

    def peek_literal(self, lit: str) -> bool:
        self.skip_ws()
        return self.text.startswith(lit, self.pos)

    def literal(self, lit: str) -> None:
        self.skip_ws()
        if not self.text.startswith(lit, self.pos):
            self.fail(f"expected {lit!r}")
        self.pos += len(lit)

    def try_literal(self, lit: str) -> bool:
        if self.peek_literal(lit):
            self.pos += len(lit)
            return True
        return False

    def regex(self, pattern: re.Pattern, what: str) -> str:
        self.skip_ws()
        m = pattern.match(self.text, self.pos)
        if not m:
            self.fail(f"expected {what}")
        self.pos = m.end()
        return m.group(0)

    def ident(self, what: str = "identifier") -> str:
        return self.regex(_IDENT, what)

    def integer(self, what: str = "integer") -> int:
        return int(self.regex(_INT, what))

    def number(self, what: str = "number") -> float:
        return float(self.regex(_FLOAT, what))

    def string(self) -> str:
        self.skip_ws()
        m = _STRING.match(self.text, self.pos)
        if not m:
            self.fail("expected a double-quoted string")
        self.pos = m.end()
        return m.group(1)

    def end(self) -> None:
        if not self.at_end():
            self.fail("unexpected trailing input")


def _strip_comment(line: str) -> str:
    in_quote = False
    for i, ch in enumerate(line):
        if ch == '"':
            in_quote = not in_quote
        elif ch == "#" and not in_quote:
            return line[:i]
    return line


def _enum_token(cur: _Cursor, enum_cls: type, what: str):
    tok = cur.ident(what)
    for member in enum_cls:
        if member.value == tok:
            return member
    cur.fail(f"unknown {what} token {tok!r}")


_SELECTOR_KEYS = {
    "action": ("name",),
    "environment": ("kind", "signal", "region"),
    "target_exists": ("region", "kind", "distance"),
    "target_motion": ("region", "kind", "trend", "distance"),
}


def _parse_predicate(cur: _Cursor) -> PredicateDef:
    name = cur.ident("predicate name")
    cur.literal(":")
    selector = cur.ident("selector")
    if selector not in _SELECTOR_KEYS:
        cur.fail(f"unknown selector {selector!r}")
    cur.literal("(")
    seen: dict[str, object] = {}
    while True:
        key = cur.ident("selector argument")
        if key not in _SELECTOR_KEYS[selector]:
            cur.fail(f"selector {selector!r} does not take argument {key!r}")
        if key in seen:
            cur.fail(f"duplicate selector argument {key!r}")
        cur.literal("=")
        if key == "name":
            seen[key] = _enum_token(cur, Action, "action")
        elif key == "kind":
            seen[key] = _enum_token(cur, EntityKind, "kind")
        elif key == "region":
            seen[key] = _enum_token(cur, Region, "region")
        elif key == "trend":
            seen[key] = _enum_token(cur, MotionTrend, "trend")
        elif key == "signal":
            seen[key] = _enum_token(cur, SignalState, "signal")
        else:  # distance
            seen[key] = _enum_token(cur, DistanceBand, "distance band")
        if cur.try_literal(","):
            continue
        cur.literal(")")
        break
    cur.end()
    category = PredicateCategory(selector)
    try:
        return PredicateDef(
            name=name,
            category=category,
            action=seen.get("name"),
            kind=seen.get("kind"),
            region=seen.get("region"),
            motion=seen.get("trend"),
            signal=seen.get("signal"),
            distance_band=seen.get("distance"),
        )
    except ValueError as exc:
        raise ParseError(str(exc), cur.line, 1) from None


def _parse_constraint(cur: _Cursor) -> Constraint:
    cid = cur.ident("constraint id")
    cur.literal("allow")
    cur.literal("{")
    allowed: set[Action] = set()
    if not cur.try_literal("}"):
        while True:
            allowed.add(_enum_token(cur, Action, "action"))
            if cur.try_literal(","):
                continue
            cur.literal("}")
            break
    if not allowed:
        raise EmptyAllowedSet(
            f"constraint {cid!r} (line {cur.line}) allows no action"
        )
    cur.literal("severity")
    severity = cur.integer("severity")
    if not 1 <= severity <= 5:
        cur.fail("severity must be between 1 and 5")
    cur.literal("says")
    template = cur.string()
    cur.end()
    return Constraint(cid, frozenset(allowed), severity, template)


def _parse_horn(cur: _Cursor) -> HornRule:
    rid = cur.ident("rule id")
    cur.literal(":")
    antecedent = [cur.ident("predicate name")]
    while cur.try_literal("&"):
        antecedent.append(cur.ident("predicate name"))
    cur.literal("=>")
    consequent = cur.ident("constraint id")
    cur.end()
    return HornRule(rid, tuple(antecedent), consequent)


def _parse_body_atom(cur: _Cursor) -> BodyAtom:
    if cur.try_literal("count"):
        cur.literal("(")
        cid = cur.ident("constraint id")
        cur.literal(">=")
        minimum = cur.integer("count minimum")
        cur.literal("in")
        cur.literal("last")
        span = cur.integer("count span")
        cur.literal(")")
        if minimum < 1 or span < 1:
            cur.fail("count atoms need minimum >= 1 and span >= 1")
        return CountAtLeast(cid, minimum, span)
    positive = not cur.try_literal("!")
    cid = cur.ident("constraint id")
    cur.literal("@")
    offset = cur.integer("offset")
    if offset >= 0:
        cur.fail("offsets must be negative (e.g. @-1)")
    return AtOffset(offset, cid, positive)


def _parse_temporal(cur: _Cursor) -> TemporalRule:
    tid = cur.ident("temporal rule id")
    cur.literal("(")
    cur.literal("w")
    cur.literal("=")
    weight = cur.number("weight")
    cur.literal(")")
    cur.literal(":")
    body = [_parse_body_atom(cur)]
    while cur.try_literal("&"):
        body.append(_parse_body_atom(cur))
    cur.literal("=>")
    head = cur.ident("constraint id")
    cur.end()
    return TemporalRule(tid, weight, head, tuple(body))


def parse_catalog(text: str) -> RuleCatalog:
    """Parse DSL text into a validated catalog.

    Raises ParseError (with line/column), DuplicateId, UnknownReference, or
    EmptyAllowedSet.
    """
    predicates: list[PredicateDef] = []
    constraints: list[Constraint] = []
    horn: list[HornRule] = []
    temporal: list[TemporalRule] = []
    ids: dict[str, int] = {}

    def claim(kind: str, ident: str, line_no: int) -> None:
        key = f"{kind}:{ident}"
        if key in ids:
            raise DuplicateId(
                f"duplicate {kind} id {ident!r} on line {line_no}"
                f" (first declared on line {ids[key]})"
            )
        ids[key] = line_no

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).rstrip()
        if not line.strip():
            continue
        cur = _Cursor(line, line_no)
        keyword = cur.ident("declaration keyword")
        if keyword == "predicate":
            p = _parse_predicate(cur)
            claim("predicate", p.name, line_no)
            predicates.append(p)
        elif keyword == "constraint":
            c = _parse_constraint(cur)
            claim("constraint", c.id, line_no)
            constraints.append(c)
        elif keyword == "rule":
            r = _parse_horn(cur)
            claim("rule", r.id, line_no)
            horn.append(r)
        elif keyword == "temporal":
            tr = _parse_temporal(cur)
            claim("temporal", tr.id, line_no)
            temporal.append(tr)
        else:
            raise ParseError(f"unknown declaration {keyword!r}", line_no, 1)

    return RuleCatalog(tuple(predicates), tuple(constraints), tuple(horn), tuple(temporal))


@lru_cache(maxsize=1)
def default_catalog() -> RuleCatalog:
    """The catalog shipped with the package (data/default.gsl)."""
    text = resources.files("guardad").joinpath("data/default.gsl").read_text("utf-8")
    return parse_catalog(text)


def load_catalog(path: str) -> RuleCatalog:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_catalog(fh.read())
