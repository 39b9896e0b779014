"""Safety-predicate catalog evaluation.

A predicate is a boolean test over one entity of a frame (plus, for action
predicates, the ego action the policy proposes).  Evaluating the catalog
over a frame yields the set of true ground atoms, which Horn rules then
turn into active constraints.

Four categories exist:

* ``action``        - the proposed ego driving status (binds to the ego);
* ``environment``   - traffic lights and signs;
* ``target_exists`` - a participant of some kind present in a region;
* ``target_motion`` - a participant's movement trend in a region.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Optional

from .scene import (
    Action,
    DistanceBand,
    Entity,
    EntityKind,
    MotionTrend,
    Observation,
    Region,
    SIGNAL_KINDS,
    PARTICIPANT_KINDS,
    SignalState,
)

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, typing only
    from .rules import RuleCatalog


class PredicateCategory(Enum):
    ACTION = "action"
    ENVIRONMENT = "environment"
    TARGET_EXISTENCE = "target_exists"
    TARGET_MOTION = "target_motion"


@dataclass(frozen=True)
class PredicateDef:
    """One catalog predicate: a name plus the selector it tests.

    Which selector fields are meaningful depends on the category; the
    constructor rejects combinations the category does not allow.
    """

    name: str
    category: PredicateCategory
    action: Optional[Action] = None
    kind: Optional[EntityKind] = None
    region: Optional[Region] = None
    motion: Optional[MotionTrend] = None
    signal: Optional[SignalState] = None
    distance_band: Optional[DistanceBand] = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("predicate name must be non-empty")
        cat = self.category
        if cat is PredicateCategory.ACTION:
            if self.action is None:
                raise ValueError(f"{self.name}: action predicate needs an action test")
            if any(x is not None for x in (self.kind, self.region, self.motion, self.signal, self.distance_band)):
                raise ValueError(f"{self.name}: action predicates test only the ego action")
        elif cat is PredicateCategory.ENVIRONMENT:
            if self.kind not in SIGNAL_KINDS:
                raise ValueError(f"{self.name}: environment predicates test TrafficLight/TrafficSign only")
            if self.action is not None or self.motion is not None:
                raise ValueError(f"{self.name}: environment predicates cannot test action or motion")
            if self.signal is not None and self.kind is not EntityKind.TRAFFIC_LIGHT:
                raise ValueError(f"{self.name}: signal tests only apply to TrafficLight")
        else:
            if self.kind not in PARTICIPANT_KINDS:
                raise ValueError(f"{self.name}: target predicates test traffic participants only")
            if self.region is None:
                raise ValueError(f"{self.name}: target predicates need a region test")
            if self.action is not None or self.signal is not None:
                raise ValueError(f"{self.name}: target predicates cannot test action or signal")
            if cat is PredicateCategory.TARGET_MOTION and self.motion is None:
                raise ValueError(f"{self.name}: target_motion predicates need a trend test")
            if cat is PredicateCategory.TARGET_EXISTENCE and self.motion is not None:
                raise ValueError(f"{self.name}: target_exists predicates cannot test a trend")

    def matches(self, entity: Entity, proposed: Action) -> bool:
        """True iff this predicate holds on `entity` given the proposed ego action."""
        cat = self.category
        if cat is PredicateCategory.ACTION:
            return entity.kind is EntityKind.EGO and proposed is self.action
        if entity.kind is not self.kind:
            return False
        if cat is PredicateCategory.ENVIRONMENT:
            if self.signal is not None and entity.signal is not self.signal:
                return False
            if self.region is not None and entity.region is not self.region:
                return False
            return True
        # target existence / target motion
        if entity.region is not self.region:
            return False
        if self.distance_band is not None and entity.distance_band is not self.distance_band:
            return False
        if cat is PredicateCategory.TARGET_MOTION and entity.motion is not self.motion:
            return False
        return True


@dataclass(frozen=True)
class GroundAtom:
    """A predicate made true by a concrete entity at a concrete step."""

    predicate: str
    entity_id: str
    t: int


ALL_CATEGORIES = frozenset(PredicateCategory)


class PredicateIndex:
    """Lookup structure so evaluation is O(entities), not O(entities x catalog).

    The naive all-pairs evaluation is kept in the test suite as the oracle
    this index is checked against.
    """

    def __init__(self, defs: Iterable[PredicateDef]):
        self.action_preds: dict[Action, list[PredicateDef]] = {}
        self.env_preds: list[PredicateDef] = []
        self.exists_preds: dict[tuple[EntityKind, Region], list[PredicateDef]] = {}
        self.motion_preds: dict[tuple[EntityKind, Region, MotionTrend], list[PredicateDef]] = {}
        for p in defs:
            if p.category is PredicateCategory.ACTION:
                self.action_preds.setdefault(p.action, []).append(p)
            elif p.category is PredicateCategory.ENVIRONMENT:
                self.env_preds.append(p)
            elif p.category is PredicateCategory.TARGET_EXISTENCE:
                self.exists_preds.setdefault((p.kind, p.region), []).append(p)
            else:
                self.motion_preds.setdefault((p.kind, p.region, p.motion), []).append(p)

    def atoms_for(self, obs: Observation, proposed: Action) -> set[GroundAtom]:
        t = obs.t
        ego_id = obs.ego.id
        atoms = {
            GroundAtom(p.name, ego_id, t)
            for p in self.action_preds.get(proposed, ())
        }
        for e in obs.entities[1:]:
            if not e.visible:
                continue
            if e.kind in SIGNAL_KINDS:
                for p in self.env_preds:
                    if p.matches(e, proposed):
                        atoms.add(GroundAtom(p.name, e.id, t))
                continue
            if e.kind not in PARTICIPANT_KINDS:
                continue
            for p in self.exists_preds.get((e.kind, e.region), ()):
                if p.distance_band is None or p.distance_band is e.distance_band:
                    atoms.add(GroundAtom(p.name, e.id, t))
            for p in self.motion_preds.get((e.kind, e.region, e.motion), ()):
                if p.distance_band is None or p.distance_band is e.distance_band:
                    atoms.add(GroundAtom(p.name, e.id, t))
        return atoms


def ground_entities(obs: Observation) -> set[str]:
    """Ids of visually instantiated entities; the ego is always included."""
    ids = {e.id for e in obs.entities if e.visible}
    ids.add(obs.ego.id)
    return ids


def evaluate_predicates(
    obs: Observation,
    proposed: Action,
    catalog: "RuleCatalog",
    categories: Optional[frozenset[PredicateCategory]] = None,
) -> set[GroundAtom]:
    """All ground atoms of the catalog true on this frame.

    Action atoms are instantiated from the proposed (intended) ego action
    and bind to the ego id.  Entities with visible=false produce no atoms.
    `categories`, when given, restricts grounding to those predicate
    categories (used by the predicate-ablation guard modes).
    """
    index = catalog.predicate_index(categories)
    return index.atoms_for(obs, proposed)
