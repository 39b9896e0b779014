"""Symbolic scene and action data model.

Everything downstream (predicate grounding, rule activation, the guard, the
simulator) consumes these types.  A frame is what a perception stack is
assumed to emit: the ego vehicle plus grounded traffic participants with
coarse spatial/motion attributes.  All values are immutable after
construction and safe to share across concurrent episode workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Mapping, Optional


class SchemaError(ValueError):
    """A frame record violates the frame schema or a scene invariant."""


class DuplicateEntityId(SchemaError):
    """Two entities in one frame share an id."""


class NoEgo(SchemaError):
    """A frame carries no ego entity."""


class EntityKind(Enum):
    EGO = "Ego"
    VEHICLE = "Vehicle"
    PEDESTRIAN = "Pedestrian"
    BICYCLE = "Bicycle"
    MOTORCYCLE = "Motorcycle"
    TRAFFIC_LIGHT = "TrafficLight"
    TRAFFIC_SIGN = "TrafficSign"
    OTHER = "Other"


class Region(Enum):
    FRONT_LEFT = "FrontLeft"
    FRONT_CENTER = "FrontCenter"
    FRONT_RIGHT = "FrontRight"
    LEFT = "Left"
    RIGHT = "Right"
    REAR_LEFT = "RearLeft"
    REAR_CENTER = "RearCenter"
    REAR_RIGHT = "RearRight"


class MotionTrend(Enum):
    APPROACHING = "Approaching"
    RECEDING = "Receding"
    CROSSING = "Crossing"
    STATIONARY = "Stationary"
    UNKNOWN = "Unknown"


class SignalState(Enum):
    RED = "Red"
    YELLOW = "Yellow"
    GREEN = "Green"
    NONE = "None"


class DistanceBand(Enum):
    NEAR = "Near"
    MID = "Mid"
    FAR = "Far"


class Action(Enum):
    # Declaration order is the deterministic tie-break order for argmax,
    # with Stop first as the conservative default.
    STOP = "Stop"
    DECELERATE = "Decelerate"
    KEEP_SPEED = "KeepSpeed"
    ACCELERATE = "Accelerate"
    TURN_LEFT = "TurnLeft"
    TURN_RIGHT = "TurnRight"
    LANE_CHANGE_LEFT = "LaneChangeLeft"
    LANE_CHANGE_RIGHT = "LaneChangeRight"


ACTIONS: tuple[Action, ...] = tuple(Action)

# Kinds that infrastructure (environment) predicates may test.
SIGNAL_KINDS = frozenset({EntityKind.TRAFFIC_LIGHT, EntityKind.TRAFFIC_SIGN})
# Kinds that target-existence / target-motion predicates may test.
PARTICIPANT_KINDS = frozenset(
    {
        EntityKind.VEHICLE,
        EntityKind.PEDESTRIAN,
        EntityKind.BICYCLE,
        EntityKind.MOTORCYCLE,
    }
)


def _enum_from_token(enum_cls: type, token: Any, field: str):
    for member in enum_cls:
        if member.value == token:
            return member
    raise SchemaError(f"unknown {field} token: {token!r}")


@dataclass(frozen=True)
class Entity:
    """One grounded entity in a frame.

    The ego carries no region; every other entity carries exactly one.
    Traffic lights and signs are always stationary, and only traffic lights
    may carry a non-None signal state.
    """

    id: str
    kind: EntityKind
    region: Optional[Region]
    motion: MotionTrend
    signal: SignalState = SignalState.NONE
    distance_band: DistanceBand = DistanceBand.MID
    visible: bool = True

    def __post_init__(self) -> None:
        if not self.id:
            raise SchemaError("entity id must be a non-empty token")
        if self.kind is EntityKind.EGO:
            if self.region is not None:
                raise SchemaError(f"ego entity {self.id!r} must not carry a region")
        elif self.region is None:
            raise SchemaError(f"non-ego entity {self.id!r} must carry a region")
        if self.kind in SIGNAL_KINDS and self.motion is not MotionTrend.STATIONARY:
            raise SchemaError(
                f"{self.kind.value} entity {self.id!r} must be Stationary"
            )
        if self.signal is not SignalState.NONE and self.kind is not EntityKind.TRAFFIC_LIGHT:
            raise SchemaError(
                f"entity {self.id!r}: signal state is only valid on TrafficLight"
            )


@dataclass(frozen=True)
class Observation:
    """One symbolic frame: step index, ego-first entity list, optional text."""

    t: int
    entities: tuple[Entity, ...]
    instruction: Optional[str] = None

    def __post_init__(self) -> None:
        if self.t < 0:
            raise SchemaError(f"step index must be non-negative, got {self.t}")
        if not isinstance(self.entities, tuple):
            object.__setattr__(self, "entities", tuple(self.entities))
        egos = [e for e in self.entities if e.kind is EntityKind.EGO]
        if not egos:
            raise NoEgo(f"frame t={self.t} has no ego entity")
        if len(egos) > 1:
            raise SchemaError(f"frame t={self.t} has {len(egos)} ego entities")
        if self.entities[0].kind is not EntityKind.EGO:
            raise SchemaError(f"frame t={self.t}: ego entity must come first")
        seen: set[str] = set()
        for e in self.entities:
            if e.id in seen:
                raise DuplicateEntityId(f"frame t={self.t}: duplicate entity id {e.id!r}")
            seen.add(e.id)

    @property
    def ego(self) -> Entity:
        return self.entities[0]


@dataclass(frozen=True)
class ActionDistribution:
    """Scores over the full action space; argmax ties break by declaration order."""

    scores: Mapping[Action, float]

    def __post_init__(self) -> None:
        missing = [a.value for a in ACTIONS if a not in self.scores]
        if missing:
            raise ValueError(f"distribution missing actions: {missing}")
        extra = [k for k in self.scores if not isinstance(k, Action)]
        if extra:
            raise ValueError(f"distribution has non-action keys: {extra}")
        object.__setattr__(self, "scores", dict(self.scores))

    @classmethod
    def one_hot(cls, action: Action, hot: float = 1.0, cold: float = 0.0) -> "ActionDistribution":
        return cls({a: (hot if a is action else cold) for a in ACTIONS})

    def argmax(self) -> Action:
        return argmax_action(self)

    def restricted_argmax(self, allowed: Iterable[Action]) -> Action:
        """Highest-scoring action among `allowed`, same tie-break as argmax."""
        allowed = set(allowed)
        if not allowed:
            raise ValueError("allowed set must be non-empty")
        best = None
        best_score = None
        for a in ACTIONS:  # declaration order makes ties deterministic
            if a not in allowed:
                continue
            s = self.scores[a]
            if best_score is None or s > best_score:
                best, best_score = a, s
        assert best is not None
        return best


def argmax_action(dist: ActionDistribution) -> Action:
    """Maximizing action of a complete distribution, ties by declaration order."""
    best = ACTIONS[0]
    best_score = dist.scores[best]
    for a in ACTIONS[1:]:
        s = dist.scores[a]
        if s > best_score:
            best, best_score = a, s
    return best


def parse_entity(record: Mapping[str, Any]) -> Entity:
    for field in ("id", "kind", "motion"):
        if field not in record:
            raise SchemaError(f"entity record missing field {field!r}")
    kind = _enum_from_token(EntityKind, record["kind"], "kind")
    region = None
    if record.get("region") is not None:
        region = _enum_from_token(Region, record["region"], "region")
    signal = SignalState.NONE
    if record.get("signal") is not None:
        signal = _enum_from_token(SignalState, record["signal"], "signal")
    band = DistanceBand.MID
    if record.get("distance_band") is not None:
        band = _enum_from_token(DistanceBand, record["distance_band"], "distance_band")
    visible = record.get("visible", True)
    if not isinstance(visible, bool):
        raise SchemaError(f"entity {record['id']!r}: visible must be a boolean")
    return Entity(
        id=str(record["id"]),
        kind=kind,
        region=region,
        motion=_enum_from_token(MotionTrend, record["motion"], "motion"),
        signal=signal,
        distance_band=band,
        visible=visible,
    )


def parse_observation(record: Mapping[str, Any]) -> Observation:
    """Validate one frame record (a decoded frame object) into an Observation.

    Defaults are applied (distance_band=Mid, visible=true, signal absent).
    Raises SchemaError / DuplicateEntityId / NoEgo on invalid frames.
    """
    if "t" not in record:
        raise SchemaError("frame record missing field 't'")
    t = record["t"]
    if not isinstance(t, int) or isinstance(t, bool):
        raise SchemaError(f"frame field 't' must be an integer, got {t!r}")
    raw_entities = record.get("entities")
    if not isinstance(raw_entities, list) or not raw_entities:
        raise NoEgo(f"frame t={t} has no entities")
    instruction = record.get("instruction")
    if instruction is not None and not isinstance(instruction, str):
        raise SchemaError("frame field 'instruction' must be a string")
    return Observation(
        t=t,
        entities=tuple(parse_entity(e) for e in raw_entities),
        instruction=instruction,
    )


def serialize_entity(entity: Entity) -> dict[str, Any]:
    out: dict[str, Any] = {"id": entity.id, "kind": entity.kind.value}
    if entity.region is not None:
        out["region"] = entity.region.value
    out["motion"] = entity.motion.value
    if entity.signal is not SignalState.NONE:
        out["signal"] = entity.signal.value
    out["distance_band"] = entity.distance_band.value
    out["visible"] = entity.visible
    return out


def serialize_observation(obs: Observation) -> dict[str, Any]:
    out: dict[str, Any] = {"t": obs.t}
    if obs.instruction is not None:
        out["instruction"] = obs.instruction
    out["entities"] = [serialize_entity(e) for e in obs.entities]
    return out


def observation_to_json(obs: Observation) -> str:
    return json.dumps(serialize_observation(obs), sort_keys=True)


def observation_from_json(line: str) -> Observation:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"frame line is not valid JSON: {exc}") from exc
    if not isinstance(record, Mapping):
        raise SchemaError("frame line must decode to an object")
    return parse_observation(record)
