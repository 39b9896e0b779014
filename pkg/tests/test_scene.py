from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from guardad.scene import (
    ACTIONS,
    Action,
    ActionDistribution,
    DistanceBand,
    DuplicateEntityId,
    Entity,
    EntityKind,
    MotionTrend,
    NoEgo,
    Observation,
    Region,
    SchemaError,
    SignalState,
    argmax_action,
    observation_from_json,
    observation_to_json,
    parse_observation,
    serialize_observation,
)

from conftest import ent, obs


FRAME = {
    "t": 0,
    "entities": [
        {"id": "ego", "kind": "Ego", "motion": "Unknown"},
        {"id": "bike", "kind": "Bicycle", "region": "FrontCenter", "motion": "Approaching"},
    ],
}


class TestParseObservation:
    def test_minimal_frame_round_trip(self):
        o = parse_observation(FRAME)
        assert len(o.entities) == 2
        assert o.ego.id == "ego"
        assert o.entities[1].kind is EntityKind.BICYCLE
        # defaults applied
        assert o.entities[1].distance_band is DistanceBand.MID
        assert o.entities[1].visible is True
        assert o.entities[1].signal is SignalState.NONE

    def test_duplicate_entity_id(self):
        frame = {
            "t": 0,
            "entities": [
                {"id": "ego", "kind": "Ego", "motion": "Unknown"},
                {"id": "p1", "kind": "Pedestrian", "region": "Left", "motion": "Crossing"},
                {"id": "p1", "kind": "Pedestrian", "region": "Right", "motion": "Crossing"},
            ],
        }
        with pytest.raises(DuplicateEntityId):
            parse_observation(frame)

    def test_missing_ego(self):
        frame = {
            "t": 3,
            "entities": [
                {"id": "p1", "kind": "Pedestrian", "region": "Left", "motion": "Crossing"}
            ],
        }
        with pytest.raises(NoEgo):
            parse_observation(frame)

    def test_two_egos_rejected(self):
        frame = {
            "t": 0,
            "entities": [
                {"id": "e1", "kind": "Ego", "motion": "Unknown"},
                {"id": "e2", "kind": "Ego", "motion": "Unknown"},
            ],
        }
        with pytest.raises(SchemaError):
            parse_observation(frame)

    def test_ego_must_come_first(self):
        frame = {
            "t": 0,
            "entities": [
                {"id": "p1", "kind": "Pedestrian", "region": "Left", "motion": "Crossing"},
                {"id": "ego", "kind": "Ego", "motion": "Unknown"},
            ],
        }
        with pytest.raises(SchemaError):
            parse_observation(frame)

    @pytest.mark.parametrize(
        "patch",
        [
            {"kind": "Bicyclist"},
            {"region": "Ahead"},
            {"motion": "Wobbling"},
            {"distance_band": "VeryFar"},
        ],
    )
    def test_unknown_enum_tokens(self, patch):
        entity = {"id": "x", "kind": "Bicycle", "region": "FrontCenter", "motion": "Approaching"}
        entity.update(patch)
        frame = {"t": 0, "entities": [{"id": "ego", "kind": "Ego", "motion": "Unknown"}, entity]}
        with pytest.raises(SchemaError):
            parse_observation(frame)

    def test_missing_fields(self):
        with pytest.raises(SchemaError):
            parse_observation({"entities": FRAME["entities"]})
        with pytest.raises(SchemaError):
            parse_observation({"t": 0, "entities": [{"id": "ego", "kind": "Ego"}]})

    def test_negative_step_rejected(self):
        frame = dict(FRAME, t=-1)
        with pytest.raises(SchemaError):
            parse_observation(frame)


class TestSceneInvariants:
    def test_ego_cannot_carry_region(self):
        with pytest.raises(SchemaError):
            ent("ego", EntityKind.EGO, Region.FRONT_CENTER)

    def test_non_ego_needs_region(self):
        with pytest.raises(SchemaError):
            ent("v", EntityKind.VEHICLE, None, MotionTrend.APPROACHING)

    def test_lights_and_signs_are_stationary(self):
        with pytest.raises(SchemaError):
            ent("l", EntityKind.TRAFFIC_LIGHT, Region.FRONT_CENTER, MotionTrend.APPROACHING)
        with pytest.raises(SchemaError):
            ent("s", EntityKind.TRAFFIC_SIGN, Region.FRONT_RIGHT, MotionTrend.CROSSING)

    def test_signal_only_on_lights(self):
        with pytest.raises(SchemaError):
            ent("s", EntityKind.TRAFFIC_SIGN, Region.FRONT_RIGHT, MotionTrend.STATIONARY, SignalState.RED)
        with pytest.raises(SchemaError):
            ent("v", EntityKind.VEHICLE, Region.LEFT, MotionTrend.APPROACHING, SignalState.GREEN)


class TestArgmax:
    def test_all_zero_ties_to_stop(self):
        dist = ActionDistribution({a: 0.0 for a in ACTIONS})
        assert argmax_action(dist) is Action.STOP

    def test_unique_max(self):
        dist = ActionDistribution({a: (0.9 if a is Action.DECELERATE else 0.1) for a in ACTIONS})
        assert argmax_action(dist) is Action.DECELERATE

    def test_tie_breaks_by_declaration_order(self):
        # oracle: first action in declaration order among the maximizers
        scores = {a: 0.0 for a in ACTIONS}
        scores[Action.STOP] = 0.5
        scores[Action.DECELERATE] = 0.5
        dist = ActionDistribution(scores)
        expected = next(a for a in ACTIONS if scores[a] == max(scores.values()))
        assert argmax_action(dist) is expected is Action.STOP

    def test_incomplete_distribution_rejected(self):
        scores = {a: 0.0 for a in ACTIONS if a is not Action.TURN_LEFT}
        with pytest.raises(ValueError):
            ActionDistribution(scores)

    @given(st.lists(st.floats(-10, 10), min_size=8, max_size=8))
    def test_argmax_deterministic(self, values):
        dist = ActionDistribution(dict(zip(ACTIONS, values)))
        assert argmax_action(dist) is argmax_action(dist)
        best = argmax_action(dist)
        assert all(dist.scores[best] >= dist.scores[a] for a in ACTIONS)


_KIND = st.sampled_from(
    [
        EntityKind.VEHICLE,
        EntityKind.PEDESTRIAN,
        EntityKind.BICYCLE,
        EntityKind.MOTORCYCLE,
        EntityKind.TRAFFIC_LIGHT,
        EntityKind.TRAFFIC_SIGN,
        EntityKind.OTHER,
    ]
)


@st.composite
def entities(draw, eid: str):
    kind = draw(_KIND)
    region = draw(st.sampled_from(list(Region)))
    if kind in (EntityKind.TRAFFIC_LIGHT, EntityKind.TRAFFIC_SIGN):
        motion = MotionTrend.STATIONARY
    else:
        motion = draw(st.sampled_from(list(MotionTrend)))
    signal = SignalState.NONE
    if kind is EntityKind.TRAFFIC_LIGHT:
        signal = draw(st.sampled_from(list(SignalState)))
    return Entity(
        id=eid,
        kind=kind,
        region=region,
        motion=motion,
        signal=signal,
        distance_band=draw(st.sampled_from(list(DistanceBand))),
        visible=draw(st.booleans()),
    )


@st.composite
def observations(draw):
    n = draw(st.integers(0, 6))
    extras = tuple(draw(entities(f"e{i}")) for i in range(n))
    instruction = draw(st.one_of(st.none(), st.text(max_size=30)))
    return obs(draw(st.integers(0, 50)), *extras, instruction=instruction)


class TestRoundTrip:
    @given(observations())
    def test_parse_serialize_identity(self, o):
        assert parse_observation(serialize_observation(o)) == o

    @given(observations())
    def test_json_line_round_trip(self, o):
        assert observation_from_json(observation_to_json(o)) == o
