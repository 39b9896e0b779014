from __future__ import annotations

import pytest

from guardad.rules import RuleCatalog, default_catalog, parse_catalog
from guardad.scene import (
    Action,
    DistanceBand,
    Entity,
    EntityKind,
    MotionTrend,
    Observation,
    Region,
    SignalState,
)


def ent(
    eid: str,
    kind: EntityKind,
    region: Region | None = None,
    motion: MotionTrend = MotionTrend.UNKNOWN,
    signal: SignalState = SignalState.NONE,
    band: DistanceBand = DistanceBand.MID,
    visible: bool = True,
) -> Entity:
    return Entity(eid, kind, region, motion, signal, band, visible)


def ego() -> Entity:
    return ent("ego", EntityKind.EGO)


def obs(t: int, *extras: Entity, instruction: str | None = None) -> Observation:
    return Observation(t=t, entities=(ego(),) + extras, instruction=instruction)


def cyclist_front(eid: str = "bike", visible: bool = True) -> Entity:
    return ent(eid, EntityKind.BICYCLE, Region.FRONT_CENTER, MotionTrend.APPROACHING, visible=visible)


def red_light(eid: str = "light") -> Entity:
    return ent(eid, EntityKind.TRAFFIC_LIGHT, Region.FRONT_CENTER, MotionTrend.STATIONARY, SignalState.RED)


# A small catalog mirroring the documented DSL snippet, used across modules.
SMALL_CATALOG_TEXT = """
predicate Front_Center_Bicycle_Approach : target_motion(region=FrontCenter, kind=Bicycle, trend=Approaching)
predicate Front_Center_Pedestrian_Crossing : target_motion(region=FrontCenter, kind=Pedestrian, trend=Crossing)
predicate Solid_Red_Light : environment(kind=TrafficLight, signal=Red)
predicate Decelerate : action(name=Decelerate)
constraint C_STOP_OR_DECEL allow {Stop, Decelerate} severity 4 says "Only actions that stop or decelerate are allowed."
constraint C_PED_CAUTION allow {Stop, Decelerate} severity 5 says "A pedestrian is crossing ahead. Only actions that stop or decelerate are allowed."
rule R_bike: Front_Center_Bicycle_Approach => C_STOP_OR_DECEL
rule R_red: Solid_Red_Light => C_STOP_OR_DECEL
rule R_ped: Front_Center_Pedestrian_Crossing => C_PED_CAUTION
temporal T_persist (w=2.0): C_STOP_OR_DECEL@-1 & C_STOP_OR_DECEL@-2 => C_STOP_OR_DECEL
temporal T_count (w=1.5): count(C_PED_CAUTION >= 2 in last 4) => C_PED_CAUTION
"""


@pytest.fixture(scope="session")
def small_catalog() -> RuleCatalog:
    return parse_catalog(SMALL_CATALOG_TEXT)


@pytest.fixture(scope="session")
def shipped_catalog() -> RuleCatalog:
    return default_catalog()


@pytest.fixture
def all_actions() -> tuple[Action, ...]:
    return tuple(Action)
