"""Runtime safety guard for autonomous-driving decision policies.

The engine lifts symbolic frames into safety predicates, activates
constraints through Horn rules, refines them over a bounded temporal
window, and revises violating policy actions with a bounded re-query loop.
A scenario simulator and metrics harness close the loop for evaluation.
"""

from .scene import (
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
    parse_observation,
    serialize_observation,
)
from .predicates import (
    GroundAtom,
    PredicateCategory,
    PredicateDef,
    evaluate_predicates,
    ground_entities,
)
from .rules import (
    Constraint,
    HornRule,
    RuleCatalog,
    SafetyState,
    TemporalRule,
    default_catalog,
    instantiate_constraints,
    load_catalog,
    parse_catalog,
)
from .mln import (
    InductionResult,
    brute_force_map,
    enumerate_distribution,
    feature_count,
    induce_state,
    potential,
)
from .guard import (
    GuardConfig,
    GuardSession,
    StepRecord,
    StrategyMode,
    StrategyNote,
    ViolationReport,
    check_violation,
    guard_step,
    resolve_conflicts,
    verbalize,
)
from .policy import (
    ExternalPolicy,
    FaultyPolicy,
    OraclePolicy,
    PolicyRequest,
    PolicySpec,
    PolicyVariant,
    external_handshake,
    parse_policy_spec,
)
from .sim import (
    EpisodeOutcome,
    EpisodeTrace,
    FailureType,
    Hazard,
    HazardKind,
    MetricsReport,
    Scenario,
    ScenarioTemplate,
    accident_oracle,
    classify_failure,
    compute_metrics,
    generate_scenarios,
    generate_suite,
    run_episode,
    run_suite,
)

__version__ = "0.1.0"
