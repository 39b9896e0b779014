"""Decision-time safeguard.

Per step: ground the frame into atoms, activate Horn constraints, refine
them through the temporal induction window, then test the policy's base
action against the refined state.  A clean action passes through untouched
(minimal intervention).  A violating action is revised according to the
configured strategy:

* full               - verbalize the violated constraints, append the text
                       to the newest instruction, and re-query the policy
                       (bounded retries); if still violating, fall back to
                       the best allowed action of the base distribution;
* predicate-static   - full revision, but ground only ego-action and
                       environment predicates and skip temporal induction;
* predicate-targets  - full revision, participant predicates only, no
                       temporal induction;
* forced-fallback    - replace any violating action with the configured
                       fallback action outright;
* constrained-select - pick the highest-scoring allowed action from the
                       base distribution.

A guard session owns its window; sessions are independent and must not
share policy adapters.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional, Sequence

from .mln import Window, induce_state
from .predicates import PredicateCategory, evaluate_predicates
from .rules import Constraint, RuleCatalog, SafetyState, activate_rules
from .scene import ACTIONS, Action, Observation, argmax_action


class EmptyViolationSet(ValueError):
    """verbalize() was called with nothing to verbalize."""


class StrategyMode(Enum):
    FULL = "full"
    PREDICATE_STATIC = "predicate-static"
    PREDICATE_TARGETS = "predicate-targets"
    FORCED_FALLBACK = "forced-fallback"
    CONSTRAINED_SELECT = "constrained-select"


_MODE_CATEGORIES = {
    StrategyMode.PREDICATE_STATIC: frozenset(
        {PredicateCategory.ACTION, PredicateCategory.ENVIRONMENT}
    ),
    StrategyMode.PREDICATE_TARGETS: frozenset(
        {PredicateCategory.TARGET_EXISTENCE, PredicateCategory.TARGET_MOTION}
    ),
}
_SKIP_INDUCTION = frozenset(
    {StrategyMode.PREDICATE_STATIC, StrategyMode.PREDICATE_TARGETS}
)


class StrategyNote(Enum):
    ACCEPTED = "Accepted"
    REVISED_BY_PROMPT = "RevisedByPrompt"
    CONSTRAINED_FALLBACK = "ConstrainedFallback"
    FORCED_FALLBACK = "ForcedFallback"


@dataclass(frozen=True)
class GuardConfig:
    n: int = 4
    k: int = 2
    theta: float = 1.0
    max_retries: int = 1
    mode: StrategyMode = StrategyMode.FULL
    fallback_action: Action = Action.STOP

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("window order n must be >= 1")
        if self.k < 0:
            raise ValueError("history length k must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class ViolationReport:
    delta: bool
    violated: tuple[str, ...]
    effective_allowed: frozenset[Action]


@dataclass(frozen=True)
class StepRecord:
    """One guarded decision, serializable one-per-line in trace files."""

    t: int
    z_now: SafetyState
    z_refined: SafetyState
    fired_rules: tuple[str, ...]
    base_action: Action
    delta: bool
    prompt: Optional[str]
    retries_used: int
    final_action: Action
    strategy_note: StrategyNote

    def to_json_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "t": self.t,
            "z_now": self.z_now.sorted_ids(),
            "z_refined": self.z_refined.sorted_ids(),
            "fired_rules": list(self.fired_rules),
            "base_action": self.base_action.value,
            "delta": self.delta,
            "retries_used": self.retries_used,
            "final_action": self.final_action.value,
            "strategy_note": self.strategy_note.value,
        }
        if self.prompt is not None:
            out["prompt"] = self.prompt
        return out


def check_violation(action: Action, state: SafetyState, catalog: RuleCatalog) -> ViolationReport:
    """Test one action against a (conflict-resolved) safety state."""
    violated = sorted(
        cid for cid in state.active if action not in catalog.constraint(cid).allowed
    )
    allowed = set(ACTIONS)
    for cid in state.active:
        allowed &= catalog.constraint(cid).allowed
    return ViolationReport(
        delta=bool(violated),
        violated=tuple(violated),
        effective_allowed=frozenset(allowed),
    )


def resolve_conflicts(state: SafetyState, catalog: RuleCatalog) -> SafetyState:
    """Drop lowest-severity constraints until the joint allowed set is non-empty.

    Mutually unsatisfiable constraints are a catalog-authoring hazard, not a
    scene condition, so resolution is deterministic and biased toward
    keeping the most severe requirement.  At least one constraint survives.
    """
    active = list(state.active)
    if not active:
        return state

    def intersection(ids: Sequence[str]) -> set[Action]:
        allowed = set(ACTIONS)
        for cid in ids:
            allowed &= catalog.constraint(cid).allowed
        return allowed

    if intersection(active):
        return state
    # ascending severity, ties by id, dropped first
    order = sorted(active, key=lambda cid: (catalog.constraint(cid).severity, cid))
    while len(order) > 1 and not intersection(order):
        order.pop(0)
    return SafetyState(state.t, frozenset(order))


def verbalize(violated: Sequence[Constraint], catalog: RuleCatalog) -> str:
    """Deterministic prompt text for a violated-constraint set.

    Templates are concatenated severity-descending (ties by id) and joined
    with single spaces.
    """
    if not violated:
        raise EmptyViolationSet("no violated constraints to verbalize")
    ordered = sorted(violated, key=lambda c: (-c.severity, c.id))
    return " ".join(c.template for c in ordered)


@dataclass(frozen=True)
class FrameAssessment:
    """Policy-free part of the pipeline: atoms -> Z -> refined Z -> violation."""

    z_now: SafetyState
    z_refined: SafetyState
    resolved: SafetyState
    report: ViolationReport
    fired_rules: tuple[str, ...]


def assess_frame(
    obs: Observation,
    base_action: Action,
    window: Window,
    config: GuardConfig,
    catalog: RuleCatalog,
) -> FrameAssessment:
    categories = _MODE_CATEGORIES.get(config.mode)
    atoms = evaluate_predicates(obs, base_action, catalog, categories)
    z_now, horn_fired = activate_rules(atoms, catalog, obs.t)
    if config.mode in _SKIP_INDUCTION:
        z_refined = z_now
        fired = horn_fired
    else:
        result = induce_state(window, z_now, catalog, config.theta)
        z_refined = result.refined
        fired = tuple(sorted(horn_fired + result.fired_rules))
    resolved = resolve_conflicts(z_refined, catalog)
    report = check_violation(base_action, resolved, catalog)
    return FrameAssessment(z_now, z_refined, resolved, report, fired)


def push_window(window: Window, state: SafetyState, n: int) -> tuple[SafetyState, ...]:
    """Append the newest refined state, evicting beyond length n."""
    return (tuple(window) + (state,))[-n:]


def guard_step(
    history: Sequence[Observation],
    policy,
    window: Window,
    config: GuardConfig,
    catalog: RuleCatalog,
) -> tuple[Action, StepRecord, tuple[SafetyState, ...]]:
    """Run one guarded decision step.

    `history` is the last k+1 policy-visible observations, newest last.
    Returns the final action, the step record, and the shifted window.
    The policy is invoked at most 1 + max_retries times.
    """
    from .policy import PolicyRequest  # late import: policy depends on scene only

    if not history:
        raise ValueError("history must contain at least the current observation")
    obs = history[-1]
    base_dist = policy.decide(PolicyRequest(history=tuple(history)))
    base = argmax_action(base_dist)
    fa = assess_frame(obs, base, window, config, catalog)

    prompt: Optional[str] = None
    retries = 0
    if not fa.report.delta:
        final = base
        note = StrategyNote.ACCEPTED
    elif config.mode is StrategyMode.FORCED_FALLBACK:
        final = config.fallback_action
        note = StrategyNote.FORCED_FALLBACK
    elif config.mode is StrategyMode.CONSTRAINED_SELECT:
        final = base_dist.restricted_argmax(fa.report.effective_allowed)
        note = StrategyNote.CONSTRAINED_FALLBACK
    else:
        # full revision (also used by the predicate-ablation modes)
        violated = [catalog.constraint(cid) for cid in fa.report.violated]
        prompt = verbalize(violated, catalog)
        final = None
        note = StrategyNote.CONSTRAINED_FALLBACK
        while retries < config.max_retries:
            retries += 1
            revised_dist = policy.decide(
                PolicyRequest(history=tuple(history), prompt_suffix=prompt)
            )
            revised = argmax_action(revised_dist)
            if not check_violation(revised, fa.resolved, catalog).delta:
                final = revised
                note = StrategyNote.REVISED_BY_PROMPT
                break
        if final is None:
            final = base_dist.restricted_argmax(fa.report.effective_allowed)

    record = StepRecord(
        t=obs.t,
        z_now=fa.z_now,
        z_refined=fa.z_refined,
        fired_rules=fa.fired_rules,
        base_action=base,
        delta=fa.report.delta,
        prompt=prompt,
        retries_used=retries,
        final_action=final,
        strategy_note=note,
    )
    return final, record, push_window(window, fa.z_refined, config.n)


class GuardSession:
    """Single-owner wrapper holding the rolling window and history buffer."""

    def __init__(self, policy, config: GuardConfig, catalog: RuleCatalog):
        self.policy = policy
        self.config = config
        self.catalog = catalog
        self.window: tuple[SafetyState, ...] = ()
        self._history: list[Observation] = []

    def step(self, obs: Observation) -> tuple[Action, StepRecord]:
        self._history.append(obs)
        self._history = self._history[-(self.config.k + 1):]
        final, record, self.window = guard_step(
            tuple(self._history), self.policy, self.window, self.config, self.catalog
        )
        return final, record
