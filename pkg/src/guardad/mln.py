"""Temporal refinement of the safety state over a bounded history window.

The catalog's weighted temporal rules form a log-linear model over
candidate refined states.  A rule contributes its weight when its body
holds on the window of recent states AND its head constraint is included
in the candidate (firing semantics).  Each candidate additionally pays an
inclusion bias of theta per constraint added beyond the instantaneous
state, so unsupported constraints stay out.

Because every rule supports exactly one head, the potential factorizes per
head and the MAP state is the instantaneous state plus every head whose
accumulated support reaches theta.  ``brute_force_map`` and
``enumerate_distribution`` recover the same answer by exhaustive
enumeration and are the reference the fast path is tested against.

Window convention: a window is the sequence of refined states for steps
t-n .. t-1, oldest first, so ``window[-1]`` is offset -1.  Offsets that
reach past the available window never hold (no padding at episode start).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Mapping, Sequence

from .rules import (
    AtOffset,
    CountAtLeast,
    RuleCatalog,
    SafetyState,
    TemporalRule,
)

__all__ = [
    "AtOffset",
    "CountAtLeast",
    "TemporalRule",
    "Window",
    "InductionResult",
    "CandidateNotSuperset",
    "TooManyCandidates",
    "ENUMERATION_BOUND",
    "feature_count",
    "potential",
    "induce_state",
    "enumerate_distribution",
    "brute_force_map",
]

Window = Sequence[SafetyState]

ENUMERATION_BOUND = 20


class CandidateNotSuperset(ValueError):
    """Candidate refined state does not contain the instantaneous state."""


class TooManyCandidates(ValueError):
    """Exhaustive enumeration was asked for more than 2**ENUMERATION_BOUND states."""


@dataclass(frozen=True)
class InductionResult:
    """MAP refinement plus per-constraint diagnostics."""

    refined: SafetyState
    scores: Mapping[str, float]
    probabilities: Mapping[str, float]
    fired_rules: tuple[str, ...]


def _body_holds(rule: TemporalRule, window: Window) -> bool:
    for atom in rule.body:
        if isinstance(atom, AtOffset):
            depth = -atom.offset
            if depth > len(window):
                return False  # past the live window: never holds
            active = atom.constraint in window[atom.offset].active
            if active != atom.positive:
                return False
        else:  # CountAtLeast
            span = min(atom.span, len(window))
            count = sum(
                1 for j in range(1, span + 1) if atom.constraint in window[-j].active
            )
            if count < atom.minimum:
                return False
    return True


def feature_count(rule: TemporalRule, window: Window, candidate: SafetyState) -> int:
    """1 iff the rule's body holds on the window and its head is in the candidate.

    Rules are propositional after grounding, so the count is 0 or 1.
    """
    if rule.head not in candidate.active:
        return 0
    return 1 if _body_holds(rule, window) else 0


def potential(
    window: Window,
    z_now: SafetyState,
    candidate: SafetyState,
    catalog: RuleCatalog,
    theta: float,
) -> float:
    """Log-linear potential of a candidate refined state.

    Sum of fired rule weights minus theta per constraint the candidate adds
    beyond the instantaneous state.
    """
    if not candidate.active >= z_now.active:
        raise CandidateNotSuperset(
            f"candidate {sorted(candidate.active)} does not contain {sorted(z_now.active)}"
        )
    total = 0.0
    for rule in catalog.temporal_rules:
        if feature_count(rule, window, candidate):
            total += rule.weight
    total -= theta * len(candidate.active - z_now.active)
    return total


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _head_scores(window: Window, z_now: SafetyState, catalog: RuleCatalog) -> tuple[dict[str, float], list[TemporalRule]]:
    """Accumulated support per head, plus the rules whose bodies hold."""
    scores: dict[str, float] = {h: 0.0 for h in catalog.temporal_heads}
    for c in z_now.active:
        scores.setdefault(c, 0.0)
    satisfied: list[TemporalRule] = []
    for rule in catalog.temporal_rules:
        if _body_holds(rule, window):
            satisfied.append(rule)
            scores[rule.head] = scores.get(rule.head, 0.0) + rule.weight
    return scores, satisfied


def induce_state(
    window: Window,
    z_now: SafetyState,
    catalog: RuleCatalog,
    theta: float = 1.0,
) -> InductionResult:
    """MAP refinement of the instantaneous state under the temporal rules.

    The refined state is z_now plus every temporal-rule head whose summed
    support over satisfied rules reaches theta (ties at exactly theta are
    included).  Constraints already in z_now report inclusion probability 1;
    candidate heads report the exact marginal sigmoid(score - theta).
    """
    scores, satisfied = _head_scores(window, z_now, catalog)
    added = {
        cid
        for cid, score in scores.items()
        if cid not in z_now.active and score >= theta
    }
    refined = SafetyState(z_now.t, z_now.active | added)
    probabilities = {
        cid: (1.0 if cid in z_now.active else _sigmoid(score - theta))
        for cid, score in scores.items()
    }
    fired = tuple(sorted(r.id for r in satisfied if r.head in refined.active))
    return InductionResult(refined, scores, probabilities, fired)


def _candidate_heads(z_now: SafetyState, catalog: RuleCatalog) -> list[str]:
    return sorted(h for h in catalog.temporal_heads if h not in z_now.active)


def enumerate_distribution(
    window: Window,
    z_now: SafetyState,
    catalog: RuleCatalog,
    theta: float = 1.0,
) -> dict[frozenset[str], float]:
    """Exact normalized distribution over candidate refined states.

    Candidates are all supersets of z_now obtained by adding temporal-rule
    heads.  Probabilities are exp(potential) normalized over the candidate
    set; they sum to 1 up to float rounding.
    """
    heads = _candidate_heads(z_now, catalog)
    if len(heads) > ENUMERATION_BOUND:
        raise TooManyCandidates(f"{len(heads)} candidate constraints exceed {ENUMERATION_BOUND}")
    scores, _ = _head_scores(window, z_now, catalog)
    weights: dict[frozenset[str], float] = {}
    for r in range(len(heads) + 1):
        for combo in combinations(heads, r):
            active = z_now.active | set(combo)
            psi = sum(scores[h] - theta for h in combo)
            weights[frozenset(active)] = math.exp(psi)
    total = sum(weights.values())
    return {state: w / total for state, w in weights.items()}


def brute_force_map(
    window: Window,
    z_now: SafetyState,
    catalog: RuleCatalog,
    theta: float = 1.0,
) -> SafetyState:
    """Exhaustive-enumeration MAP: the testing reference for induce_state.

    Evaluates the potential of every candidate superset and keeps the
    maximizer; ties resolve toward inclusion (larger candidate), then by
    the lexicographically smallest sorted id tuple.
    """
    heads = _candidate_heads(z_now, catalog)
    if len(heads) > ENUMERATION_BOUND:
        raise TooManyCandidates(f"{len(heads)} candidate constraints exceed {ENUMERATION_BOUND}")
    # Body satisfaction is independent of the candidate; resolve it once so
    # enumeration stays within the acceptance-suite time budget.
    satisfied = [r for r in catalog.temporal_rules if _body_holds(r, window)]
    best_psi = None
    best: frozenset[str] = z_now.active
    for r in range(len(heads) + 1):
        for combo in combinations(heads, r):
            added = set(combo)
            psi = -theta * len(added)
            for rule in satisfied:
                if rule.head in added or rule.head in z_now.active:
                    psi += rule.weight
            candidate = frozenset(z_now.active | added)
            if best_psi is None or psi > best_psi:
                best_psi, best = psi, candidate
            elif psi == best_psi:
                if len(candidate) > len(best) or (
                    len(candidate) == len(best) and sorted(candidate) < sorted(best)
                ):
                    best = candidate
    return SafetyState(z_now.t, best)
