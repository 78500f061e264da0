"""Governed reduction: hard filters, variance clamp, Pareto frontier,
diversity bucketing, and exploration-aware surfacing.

Surfacing is deterministic given the reducer knobs; all run stochasticity
lives in the selection step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import (
    AgentProfile,
    AllCandidatesBlocked,
    ClipEvent,
    ConstraintSpec,
    EmptySurfacedSet,
    ReducerParams,
)
from .scoring import ScoreVector

# risk_profile thirds used as diversity buckets
_BUCKET_EDGES = (1.0 / 3.0, 2.0 / 3.0)


def risk_bucket(risk: float) -> int:
    if risk < _BUCKET_EDGES[0]:
        return 0
    if risk < _BUCKET_EDGES[1]:
        return 1
    return 2


def apply_hard_constraints(
    pool: Sequence[AgentProfile], required_tag: str
) -> tuple[AgentProfile, ...]:
    """Drop pooled agents lacking the scenario's required compliance tag."""
    kept = tuple(a for a in pool if required_tag in a.compliance_tags)
    if not kept:
        raise AllCandidatesBlocked(
            f"no pooled candidate carries required tag {required_tag!r}"
        )
    return kept


def variance_clamp(scores: ScoreVector, sigma: float) -> ScoreVector:
    """Rescale score deviations about the mean so population std <= sigma.

    Identity when already within bounds; mean preserved exactly. Idempotent.
    """
    if sigma <= 0.0:
        raise ValueError("sigma must be > 0")
    if len(scores) < 1:
        raise ValueError("variance_clamp requires at least one score")
    s = scores.scores
    mean = float(np.mean(s))
    std = float(np.std(s))
    if std <= sigma:
        return scores
    return scores.with_scores(mean + (s - mean) * (sigma / std))


def _dominates(a: np.ndarray, b: np.ndarray) -> bool:
    """a dominates b on (max utility, max stability, min risk)."""
    ge = a[0] >= b[0] and a[1] >= b[1] and a[2] <= b[2]
    strict = a[0] > b[0] or a[1] > b[1] or a[2] < b[2]
    return ge and strict


def pareto_filter(
    pool: Sequence[AgentProfile], scores: ScoreVector
) -> list[int]:
    """Indices of candidates not strictly dominated, in id order.

    Objectives: maximize utility match, maximize stability, minimize risk.
    """
    objectives = [
        np.array([scores.features[i][0], a.stability_score, a.risk_profile])
        for i, a in enumerate(pool)
    ]
    frontier = []
    for i in range(len(pool)):
        if not any(_dominates(objectives[j], objectives[i]) for j in range(len(pool)) if j != i):
            frontier.append(i)
    frontier.sort(key=lambda i: pool[i].id)
    return frontier


@dataclass(frozen=True)
class SurfacedSet:
    """The reducer's output: surfaced candidates plus any degradation alerts."""

    agents: tuple[AgentProfile, ...]
    scores: ScoreVector
    clip_events: tuple[ClipEvent, ...] = ()


def surface(
    pool: Sequence[AgentProfile],
    scores: ScoreVector,
    phi: ReducerParams,
    spec: ConstraintSpec,
) -> SurfacedSet:
    """Threshold -> Pareto -> diversity coverage -> exploration fill.

    Greedy construction: among the threshold/Pareto survivors, cover
    min(d, #non-empty buckets) risk buckets by repeatedly taking the
    best-scoring candidate from a still-uncovered bucket (so the top scorer is
    always surfaced). The exploration quota then tops the set up to
    min(k, |pool|) with next-best scorers from the whole filtered pool, which
    may resurface candidates the threshold or frontier dropped - the quota
    exists precisely to keep exploration alive. Ties break by id. Emits an
    ALERT clip event when fewer buckets than requested are populated.
    """
    if not pool:
        raise EmptySurfacedSet("surface requires a non-empty filtered pool")
    ids = [a.id for a in pool]
    if list(scores.agent_ids) != ids:
        raise ValueError("scores must align with the pool")

    order = sorted(range(len(pool)), key=lambda i: (-scores.scores[i], ids[i]))

    # (1) threshold, with top-1 fallback when it would empty the set
    kept = [i for i in order if scores.scores[i] >= phi.score_threshold]
    if not kept:
        kept = [order[0]]

    # (2) Pareto frontier among the threshold survivors
    kept_sorted = sorted(kept, key=lambda i: ids[i])
    sub_pool = [pool[i] for i in kept_sorted]
    sub_scores = scores.subset(kept_sorted)
    frontier = [kept_sorted[i] for i in pareto_filter(sub_pool, sub_scores)]

    # (3) risk-tier coverage among the frontier
    frontier_order = sorted(frontier, key=lambda i: (-scores.scores[i], ids[i]))
    buckets = {i: risk_bucket(pool[i].risk_profile) for i in range(len(pool))}
    non_empty = len({buckets[i] for i in frontier})
    d_req = min(phi.diversity_buckets, non_empty)

    clip_events = []
    if non_empty < phi.diversity_buckets:
        clip_events.append(
            ClipEvent(
                parameter="diversity_buckets",
                raw_value=float(phi.diversity_buckets),
                projected_value=float(non_empty),
                constraint="non_empty_risk_buckets",
            )
        )

    selected: list[int] = []
    covered: set[int] = set()
    while len(covered) < d_req:
        pick = next(i for i in frontier_order if i not in selected and buckets[i] not in covered)
        selected.append(pick)
        covered.add(buckets[pick])

    # (4) exploration quota, filling from the whole filtered pool
    k_req = min(phi.exploration_quota, len(pool))
    for i in order:
        if len(selected) >= k_req:
            break
        if i not in selected:
            selected.append(i)

    selected.sort(key=lambda i: ids[i])
    return SurfacedSet(
        agents=tuple(pool[i] for i in selected),
        scores=scores.subset(selected),
        clip_events=tuple(clip_events),
    )


def scalar_topk_surface(
    pool: Sequence[AgentProfile], scores: ScoreVector
) -> SurfacedSet:
    """Deterministic top-1 aggregation: no clamp, no Pareto, no diversity."""
    if not pool:
        raise EmptySurfacedSet("scalar_topk_surface requires a non-empty pool")
    ids = [a.id for a in pool]
    if list(scores.agent_ids) != ids:
        raise ValueError("scores must align with the pool")
    best = min(range(len(pool)), key=lambda i: (-scores.scores[i], ids[i]))
    return SurfacedSet(agents=(pool[best],), scores=scores.subset([best]))
