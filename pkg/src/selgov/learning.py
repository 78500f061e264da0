"""Projection operators and the dual projected-gradient updates.

Selection parameters live in a box, and the policy they induce on the current
surfaced set must keep every probability inside [p_min, gamma]. There is no
closed-form Euclidean projection in parameter space for softmax constraints,
so feasibility is restored by bisecting the step scale between the last
feasible parameters and the raw update (and, for drift across variants, by
bisecting a shrink toward zero, whose induced policy is uniform and feasible).

Reducer knobs are box-projected coordinate-wise. Distribution-level repairs
use the capped-simplex water-filling projection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import (
    SIGMA_FLOOR,
    ClipEvent,
    ConstraintSpec,
    InfeasibleConstraintSet,
    Mode,
    ReducerParams,
    SelectionParams,
)
from .scoring import PolicyContext, PolicyGradient

FEASIBILITY_TOL = 1e-9
BISECT_ITERS = 40


@dataclass(frozen=True)
class UpdateOutcome:
    """Before / raw (post-gradient) / after (post-projection) parameters."""

    params_before: object
    params_raw: object
    params_after: object
    clip_events: tuple[ClipEvent, ...]


def project_capped_simplex(p: Sequence[float], floor: float, cap: float) -> np.ndarray:
    """Project a probability vector onto {q : sum q = 1, floor <= q_i <= cap}.

    Iterative water-filling: clip violators to their bound and redistribute the
    remaining mass proportionally among the still-free coordinates, repeating
    until no bound is violated. Feasible inputs are returned unchanged; the
    result sums to 1 within 1e-12. Deterministic, at most len(p) passes.
    """
    p = np.asarray(p, dtype=float)
    n = len(p)
    if n < 1:
        raise ValueError("empty probability vector")
    if floor < 0.0 or cap < floor:
        raise InfeasibleConstraintSet(f"need 0 <= floor <= cap, got floor={floor}, cap={cap}")
    if floor * n > 1.0 + 1e-12 or cap * n < 1.0 - 1e-12:
        raise InfeasibleConstraintSet(
            f"capped simplex empty for n={n}: floor*n={floor * n:.6f}, cap*n={cap * n:.6f}"
        )
    if np.all(p >= floor - 1e-15) and np.all(p <= cap + 1e-15) and abs(p.sum() - 1.0) < 1e-12:
        return p.copy()

    q = np.array(p, dtype=float)
    state = np.zeros(n, dtype=int)  # 0 free, 1 at cap, -1 at floor
    for _ in range(2 * n + 2):
        free = state == 0
        if not free.any():
            break
        mass = 1.0 - cap * np.count_nonzero(state == 1) - floor * np.count_nonzero(state == -1)
        s_free = float(p[free].sum())
        if s_free <= 0.0:
            q[free] = mass / np.count_nonzero(free)
        else:
            q[free] = p[free] * (mass / s_free)
        over = free & (q > cap + 1e-15)
        if over.any():
            state[over] = 1
            q[over] = cap
            continue
        under = free & (q < floor - 1e-15)
        if under.any():
            state[under] = -1
            q[under] = floor
            continue
        break
    q[state == 1] = cap
    q[state == -1] = floor
    total = float(q.sum())
    if abs(total - 1.0) > 1e-9:
        raise InfeasibleConstraintSet(
            f"water-filling failed to converge: sum={total!r} (floor={floor}, cap={cap}, p={p!r})"
        )
    return q


def policy_feasible(probs: np.ndarray, spec: ConstraintSpec, tol: float = FEASIBILITY_TOL) -> bool:
    """Every surfaced-set probability in [p_min - tol, gamma + tol].

    Vacuously true for a singleton set, whose only distribution is [1.0].
    """
    if len(probs) <= 1:
        return True
    return float(probs.min()) >= spec.p_min - tol and float(probs.max()) <= spec.gamma + tol


def _blend_theta(base: SelectionParams, target: SelectionParams, t: float) -> SelectionParams:
    return base.replace(
        feature_weights=(1.0 - t) * base.feature_weights + t * target.feature_weights,
        agent_bias=(1.0 - t) * base.agent_bias + t * target.agent_bias,
    )


def _bisect_to_feasible(
    base: SelectionParams,
    target: SelectionParams,
    ctx: PolicyContext,
    spec: ConstraintSpec,
) -> SelectionParams:
    """Largest step scale in [0, 1] from feasible base toward target that keeps
    the induced policy feasible. Base must be feasible; result always is."""
    lo, hi = 0.0, 1.0
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        cand = _blend_theta(base, target, mid)
        if policy_feasible(ctx.probabilities(cand), spec):
            lo = mid
        else:
            hi = mid
    return _blend_theta(base, target, lo)


def _policy_clip_events(
    raw_probs: np.ndarray,
    projected_probs: np.ndarray,
    spec: ConstraintSpec,
    prefix: str = "",
) -> list[ClipEvent]:
    events = []
    if float(raw_probs.max()) > spec.gamma + FEASIBILITY_TOL:
        events.append(
            ClipEvent(
                parameter=prefix + "policy_max_prob",
                raw_value=float(raw_probs.max()),
                projected_value=float(projected_probs.max()),
                constraint=f"gamma<={spec.gamma}",
            )
        )
    if float(raw_probs.min()) < spec.p_min - FEASIBILITY_TOL:
        events.append(
            ClipEvent(
                parameter=prefix + "policy_min_prob",
                raw_value=float(raw_probs.min()),
                projected_value=float(projected_probs.min()),
                constraint=f"p_min>={spec.p_min}",
            )
        )
    return events


def repair_policy_feasibility(
    theta: SelectionParams, ctx: PolicyContext, spec: ConstraintSpec
) -> tuple[SelectionParams, tuple[ClipEvent, ...]]:
    """Restore feasibility of theta on a surfaced set it was not projected for.

    Variant switches can present a surfaced set on which the carried-over
    policy violates the probability bounds; shrinking theta toward zero moves
    the policy monotonically toward uniform, so the largest feasible shrink is
    found by bisection. Identity (no events) when already feasible.
    """
    probs = ctx.probabilities(theta)
    if policy_feasible(probs, spec):
        return theta, ()
    zero = theta.replace(
        feature_weights=np.zeros_like(theta.feature_weights),
        agent_bias=np.zeros_like(theta.agent_bias),
    )
    repaired = _bisect_to_feasible(zero, theta, ctx, spec)
    events = _policy_clip_events(probs, ctx.probabilities(repaired), spec, prefix="preselect_")
    return repaired, tuple(events)


def _clamp_theta_box(
    theta: SelectionParams, spec: ConstraintSpec
) -> tuple[SelectionParams, list[ClipEvent]]:
    lo, hi = spec.theta_box
    events = []
    w = np.clip(theta.feature_weights, lo, hi)
    b = np.clip(theta.agent_bias, lo, hi)
    for j, (raw, new) in enumerate(zip(theta.feature_weights, w)):
        if raw != new:
            events.append(ClipEvent(f"feature_weights[{j}]", float(raw), float(new), "theta_box"))
    for j, (raw, new) in enumerate(zip(theta.agent_bias, b)):
        if raw != new:
            events.append(ClipEvent(f"agent_bias[{j}]", float(raw), float(new), "theta_box"))
    if events:
        theta = theta.replace(feature_weights=w, agent_bias=b)
    return theta, events


def project_theta(
    theta_raw: SelectionParams,
    ctx: PolicyContext,
    spec: ConstraintSpec,
    theta_base: SelectionParams,
) -> tuple[SelectionParams, tuple[ClipEvent, ...]]:
    """Two-stage projection: box-clamp coordinates, then restore the policy
    probability bounds on the current surfaced set by step-scale bisection
    from ``theta_base`` (the pre-step parameters, feasible on this set)."""
    boxed, events = _clamp_theta_box(theta_raw, spec)
    probs = ctx.probabilities(boxed)
    if policy_feasible(probs, spec):
        return boxed, tuple(events)
    base = theta_base
    if not policy_feasible(ctx.probabilities(base), spec):
        # defensive: the loop repairs pre-selection, so this is unreachable there
        base, pre_events = repair_policy_feasibility(base, ctx, spec)
        events.extend(pre_events)
    projected = _bisect_to_feasible(base, boxed, ctx, spec)
    events.extend(_policy_clip_events(probs, ctx.probabilities(projected), spec))
    return projected, tuple(events)


def project_phi(
    phi_raw: ReducerParams, spec: ConstraintSpec
) -> tuple[ReducerParams, tuple[ClipEvent, ...]]:
    """Coordinate-wise box clamp of the reducer knobs onto the governed set."""
    events = []
    sigma = phi_raw.variance_clamp
    if sigma > spec.sigma_max:
        events.append(ClipEvent("variance_clamp", sigma, spec.sigma_max, f"sigma_max<={spec.sigma_max}"))
        sigma = spec.sigma_max
    elif sigma < SIGMA_FLOOR:
        events.append(ClipEvent("variance_clamp", sigma, SIGMA_FLOOR, f"sigma_floor>={SIGMA_FLOOR}"))
        sigma = SIGMA_FLOOR
    k = phi_raw.exploration_quota
    if k < spec.k_min:
        events.append(ClipEvent("exploration_quota", float(k), float(spec.k_min), f"k_min>={spec.k_min}"))
        k = spec.k_min
    d = phi_raw.diversity_buckets
    if d < spec.d_min:
        events.append(ClipEvent("diversity_buckets", float(d), float(spec.d_min), f"d_min>={spec.d_min}"))
        d = spec.d_min
    eps = phi_raw.exploration_coeff
    lo_eps = spec.p_min
    if eps < lo_eps:
        events.append(ClipEvent("exploration_coeff", eps, lo_eps, f"epsilon>={lo_eps}"))
        eps = lo_eps
    elif eps > 1.0:
        events.append(ClipEvent("exploration_coeff", eps, 1.0, "epsilon<=1"))
        eps = 1.0
    if not events:
        return phi_raw, ()
    return (
        ReducerParams(
            score_threshold=phi_raw.score_threshold,
            variance_clamp=sigma,
            exploration_quota=k,
            diversity_buckets=d,
            exploration_coeff=eps,
        ),
        tuple(events),
    )


def update_selection(
    theta: SelectionParams,
    grad: PolicyGradient,
    reward: int,
    lr_alpha: float,
    spec: ConstraintSpec,
    mode: Mode,
    ctx: PolicyContext,
) -> UpdateOutcome:
    """Reward-weighted log-policy gradient step under the mode's update rule."""
    if reward not in (-1, 1):
        raise ValueError(f"reward must be -1 or +1, got {reward}")
    if mode in (Mode.STATIC, Mode.SCALAR_TOPK):
        return UpdateOutcome(theta, theta, theta, ())
    raw = theta.replace(
        feature_weights=theta.feature_weights + lr_alpha * reward * grad.d_feature_weights,
        agent_bias=theta.agent_bias + lr_alpha * reward * grad.d_agent_bias,
    )
    if mode is Mode.UNCONSTRAINED_RL:
        return UpdateOutcome(theta, raw, raw, ())
    projected, events = project_theta(raw, ctx, spec, theta_base=theta)
    return UpdateOutcome(theta, raw, projected, events)


def selection_surrogate(
    phi: ReducerParams, surfaced_scores: np.ndarray, sigma_ref: float
) -> float:
    """Differentiable surfaced-quality surrogate.

    Expected surfaced score under a soft selection whose sharpness scales with
    the variance-clamp knob (normalized by the governed ceiling), minus a
    threshold-tightness penalty. Increasing the clamp sharpens selection and
    raises the surrogate, so sustained positive reward presses the knob against
    its ceiling; the threshold term couples the remaining continuous knobs.
    """
    s = np.asarray(surfaced_scores, dtype=float)
    z = s * (phi.variance_clamp / sigma_ref)
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    return float(np.dot(p, s) - phi.exploration_coeff * phi.score_threshold)


def selection_surrogate_grad(
    phi: ReducerParams, surfaced_scores: np.ndarray, sigma_ref: float
) -> dict[str, float]:
    """Analytic gradient of the surrogate w.r.t. the continuous knobs."""
    s = np.asarray(surfaced_scores, dtype=float)
    z = s * (phi.variance_clamp / sigma_ref)
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    mean = float(np.dot(p, s))
    var = float(np.dot(p, (s - mean) ** 2))
    return {
        "variance_clamp": var / sigma_ref,
        "score_threshold": -phi.exploration_coeff,
        "exploration_coeff": -phi.score_threshold,
    }


def update_reducer(
    phi: ReducerParams,
    reward: int,
    lr_beta: float,
    surfaced_scores: np.ndarray,
    spec: ConstraintSpec,
    mode: Mode,
) -> UpdateOutcome:
    """Reward-weighted surrogate-gradient step on the continuous reducer knobs.

    Integer knobs (quota, buckets) are governance-fixed and never stepped.
    """
    if reward not in (-1, 1):
        raise ValueError(f"reward must be -1 or +1, got {reward}")
    if mode in (Mode.STATIC, Mode.SCALAR_TOPK):
        return UpdateOutcome(phi, phi, phi, ())
    grad = selection_surrogate_grad(phi, surfaced_scores, sigma_ref=spec.sigma_max)
    step = lr_beta * reward
    raw = phi.replace(
        score_threshold=phi.score_threshold + step * grad["score_threshold"],
        variance_clamp=phi.variance_clamp + step * grad["variance_clamp"],
        exploration_coeff=phi.exploration_coeff + step * grad["exploration_coeff"],
    )
    if mode is Mode.UNCONSTRAINED_RL:
        return UpdateOutcome(phi, raw, raw, ())
    projected, events = project_phi(raw, spec)
    return UpdateOutcome(phi, raw, projected, events)
