"""Core value types for the governed selection loop.

Everything here is an immutable value object: agent feature profiles, task
contexts, the two learnable parameter blocks (selection weights and reducer
knobs), the externally fixed constraint sets, and the per-step audit record.
Validation happens at construction and raises with the violated invariant
spelled out.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

N_SCORE_FEATURES = 4  # utility match, risk penalty, stability, auditability


class SelgovError(Exception):
    """Base class for all package errors."""


class InfeasibleConstraintSet(SelgovError):
    """The capped simplex {p : sum p = 1, floor <= p_i <= cap} is empty."""


class EmptyPool(SelgovError):
    """Candidate generation was handed an empty agent roster."""


class NonExposedAgent(SelgovError):
    """Some admissible agent never appears in any variant's candidate pool."""


class AllCandidatesBlocked(SelgovError):
    """Hard compliance filters removed every pooled candidate."""


class EmptySurfacedSet(SelgovError):
    """Surfacing produced an empty set (defensive; unreachable by construction)."""


class OutOfOrderRecord(SelgovError):
    """Audit append with a step index that is not the current log length."""


class UndefinedGSI(SelgovError):
    """Stability index is undefined because the paired run has zero variance."""


class IndexOutOfRange(SelgovError, IndexError):
    """Chosen-candidate index outside the surfaced set."""


class Scenario(enum.Enum):
    FRAUD_DETECTION = "fraud_detection"
    PAYMENTS_MONITORING = "payments_monitoring"
    QBR_ANALYSIS = "qbr_analysis"


class FailLoudAction(enum.Enum):
    NONE = "none"
    ALERT = "alert"
    THROTTLE = "throttle"
    BLOCK = "block"


class Mode(enum.Enum):
    STATIC = "static"
    SCALAR_TOPK = "scalar_topk"
    UNCONSTRAINED_RL = "unconstrained_rl"
    INCENTIVIZED = "incentivized"


def _check_unit(name: str, value: float) -> None:
    if not (0.0 <= value <= 1.0):
        raise ValueError(f"{name}={value!r} violates invariant 0 <= {name} <= 1")


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.asarray(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class AgentProfile:
    """A candidate agent: static scalar features plus compliance tags."""

    id: str
    risk_profile: float
    stability_score: float
    latency: float
    auditability_score: float
    compliance_tags: frozenset[str]

    def __post_init__(self):
        if not self.id:
            raise ValueError("id must be a non-empty string")
        _check_unit("risk_profile", self.risk_profile)
        _check_unit("stability_score", self.stability_score)
        _check_unit("auditability_score", self.auditability_score)
        if not (self.latency > 0.0 and math.isfinite(self.latency)):
            raise ValueError(f"latency={self.latency!r} violates invariant latency > 0")
        object.__setattr__(self, "compliance_tags", frozenset(self.compliance_tags))


@dataclass(frozen=True)
class TaskContext:
    """One drawn task instance: scenario, variant, requirement vector, step."""

    scenario: Scenario
    variant: int
    requirement_vector: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        if not (0 <= self.variant < 5):
            raise ValueError(f"variant={self.variant} violates invariant 0 <= variant < 5")
        if self.step_index < 0:
            raise ValueError("step_index must be >= 0")
        vec = _readonly(self.requirement_vector)
        if not np.all(np.isfinite(vec)):
            raise ValueError("requirement_vector must be finite")
        object.__setattr__(self, "requirement_vector", vec)


@dataclass(frozen=True)
class SelectionParams:
    """Learnable scoring parameters: per-feature weights, per-agent biases,
    and a softmax temperature.

    Biases are aligned with ``agent_ids``; the temperature shapes the policy
    but receives no gradient (it stays > 0 structurally, see `learning`).
    """

    feature_weights: np.ndarray
    agent_bias: np.ndarray
    temperature: float
    agent_ids: tuple[str, ...]

    def __post_init__(self):
        w = _readonly(self.feature_weights)
        b = _readonly(self.agent_bias)
        if w.shape != (N_SCORE_FEATURES,):
            raise ValueError(f"feature_weights must have shape ({N_SCORE_FEATURES},), got {w.shape}")
        if b.ndim != 1 or len(b) != len(self.agent_ids):
            raise ValueError("agent_bias length must match agent_ids")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("selection parameters must be finite")
        if not (self.temperature > 0.0 and math.isfinite(self.temperature)):
            raise ValueError(f"temperature={self.temperature!r} violates invariant temperature > 0")
        if len(set(self.agent_ids)) != len(self.agent_ids):
            raise ValueError("agent_ids must be unique")
        object.__setattr__(self, "feature_weights", w)
        object.__setattr__(self, "agent_bias", b)
        object.__setattr__(self, "agent_ids", tuple(self.agent_ids))

    def bias_index(self, agent_id: str) -> int:
        try:
            return self.agent_ids.index(agent_id)
        except ValueError:
            raise KeyError(f"agent {agent_id!r} has no bias entry") from None

    def replace(self, feature_weights=None, agent_bias=None) -> "SelectionParams":
        return SelectionParams(
            feature_weights=self.feature_weights if feature_weights is None else feature_weights,
            agent_bias=self.agent_bias if agent_bias is None else agent_bias,
            temperature=self.temperature,
            agent_ids=self.agent_ids,
        )


@dataclass(frozen=True)
class ReducerParams:
    """Governed reducer knobs.

    Continuous knobs (threshold, variance clamp, exploration coefficient) are
    learnable; the integer quota and bucket count are governance-fixed. The
    nominal ranges below hold for configured values; the ungoverned baseline
    may drift outside them, which is the point of that baseline.
    """

    score_threshold: float
    variance_clamp: float
    exploration_quota: int
    diversity_buckets: int
    exploration_coeff: float

    def __post_init__(self):
        for name in ("score_threshold", "variance_clamp", "exploration_coeff"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.exploration_quota < 0:
            raise ValueError("exploration_quota must be >= 0")
        if self.diversity_buckets < 1:
            raise ValueError("diversity_buckets must be >= 1")

    def validate_nominal(self) -> "ReducerParams":
        """Check the stated configuration ranges (for user-supplied params)."""
        if self.variance_clamp <= 0.0:
            raise ValueError("variance_clamp must be > 0")
        _check_unit("exploration_coeff", self.exploration_coeff)
        return self

    def replace(self, **changes) -> "ReducerParams":
        fields = dict(
            score_threshold=self.score_threshold,
            variance_clamp=self.variance_clamp,
            exploration_quota=self.exploration_quota,
            diversity_buckets=self.diversity_buckets,
            exploration_coeff=self.exploration_coeff,
        )
        fields.update(changes)
        return ReducerParams(**fields)


# Minimum admissible variance-clamp value after projection. The governed box
# for the clamp is [SIGMA_FLOOR, sigma_max]: a pure ceiling would let gradient
# drift push the clamp to zero or below, where rescaling is undefined.
SIGMA_FLOOR = 1e-3


@dataclass(frozen=True)
class ConstraintSpec:
    """Externally fixed sovereignty constraint sets.

    Immutable by construction; the learning process receives it read-only.
    ``p_min`` floors every surfaced candidate's selection probability, ``gamma``
    caps the maximum, ``sigma_max``/``k_min``/``d_min`` box the reducer knobs,
    ``theta_box`` bounds each learnable selection coordinate.
    """

    p_min: float = 0.1
    gamma: float = 0.95
    sigma_max: float = 0.18
    k_min: int = 2
    d_min: int = 2
    theta_box: tuple[float, float] = (-10.0, 10.0)

    def __post_init__(self):
        if not (0.0 < self.p_min < 1.0):
            raise ValueError(f"p_min={self.p_min} violates invariant 0 < p_min < 1")
        if not (self.p_min < self.gamma <= 1.0):
            raise ValueError(f"gamma={self.gamma} violates invariant p_min < gamma <= 1")
        if self.sigma_max <= 0.0:
            raise ValueError("sigma_max must be > 0")
        if self.k_min < 0:
            raise ValueError("k_min must be >= 0")
        if self.d_min < 1:
            raise ValueError("d_min must be >= 1")
        lo, hi = self.theta_box
        if not (lo < hi and math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError("theta_box must be a finite (lo, hi) pair with lo < hi")
        if not (lo <= 0.0 <= hi):
            raise ValueError("theta_box must contain 0 (feasibility repair scales toward 0)")


def validate_constraint_spec(spec: ConstraintSpec, max_surfaced: int) -> ConstraintSpec:
    """Check that the capped simplex is non-empty for every surfaced-set size.

    For sizes >= 2 this requires p_min * size <= 1 <= gamma * size. A singleton
    set admits only the vector [1.0]; the concentration cap is vacuous there
    (there is no distribution to spread), so size 1 only requires p_min <= 1.
    """
    if max_surfaced < 1:
        raise ValueError("max_surfaced must be >= 1")
    for size in range(2, max_surfaced + 1):
        if spec.p_min * size > 1.0 + 1e-12:
            raise InfeasibleConstraintSet(
                f"p_min={spec.p_min} * size={size} = {spec.p_min * size:.4f} > 1: "
                "probability floor cannot sum below 1"
            )
        if spec.gamma * size < 1.0 - 1e-12:
            raise InfeasibleConstraintSet(
                f"gamma={spec.gamma} < 1/size for size={size}: "
                "capped probabilities cannot sum to 1"
            )
    return spec


@dataclass(frozen=True)
class ClipEvent:
    """One projection intervention: which knob, what it was, where it landed."""

    parameter: str
    raw_value: float
    projected_value: float
    constraint: str

    def to_json_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "raw_value": self.raw_value,
            "projected_value": self.projected_value,
            "constraint": self.constraint,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ClipEvent":
        return cls(d["parameter"], d["raw_value"], d["projected_value"], d["constraint"])


@dataclass(frozen=True)
class AuditRecord:
    """Full trace of one loop iteration.

    ``variant_policies`` snapshots the surfaced-set policy for all five
    variants at the parameters that acted at this step (post feasibility
    repair, pre gradient update); it is what makes every summary metric
    recomputable from the log alone.
    """

    step: int
    scenario: Scenario
    variant: int
    candidate_pool: tuple[str, ...]
    scores: tuple[float, ...]
    surfaced: tuple[str, ...]
    surfaced_probs: tuple[float, ...]
    chosen: str | None
    output_summary: str
    reward: int | None
    theta_after: dict
    phi_after: dict
    clip_events: tuple[ClipEvent, ...]
    fail_loud_action: FailLoudAction
    variant_policies: tuple[tuple[tuple[str, float], ...], ...] = field(default=())

    def __post_init__(self):
        if (len(self.clip_events) > 0) != (self.fail_loud_action is not FailLoudAction.NONE):
            raise ValueError(
                "clip_events non-empty iff fail_loud_action != NONE "
                f"(got {len(self.clip_events)} events, action {self.fail_loud_action})"
            )
        if not set(self.surfaced) <= set(self.candidate_pool):
            raise ValueError("surfaced set must be a subset of the candidate pool")
        if self.chosen is not None and self.chosen not in self.surfaced:
            raise ValueError("chosen agent must belong to the surfaced set")
        if self.chosen is None and self.fail_loud_action is not FailLoudAction.BLOCK:
            raise ValueError("a step without a selection must carry a BLOCK action")
        if self.reward is not None and self.reward not in (-1, 1):
            raise ValueError(f"reward must be -1 or +1, got {self.reward}")
        if len(self.scores) != len(self.candidate_pool):
            raise ValueError("one score per pooled candidate required")
        if len(self.surfaced_probs) != len(self.surfaced):
            raise ValueError("one probability per surfaced candidate required")

    def to_json_dict(self) -> dict:
        return {
            "step": self.step,
            "scenario": self.scenario.value,
            "variant": self.variant,
            "candidate_pool": list(self.candidate_pool),
            "scores": list(self.scores),
            "surfaced": list(self.surfaced),
            "surfaced_probs": list(self.surfaced_probs),
            "chosen": self.chosen,
            "output_summary": self.output_summary,
            "reward": self.reward,
            "theta_after": self.theta_after,
            "phi_after": self.phi_after,
            "clip_events": [e.to_json_dict() for e in self.clip_events],
            "fail_loud_action": self.fail_loud_action.value,
            "variant_policies": [
                [[aid, p] for aid, p in snap] for snap in self.variant_policies
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "AuditRecord":
        return cls(
            step=d["step"],
            scenario=Scenario(d["scenario"]),
            variant=d["variant"],
            candidate_pool=tuple(d["candidate_pool"]),
            scores=tuple(d["scores"]),
            surfaced=tuple(d["surfaced"]),
            surfaced_probs=tuple(d["surfaced_probs"]),
            chosen=d["chosen"],
            output_summary=d["output_summary"],
            reward=d["reward"],
            theta_after=d["theta_after"],
            phi_after=d["phi_after"],
            clip_events=tuple(ClipEvent.from_json_dict(e) for e in d["clip_events"]),
            fail_loud_action=FailLoudAction(d["fail_loud_action"]),
            variant_policies=tuple(
                tuple((aid, p) for aid, p in snap) for snap in d["variant_policies"]
            ),
        )
