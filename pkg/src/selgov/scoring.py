"""Learnable candidate scoring and the softmax selection policy.

Scores are linear in four sub-scores (utility match, risk penalty, stability,
auditability) plus a per-agent bias. The policy is a temperature softmax over
the surfaced set, with exact closed-form log-policy gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cefl import CeflConfig, agent_embedding, cosine
from .domain import AgentProfile, IndexOutOfRange, SelectionParams, TaskContext

FEATURE_NAMES = ("utility_match", "risk_penalty", "stability", "auditability")


def sub_scores(agent: AgentProfile, ctx: TaskContext, embedding: np.ndarray) -> np.ndarray:
    """The four scoring features for one candidate under one context."""
    return np.array(
        [
            cosine(embedding, ctx.requirement_vector),
            1.0 - agent.risk_profile,
            agent.stability_score,
            agent.auditability_score,
        ]
    )


def score(
    agent: AgentProfile,
    ctx: TaskContext,
    theta: SelectionParams,
    embedding: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Linear score s = w . features + bias[agent]; returns (s, features)."""
    feats = sub_scores(agent, ctx, embedding)
    s = float(np.dot(theta.feature_weights, feats) + theta.agent_bias[theta.bias_index(agent.id)])
    return s, feats


@dataclass(frozen=True)
class ScoreVector:
    """Scores plus the sub-scores they came from, for one candidate pool."""

    agent_ids: tuple[str, ...]
    scores: np.ndarray
    features: np.ndarray  # shape (len(agent_ids), 4)

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        f = np.asarray(self.features, dtype=float)
        if s.shape != (len(self.agent_ids),) or f.shape != (len(self.agent_ids), 4):
            raise ValueError("scores and features must align with agent_ids")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(f))):
            raise ValueError("scores and features must be finite")
        s.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "features", f)

    def __len__(self) -> int:
        return len(self.agent_ids)

    def subset(self, indices: Sequence[int]) -> "ScoreVector":
        idx = list(indices)
        return ScoreVector(
            agent_ids=tuple(self.agent_ids[i] for i in idx),
            scores=self.scores[idx],
            features=self.features[idx],
        )

    def with_scores(self, scores: np.ndarray) -> "ScoreVector":
        return ScoreVector(agent_ids=self.agent_ids, scores=scores, features=self.features)


def score_pool(
    pool: Sequence[AgentProfile],
    ctx: TaskContext,
    theta: SelectionParams,
    cfg: CeflConfig,
    embeddings: dict[str, np.ndarray] | None = None,
) -> ScoreVector:
    """Score every pooled candidate; embeddings may be precomputed per run."""
    rows = []
    scores = []
    for agent in pool:
        emb = embeddings[agent.id] if embeddings is not None else agent_embedding(agent, cfg)
        s, feats = score(agent, ctx, theta, emb)
        scores.append(s)
        rows.append(feats)
    return ScoreVector(
        agent_ids=tuple(a.id for a in pool),
        scores=np.array(scores),
        features=np.array(rows).reshape(len(pool), 4),
    )


def policy(scores: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax with max-subtraction; sums to 1 within 1e-12."""
    if temperature <= 0.0:
        raise ValueError("temperature must be > 0")
    s = np.asarray(scores, dtype=float)
    if s.size < 1:
        raise ValueError("policy requires at least one candidate")
    z = s / temperature
    z = z - np.max(z)
    e = np.exp(z)
    return e / np.sum(e)


@dataclass(frozen=True)
class PolicyContext:
    """Everything needed to re-evaluate the surfaced-set policy for any theta.

    Used by the projection machinery, which repeatedly recomputes probabilities
    while bisecting a candidate parameter step.
    """

    agent_ids: tuple[str, ...]
    features: np.ndarray  # (|S|, 4)
    bias_indices: tuple[int, ...]

    @classmethod
    def from_score_vector(cls, surfaced: ScoreVector, theta: SelectionParams) -> "PolicyContext":
        return cls(
            agent_ids=surfaced.agent_ids,
            features=surfaced.features,
            bias_indices=tuple(theta.bias_index(a) for a in surfaced.agent_ids),
        )

    def scores(self, theta: SelectionParams) -> np.ndarray:
        return self.features @ theta.feature_weights + theta.agent_bias[list(self.bias_indices)]

    def probabilities(self, theta: SelectionParams) -> np.ndarray:
        return policy(self.scores(theta), theta.temperature)


@dataclass(frozen=True)
class PolicyGradient:
    """Gradient of log pi(chosen) with respect to the learnable coordinates."""

    d_feature_weights: np.ndarray
    d_agent_bias: np.ndarray


def log_policy_grad(
    surfaced: ScoreVector,
    theta: SelectionParams,
    chosen_index: int,
) -> PolicyGradient:
    """Exact gradient of log pi(chosen | surfaced set) w.r.t. theta.

    d log p_k / d s_i = (1[i=k] - p_i) / temperature, pushed through the
    linear score: weights collect feature rows, biases collect indicators.
    """
    n = len(surfaced)
    if not (0 <= chosen_index < n):
        raise IndexOutOfRange(f"chosen_index {chosen_index} outside surfaced set of size {n}")
    probs = policy(surfaced.scores, theta.temperature)
    coeff = -probs
    coeff[chosen_index] += 1.0
    coeff /= theta.temperature
    d_w = coeff @ surfaced.features
    d_b = np.zeros_like(theta.agent_bias)
    for c, agent_id in zip(coeff, surfaced.agent_ids):
        d_b[theta.bias_index(agent_id)] += c
    return PolicyGradient(d_feature_weights=d_w, d_agent_bias=d_b)
