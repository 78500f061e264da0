"""Candidate expansion and freezing: deterministic, non-adaptive pool generation.

The pool for a context is the top-m agents by cosine similarity between a
hashed embedding of the context tokens and each agent's feature embedding.
Nothing here reads learnable state, so pools are invariant to training and
cacheable per (scenario, variant).

Hashing is blake2b (stable across platforms and processes, unlike the salted
builtin hash); the seed is mixed into the message. Fixed for the repo.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .domain import AgentProfile, EmptyPool, NonExposedAgent, Scenario, TaskContext

EMBED_DIM = 16
SCALAR_BLOCK = 4  # leading dims carry the agent's scalar features
LATENCY_SCALE_MS = 100.0
TAG_BLOCK_WEIGHT = 0.5  # keeps shared tags from dominating cosine similarity


@dataclass(frozen=True)
class CeflConfig:
    """Pool-generation knobs: overshoot factor, frozen pool size, hash space."""

    overshoot: float = 1.4
    pool_size: int = 5
    embed_dim: int = EMBED_DIM
    hash_seed: int = 1729

    def __post_init__(self):
        if not self.overshoot > 1.0:
            raise ValueError("overshoot must be > 1")
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        if self.embed_dim <= SCALAR_BLOCK:
            raise ValueError(f"embed_dim must exceed the scalar block ({SCALAR_BLOCK})")


def _token_hash(token: str, seed: int) -> int:
    msg = f"{seed}\x1f{token}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "little")


def hash_embed(tokens: Sequence[str], dim: int, seed: int) -> np.ndarray:
    """Signed feature hashing of a token sequence into a fixed-length vector.

    Each token lands at index h % dim with sign from the hash's top bit; the
    result is L2-normalized unless it is all-zero (e.g. empty token list).
    """
    if dim <= 0:
        raise ValueError("dim must be > 0")
    vec = np.zeros(dim, dtype=float)
    for tok in tokens:
        h = _token_hash(tok, seed)
        idx = h % dim
        sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
        vec[idx] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


def agent_embedding(agent: AgentProfile, cfg: CeflConfig) -> np.ndarray:
    """Agent feature embedding: 4 scalar features + hashed compliance tags.

    Latency is mapped to a bounded speed score so one unbounded feature cannot
    dominate cosine similarity, and the scalar block is centered so similarity
    reflects profile differences rather than shared positivity.
    """
    speed = LATENCY_SCALE_MS / (LATENCY_SCALE_MS + agent.latency)
    scalars = np.array(
        [agent.risk_profile, agent.stability_score, speed, agent.auditability_score]
    ) - 0.5
    tag_block = hash_embed(sorted(agent.compliance_tags), cfg.embed_dim - SCALAR_BLOCK, cfg.hash_seed)
    return np.concatenate([scalars, TAG_BLOCK_WEIGHT * tag_block])


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def context_tokens(scenario: Scenario, variant: int, keywords: Sequence[str]) -> list[str]:
    return [scenario.value, f"variant-{variant}", *keywords]


def expand_and_freeze(
    ctx: TaskContext,
    agents: Sequence[AgentProfile],
    cfg: CeflConfig,
    keywords: Sequence[str],
) -> tuple[AgentProfile, ...]:
    """Generate the frozen candidate pool for a context.

    Ranks all agents by cosine similarity against the hashed context tokens
    (ties by id, ascending), keeps the top ceil(overshoot * m), then freezes
    the top m of those. The returned pool is in canonical id order.
    """
    if not agents:
        raise EmptyPool("expand_and_freeze requires a non-empty agent roster")
    ids = [a.id for a in agents]
    if len(set(ids)) != len(ids):
        raise ValueError("agent ids must be unique within a candidate set")

    ctx_vec = hash_embed(context_tokens(ctx.scenario, ctx.variant, keywords), cfg.embed_dim, cfg.hash_seed)
    ranked = sorted(
        agents,
        key=lambda a: (-cosine(agent_embedding(a, cfg), ctx_vec), a.id),
    )
    overshoot_count = min(math.ceil(cfg.overshoot * cfg.pool_size), len(agents))
    shortlist = ranked[:overshoot_count]
    frozen = shortlist[: min(cfg.pool_size, len(shortlist))]
    return tuple(sorted(frozen, key=lambda a: a.id))


def check_exposure(
    agents: Sequence[AgentProfile],
    cfg: CeflConfig,
    variant_keywords: Mapping[int, Sequence[str]],
    scenario: Scenario,
) -> None:
    """Verify every agent appears in at least one variant's pool.

    Run once per scenario at configuration time; raises NonExposedAgent naming
    the starved agents otherwise.
    """
    exposed: set[str] = set()
    for variant, keywords in sorted(variant_keywords.items()):
        ctx = TaskContext(scenario=scenario, variant=variant, requirement_vector=np.zeros(cfg.embed_dim))
        pool = expand_and_freeze(ctx, agents, cfg, keywords)
        exposed.update(a.id for a in pool)
    missing = sorted(set(a.id for a in agents) - exposed)
    if missing:
        raise NonExposedAgent(
            f"agents {missing} never enter any variant pool for {scenario.value}; "
            "zero exposure probability violates candidate-generation guarantees"
        )


def pool_table(
    agents: Sequence[AgentProfile],
    cfg: CeflConfig,
    variant_keywords: Mapping[int, Sequence[str]],
    scenario: Scenario,
) -> dict[int, tuple[AgentProfile, ...]]:
    """Precompute the (deterministic) pool for every variant of a scenario."""
    table = {}
    for variant, keywords in sorted(variant_keywords.items()):
        ctx = TaskContext(scenario=scenario, variant=variant, requirement_vector=np.zeros(cfg.embed_dim))
        table[variant] = expand_and_freeze(ctx, agents, cfg, keywords)
    return table
