"""Scenario definitions, task sampling, and the deterministic reward oracle.

A scenario ships five variants, each with context keywords, a requirement
vector, and an affinity threshold. The evaluator compares an agent's feature
embedding against the requirement vector: reward is +1 iff the cosine affinity
clears the variant threshold. Pure and history-free by construction.

Default fixtures live in ``data/default_scenarios.json``; thresholds there
were calibrated offline (see scripts/generate_fixtures.py) so that static-mode
mean rewards land in a realistic mid-range band.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cefl import CeflConfig, agent_embedding, cosine
from .domain import AgentProfile, ReducerParams, Scenario, SelectionParams, TaskContext

N_VARIANTS = 5


@dataclass(frozen=True)
class VariantSpec:
    keywords: tuple[str, ...]
    requirement_vector: np.ndarray
    affinity_threshold: float

    def __post_init__(self):
        vec = np.asarray(self.requirement_vector, dtype=float)
        vec.setflags(write=False)
        object.__setattr__(self, "requirement_vector", vec)
        object.__setattr__(self, "keywords", tuple(self.keywords))


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: Scenario
    variants: tuple[VariantSpec, ...]
    required_tag: str

    def __post_init__(self):
        if len(self.variants) != N_VARIANTS:
            raise ValueError(f"a scenario must define exactly {N_VARIANTS} variants")

    def variant_keywords(self) -> dict[int, tuple[str, ...]]:
        return {i: v.keywords for i, v in enumerate(self.variants)}


def sample_context(spec: ScenarioSpec, rng: np.random.Generator, step_index: int = 0) -> TaskContext:
    """Uniform draw over the scenario's five variants."""
    variant = int(rng.integers(0, N_VARIANTS))
    return TaskContext(
        scenario=spec.scenario,
        variant=variant,
        requirement_vector=spec.variants[variant].requirement_vector,
        step_index=step_index,
    )


def affinity(agent: AgentProfile, ctx: TaskContext, cfg: CeflConfig) -> float:
    return cosine(agent_embedding(agent, cfg), ctx.requirement_vector)


def evaluate(agent: AgentProfile, ctx: TaskContext, spec: ScenarioSpec, cfg: CeflConfig) -> int:
    """+1 iff the agent's embedding affinity clears the variant threshold."""
    h = spec.variants[ctx.variant].affinity_threshold
    return 1 if affinity(agent, ctx, cfg) >= h else -1


def context_for_variant(spec: ScenarioSpec, variant: int, step_index: int = 0) -> TaskContext:
    return TaskContext(
        scenario=spec.scenario,
        variant=variant,
        requirement_vector=spec.variants[variant].requirement_vector,
        step_index=step_index,
    )


def reward_table(
    roster: Sequence[AgentProfile], spec: ScenarioSpec, cfg: CeflConfig
) -> dict[int, dict[str, int]]:
    """Exhaustive variant x agent reward table (used for golden fixtures)."""
    table: dict[int, dict[str, int]] = {}
    for v in range(N_VARIANTS):
        ctx = context_for_variant(spec, v)
        table[v] = {a.id: evaluate(a, ctx, spec, cfg) for a in roster}
    return table


def check_informative(roster: Sequence[AgentProfile], spec: ScenarioSpec, cfg: CeflConfig) -> None:
    """Every variant must admit at least one +1 and one -1 agent."""
    for v, rewards in reward_table(roster, spec, cfg).items():
        values = set(rewards.values())
        if values != {-1, 1}:
            raise ValueError(
                f"{spec.scenario.value} variant {v} is uninformative: rewards {sorted(values)}"
            )


@dataclass(frozen=True)
class Fixtures:
    """A complete default configuration: roster, scenarios, initial params."""

    roster: tuple[AgentProfile, ...]
    scenarios: Mapping[Scenario, ScenarioSpec]
    theta0: SelectionParams
    phi0: ReducerParams
    cefl: CeflConfig


def _agent_from_dict(d: dict) -> AgentProfile:
    return AgentProfile(
        id=d["id"],
        risk_profile=d["risk_profile"],
        stability_score=d["stability_score"],
        latency=d["latency"],
        auditability_score=d["auditability_score"],
        compliance_tags=frozenset(d["compliance_tags"]),
    )


def fixtures_from_dict(raw: dict) -> Fixtures:
    roster = tuple(sorted((_agent_from_dict(a) for a in raw["roster"]), key=lambda a: a.id))
    cefl_cfg = CeflConfig(**raw["cefl"])
    scenarios = {}
    for name, sc in raw["scenarios"].items():
        scenario = Scenario(name)
        variants = tuple(
            VariantSpec(
                keywords=tuple(v["keywords"]),
                requirement_vector=np.array(v["requirement_vector"], dtype=float),
                affinity_threshold=float(v["affinity_threshold"]),
            )
            for v in sc["variants"]
        )
        scenarios[scenario] = ScenarioSpec(
            scenario=scenario, variants=variants, required_tag=sc["required_tag"]
        )
    sp = raw["selection_params"]
    theta0 = SelectionParams(
        feature_weights=np.array(sp["feature_weights"], dtype=float),
        agent_bias=np.zeros(len(roster)),
        temperature=float(sp["temperature"]),
        agent_ids=tuple(a.id for a in roster),
    )
    rp = raw["reducer_params"]
    phi0 = ReducerParams(
        score_threshold=float(rp["score_threshold"]),
        variance_clamp=float(rp["variance_clamp"]),
        exploration_quota=int(rp["exploration_quota"]),
        diversity_buckets=int(rp["diversity_buckets"]),
        exploration_coeff=float(rp["exploration_coeff"]),
    ).validate_nominal()
    return Fixtures(roster=roster, scenarios=scenarios, theta0=theta0, phi0=phi0, cefl=cefl_cfg)


def load_fixtures(path: str | Path | None = None) -> Fixtures:
    """Load fixtures from a JSON file, defaulting to the packaged scenarios."""
    if path is None:
        raw = json.loads(
            resources.files("selgov").joinpath("data/default_scenarios.json").read_text()
        )
    else:
        raw = json.loads(Path(path).read_text())
    return fixtures_from_dict(raw)
