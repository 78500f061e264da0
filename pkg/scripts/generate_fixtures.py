#!/usr/bin/env python3
"""Generate and calibrate the default fixtures shipped with the package.

This is an offline tool, not runtime logic. It:

1. defines the 7-agent roster and per-variant context keywords;
2. constructs each variant's requirement vector by a least-norm solve so that
   a hand-designed winner set (the agents rewarded +1) holds exactly, with a
   comfortable affinity margin around the threshold;
3. searches the embedding hash seed until pool-structure constraints hold for
   every (scenario, variant): full roster exposure, the scenario champion
   present in every pool, a Pareto frontier of at least 2 after compliance
   filtering, and at least 2 populated risk buckets;
4. calibrates the initial feature-weight scale so the static policy's initial
   selection concentration sits in a mid-range band;
5. verifies reward informativeness and prints a calibration report;
6. writes src/selgov/data/default_scenarios.json and the golden reward table
   used by the tests.

Rerunning reproduces the shipped files byte-for-byte.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from selgov.cefl import CeflConfig, agent_embedding, pool_table  # noqa: E402
from selgov.domain import AgentProfile, ConstraintSpec, ReducerParams, Scenario, SelectionParams  # noqa: E402
from selgov.evaluator import (  # noqa: E402
    Fixtures,
    ScenarioSpec,
    VariantSpec,
    check_informative,
    context_for_variant,
    reward_table,
)
from selgov.harness import RunConfig, _Pipeline  # noqa: E402
from selgov.metrics import selection_concentration  # noqa: E402
from selgov.domain import Mode  # noqa: E402
from selgov.reducer import apply_hard_constraints, pareto_filter, risk_bucket  # noqa: E402
from selgov.scoring import PolicyContext, score_pool  # noqa: E402

OUT_FIXTURES = REPO / "src" / "selgov" / "data" / "default_scenarios.json"
OUT_GOLDEN = REPO / "tests" / "data" / "golden_rewards.json"

# ---------------------------------------------------------------------------
# roster: heterogeneous risk/stability/latency/auditability profiles.
# bastion carries the globally lowest risk and aegis the highest stability, so
# each is structurally non-dominated wherever it appears.

ROSTER = [
    AgentProfile("aegis", 0.10, 0.95, 40.0, 0.92, frozenset({"aml", "pci", "sox"})),
    AgentProfile("bastion", 0.05, 0.62, 22.0, 0.58, frozenset({"aml", "pci", "sox"})),
    AgentProfile("cipher", 0.35, 0.74, 30.0, 0.70, frozenset({"aml", "pci"})),
    AgentProfile("drift", 0.48, 0.66, 150.0, 0.80, frozenset({"aml", "pci", "sox"})),
    AgentProfile("ember", 0.60, 0.81, 90.0, 0.44, frozenset({"pci", "sox"})),
    AgentProfile("flux", 0.72, 0.58, 25.0, 0.55, frozenset({"aml", "pci", "sox"})),
    AgentProfile("garnet", 0.85, 0.30, 200.0, 0.48, frozenset({"aml", "sox"})),
]
IDS = [a.id for a in ROSTER]

REQUIRED_TAGS = {
    Scenario.FRAUD_DETECTION: "aml",
    Scenario.PAYMENTS_MONITORING: "pci",
    Scenario.QBR_ANALYSIS: "sox",
}

KEYWORDS = {
    Scenario.FRAUD_DETECTION: [
        ["card-cloning", "velocity-checks", "merchant-risk", "chargeback"],
        ["account-takeover", "credential-stuffing", "device-fingerprint", "geo-anomaly"],
        ["synthetic-identity", "onboarding-review", "kyc-screening", "watchlist"],
        ["wire-fraud", "beneficiary-check", "swift-screening", "sanction-list"],
        ["mule-accounts", "network-analysis", "graph-features", "cashout-ring"],
    ],
    Scenario.PAYMENTS_MONITORING: [
        ["gateway-latency", "timeout-spike", "retry-storm", "circuit-breaker"],
        ["settlement-lag", "batch-backlog", "cutover-window", "reconciliation"],
        ["acquirer-errors", "decline-surge", "issuer-outage", "failover"],
        ["ledger-drift", "balance-mismatch", "posting-delay", "suspense-queue"],
        ["throughput-drop", "queue-depth", "backpressure", "capacity-alarm"],
    ],
    Scenario.QBR_ANALYSIS: [
        ["revenue-bridge", "variance-commentary", "segment-mix", "fx-impact"],
        ["cost-walk", "headcount-drivers", "vendor-spend", "run-rate"],
        ["risk-register", "control-gaps", "remediation-status", "audit-findings"],
        ["liquidity-outlook", "funding-plan", "stress-scenario", "buffer-usage"],
        ["portfolio-quality", "delinquency-trend", "provision-build", "vintage-curves"],
    ],
}

# winner sets: the agents rewarded +1 per variant. fraud has a single
# cross-variant champion (aegis), payments likewise (bastion), qbr rotates
# winners so no agent succeeds in more than 2 of 5 variants.
WINNERS = {
    Scenario.FRAUD_DETECTION: [
        ["aegis", "bastion", "cipher"],
        ["aegis", "drift", "flux"],
        ["aegis", "cipher", "garnet"],
        ["aegis", "drift", "garnet"],
        ["aegis", "bastion", "flux"],
    ],
    Scenario.PAYMENTS_MONITORING: [
        ["bastion", "aegis", "drift"],
        ["bastion", "cipher", "ember"],
        ["bastion", "ember", "flux"],
        ["bastion", "aegis", "cipher"],
        ["bastion", "drift", "flux"],
    ],
    Scenario.QBR_ANALYSIS: [
        ["aegis", "ember", "garnet"],
        ["bastion", "drift", "flux"],
        ["ember", "garnet", "drift"],
        ["aegis", "drift", "ember"],
        ["bastion", "flux", "garnet"],
    ],
}

CHAMPIONS = {
    Scenario.FRAUD_DETECTION: "aegis",
    Scenario.PAYMENTS_MONITORING: "bastion",
}

# target affinity levels: winners sit well above the threshold midpoint,
# losers well below; ordering within each group follows the listed order.
WINNER_BAND = (0.80, 0.68)
LOSER_BAND = (0.44, 0.24)
MIN_MARGIN = 0.03
MIN_SCALE = 0.12  # realized top affinity must stay recognizably sized

TEMPERATURE = 0.1
PHI0 = dict(
    score_threshold=0.0,
    variance_clamp=0.12,
    exploration_quota=4,
    diversity_buckets=2,
    exploration_coeff=0.15,
)
W_SHAPE = np.array([1.0, 0.25, 0.35, 0.25])
SC0_BAND = (0.18, 0.32)
STATIC_REWARD_BAND = (0.10, 0.50)


def solve_requirement_vector(cfg: CeflConfig, winners: list[str]) -> tuple[np.ndarray, float]:
    """Least-norm vector giving the designed affinity targets exactly."""
    unit = np.array([
        agent_embedding(a, cfg) / np.linalg.norm(agent_embedding(a, cfg)) for a in ROSTER
    ])
    targets = np.zeros(len(ROSTER))
    w_hi, w_lo = WINNER_BAND
    l_hi, l_lo = LOSER_BAND
    losers = [i for i, a in enumerate(ROSTER) if a.id not in winners]
    for rank, wid in enumerate(winners):
        frac = rank / max(len(winners) - 1, 1)
        targets[IDS.index(wid)] = w_hi - frac * (w_hi - w_lo)
    for rank, i in enumerate(losers):
        frac = rank / max(len(losers) - 1, 1)
        targets[i] = l_hi - frac * (l_hi - l_lo)
    # rcond truncates near-null directions (tag blocks overlap heavily), so
    # realized affinities deviate from the targets; margins are re-checked on
    # the realized values. Retries with looser truncation trade affinity scale
    # for design fidelity.
    for rcond in (0.01, 0.004, 0.0015):
        vec, *_ = np.linalg.lstsq(unit, targets, rcond=rcond)
        vec = vec / np.linalg.norm(vec)
        realized = unit @ vec
        w_min = min(realized[IDS.index(wid)] for wid in winners)
        l_max = max(realized[i] for i in losers)
        if w_min > l_max + MIN_MARGIN and realized.max() >= MIN_SCALE:
            return vec, 0.5 * (w_min + l_max)
    raise RuntimeError("winner/loser affinity bands collapsed")


def build_scenarios(cfg: CeflConfig) -> dict[Scenario, ScenarioSpec]:
    scenarios = {}
    for scenario in Scenario:
        variants = []
        for v in range(5):
            vec, h = solve_requirement_vector(cfg, WINNERS[scenario][v])
            variants.append(
                VariantSpec(
                    keywords=tuple(KEYWORDS[scenario][v]),
                    requirement_vector=vec,
                    affinity_threshold=h,
                )
            )
        scenarios[scenario] = ScenarioSpec(
            scenario=scenario,
            variants=tuple(variants),
            required_tag=REQUIRED_TAGS[scenario],
        )
    return scenarios


def pool_constraints_hold(cfg: CeflConfig, scenarios) -> bool:
    theta_probe = SelectionParams(
        feature_weights=np.zeros(4),
        agent_bias=np.zeros(len(ROSTER)),
        temperature=1.0,
        agent_ids=tuple(IDS),
    )
    for scenario, spec in scenarios.items():
        pools = pool_table(ROSTER, cfg, spec.variant_keywords(), scenario)
        exposed = set()
        for v, pool in pools.items():
            exposed.update(a.id for a in pool)
            champion = CHAMPIONS.get(scenario)
            pool_ids = [a.id for a in pool]
            if champion and champion not in pool_ids:
                return False
            filtered = [a for a in pool if spec.required_tag in a.compliance_tags]
            if len(filtered) < 3:
                return False
            ctx = context_for_variant(spec, v)
            scores = score_pool(filtered, ctx, theta_probe, cfg)
            # champion must hold the strict top utility so concentration can
            # accumulate on one agent in the champion scenarios
            if champion:
                utilities = {a.id: scores.features[i][0] for i, a in enumerate(filtered)}
                rest = max(u for aid, u in utilities.items() if aid != champion)
                if utilities[champion] < rest + 0.02:
                    return False
            # the frontier must span >= 2 candidates and >= 2 risk buckets so
            # diversity coverage never degrades in default runs
            frontier = pareto_filter(filtered, scores)
            if len(frontier) < 2:
                return False
            if len({risk_bucket(filtered[i].risk_profile) for i in frontier}) < 2:
                return False
        if exposed != set(IDS):
            return False
    return True


def find_hash_seed(limit: int = 200000) -> tuple[int, dict]:
    for seed in range(limit):
        cfg = CeflConfig(hash_seed=seed)
        try:
            scenarios = build_scenarios(cfg)
        except RuntimeError:
            continue
        if pool_constraints_hold(cfg, scenarios):
            return seed, scenarios
    raise RuntimeError(f"no hash seed satisfied the pool constraints within {limit}")


def fixtures_for(cfg, scenarios, w_scale) -> Fixtures:
    theta0 = SelectionParams(
        feature_weights=w_scale * W_SHAPE,
        agent_bias=np.zeros(len(ROSTER)),
        temperature=TEMPERATURE,
        agent_ids=tuple(IDS),
    )
    return Fixtures(
        roster=tuple(ROSTER),
        scenarios=scenarios,
        theta0=theta0,
        phi0=ReducerParams(**PHI0),
        cefl=cfg,
    )


def initial_metrics(fixtures: Fixtures, scenario: Scenario) -> tuple[float, float]:
    """(SC_0, exact static mean reward) at the initial parameters."""
    cfg = RunConfig(scenario=scenario, mode=Mode.STATIC)
    pipeline = _Pipeline(cfg, fixtures)
    spec = fixtures.scenarios[scenario]
    snapshots = []
    mean_reward = 0.0
    for v in range(5):
        scores, surf = pipeline.surfaced(v, fixtures.theta0, fixtures.phi0)
        pctx = PolicyContext.from_score_vector(surf.scores, fixtures.theta0)
        probs = pctx.probabilities(fixtures.theta0)
        snapshots.append(dict(zip(surf.scores.agent_ids, probs)))
        ctx = context_for_variant(spec, v)
        winners = set(WINNERS[scenario][v])
        r = sum(p * (1.0 if aid in winners else -1.0) for aid, p in zip(surf.scores.agent_ids, probs))
        mean_reward += r / 5.0
    return selection_concentration(snapshots), mean_reward


def calibrate_w_scale(cfg, scenarios) -> float:
    for w_scale in np.arange(0.30, 0.019, -0.01):
        fx = fixtures_for(cfg, scenarios, round(float(w_scale), 3))
        sc0s = [initial_metrics(fx, s)[0] for s in Scenario]
        if max(sc0s) <= SC0_BAND[1] and min(sc0s) >= SC0_BAND[0]:
            return round(float(w_scale), 3)
    raise RuntimeError("no weight scale put SC_0 in the target band")


def to_json(fixtures: Fixtures) -> dict:
    return {
        "cefl": {
            "overshoot": fixtures.cefl.overshoot,
            "pool_size": fixtures.cefl.pool_size,
            "embed_dim": fixtures.cefl.embed_dim,
            "hash_seed": fixtures.cefl.hash_seed,
        },
        "selection_params": {
            "feature_weights": [float(x) for x in fixtures.theta0.feature_weights],
            "temperature": fixtures.theta0.temperature,
        },
        "reducer_params": PHI0,
        "roster": [
            {
                "id": a.id,
                "risk_profile": a.risk_profile,
                "stability_score": a.stability_score,
                "latency": a.latency,
                "auditability_score": a.auditability_score,
                "compliance_tags": sorted(a.compliance_tags),
            }
            for a in fixtures.roster
        ],
        "scenarios": {
            scenario.value: {
                "required_tag": spec.required_tag,
                "variants": [
                    {
                        "keywords": list(v.keywords),
                        "requirement_vector": [float(x) for x in v.requirement_vector],
                        "affinity_threshold": float(v.affinity_threshold),
                    }
                    for v in spec.variants
                ],
            }
            for scenario, spec in sorted(fixtures.scenarios.items(), key=lambda kv: kv[0].value)
        },
    }


def main() -> int:
    seed, scenarios = find_hash_seed()
    cfg = CeflConfig(hash_seed=seed)
    print(f"hash_seed = {seed}")

    w_scale = calibrate_w_scale(cfg, scenarios)
    print(f"w_scale = {w_scale} (weights {list(w_scale * W_SHAPE)})")
    fixtures = fixtures_for(cfg, scenarios, w_scale)

    golden = {}
    for scenario in Scenario:
        spec = fixtures.scenarios[scenario]
        check_informative(ROSTER, spec, cfg)
        table = reward_table(ROSTER, spec, cfg)
        for v, rewards in table.items():
            plus = {aid for aid, r in rewards.items() if r == 1}
            if plus != set(WINNERS[scenario][v]):
                raise RuntimeError(f"{scenario.value} v{v}: realized winners {plus}")
        golden[scenario.value] = {str(v): table[v] for v in sorted(table)}
        sc0, static_reward = initial_metrics(fixtures, scenario)
        print(f"{scenario.value}: SC_0={sc0:.3f} static mean reward={static_reward:.3f}")
        if not (STATIC_REWARD_BAND[0] <= static_reward <= STATIC_REWARD_BAND[1]):
            raise RuntimeError(f"static reward {static_reward:.3f} outside band")

    OUT_FIXTURES.parent.mkdir(parents=True, exist_ok=True)
    OUT_FIXTURES.write_text(json.dumps(to_json(fixtures), indent=2, sort_keys=True) + "\n")
    OUT_GOLDEN.parent.mkdir(parents=True, exist_ok=True)
    OUT_GOLDEN.write_text(json.dumps(golden, indent=2, sort_keys=True) + "\n")
    print(f"wrote {OUT_FIXTURES.relative_to(REPO)} and {OUT_GOLDEN.relative_to(REPO)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
