"""Experiment runner: executes the full governed selection loop per
(scenario, mode, learning rate, seed), sweeps grids, and emits audit logs,
summary tables, and plot-ready trajectories.

Determinism contract: a run's outputs are a pure function of its config.
Context sampling streams derive from (seed, scenario) so all modes see the
same task sequence on matched seeds; selection sampling additionally keys on
the mode. Every summary number is recomputed from the audit log, so replaying
a log reproduces the summary exactly.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import metrics
from .cefl import CeflConfig, agent_embedding, check_exposure, pool_table
from .domain import (
    AgentProfile,
    AllCandidatesBlocked,
    AuditRecord,
    ClipEvent,
    ConstraintSpec,
    FailLoudAction,
    Mode,
    ReducerParams,
    Scenario,
    SelectionParams,
    SelgovError,
    validate_constraint_spec,
)
from .evaluator import (
    N_VARIANTS,
    Fixtures,
    ScenarioSpec,
    context_for_variant,
    evaluate,
    load_fixtures,
)
from .learning import (
    policy_feasible,
    project_phi,
    repair_policy_feasibility,
    update_reducer,
    update_selection,
)
from .metrics import AuditLog
from .reducer import apply_hard_constraints, scalar_topk_surface, surface, variance_clamp
from .scoring import PolicyContext, ScoreVector, log_policy_grad, score_pool

THROTTLE_WINDOW = 10
THROTTLE_TRIGGER = 3  # clips within the window
THROTTLE_STEPS = 10
THROTTLE_FACTOR = 0.5

# runtime guard for the ungoverned baseline, whose clamp knob may drift to or
# below zero where rescaling is undefined; governed runs never reach it
MIN_RUNTIME_SIGMA = 1e-9

_SCENARIO_INDEX = {s: i for i, s in enumerate(Scenario)}
_MODE_INDEX = {m: i for i, m in enumerate(Mode)}


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario
    mode: Mode
    lr_alpha: float = 0.05
    lr_beta: float = 0.05
    horizon: int = 250
    seed: int = 0
    constraints: ConstraintSpec = ConstraintSpec()

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.lr_alpha < 0 or self.lr_beta < 0:
            raise ValueError("learning rates must be >= 0")


@dataclass(frozen=True)
class SummaryRecord:
    scenario: str
    mode: str
    lr_alpha: float
    lr_beta: float
    horizon: int
    seed: int
    mean_reward: float
    mean_sc: float
    sc_0: float
    sc_t: float
    rsc: float
    var_sc: float
    gd_dynamic: float
    gsi: float | None = None


class _FailLoudTracker:
    """Per-step fail-loud classification plus learning-rate throttling.

    A clip-dense window (>= THROTTLE_TRIGGER clipping steps among the last
    THROTTLE_WINDOW) raises THROTTLE, which halves both learning rates for the
    following THROTTLE_STEPS steps; re-triggering resets the countdown. Steps
    with clips below the density trigger raise ALERT; blocked pools raise
    BLOCK. ALERT and BLOCK have no learning-rate effect.
    """

    def __init__(self) -> None:
        self._window: collections.deque[bool] = collections.deque(maxlen=THROTTLE_WINDOW)
        self._throttle_remaining = 0

    def lr_factor(self) -> float:
        return THROTTLE_FACTOR if self._throttle_remaining > 0 else 1.0

    def classify(self, clipped: bool, blocked: bool) -> FailLoudAction:
        self._window.append(clipped)
        throttled = clipped and sum(self._window) >= THROTTLE_TRIGGER
        if blocked:
            action = FailLoudAction.BLOCK
        elif throttled:
            action = FailLoudAction.THROTTLE
        elif clipped:
            action = FailLoudAction.ALERT
        else:
            action = FailLoudAction.NONE
        if throttled:
            self._throttle_remaining = THROTTLE_STEPS
        elif self._throttle_remaining > 0:
            self._throttle_remaining -= 1
        return action


def _theta_dict(theta: SelectionParams) -> dict:
    return {
        "feature_weights": [float(x) for x in theta.feature_weights],
        "agent_bias": [float(x) for x in theta.agent_bias],
        "temperature": float(theta.temperature),
    }


def _phi_dict(phi: ReducerParams) -> dict:
    return {
        "score_threshold": float(phi.score_threshold),
        "variance_clamp": float(phi.variance_clamp),
        "exploration_quota": int(phi.exploration_quota),
        "diversity_buckets": int(phi.diversity_buckets),
        "exploration_coeff": float(phi.exploration_coeff),
    }


class _Pipeline:
    """Deterministic per-variant machinery shared by the loop and snapshots."""

    def __init__(self, cfg: RunConfig, fixtures: Fixtures):
        self.cfg = cfg
        self.fixtures = fixtures
        self.spec: ScenarioSpec = fixtures.scenarios[cfg.scenario]
        self.embeddings = {
            a.id: agent_embedding(a, fixtures.cefl) for a in fixtures.roster
        }
        pools = pool_table(
            fixtures.roster, fixtures.cefl, self.spec.variant_keywords(), cfg.scenario
        )
        self.pools: dict[int, tuple[AgentProfile, ...]] = pools
        self.filtered: dict[int, tuple[AgentProfile, ...] | None] = {}
        for v, pool in pools.items():
            try:
                self.filtered[v] = apply_hard_constraints(pool, self.spec.required_tag)
            except AllCandidatesBlocked:
                self.filtered[v] = None

    def surfaced(
        self, variant: int, theta: SelectionParams, phi: ReducerParams
    ) -> tuple[ScoreVector, "object"] | None:
        """(pool scores, surfaced set) for a variant, or None when blocked."""
        pool = self.filtered[variant]
        if pool is None:
            return None
        ctx = context_for_variant(self.spec, variant)
        scores = score_pool(pool, ctx, theta, self.fixtures.cefl, self.embeddings)
        if self.cfg.mode is Mode.SCALAR_TOPK:
            return scores, scalar_topk_surface(pool, scores)
        sigma = max(phi.variance_clamp, MIN_RUNTIME_SIGMA)
        clamped = variance_clamp(scores, sigma)
        return scores, surface(pool, clamped, phi, self.cfg.constraints)

    def snapshot(
        self, theta: SelectionParams, phi: ReducerParams
    ) -> tuple[tuple[tuple[str, float], ...], ...]:
        """Surfaced-set policy for every variant at the given parameters."""
        snaps = []
        for v in range(N_VARIANTS):
            out = self.surfaced(v, theta, phi)
            if out is None:
                snaps.append(())
                continue
            _, surf = out
            pctx = PolicyContext.from_score_vector(surf.scores, theta)
            probs = pctx.probabilities(theta)
            snaps.append(tuple(zip(surf.scores.agent_ids, (float(p) for p in probs))))
        return tuple(snaps)


def run_episode(cfg: RunConfig, fixtures: Fixtures | None = None) -> tuple[AuditLog, SummaryRecord]:
    """Execute the six-stage loop for `horizon` steps and summarize the log."""
    if fixtures is None:
        fixtures = load_fixtures()
    validate_constraint_spec(cfg.constraints, max_surfaced=len(fixtures.roster))
    spec = fixtures.scenarios[cfg.scenario]
    check_exposure(fixtures.roster, fixtures.cefl, spec.variant_keywords(), cfg.scenario)

    pipeline = _Pipeline(cfg, fixtures)
    sc_idx = _SCENARIO_INDEX[cfg.scenario]
    ctx_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, sc_idx]))
    sel_rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, sc_idx, 100 + _MODE_INDEX[cfg.mode]])
    )

    # initial parameters are projected into the feasible boxes once, pre-loop;
    # the packaged defaults are verified clip-free by the test suite
    theta = fixtures.theta0
    lo, hi = cfg.constraints.theta_box
    theta = theta.replace(
        feature_weights=np.clip(theta.feature_weights, lo, hi),
        agent_bias=np.clip(theta.agent_bias, lo, hi),
    )
    phi, _ = project_phi(fixtures.phi0, cfg.constraints)

    tracker = _FailLoudTracker()
    log = AuditLog()

    for t in range(cfg.horizon):
        variant = int(ctx_rng.integers(0, N_VARIANTS))
        ctx = context_for_variant(spec, variant, step_index=t)
        lr_factor = tracker.lr_factor()

        out = pipeline.surfaced(variant, theta, phi)
        if out is None:
            pool = pipeline.pools[variant]
            block_event = ClipEvent(
                parameter="candidate_pool",
                raw_value=float(len(pool)),
                projected_value=0.0,
                constraint=f"required_tag:{spec.required_tag}",
            )
            action = tracker.classify(clipped=True, blocked=True)
            log.append(
                AuditRecord(
                    step=t,
                    scenario=cfg.scenario,
                    variant=variant,
                    candidate_pool=tuple(a.id for a in pool),
                    scores=tuple(0.0 for _ in pool),
                    surfaced=(),
                    surfaced_probs=(),
                    chosen=None,
                    output_summary="",
                    reward=None,
                    theta_after=_theta_dict(theta),
                    phi_after=_phi_dict(phi),
                    clip_events=(block_event,),
                    fail_loud_action=action,
                    variant_policies=pipeline.snapshot(theta, phi),
                )
            )
            continue

        pool_scores, surf = out
        pctx = PolicyContext.from_score_vector(surf.scores, theta)
        clip_events: list[ClipEvent] = list(surf.clip_events)

        # per-step sovereignty enforcement: the carried-over policy must be
        # feasible on *this* step's surfaced set before any selection happens
        if cfg.mode is Mode.INCENTIVIZED:
            theta, pre_events = repair_policy_feasibility(theta, pctx, cfg.constraints)
            clip_events.extend(pre_events)

        # concentration snapshot of the policy that acts at this step
        acting_snapshot = pipeline.snapshot(theta, phi)
        probs = pctx.probabilities(theta)
        if cfg.mode is Mode.SCALAR_TOPK:
            chosen_idx = 0
        else:
            chosen_idx = int(sel_rng.choice(len(probs), p=probs))
        chosen_agent = surf.agents[chosen_idx]
        output_summary = f"{chosen_agent.id}|{cfg.scenario.value}|v{variant}|t{t}"
        reward = evaluate(chosen_agent, ctx, spec, fixtures.cefl)

        grad = log_policy_grad(surf.scores, theta, chosen_idx)
        theta_out = update_selection(
            theta, grad, reward, cfg.lr_alpha * lr_factor, cfg.constraints, cfg.mode, pctx
        )
        raw_surf_scores = np.array(
            [pool_scores.scores[pool_scores.agent_ids.index(a)] for a in surf.scores.agent_ids]
        )
        phi_out = update_reducer(
            phi, reward, cfg.lr_beta * lr_factor, raw_surf_scores, cfg.constraints, cfg.mode
        )
        theta = theta_out.params_after
        phi = phi_out.params_after
        clip_events.extend(theta_out.clip_events)
        clip_events.extend(phi_out.clip_events)

        if cfg.mode is Mode.INCENTIVIZED and not policy_feasible(
            pctx.probabilities(theta), cfg.constraints
        ):
            raise SelgovError(
                f"post-update policy infeasible at step {t}: projection failed to restore bounds"
            )

        action = tracker.classify(clipped=bool(clip_events), blocked=False)
        log.append(
            AuditRecord(
                step=t,
                scenario=cfg.scenario,
                variant=variant,
                candidate_pool=tuple(a.id for a in pipeline.filtered[variant]),
                scores=tuple(float(s) for s in pool_scores.scores),
                surfaced=surf.scores.agent_ids,
                surfaced_probs=tuple(float(p) for p in probs),
                chosen=chosen_agent.id,
                output_summary=output_summary,
                reward=reward,
                theta_after=_theta_dict(theta),
                phi_after=_phi_dict(phi),
                clip_events=tuple(clip_events),
                fail_loud_action=action,
                variant_policies=acting_snapshot,
            )
        )

    summary = summarize_log(log.records, cfg)
    return log, summary


def summarize_log(records: Sequence[AuditRecord], cfg: RunConfig) -> SummaryRecord:
    """Summary metrics recomputed purely from the audit log."""
    if not records:
        raise ValueError("cannot summarize an empty log")
    rewards = [r.reward for r in records if r.reward is not None]
    mean_reward = float(np.mean(rewards)) if rewards else 0.0
    sc_series = np.array([metrics.sc_from_record(r) for r in records])
    return SummaryRecord(
        scenario=cfg.scenario.value,
        mode=cfg.mode.value,
        lr_alpha=cfg.lr_alpha,
        lr_beta=cfg.lr_beta,
        horizon=cfg.horizon,
        seed=cfg.seed,
        mean_reward=mean_reward,
        mean_sc=float(np.mean(sc_series)),
        sc_0=float(sc_series[0]),
        sc_t=float(sc_series[-1]),
        rsc=metrics.rsc(float(sc_series[0]), float(sc_series[-1])),
        var_sc=float(np.var(sc_series)),
        gd_dynamic=metrics.governance_debt(records),
    )


def top_share_series(records: Sequence[AuditRecord]) -> np.ndarray:
    """Cumulative top-agent share after each step (0 until a selection exists)."""
    counts: dict[str, int] = {}
    total = 0
    out = np.zeros(len(records))
    for i, r in enumerate(records):
        if r.chosen is not None:
            counts[r.chosen] = counts.get(r.chosen, 0) + 1
            total += 1
        out[i] = max(counts.values()) / total if total else 0.0
    return out


def sc_series(records: Sequence[AuditRecord]) -> np.ndarray:
    return np.array([metrics.sc_from_record(r) for r in records])


def steps_to_share(records: Sequence[AuditRecord], threshold: float) -> float:
    """Onset (1-based step) of sustained cumulative dominance: the first step
    from which the top-agent share stays at or above the threshold through the
    end of the run. The share trivially starts at 1 after a single selection,
    so a plain first-crossing would be meaningless; +inf when dominance is
    never sustained."""
    series = top_share_series(records)
    if series[-1] < threshold:
        return float("inf")
    below = np.nonzero(series < threshold)[0]
    return float(below[-1] + 2) if len(below) else 1.0


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepCell:
    """One grid cell: aggregated summary plus per-seed details."""

    scenario: Scenario
    mode: Mode
    lr: float
    seeds: tuple[int, ...]
    per_seed: tuple[SummaryRecord, ...]
    mean_summary: SummaryRecord
    sc_mean: np.ndarray
    top_share_mean: np.ndarray


def _aggregate(cell_summaries: Sequence[SummaryRecord], seeds: Sequence[int]) -> SummaryRecord:
    first = cell_summaries[0]

    def avg(attr: str) -> float:
        return float(np.mean([getattr(s, attr) for s in cell_summaries]))

    gsis = [s.gsi for s in cell_summaries]
    gsi_val = float(np.mean(gsis)) if all(g is not None for g in gsis) else None
    return SummaryRecord(
        scenario=first.scenario,
        mode=first.mode,
        lr_alpha=first.lr_alpha,
        lr_beta=first.lr_beta,
        horizon=first.horizon,
        seed=-1,  # aggregated row
        mean_reward=avg("mean_reward"),
        mean_sc=avg("mean_sc"),
        sc_0=avg("sc_0"),
        sc_t=avg("sc_t"),
        rsc=avg("rsc"),
        var_sc=avg("var_sc"),
        gd_dynamic=avg("gd_dynamic"),
        gsi=gsi_val,
    )


def run_sweep(
    scenarios: Sequence[Scenario],
    modes: Sequence[Mode],
    lrs: Sequence[float],
    seeds: Sequence[int],
    fixtures: Fixtures | None = None,
    constraints: ConstraintSpec | None = None,
    horizon: int = 250,
    out_dir: str | Path | None = None,
) -> list[SweepCell]:
    """Run the full grid; aggregation is keyed by config, not completion order.

    Seeds are sorted before running so output bytes are invariant to the order
    they were supplied in. When `out_dir` is given, writes summary.csv,
    per-cell trajectory CSVs, and per-run audit logs.
    """
    if not seeds:
        raise ValueError("run_sweep requires at least one seed")
    if fixtures is None:
        fixtures = load_fixtures()
    constraints = constraints or ConstraintSpec()
    seeds = tuple(sorted(set(seeds)))

    runs: dict[tuple, tuple[AuditLog, SummaryRecord]] = {}
    for scenario in scenarios:
        for mode in modes:
            for lr in lrs:
                for seed in seeds:
                    cfg = RunConfig(
                        scenario=scenario,
                        mode=mode,
                        lr_alpha=lr,
                        lr_beta=lr,
                        horizon=horizon,
                        seed=seed,
                        constraints=constraints,
                    )
                    runs[(scenario, mode, lr, seed)] = run_episode(cfg, fixtures)

    cells: list[SweepCell] = []
    for scenario in scenarios:
        for mode in modes:
            for lr in lrs:
                per_seed = []
                sc_rows, share_rows = [], []
                for seed in seeds:
                    log, summary = runs[(scenario, mode, lr, seed)]
                    paired = runs.get((scenario, Mode.UNCONSTRAINED_RL, lr, seed))
                    if paired is not None:
                        try:
                            summary = replace(
                                summary,
                                gsi=metrics.gsi(summary.var_sc, paired[1].var_sc),
                            )
                        except metrics.UndefinedGSI:
                            pass
                    per_seed.append(summary)
                    sc_rows.append(sc_series(log.records))
                    share_rows.append(top_share_series(log.records))
                cells.append(
                    SweepCell(
                        scenario=scenario,
                        mode=mode,
                        lr=lr,
                        seeds=seeds,
                        per_seed=tuple(per_seed),
                        mean_summary=_aggregate(per_seed, seeds),
                        sc_mean=np.mean(sc_rows, axis=0),
                        top_share_mean=np.mean(share_rows, axis=0),
                    )
                )

    if out_dir is not None:
        write_sweep_outputs(cells, runs, Path(out_dir))
    return cells


SUMMARY_HEADER = (
    "scenario,mode,lr,mean_reward,mean_SC,SC_0,SC_T,RSC,var_SC,GSI,GD_dynamic,seeds"
)


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def summary_csv(cells: Sequence[SweepCell]) -> str:
    lines = [SUMMARY_HEADER]
    for c in cells:
        s = c.mean_summary
        lines.append(
            ",".join(
                [
                    s.scenario,
                    s.mode,
                    repr(float(c.lr)),
                    _fmt(s.mean_reward),
                    _fmt(s.mean_sc),
                    _fmt(s.sc_0),
                    _fmt(s.sc_t),
                    _fmt(s.rsc),
                    _fmt(s.var_sc),
                    _fmt(s.gsi),
                    _fmt(s.gd_dynamic),
                    ";".join(str(x) for x in c.seeds),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def trajectory_csv(series: np.ndarray) -> str:
    lines = ["step,value"]
    lines.extend(f"{t},{repr(float(v))}" for t, v in enumerate(series))
    return "\n".join(lines) + "\n"


def _cell_stem(cell: SweepCell) -> str:
    return f"{cell.scenario.value}_{cell.mode.value}_lr{cell.lr}"


def write_sweep_outputs(
    cells: Sequence[SweepCell],
    runs: Mapping[tuple, tuple[AuditLog, SummaryRecord]],
    out_dir: Path,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.csv").write_text(summary_csv(cells))
    traj_dir = out_dir / "trajectories"
    traj_dir.mkdir(exist_ok=True)
    log_dir = out_dir / "logs"
    log_dir.mkdir(exist_ok=True)
    for cell in cells:
        stem = _cell_stem(cell)
        (traj_dir / f"{stem}_sc.csv").write_text(trajectory_csv(cell.sc_mean))
        (traj_dir / f"{stem}_top_share.csv").write_text(trajectory_csv(cell.top_share_mean))
    for (scenario, mode, lr, seed), (log, _) in sorted(
        runs.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value, kv[0][2], kv[0][3])
    ):
        name = f"{scenario.value}_{mode.value}_lr{lr}_seed{seed}.jsonl"
        log.write_jsonl(log_dir / name)
