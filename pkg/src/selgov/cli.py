"""Command-line entry points: single runs and grid sweeps.

A JSON config file can pre-fill any flag; explicit CLI flags win. See
README.md for the file schema and output layout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .domain import ConstraintSpec, Mode, Scenario
from .evaluator import load_fixtures
from .harness import RunConfig, run_episode, run_sweep, summary_csv, SweepCell
from .metrics import AuditLog

_SCENARIOS = [s.value for s in Scenario]
_MODES = [m.value for m in Mode]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config-file", type=Path, help="JSON file pre-filling any flag")
    parser.add_argument("--lr-alpha", type=float, help="selection learning rate (default 0.05)")
    parser.add_argument("--lr-beta", type=float, help="reducer learning rate (default 0.05)")
    parser.add_argument("--horizon", type=int, help="steps per run (default 250)")
    parser.add_argument("--gamma", type=float, help="max selection probability cap")
    parser.add_argument("--p-min", type=float, help="min surfaced-candidate probability")
    parser.add_argument("--sigma-max", type=float, help="variance clamp ceiling")
    parser.add_argument("--k-min", type=int, help="exploration quota floor")
    parser.add_argument("--d-min", type=int, help="diversity bucket floor")
    parser.add_argument("--fixtures", type=Path, help="alternate fixtures JSON")
    parser.add_argument("--out-dir", type=Path, help="directory for outputs")


def _merge(args: argparse.Namespace, defaults: dict) -> dict:
    file_values = {}
    if args.config_file:
        file_values = json.loads(args.config_file.read_text())
    merged = dict(defaults)
    merged.update({k: v for k, v in file_values.items() if k in defaults})
    for key in defaults:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def _constraints(values: dict) -> ConstraintSpec:
    return ConstraintSpec(
        p_min=values["p_min"],
        gamma=values["gamma"],
        sigma_max=values["sigma_max"],
        k_min=values["k_min"],
        d_min=values["d_min"],
    )


_COMMON_DEFAULTS = {
    "lr_alpha": 0.05,
    "lr_beta": 0.05,
    "horizon": 250,
    "gamma": 0.95,
    "p_min": 0.1,
    "sigma_max": 0.18,
    "k_min": 2,
    "d_min": 2,
}


def cmd_run(args: argparse.Namespace) -> int:
    values = _merge(args, {**_COMMON_DEFAULTS, "scenario": None, "mode": None, "seed": 0})
    if values["scenario"] is None or values["mode"] is None:
        print("run requires --scenario and --mode (or config file entries)", file=sys.stderr)
        return 2
    fixtures = load_fixtures(args.fixtures)
    cfg = RunConfig(
        scenario=Scenario(values["scenario"]),
        mode=Mode(values["mode"]),
        lr_alpha=values["lr_alpha"],
        lr_beta=values["lr_beta"],
        horizon=values["horizon"],
        seed=values["seed"],
        constraints=_constraints(values),
    )
    log, summary = run_episode(cfg, fixtures)
    print(
        f"{summary.scenario} {summary.mode} lr={summary.lr_alpha} seed={summary.seed}: "
        f"mean_reward={summary.mean_reward:.3f} mean_SC={summary.mean_sc:.3f} "
        f"SC_0={summary.sc_0:.3f} SC_T={summary.sc_t:.3f} RSC={summary.rsc:.3f} "
        f"GD={summary.gd_dynamic:.3f}"
    )
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        name = f"{summary.scenario}_{summary.mode}_lr{summary.lr_alpha}_seed{summary.seed}"
        log.write_jsonl(args.out_dir / f"{name}.jsonl")
        (args.out_dir / f"{name}_summary.json").write_text(
            json.dumps(summary.__dict__, sort_keys=True, indent=2) + "\n"
        )
        print(f"wrote {args.out_dir}/{name}.jsonl")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    defaults = {
        **_COMMON_DEFAULTS,
        "scenarios": _SCENARIOS,
        "modes": _MODES,
        "lrs": [0.01, 0.05],
        "seeds": list(range(10)),
    }
    values = _merge(args, defaults)
    fixtures = load_fixtures(args.fixtures)
    cells = run_sweep(
        scenarios=[Scenario(s) for s in values["scenarios"]],
        modes=[Mode(m) for m in values["modes"]],
        lrs=[float(x) for x in values["lrs"]],
        seeds=[int(x) for x in values["seeds"]],
        fixtures=fixtures,
        constraints=_constraints(values),
        horizon=values["horizon"],
        out_dir=args.out_dir,
    )
    sys.stdout.write(summary_csv(cells))
    if args.out_dir:
        print(f"wrote summary, trajectories, and logs under {args.out_dir}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selgov",
        description="Governed agent-selection simulator: single runs and grid sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one (scenario, mode, lr, seed) episode")
    run_p.add_argument("--scenario", choices=_SCENARIOS)
    run_p.add_argument("--mode", choices=_MODES)
    run_p.add_argument("--seed", type=int)
    _add_common(run_p)
    run_p.set_defaults(func=cmd_run)

    sweep_p = sub.add_parser("sweep", help="run a scenario x mode x lr x seed grid")
    sweep_p.add_argument("--scenarios", nargs="+", choices=_SCENARIOS)
    sweep_p.add_argument("--modes", nargs="+", choices=_MODES)
    sweep_p.add_argument("--lrs", nargs="+", type=float)
    sweep_p.add_argument("--seeds", nargs="+", type=int)
    _add_common(sweep_p)
    sweep_p.set_defaults(func=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
