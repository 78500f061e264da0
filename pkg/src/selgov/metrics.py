"""Concentration metrics and the append-only audit log.

The context distribution is uniform over five variants, so expectation-level
quantities are exact means over variants rather than Monte Carlo estimates.
The audit log is the single source of truth: every summary metric can be
recomputed from it alone (see `harness.replay_summary`).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .domain import AuditRecord, FailLoudAction, OutOfOrderRecord, UndefinedGSI

VarSnapshot = Mapping[str, float]  # agent id -> surfaced-set policy probability


def selection_concentration(snapshots: Sequence[VarSnapshot]) -> float:
    """Max over agents of the mean selection probability across variants.

    Agents absent from a variant's surfaced set contribute probability 0 there.
    """
    if not snapshots:
        raise ValueError("selection_concentration requires at least one snapshot")
    agents: set[str] = set()
    for snap in snapshots:
        agents.update(snap.keys())
    if not agents:
        raise ValueError("snapshots name no agents")
    n = len(snapshots)
    best = 0.0
    for agent in agents:
        mean = sum(snap.get(agent, 0.0) for snap in snapshots) / n
        best = max(best, mean)
    return best


def rsc(sc_0: float, sc_t: float) -> float:
    """Net concentration gained over a run."""
    return sc_t - sc_0


def gsi(var_sc: float, var_unconstrained: float) -> float:
    """Stability index: 1 - Var(SC)/Var_unconstrained.

    Raises UndefinedGSI when the reference variance is (numerically) zero;
    callers report the undefined state instead of silently substituting.
    """
    if var_sc < 0.0 or var_unconstrained < 0.0:
        raise ValueError("variances must be non-negative")
    if var_unconstrained < 1e-15:
        raise UndefinedGSI("paired unconstrained run has zero concentration variance")
    return 1.0 - var_sc / var_unconstrained


def governance_debt(records: Sequence[AuditRecord]) -> float:
    """Fraction of steps whose projection clipping tripped a fail-loud action."""
    if not records:
        raise ValueError("governance_debt requires a non-empty log")
    hits = sum(1 for r in records if r.fail_loud_action is not FailLoudAction.NONE)
    return hits / len(records)


def top_agent_share(selections: Sequence[str]) -> float:
    """Cumulative selection frequency of the most selected agent."""
    if not selections:
        raise ValueError("top_agent_share requires at least one selection")
    counts: dict[str, int] = {}
    for agent in selections:
        counts[agent] = counts.get(agent, 0) + 1
    return max(counts.values()) / len(selections)


def sc_from_record(record: AuditRecord) -> float:
    """SC_t recomputed from the record's cross-variant policy snapshot."""
    return selection_concentration([dict(snap) for snap in record.variant_policies])


class AuditLog:
    """Append-only per-run trace with strictly increasing step indices."""

    def __init__(self) -> None:
        self._records: list[AuditRecord] = []

    def append(self, record: AuditRecord) -> "AuditLog":
        if record.step != len(self._records):
            raise OutOfOrderRecord(
                f"expected step {len(self._records)}, got {record.step}"
            )
        self._records.append(record)
        return self

    @property
    def records(self) -> tuple[AuditRecord, ...]:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __getitem__(self, idx: int) -> AuditRecord:
        return self._records[idx]

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(r.to_json_dict(), sort_keys=True, separators=(",", ":")) + "\n"
            for r in self._records
        )

    def write_jsonl(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "AuditLog":
        log = cls()
        for line in text.splitlines():
            if line.strip():
                log.append(AuditRecord.from_json_dict(json.loads(line)))
        return log

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "AuditLog":
        return cls.from_jsonl(Path(path).read_text())
