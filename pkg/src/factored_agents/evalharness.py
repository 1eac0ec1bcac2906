"""Pass^k aggregation over episode logs and Retail/Airline-style result tables.

pass^k for one task with ``c`` successes out of ``n`` trials is
``C(c, k) / C(n, k)``: the chance that ``k`` trials drawn without replacement
all succeed. A row averages it over tasks with equal weight. Everything stays
a :class:`~fractions.Fraction` until rendering.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

DEFAULT_KS = (1, 2, 3, 4)


class DomainError(ValueError):
    pass


class MixedRunError(ValueError):
    pass


class InvariantViolation(ValueError):
    pass


def pass_hat_k(c: int, n: int, k: int) -> Fraction:
    if not 0 <= c <= n:
        raise DomainError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    return Fraction(comb(c, k), comb(n, k))


@dataclass
class TrialMatrix:
    counts: dict[str, tuple[int, int]] = field(default_factory=dict)  # task_id -> (n, c)
    run_id: str | None = None

    def __post_init__(self):
        for task_id, (n, c) in self.counts.items():
            if not 0 <= c <= n:
                raise DomainError(f"{task_id}: need 0 <= c <= n, got c={c}, n={n}")

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def n_trials(self) -> int:
        return min((n for n, _ in self.counts.values()), default=0)

    @property
    def n_episodes(self) -> int:
        return sum(n for n, _ in self.counts.values())


def build_matrix(logs: Iterable) -> TrialMatrix:
    """Count trials and successes per task. A protocol failure is a failed trial."""
    counts: dict[str, list[int]] = {}
    run_id = None
    for i, log in enumerate(logs):
        if i == 0:
            run_id = log.run_id
        elif log.run_id != run_id:
            raise MixedRunError(f"logs from runs {run_id!r} and {log.run_id!r} cannot be mixed")
        nc = counts.setdefault(log.task_id, [0, 0])
        nc[0] += 1
        if log.success and log.termination_reason != "protocol_failure":
            nc[1] += 1
    ns = {n for n, _ in counts.values()}
    if len(ns) > 1:
        logger.warning("uneven trial counts across tasks: %s", sorted(ns))
    return TrialMatrix({t: (n, c) for t, (n, c) in counts.items()}, run_id)


def aggregate(matrix: TrialMatrix, ks: Sequence[int] = DEFAULT_KS) -> dict[int, Fraction]:
    if not len(matrix):
        raise DomainError("no tasks to aggregate")
    out = {}
    for k in ks:
        total = sum((pass_hat_k(c, n, k) for n, c in matrix.counts.values()), Fraction(0))
        out[k] = total / len(matrix)
    return out


@dataclass
class ResultRow:
    label: str
    values: dict[int, Fraction]
    n_tasks: int = 0
    n_trials: int = 0


@dataclass
class ResultTable:
    rows: list[ResultRow]
    ks: tuple[int, ...] = DEFAULT_KS

    def check(self) -> None:
        for row in self.rows:
            ordered = [row.values[k] for k in sorted(row.values)]
            for a, b in zip(ordered, ordered[1:]):
                if b > a:
                    raise InvariantViolation(f"row {row.label!r} increases with k: {[float(v) for v in ordered]}")


def table_from_matrix(matrix: TrialMatrix, label: str, ks: Sequence[int] = DEFAULT_KS) -> ResultTable:
    row = ResultRow(label, aggregate(matrix, ks), len(matrix), matrix.n_trials)
    return ResultTable([row], tuple(ks))


DOMAIN_TITLES = {"mini-retail": "Retail", "mini-airline": "Airline", "retail": "Retail", "airline": "Airline"}


def _fmt(v: Fraction | None) -> str:
    return "-" if v is None else f"{float(v):.2f}"


def render_table(tables: Mapping[str, ResultTable], fmt: str = "plain") -> str:
    """Render domains side by side (``plain``) or as JSON lines (``jsonl``)."""
    for t in tables.values():
        t.check()
    if fmt in ("jsonl", "json", "machine-readable"):
        lines = []
        for domain, table in tables.items():
            for row in table.rows:
                for k in table.ks:
                    if k in row.values:
                        lines.append(json.dumps({
                            "label": row.label,
                            "domain": domain,
                            "k": k,
                            "value": float(row.values[k]),
                            "n_tasks": row.n_tasks,
                            "n_trials": row.n_trials,
                        }))
        return "\n".join(lines) + ("\n" if lines else "")
    if fmt != "plain":
        raise ValueError(f"unknown table format {fmt!r}")

    labels: list[str] = []
    for table in tables.values():
        for row in table.rows:
            if row.label not in labels:
                labels.append(row.label)
    label_w = max([len("Model")] + [len(l) for l in labels]) + 2
    cell_w = 6
    header1 = " " * label_w
    header2 = "Model".ljust(label_w)
    for domain, table in tables.items():
        block_w = cell_w * len(table.ks)
        header1 += DOMAIN_TITLES.get(domain, domain).center(block_w) + "  "
        header2 += "".join(f"P^{k}".rjust(cell_w) for k in table.ks) + "  "
    lines = [header1.rstrip(), header2.rstrip()]
    for label in labels:
        line = label.ljust(label_w)
        for table in tables.values():
            row = next((r for r in table.rows if r.label == label), None)
            line += "".join(_fmt(row.values.get(k) if row else None).rjust(cell_w) for k in table.ks) + "  "
        lines.append(line.rstrip())
    return "\n".join(lines) + "\n"
