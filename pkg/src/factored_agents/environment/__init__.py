"""Desk-scale simulated tool domains.

Each bundled domain lives in ``data/<name>/`` with ``catalog.json``,
``tasks.json``, ``db/*.json`` initial databases and ``expected/*.json``
golden final databases (one per task).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from ..schema import ToolCatalog, parse_catalog, validate_call
from . import airline, retail
from .core import (
    BusinessRuleError,
    FixtureError,
    PreconditionError,
    TaskSpec,
    ToolExecutor,
    ToolResult,
    WorldDb,
    apply_ground_truth,
    canonical_json,
    check_success,
    execute_tool,
    outputs_present,
)

DOMAIN_EXECUTORS: dict[str, Mapping[str, ToolExecutor]] = {
    "mini-retail": retail.EXECUTORS,
    "mini-airline": airline.EXECUTORS,
}


class UnknownDomainError(LookupError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown domain {name!r} (available: {', '.join(sorted(DOMAIN_EXECUTORS))})")


@dataclass(frozen=True)
class Domain:
    name: str
    catalog: ToolCatalog
    tasks: tuple[TaskSpec, ...]
    dbs: Mapping[str, WorldDb]
    executors: Mapping[str, ToolExecutor]
    expected: Mapping[str, WorldDb]
    policy_text: str = ""

    def task(self, task_id: str) -> TaskSpec:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise KeyError(task_id)

    def initial_db(self, task: TaskSpec) -> WorldDb:
        """A private copy of the task's starting database."""
        return self.dbs[task.initial_db_ref].snapshot()

    def execute(self, call, db: WorldDb) -> tuple[ToolResult, WorldDb]:
        return execute_tool(call, db, self.catalog, self.executors)

    def expected_db(self, task: TaskSpec) -> WorldDb:
        return apply_ground_truth(task, self.initial_db(task), self.catalog, self.executors)

    def check_success(self, final_db: WorldDb, final_assistant_msg: str, task: TaskSpec) -> bool:
        return check_success(final_db, final_assistant_msg, self.expected_db(task), task)

    def fixture_digest(self) -> str:
        import hashlib

        blob = canonical_json(
            {
                "tasks": [t.to_json() for t in self.tasks],
                "dbs": {k: v.root for k, v in sorted(self.dbs.items())},
            }
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _domain_dir(name: str) -> Path:
    return Path(str(resources.files("factored_agents.environment").joinpath("data", name)))


def _read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def load_domain(name: str, root: str | Path | None = None) -> Domain:
    """Load and cross-validate a bundled domain (or one under ``root``)."""
    if name not in DOMAIN_EXECUTORS:
        raise UnknownDomainError(name)
    d = Path(root) / name if root is not None else _domain_dir(name)
    if not d.is_dir():
        raise UnknownDomainError(name)
    catalog = parse_catalog((d / "catalog.json").read_text(encoding="utf-8"))
    executors = DOMAIN_EXECUTORS[name]
    missing = [n for n in catalog.names if n not in executors]
    if missing:
        raise FixtureError(f"{name}: tools without executors: {missing}")
    dbs = {p.stem: WorldDb(_read_json(p)) for p in sorted((d / "db").glob("*.json"))}
    tasks = []
    seen = set()
    for obj in _read_json(d / "tasks.json"):
        task = TaskSpec.from_json(obj)
        if task.task_id in seen:
            raise FixtureError(f"duplicate task id {task.task_id}")
        seen.add(task.task_id)
        if task.initial_db_ref not in dbs:
            raise FixtureError(f"{task.task_id}: unknown initial db {task.initial_db_ref!r}")
        for i, action in enumerate(task.ground_truth_actions):
            report = validate_call(action, catalog)
            if not report.valid:
                raise FixtureError(f"{task.task_id}: ground-truth action {i} invalid: {report.summary()}")
        tasks.append(task)
    expected = {p.stem: WorldDb(_read_json(p)) for p in sorted((d / "expected").glob("*.json"))}
    policy = d / "policy.txt"
    return Domain(
        name=name,
        catalog=catalog,
        tasks=tuple(tasks),
        dbs=dbs,
        executors=executors,
        expected=expected,
        policy_text=policy.read_text(encoding="utf-8") if policy.exists() else "",
    )


def write_expected(domain: Domain, out_dir: str | Path) -> list[Path]:
    """Fold every task's ground truth and write the golden final databases."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for task in domain.tasks:
        path = out / f"{task.task_id}.json"
        path.write_text(json.dumps(domain.expected_db(task).root, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        written.append(path)
    return written


__all__ = [
    "BusinessRuleError",
    "Domain",
    "FixtureError",
    "PreconditionError",
    "TaskSpec",
    "ToolExecutor",
    "ToolResult",
    "UnknownDomainError",
    "WorldDb",
    "apply_ground_truth",
    "check_success",
    "execute_tool",
    "load_domain",
    "outputs_present",
    "write_expected",
]
