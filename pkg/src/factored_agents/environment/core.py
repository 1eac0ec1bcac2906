"""World databases, tool execution and success checking."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

from ..schema import StructuredToolCall, ToolCatalog, validate_call


class PreconditionError(ValueError):
    """A schema-invalid call reached the executor."""


class FixtureError(ValueError):
    pass


class BusinessRuleError(Exception):
    """Raised by a tool effect to refuse a request; becomes an ok=false result."""


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class WorldDb:
    root: Mapping[str, Any]
    version: int = 0

    def __post_init__(self):
        for name, coll in self.root.items():
            if not isinstance(coll, dict):
                raise FixtureError(f"collection {name!r} must map record ids to records")

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.root).encode("utf-8")).hexdigest()

    def snapshot(self) -> "WorldDb":
        return WorldDb(copy.deepcopy(self.root), self.version)

    def same_state(self, other: "WorldDb") -> bool:
        return canonical_json(self.root) == canonical_json(other.root)


@dataclass(frozen=True)
class ToolResult:
    ok: bool
    payload: Any = None
    error_detail: str | None = None

    def __post_init__(self):
        if self.ok == (self.error_detail is not None):
            raise ValueError("error_detail must be present iff ok is false")

    def to_json(self) -> dict[str, Any]:
        out = {"ok": self.ok, "payload": self.payload}
        if self.error_detail is not None:
            out["error_detail"] = self.error_detail
        return out

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ToolResult":
        return cls(obj["ok"], obj.get("payload"), obj.get("error_detail"))

    def render(self) -> str:
        if self.ok:
            return canonical_json(self.payload)
        return f"Error: {self.error_detail}"


Effect = Callable[[dict, Mapping[str, Any]], Any]


@dataclass(frozen=True)
class ToolExecutor:
    """An effect mutates the db dict it is handed (a private copy) and returns the payload."""

    name: str
    effect: Effect
    read_only: bool = False


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    instruction: str
    persona_context: str = ""
    initial_db_ref: str = "initial"
    ground_truth_actions: tuple[StructuredToolCall, ...] = ()
    required_outputs: tuple[str, ...] = ()
    user_replies: tuple[str, ...] = ()

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "TaskSpec":
        return cls(
            task_id=obj["task_id"],
            instruction=obj["instruction"],
            persona_context=obj.get("persona_context", ""),
            initial_db_ref=obj.get("initial_db_ref", "initial"),
            ground_truth_actions=tuple(StructuredToolCall.from_json(a) for a in obj.get("ground_truth_actions", [])),
            required_outputs=tuple(obj.get("required_outputs", [])),
            user_replies=tuple(obj.get("user_replies", [])),
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "instruction": self.instruction,
            "persona_context": self.persona_context,
            "initial_db_ref": self.initial_db_ref,
            "ground_truth_actions": [a.to_json() for a in self.ground_truth_actions],
            "required_outputs": list(self.required_outputs),
            "user_replies": list(self.user_replies),
        }


def execute_tool(
    call: StructuredToolCall,
    db: WorldDb,
    catalog: ToolCatalog,
    executors: Mapping[str, ToolExecutor],
) -> tuple[ToolResult, WorldDb]:
    """Run one validated call. Business-rule refusals leave ``db`` untouched."""
    report = validate_call(call, catalog)
    if not report.valid:
        raise PreconditionError(f"refusing to execute invalid call: {report.summary()}")
    executor = executors.get(call.tool_name)
    if executor is None:
        raise FixtureError(f"no executor registered for {call.tool_name!r}")
    work = copy.deepcopy(dict(db.root))
    try:
        payload = executor.effect(work, dict(call.arguments))
    except BusinessRuleError as exc:
        return ToolResult(False, None, str(exc)), db
    if executor.read_only or canonical_json(work) == canonical_json(db.root):
        return ToolResult(True, payload), db
    return ToolResult(True, payload), WorldDb(work, db.version + 1)


def apply_ground_truth(
    task: TaskSpec,
    db0: WorldDb,
    catalog: ToolCatalog,
    executors: Mapping[str, ToolExecutor],
) -> WorldDb:
    db = db0
    for i, action in enumerate(task.ground_truth_actions):
        try:
            result, db = execute_tool(action, db, catalog, executors)
        except PreconditionError as exc:
            raise FixtureError(f"{task.task_id}: ground-truth action {i} is invalid: {exc}") from None
        if not result.ok:
            raise FixtureError(f"{task.task_id}: ground-truth action {i} ({action.tool_name}) failed: {result.error_detail}")
    return db


def outputs_present(message: str, required: Sequence[str]) -> bool:
    lowered = message.lower()
    return all(s.lower() in lowered for s in required)


def check_success(final_db: WorldDb, final_assistant_msg: str, expected_db: WorldDb, task: TaskSpec) -> bool:
    """Exact db equality (version ignored) plus every required output, case-insensitively."""
    return final_db.same_state(expected_db) and outputs_present(final_assistant_msg or "", task.required_outputs)

