"""Episode loop for the factored planner / tool-agent pair and the single-model baseline.

Factored mode: planner message -> ``natural_language_tool_call`` paragraph ->
tool agent -> JSON call -> validation -> execution -> tool turn back to the
planner. Baseline mode parses ``json_tool_call`` straight out of the planner
message. A planner message with no tool call goes to the user simulator,
which either answers or ends the episode with :data:`STOP_TOKEN`.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .backends import BackendError, GenerationParams, ReplayBackend
from .environment import Domain, TaskSpec
from .environment.core import ToolResult
from .protocol import (
    ConversationTurn,
    NaturalLanguageToolCall,
    PromptMode,
    ProtocolError,
    extract_json_tool_call,
    extract_nl_tool_call,
    parse_call_text,
    render_system_prompt,
    render_tool_agent_input,
)
from .schema import StructuredToolCall, ValidationReport, validate_call

logger = logging.getLogger(__name__)

STOP_TOKEN = "###STOP###"
TERMINATIONS = ("final_answer", "max_turns", "protocol_failure")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EpisodeConfig:
    mode: PromptMode = PromptMode.FACTORED
    max_turns: int = 30
    window: int = 4
    repair_attempts: int = 0
    params_planner: GenerationParams = GenerationParams()
    params_tool_agent: GenerationParams = GenerationParams()
    params_user: GenerationParams = GenerationParams()
    accept_api_shape: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", PromptMode(self.mode))
        if self.max_turns < 1:
            raise ConfigError("max_turns must be >= 1")
        if self.window < 0:
            raise ConfigError("window must be >= 0")
        if not 0 <= self.repair_attempts <= 3:
            raise ConfigError("repair_attempts must be in 0..3")

    def to_json(self) -> dict[str, Any]:
        return {
            "mode": self.mode.value,
            "max_turns": self.max_turns,
            "window": self.window,
            "repair_attempts": self.repair_attempts,
            "accept_api_shape": self.accept_api_shape,
        }


@dataclass
class Handoff:
    nl_call: str | None
    tool_agent_output: str | None
    structured_call: StructuredToolCall | None
    validation_report: ValidationReport | None
    tool_result: ToolResult | None
    parse_error: str | None = None
    repairs: int = 0

    def to_json(self) -> dict[str, Any]:
        return {
            "nl_call": self.nl_call,
            "tool_agent_output": self.tool_agent_output,
            "structured_call": self.structured_call.to_json() if self.structured_call else None,
            "validation_report": self.validation_report.to_json() if self.validation_report else None,
            "tool_result": self.tool_result.to_json() if self.tool_result else None,
            "parse_error": self.parse_error,
            "repairs": self.repairs,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Handoff":
        return cls(
            nl_call=obj.get("nl_call"),
            tool_agent_output=obj.get("tool_agent_output"),
            structured_call=StructuredToolCall.from_json(obj["structured_call"]) if obj.get("structured_call") else None,
            validation_report=ValidationReport.from_json(obj["validation_report"]) if obj.get("validation_report") else None,
            tool_result=ToolResult.from_json(obj["tool_result"]) if obj.get("tool_result") else None,
            parse_error=obj.get("parse_error"),
            repairs=obj.get("repairs", 0),
        )


@dataclass
class EpisodeLog:
    run_id: str
    domain: str
    task_id: str
    trial_index: int
    mode: str
    turns: list[ConversationTurn] = field(default_factory=list)
    handoffs: list[Handoff] = field(default_factory=list)
    exchanges: list[dict[str, Any]] = field(default_factory=list)
    final_db_digest: str = ""
    success: bool = False
    termination_reason: str = "max_turns"
    error: str | None = None
    wall_time: float = 0.0

    def to_json(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "domain": self.domain,
            "task_id": self.task_id,
            "trial_index": self.trial_index,
            "mode": self.mode,
            "turns": [t.to_json() for t in self.turns],
            "handoffs": [h.to_json() for h in self.handoffs],
            "exchanges": self.exchanges,
            "final_db_digest": self.final_db_digest,
            "success": self.success,
            "termination_reason": self.termination_reason,
            "error": self.error,
            "wall_time": self.wall_time,
        }

    def to_line(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False)

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "EpisodeLog":
        if obj.get("termination_reason") not in TERMINATIONS:
            raise ValueError(f"bad termination_reason {obj.get('termination_reason')!r}")
        return cls(
            run_id=obj["run_id"],
            domain=obj["domain"],
            task_id=obj["task_id"],
            trial_index=obj["trial_index"],
            mode=obj["mode"],
            turns=[ConversationTurn.from_json(t) for t in obj.get("turns", [])],
            handoffs=[Handoff.from_json(h) for h in obj.get("handoffs", [])],
            exchanges=list(obj.get("exchanges", [])),
            final_db_digest=obj.get("final_db_digest", ""),
            success=bool(obj["success"]),
            termination_reason=obj["termination_reason"],
            error=obj.get("error"),
            wall_time=float(obj.get("wall_time", 0.0)),
        )

    def comparable(self) -> dict[str, Any]:
        """Everything except wall-clock time."""
        out = self.to_json()
        out.pop("wall_time")
        return out


def augment_prompt(instruction: str, persona_context: str = "") -> str:
    if not instruction.strip():
        raise ValueError("instruction must be non-empty")
    if not persona_context:
        return instruction
    return f"{persona_context}\n\n{instruction}"


USER_SIM_TEMPLATE = (
    "You are a customer talking to a service agent. Your goal: {instruction}\n"
    "{persona}Answer the agent's questions briefly and truthfully. "
    "When your goal is met, or cannot be met, reply with exactly " + STOP_TOKEN + "."
)


def _user_view(task: TaskSpec, turns: Sequence[ConversationTurn]) -> list[ConversationTurn]:
    persona = f"Background: {task.persona_context}\n" if task.persona_context else ""
    view = [ConversationTurn("system", USER_SIM_TEMPLATE.format(instruction=task.instruction, persona=persona))]
    body = turns[1:]
    for i, t in enumerate(body):
        # planner tool calls and their results stay between planner and tools
        if t.role == "assistant" and not (i + 1 < len(body) and body[i + 1].role == "tool"):
            view.append(ConversationTurn("user", t.content))
        elif t.role == "user":
            view.append(ConversationTurn("assistant", t.content))
    return view


class _EpisodeAbort(Exception):
    def __init__(self, cause: BackendError):
        self.cause = cause


class _Recorder:
    def __init__(self, exchanges: list[dict[str, Any]]):
        self.exchanges = exchanges

    def call(self, role: str, backend, messages: list[ConversationTurn], params: GenerationParams) -> str:
        entry: dict[str, Any] = {"backend": role, "messages": [m.to_json() for m in messages]}
        try:
            text = backend.complete(messages, params)
        except BackendError as exc:
            entry["error"] = {"type": type(exc).__name__, "message": str(exc)}
            self.exchanges.append(entry)
            raise _EpisodeAbort(exc) from exc
        entry["response"] = text
        self.exchanges.append(entry)
        return text


def _rejection_text(report: ValidationReport) -> str:
    return "Tool call rejected, nothing was executed. " + report.summary()


class _Episode:
    def __init__(self, task, config, planner, tool_agent, user_sim, domain, log):
        self.task = task
        self.config = config
        self.planner = planner
        self.tool_agent = tool_agent
        self.user_sim = user_sim
        self.domain = domain
        self.log = log
        self.rec = _Recorder(log.exchanges)
        self.db = domain.initial_db(task)

    @property
    def turns(self) -> list[ConversationTurn]:
        return self.log.turns

    def run(self) -> None:
        cfg = self.config
        self.turns.append(ConversationTurn("system", render_system_prompt(self.domain.catalog, cfg.mode, self.domain.policy_text)))
        self.turns.append(ConversationTurn("user", augment_prompt(self.task.instruction, self.task.persona_context)))
        final_message = ""
        self.log.termination_reason = "max_turns"
        try:
            for _ in range(cfg.max_turns):
                message = self.rec.call("planner", self.planner, list(self.turns), cfg.params_planner)
                self.turns.append(ConversationTurn("assistant", message))
                final_message = message
                if self.route(message):
                    continue
                reply = self.rec.call("user_sim", self.user_sim, _user_view(self.task, self.turns), cfg.params_user)
                if STOP_TOKEN in reply:
                    self.log.termination_reason = "final_answer"
                    break
                self.turns.append(ConversationTurn("user", reply))
        except _EpisodeAbort as abort:
            self.log.termination_reason = "protocol_failure"
            self.log.error = f"{type(abort.cause).__name__}: {abort.cause}"

        self.log.final_db_digest = self.db.digest()
        if self.log.termination_reason != "protocol_failure":
            self.log.success = self.domain.check_success(self.db, final_message, self.task)

    def route(self, message: str) -> bool:
        """Handle a planner message; False means it was not a tool call."""
        if self.config.mode is PromptMode.FACTORED:
            try:
                nl = extract_nl_tool_call(message, self.domain.catalog)
            except ProtocolError as exc:
                self.finish(Handoff(None, None, None, None, None, parse_error=str(exc)))
                return True
            if nl is None:
                return False
            self.finish(self.factored_handoff(nl))
            return True
        try:
            call = extract_json_tool_call(message)
        except ProtocolError as exc:
            self.finish(Handoff(None, message, None, None, None, parse_error=str(exc)))
            return True
        if call is None:
            return False
        self.finish(Handoff(None, message, call, validate_call(call, self.domain.catalog), None))
        return True

    def factored_handoff(self, nl: NaturalLanguageToolCall) -> Handoff:
        cfg = self.config
        messages = render_tool_agent_input(nl, self.domain.catalog, self.turns[:-1], cfg.window)
        handoff = Handoff(nl.text, None, None, None, None)
        for attempt in range(cfg.repair_attempts + 1):
            output = self.rec.call("tool_agent", self.tool_agent, messages, cfg.params_tool_agent)
            handoff.tool_agent_output = output
            handoff.repairs = attempt
            try:
                call = parse_call_text(output, cfg.accept_api_shape)
            except ProtocolError as exc:
                handoff.parse_error = str(exc)
                handoff.structured_call = handoff.validation_report = None
                problem = f"Could not parse your output: {exc}"
            else:
                handoff.parse_error = None
                handoff.structured_call = call
                handoff.validation_report = validate_call(call, self.domain.catalog)
                if handoff.validation_report.valid:
                    break
                problem = _rejection_text(handoff.validation_report)
            if attempt < cfg.repair_attempts:
                messages = messages + [
                    ConversationTurn("assistant", output),
                    ConversationTurn("user", problem + " Reply with the corrected JSON tool call only."),
                ]
        return handoff

    def finish(self, handoff: Handoff) -> None:
        """Execute a validated call (if any) and hand the outcome back to the planner."""
        self.log.handoffs.append(handoff)
        call, report = handoff.structured_call, handoff.validation_report
        if call is None:
            self.turns.append(_tool_turn(f"Protocol error: {handoff.parse_error}", None))
        elif not report.valid:
            self.turns.append(_tool_turn(_rejection_text(report), call.tool_name))
        else:
            result, self.db = self.domain.execute(call, self.db)
            handoff.tool_result = result
            self.turns.append(_tool_turn(result.render(), call.tool_name))


def _tool_turn(text: str, tool_name: str | None) -> ConversationTurn:
    return ConversationTurn("tool", text, {"tool_name": tool_name} if tool_name else None)


def run_episode(
    task: TaskSpec,
    config: EpisodeConfig,
    planner,
    tool_agent,
    user_sim,
    domain: Domain,
    run_id: str = "",
    trial_index: int = 0,
) -> EpisodeLog:
    """Run one trial of ``task``. Backend failures end it as ``protocol_failure``, never raise."""
    t0 = time.perf_counter()
    log = EpisodeLog(run_id, domain.name, task.task_id, trial_index, config.mode.value)
    _Episode(task, config, planner, tool_agent, user_sim, domain, log).run()
    log.wall_time = time.perf_counter() - t0
    return log


def replay_backends(log: EpisodeLog, strict: bool = True) -> dict[str, ReplayBackend]:
    """One replay backend per role, fed from the episode's recorded exchanges."""
    roles = ("planner", "tool_agent", "user_sim")
    return {
        role: ReplayBackend([e for e in log.exchanges if e["backend"] == role], strict=strict, name=f"replay-{role}")
        for role in roles
    }


def replay_episode(log: EpisodeLog, config: EpisodeConfig, domain: Domain, strict: bool = True) -> EpisodeLog:
    b = replay_backends(log, strict)
    task = domain.task(log.task_id)
    return run_episode(task, config, b["planner"], b["tool_agent"], b["user_sim"], domain, log.run_id, log.trial_index)


class LogSink:
    """Appends episode logs as JSON lines; safe to share between worker threads."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, log: EpisodeLog) -> None:
        if self.path is None:
            return
        line = log.to_line() + "\n"
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(line)


BackendFactory = Callable[[TaskSpec, int], tuple[Any, Any, Any]]


def run_trials(
    tasks: Sequence[TaskSpec],
    n_trials: int,
    config: EpisodeConfig,
    backends: BackendFactory,
    domain: Domain,
    run_id: str = "",
    workers: int = 1,
    sink: LogSink | None = None,
) -> list[EpisodeLog]:
    """``n_trials`` independent episodes per task, each on a fresh db snapshot.

    ``backends(task, trial_index)`` returns ``(planner, tool_agent, user_sim)``.
    Logs go to ``sink`` as episodes finish; the returned list is in
    (task order, trial index) order regardless of ``workers``.
    """
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")
    grid = [(task, i) for task in tasks for i in range(n_trials)]

    def one(item):
        task, i = item
        try:
            planner, tool_agent, user_sim = backends(task, i)
            log = run_episode(task, config, planner, tool_agent, user_sim, domain, run_id, i)
        except Exception as exc:  # noqa: BLE001 - one broken episode must not sink the batch
            logger.exception("episode %s/%d crashed", task.task_id, i)
            log = EpisodeLog(run_id, domain.name, task.task_id, i, config.mode.value,
                             termination_reason="protocol_failure", error=f"{type(exc).__name__}: {exc}")
        if sink is not None:
            sink.write(log)
        return log

    if workers <= 1:
        return [one(item) for item in grid]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, grid))
