"""Staged synthetic training-data generation for tool agents.

Each attempt picks a persona, then asks a model for a world state, a
conversation, a natural-language tool call, a JSON tool call and a
faithfulness verdict. Every stage requests up to ``candidates_per_stage``
completions and keeps the first that passes its checks; if none does, the
attempt stops there and yields nothing.

World states are requested as JSON documents rather than as code to run,
so nothing model-written is ever executed.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .backends import GenerationParams
from .protocol import (
    NL_SENTINEL,
    ConversationTurn,
    ProtocolError,
    contains_json_object,
    parse_call_text,
    parse_json_object,
)
from .schema import StructuredToolCall, ToolCatalog, ToolSchema, validate_call

STAGES = ("world_state", "conversation", "nl_tool_call", "structured_call", "faithfulness")
STAGE_MARKER = "### stage: {}"
WORLD_STATE_NOTE = (
    "world states are generated as JSON documents, not as executed model-written code"
)

_FENCE = re.compile(r"^```[a-zA-Z]*\s*|\s*```$")


class EmptyFixtureError(ValueError):
    pass


@dataclass(frozen=True)
class Persona:
    name: str
    location: str

    def __post_init__(self):
        if not self.name.strip() or not self.location.strip():
            raise ValueError("persona name and location must be non-empty")


def load_personas(path: str | Path | None = None) -> list[Persona]:
    if path is None:
        text = resources.files("factored_agents.data").joinpath("personas.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return [Persona(p["name"], p["location"]) for p in json.loads(text)]


def sample_persona(rng: random.Random, personas: Sequence[Persona] | None = None) -> Persona:
    personas = load_personas() if personas is None else personas
    if not personas:
        raise EmptyFixtureError("persona list is empty")
    return personas[rng.randrange(len(personas))]


@dataclass(frozen=True)
class WorldState:
    state: Any
    seed: int


@dataclass(frozen=True)
class StageConfig:
    candidates_per_stage: int = 3
    turn_count_range: tuple[int, int] = (2, 8)
    seed: int = 0
    max_world_state_chars: int = 20000
    temperature: float = 0.7

    def __post_init__(self):
        lo, hi = self.turn_count_range
        if self.candidates_per_stage < 1:
            raise ValueError("candidates_per_stage must be positive")
        if lo < 2 or hi < lo:
            raise ValueError("turn_count_range must satisfy 2 <= min <= max")

    def to_json(self) -> dict[str, Any]:
        return {
            "candidates_per_stage": self.candidates_per_stage,
            "turn_count_range": list(self.turn_count_range),
            "seed": self.seed,
            "max_world_state_chars": self.max_world_state_chars,
            "temperature": self.temperature,
        }


@dataclass
class StageRecord:
    stage: str
    candidates: int = 0
    verdicts: list[str] = field(default_factory=list)
    accepted_index: int | None = None

    @property
    def accepted(self) -> bool:
        return self.accepted_index is not None

    def to_json(self) -> dict[str, Any]:
        return {"stage": self.stage, "candidates": self.candidates, "verdicts": self.verdicts,
                "accepted_index": self.accepted_index}


@dataclass
class StageOutcome:
    value: Any
    record: StageRecord


@dataclass
class SyntheticExample:
    persona: Persona
    world_state: WorldState
    conversation: list[ConversationTurn]
    nl_tool_call: str
    structured_call: StructuredToolCall
    schema_name: str
    stage_trace: list[StageRecord]

    def to_record(self) -> dict[str, Any]:
        return {
            "messages": [t.to_json() for t in self.conversation],
            "natural_language_tool_call": self.nl_tool_call,
            "json_tool_call": self.structured_call.to_json(),
        }

    @staticmethod
    def core_from_record(obj: dict[str, Any]) -> tuple[list[ConversationTurn], str, StructuredToolCall]:
        return (
            [ConversationTurn.from_json(m) for m in obj["messages"]],
            obj["natural_language_tool_call"],
            StructuredToolCall.from_json(obj["json_tool_call"]),
        )


# -- prompts -------------------------------------------------------------------

SYSTEM_PROMPT = "You write realistic synthetic data for training a model that formats tool calls."


def _schema_text(schema: ToolSchema) -> str:
    return json.dumps(schema.to_openapi(), ensure_ascii=False, sort_keys=True)


def _conversation_text(conversation: Sequence[ConversationTurn]) -> str:
    return "\n".join(f"{t.role}: {t.content}" for t in conversation)


def _ask(stage: str, body: str) -> list[ConversationTurn]:
    return [ConversationTurn("system", SYSTEM_PROMPT), ConversationTurn("user", STAGE_MARKER.format(stage) + "\n" + body)]


def _strip_fences(text: str) -> str:
    return _FENCE.sub("", text.strip()).strip()


def _run_stage(stage, backend, messages, config, check: Callable[[str], tuple[Any, str]], params_seed) -> StageOutcome:
    """Request candidates one at a time; ``check`` returns (value, "accepted") or (None, reason)."""
    record = StageRecord(stage)
    for i in range(config.candidates_per_stage):
        params = GenerationParams(temperature=config.temperature, seed=params_seed + i)
        text = backend.complete(messages, params)
        record.candidates += 1
        value, verdict = check(text)
        record.verdicts.append(verdict)
        if verdict == "accepted":
            record.accepted_index = i
            return StageOutcome(value, record)
    return StageOutcome(None, record)


# -- stages --------------------------------------------------------------------


def gen_world_state(schema: ToolSchema, persona: Persona, backend, config: StageConfig, rng: random.Random) -> StageOutcome:
    seed = rng.randrange(2**31)
    body = (
        f"Tool schema:\n{_schema_text(schema)}\n"
        f"Persona: {persona.name} from {persona.location}.\n"
        "Write a JSON document describing the world this person is in when they need this tool "
        "(accounts, records, available dates and so on). Random values such as dates are fine; "
        f"use {seed} as the random seed. Output only the JSON document."
    )

    def check(text):
        cleaned = _strip_fences(text)
        try:
            state = json.loads(cleaned)
        except ValueError:
            try:
                state = parse_json_object(cleaned)
            except ProtocolError:
                return None, "rejected: not JSON"
        if not isinstance(state, (dict, list)) or not state:
            return None, "rejected: empty document"
        if len(json.dumps(state, ensure_ascii=False)) > config.max_world_state_chars:
            return None, "rejected: too large"
        return WorldState(state, seed), "accepted"

    return _run_stage("world_state", backend, _ask("world_state", body), config, check, seed)


def check_conversation(turns: Any, n_turns: int) -> str:
    if not isinstance(turns, list):
        return "rejected: not a list of turns"
    if len(turns) != n_turns:
        return f"rejected: {len(turns)} turns, wanted {n_turns}"
    for i, t in enumerate(turns):
        if not isinstance(t, dict) or not isinstance(t.get("content"), str) or not t["content"].strip():
            return f"rejected: turn {i} malformed"
        if t.get("role") != ("user" if i % 2 == 0 else "assistant"):
            return f"rejected: turn {i} breaks user/assistant alternation"
    return "accepted"


def gen_conversation(world: WorldState, persona: Persona, n_turns: int, backend, config: StageConfig,
                     schema: ToolSchema | None = None) -> StageOutcome:
    lo, hi = config.turn_count_range
    if not lo <= n_turns <= hi:
        raise ValueError(f"n_turns {n_turns} outside {config.turn_count_range}")
    tool = f" and ends right before the assistant needs the {schema.name} tool" if schema else ""
    body = (
        f"World state:\n{json.dumps(world.state, ensure_ascii=False)}\n"
        f"Persona: {persona.name} from {persona.location}.\n"
        f"Write a conversation of exactly {n_turns} turns between this user and an assistant. "
        f"Turns alternate and the user speaks first. The conversation is grounded in the world state{tool}. "
        'Output a JSON array of {"role": "user" | "assistant", "content": "..."} objects.'
    )

    def check(text):
        cleaned = _strip_fences(text)
        try:
            turns = json.loads(cleaned)
        except ValueError:
            lo_i, hi_i = cleaned.find("["), cleaned.rfind("]")
            try:
                turns = json.loads(cleaned[lo_i: hi_i + 1]) if 0 <= lo_i < hi_i else None
            except ValueError:
                turns = None
            if turns is None:
                return None, "rejected: not a JSON array"
        verdict = check_conversation(turns, n_turns)
        if verdict != "accepted":
            return None, verdict
        return [ConversationTurn(t["role"], t["content"]) for t in turns], verdict

    return _run_stage("conversation", backend, _ask("conversation", body), config, check, world.seed + 1000)


def check_nl_call(text: str, schema: ToolSchema) -> str:
    if not text:
        return "rejected: empty"
    if re.search(r"\n[ \t]*\n", text):
        return "rejected: more than one paragraph"
    if schema.name not in text:
        return f"rejected: does not name {schema.name}"
    if contains_json_object(text):
        return "rejected: contains JSON"
    return "accepted"


def gen_nl_call(conversation: Sequence[ConversationTurn], schema: ToolSchema, backend, config: StageConfig,
                seed: int = 0) -> StageOutcome:
    body = (
        f"Tool schema:\n{_schema_text(schema)}\n"
        f"Conversation:\n{_conversation_text(conversation)}\n"
        "Write the request the assistant makes next as a single English paragraph. "
        f"Name the tool {schema.name} exactly and state every argument value. Do not write code. Do not use JSON."
    )

    def check(text):
        cleaned = text.strip()
        if cleaned.startswith(NL_SENTINEL):
            cleaned = cleaned[len(NL_SENTINEL):].lstrip(" :")
        verdict = check_nl_call(cleaned, schema)
        return (cleaned if verdict == "accepted" else None), verdict

    return _run_stage("nl_tool_call", backend, _ask("nl_tool_call", body), config, check, seed + 2000)


def gen_structured_call(conversation: Sequence[ConversationTurn], nl_call: str, schema: ToolSchema, backend,
                        config: StageConfig, seed: int = 0) -> StageOutcome:
    body = (
        f"Tool schema:\n{_schema_text(schema)}\n"
        f"Conversation:\n{_conversation_text(conversation)}\n"
        f"Natural language tool call: {nl_call}\n"
        'Output the matching JSON tool call {"name": ..., "arguments": {...}} and nothing else.'
    )
    catalog = ToolCatalog((schema,))

    def check(text):
        try:
            call = parse_call_text(_strip_fences(text))
        except ProtocolError as exc:
            return None, f"rejected: {exc}"
        report = validate_call(call, catalog)
        if not report.valid:
            return None, "rejected: " + ", ".join(str(f) for f in report.findings)
        return call, "accepted"

    return _run_stage("structured_call", backend, _ask("structured_call", body), config, check, seed + 3000)


def parse_yes_no(text: str) -> bool | None:
    """Strict verdict: the first line must be just yes or no (case-insensitive, trailing punctuation ok)."""
    first = text.strip().splitlines()[0] if text.strip() else ""
    word = first.strip().rstrip(".!").strip().lower()
    return {"yes": True, "no": False}.get(word)


def judge_faithfulness(call: StructuredToolCall, conversation: Sequence[ConversationTurn], nl_call: str, backend,
                       config: StageConfig, seed: int = 0) -> StageOutcome:
    body = (
        f"Conversation:\n{_conversation_text(conversation)}\n"
        f"Natural language tool call: {nl_call}\n"
        f"JSON tool call: {call.serialize()}\n"
        "Is the JSON tool call faithful to the conversation and the natural language tool call? "
        "Answer yes or no on the first line."
    )

    def check(text):
        verdict = parse_yes_no(text)
        if verdict is None:
            return None, "rejected: unparseable judgment"
        return (True, "accepted") if verdict else (None, "rejected: judged unfaithful")

    return _run_stage("faithfulness", backend, _ask("faithfulness", body), config, check, seed + 4000)


def run_pipeline(
    schema: ToolSchema,
    backend,
    config: StageConfig = StageConfig(),
    judge=None,
    rng: random.Random | None = None,
    personas: Sequence[Persona] | None = None,
    trace: list[StageRecord] | None = None,
) -> SyntheticExample | None:
    """One attempt at a synthetic example; None when some stage rejects every candidate.

    Stage records are appended to ``trace`` (when given) as they complete, so
    callers can see where an attempt exited. Backend errors propagate; they
    are not rejections.
    """
    rng = random.Random(config.seed) if rng is None else rng
    trace = [] if trace is None else trace
    judge = backend if judge is None else judge

    persona = sample_persona(rng, personas)
    world = gen_world_state(schema, persona, backend, config, rng)
    trace.append(world.record)
    if not world.record.accepted:
        return None
    n_turns = rng.randint(*config.turn_count_range)
    convo = gen_conversation(world.value, persona, n_turns, backend, config, schema)
    trace.append(convo.record)
    if not convo.record.accepted:
        return None
    nl = gen_nl_call(convo.value, schema, backend, config, world.value.seed)
    trace.append(nl.record)
    if not nl.record.accepted:
        return None
    structured = gen_structured_call(convo.value, nl.value, schema, backend, config, world.value.seed)
    trace.append(structured.record)
    if not structured.record.accepted:
        return None
    verdict = judge_faithfulness(structured.value, convo.value, nl.value, judge, config, world.value.seed)
    trace.append(verdict.record)
    if not verdict.record.accepted:
        return None
    return SyntheticExample(persona, world.value, convo.value, nl.value, structured.value, schema.name, list(trace))


def export_jsonl(examples: Iterable[SyntheticExample], destination: str | Path) -> int:
    lines = [json.dumps(ex.to_record(), ensure_ascii=False) + "\n" for ex in examples]
    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.writelines(lines)
    return len(lines)


@dataclass
class GenerationRun:
    examples: list[SyntheticExample]
    traces: list[list[StageRecord]]
    attempts: int

    def tallies(self) -> dict[str, dict[str, int]]:
        out = {s: {"attempts": 0, "candidates": 0, "accepted": 0, "exits": 0} for s in STAGES}
        for trace in self.traces:
            for rec in trace:
                t = out[rec.stage]
                t["attempts"] += 1
                t["candidates"] += rec.candidates
                t["accepted"] += int(rec.accepted)
            if trace and not trace[-1].accepted:
                out[trace[-1].stage]["exits"] += 1
        return out


def generate(catalog: ToolCatalog, backend, count: int, config: StageConfig = StageConfig(), judge=None,
             personas: Sequence[Persona] | None = None) -> GenerationRun:
    """Run ``count`` pipeline attempts, each on a tool drawn from ``catalog``."""
    if not len(catalog) and count:
        raise ValueError("catalog has no tools")
    examples, traces = [], []
    for attempt in range(count):
        rng = random.Random(f"{config.seed}:{attempt}")
        schema = catalog.tools[rng.randrange(len(catalog))]
        trace: list[StageRecord] = []
        ex = run_pipeline(schema, backend, config, judge, rng, personas, trace)
        traces.append(trace)
        if ex is not None:
            examples.append(ex)
    return GenerationRun(examples, traces, count)


def build_manifest(run: GenerationRun, catalogs: Sequence[ToolCatalog], config: StageConfig,
                   backends: dict[str, Any]) -> dict[str, Any]:
    return {
        "kind": "synthetic-data",
        "seed": config.seed,
        "stage_config": config.to_json(),
        "schema_digests": {
            t.name: hashlib.sha256(_schema_text(t).encode("utf-8")).hexdigest() for c in catalogs for t in c.tools
        },
        "catalog_digests": {c.domain_label or f"catalog{i}": c.digest() for i, c in enumerate(catalogs)},
        "backends": backends,
        "attempts": run.attempts,
        "examples": len(run.examples),
        "yield": (len(run.examples) / run.attempts) if run.attempts else 0.0,
        "stage_tallies": run.tallies(),
        "notes": [WORLD_STATE_NOTE],
    }
