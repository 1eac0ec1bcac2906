"""Conversation turns, sentinel parsing, and prompt rendering."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Any, Iterable, Mapping

from .schema import CallShapeError, StructuredToolCall, ToolCatalog, ToolSchema, adapt_api_call

log = logging.getLogger(__name__)

NL_SENTINEL = "natural_language_tool_call"
JSON_SENTINEL = "json_tool_call"
ROLES = ("system", "user", "assistant", "tool")

_PARAGRAPH_BREAK = re.compile(r"\n[ \t]*\n")


class ProtocolError(ValueError):
    """A sentinel was present but what followed it could not be used."""


class MalformedSentinelError(ProtocolError):
    pass


class JsonToolCallParseError(ProtocolError):
    pass


class ToolCallShapeError(ProtocolError):
    pass


class PromptMode(str, Enum):
    FACTORED = "factored"
    BASELINE = "baseline"


@dataclass(frozen=True)
class ConversationTurn:
    role: str
    content: str
    meta: Mapping[str, Any] | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not self.content and not (self.role == "tool" and self.meta):
            raise ValueError(f"{self.role} turn needs content")

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"role": self.role, "content": self.content}
        if self.meta:
            out["meta"] = dict(self.meta)
        return out

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ConversationTurn":
        return cls(obj["role"], obj.get("content", ""), obj.get("meta"))


def dump_transcript(turns: Iterable[ConversationTurn]) -> str:
    return "".join(json.dumps(t.to_json(), ensure_ascii=False) + "\n" for t in turns)


def load_transcript(text: str) -> list[ConversationTurn]:
    return [ConversationTurn.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]


@dataclass(frozen=True)
class NaturalLanguageToolCall:
    text: str
    tool_hint: str | None = None

    def __post_init__(self):
        if _PARAGRAPH_BREAK.search(self.text):
            raise ValueError("a natural-language tool call is a single paragraph")
        if self.text.startswith(NL_SENTINEL):
            raise ValueError("text must not begin with the sentinel")


def find_tool_hint(text: str, catalog: ToolCatalog | None) -> str | None:
    """Earliest catalog tool name that occurs in ``text`` as a whole identifier."""
    if catalog is None:
        return None
    best: tuple[int, int, str] | None = None
    for name in catalog.names:
        m = re.search(rf"(?<![\w.]){re.escape(name)}(?![\w])", text)
        if m:
            # earliest position wins; longer name breaks ties
            key = (m.start(), -len(name), name)
            if best is None or key < best:
                best = key
    return best[2] if best else None


def extract_nl_tool_call(message: str, catalog: ToolCatalog | None = None) -> NaturalLanguageToolCall | None:
    """Pull the natural-language tool call out of a planner message.

    The call is the rest of the paragraph after the first sentinel. Only one
    call is honored per message.
    """
    start = message.find(NL_SENTINEL)
    if start < 0:
        return None
    rest = message[start + len(NL_SENTINEL):]
    brk = _PARAGRAPH_BREAK.search(rest)
    paragraph = rest[: brk.start()] if brk else rest
    again = paragraph.find(NL_SENTINEL)
    if again >= 0:
        paragraph = paragraph[:again]
    if again >= 0 or message.find(NL_SENTINEL, start + len(NL_SENTINEL)) >= 0:
        log.warning("protocol violation: more than one %s in a message; only the first is used", NL_SENTINEL)
    text = paragraph.strip()
    if text.startswith(":"):
        text = text[1:].strip()
    if not text:
        raise MalformedSentinelError(f"{NL_SENTINEL} is not followed by a request")
    return NaturalLanguageToolCall(text, find_tool_hint(text, catalog))


def balanced_json_span(text: str, start: int = 0) -> tuple[int, int] | None:
    """Return ``(begin, end)`` of the first balanced ``{...}`` at or after ``start``.

    Braces inside JSON string literals (including escaped quotes) are ignored.
    Returns None when there is no ``{`` or it never closes.
    """
    begin = text.find("{", start)
    if begin < 0:
        return None
    depth = 0
    in_string = False
    escaped = False
    for i in range(begin, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return begin, i + 1
    return None


def contains_json_object(text: str) -> bool:
    """True if some ``{`` in ``text`` opens a balanced span."""
    pos = text.find("{")
    while pos >= 0:
        if balanced_json_span(text, pos) is not None:
            return True
        pos = text.find("{", pos + 1)
    return False


def parse_json_object(text: str, start: int = 0) -> Any:
    span = balanced_json_span(text, start)
    if span is None:
        raise JsonToolCallParseError("no balanced JSON object found")
    try:
        return json.loads(text[span[0]: span[1]])
    except json.JSONDecodeError as exc:
        raise JsonToolCallParseError(f"invalid JSON: {exc.msg} (char {span[0] + exc.pos})") from None


def extract_json_tool_call(message: str) -> StructuredToolCall | None:
    """Parse the ``json_tool_call {...}`` protocol; None when the sentinel is absent."""
    start = message.find(JSON_SENTINEL)
    if start < 0:
        return None
    if message.find(JSON_SENTINEL, start + len(JSON_SENTINEL)) >= 0:
        log.warning("protocol violation: more than one %s in a message; only the first is used", JSON_SENTINEL)
    obj = parse_json_object(message, start + len(JSON_SENTINEL))
    try:
        return StructuredToolCall.from_json(obj)
    except CallShapeError as exc:
        raise ToolCallShapeError(str(exc)) from None


def parse_call_text(text: str, accept_api_shape: bool = False) -> StructuredToolCall:
    """Read a call from model output: the ``json_tool_call`` protocol, or a bare JSON object.

    ``accept_api_shape`` lets ``{"api", "operation_id", ...}`` objects through
    the adapter in :func:`~factored_agents.schema.adapt_api_call`.
    """
    if JSON_SENTINEL in text:
        return extract_json_tool_call(text)
    obj = parse_json_object(text)
    if accept_api_shape and isinstance(obj, dict) and "api" in obj and "operation_id" in obj:
        return adapt_api_call(obj)
    try:
        return StructuredToolCall.from_json(obj)
    except CallShapeError as exc:
        raise ToolCallShapeError(str(exc)) from None


# -- prompts -----------------------------------------------------------------


@lru_cache(maxsize=None)
def prompt_suffix(mode: PromptMode | str) -> str:
    mode = PromptMode(mode)
    name = "factored_suffix.txt" if mode is PromptMode.FACTORED else "baseline_suffix.txt"
    return resources.files("factored_agents.prompts").joinpath(name).read_text(encoding="utf-8")


def _render_param(p) -> str:
    if p.kind == "enum":
        kind = "enum: " + " | ".join(p.enum_values)
    elif p.kind == "array":
        kind = f"array of {p.item_kind}"
    else:
        kind = p.kind
    flag = "required" if p.required else "optional"
    line = f"- {p.name} ({kind}, {flag})"
    return f"{line}: {p.description}" if p.description else line


def render_tool(tool: ToolSchema) -> str:
    lines = [f"## {tool.name}"]
    if tool.description:
        lines.append(tool.description)
    if tool.params:
        lines.append("Parameters:")
        lines.extend(_render_param(p) for p in tool.params)
    else:
        lines.append("Parameters: none")
    return "\n".join(lines)


def render_tool_list(catalog: ToolCatalog) -> str:
    return "# Tools\n\n" + "\n\n".join(render_tool(t) for t in catalog.tools)


def render_system_prompt(catalog: ToolCatalog, mode: PromptMode | str, policy_text: str = "") -> str:
    if not len(catalog):
        raise ValueError("cannot render a prompt for an empty catalog")
    parts = [policy_text.strip()] if policy_text.strip() else []
    parts.append(render_tool_list(catalog))
    parts.append(prompt_suffix(mode))
    return "\n\n".join(parts)


TOOL_AGENT_INSTRUCTION = (
    "Convert the natural language tool call into a single JSON tool call of the form "
    '{"name": <tool name>, "arguments": {...}} using exactly one of these tool schemas.'
)


def render_tool_schema_json(tool: ToolSchema) -> str:
    return json.dumps(tool.to_openapi(), ensure_ascii=False, sort_keys=True)


def render_tool_agent_input(
    nl_call: NaturalLanguageToolCall,
    catalog: ToolCatalog,
    history: Iterable[ConversationTurn] = (),
    window: int = 4,
) -> list[ConversationTurn]:
    """Messages for the tool agent: schemas, the last ``window`` turns, then the request."""
    if window < 0:
        raise ValueError("window must be non-negative")
    system = TOOL_AGENT_INSTRUCTION + "\n\n" + "\n".join(render_tool_schema_json(t) for t in catalog.tools)
    convo = [t for t in history if t.role != "system"]
    tail = convo[max(0, len(convo) - window):] if window else []
    return [ConversationTurn("system", system), *tail, ConversationTurn("user", nl_call.text)]
