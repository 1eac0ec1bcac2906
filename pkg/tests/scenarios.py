"""Scripted backends for the paws-style booking episode."""

from factored_agents.backends import ScriptedBackend
from factored_agents.orchestrator import STOP_TOKEN

PAWS_NL = "natural_language_tool_call Use the paws_shelter tool to book an interview on November 2, 2025."
BOOK_JSON = 'json_tool_call {"name": "book_interview", "arguments": {"date": "2025-11-02"}}'
BOOK_JSON_NO_DATE = 'json_tool_call {"name": "book_interview", "arguments": {}}'
FINAL = "Your interview with Paws Cat Shelter is booked for November 2, 2025."


def golden_backends(tool_agent_output=BOOK_JSON):
    planner = ScriptedBackend([PAWS_NL, FINAL], name="planner")
    tool_agent = ScriptedBackend([tool_agent_output], name="tool_agent")
    user_sim = ScriptedBackend([STOP_TOKEN], name="user_sim")
    return planner, tool_agent, user_sim


def baseline_backends(json_message=BOOK_JSON):
    planner = ScriptedBackend([json_message, FINAL], name="planner")
    return planner, ScriptedBackend([], name="tool_agent"), ScriptedBackend([STOP_TOKEN], name="user_sim")


# -- synthetic-data stages ---------------------------------------------------

import json  # noqa: E402
import re  # noqa: E402

from factored_agents.synthgen import STAGE_MARKER  # noqa: E402

_DEFAULTS = {"string": "2025-11-02", "integer": 1, "number": 1.5, "boolean": True, "array": [], "object": {}}


def _prompt(messages):
    return messages[-1].content


def _schema_of(messages):
    line = next(l for l in _prompt(messages).splitlines() if l.startswith("{") and '"parameters"' in l)
    return json.loads(line)


def world_reply(messages):
    seed = re.search(r"use (\d+) as the random seed", _prompt(messages)).group(1)
    return json.dumps({"dates": ["2025-11-02"], "seed": int(seed)})


def conversation_reply(messages):
    text = _prompt(messages)
    n = int(re.search(r"exactly (\d+) turns", text).group(1))
    who = re.search(r"Persona: (.+?) from", text).group(1)
    return json.dumps([
        {"role": "user" if i % 2 == 0 else "assistant", "content": f"{who} turn {i}"} for i in range(n)
    ])


def nl_reply(messages):
    name = _schema_of(messages)["name"]
    return f"Use the {name} tool to book an interview on November 2, 2025."


def structured_reply(messages):
    schema = _schema_of(messages)
    props = schema["parameters"]["properties"]
    args = {}
    for pname in schema["parameters"].get("required", []):
        prop = props[pname]
        args[pname] = prop["enum"][0] if "enum" in prop else _DEFAULTS[prop["type"]]
    return json.dumps({"name": schema["name"], "arguments": args})


def stage_is(stage):
    marker = STAGE_MARKER.format(stage)
    return lambda turn: turn.content.startswith(marker)


def synth_backend(overrides=None, judge="yes"):
    """Match-mode backend answering each stage. ``overrides`` maps stage -> response."""
    from factored_agents.backends import ScriptedBackend

    replies = {
        "world_state": world_reply,
        "conversation": conversation_reply,
        "nl_tool_call": nl_reply,
        "structured_call": structured_reply,
        "faithfulness": judge,
    }
    replies.update(overrides or {})
    return ScriptedBackend([(stage_is(s), r) for s, r in replies.items()], mode="match", name="synth")


def stage_calls(backend, stage):
    marker = STAGE_MARKER.format(stage)
    return sum(1 for msgs in backend.calls if msgs[-1].content.startswith(marker))
