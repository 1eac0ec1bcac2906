"""Scripted planner / tool-agent / user backends that replay a task's ground truth.

Used for offline runs and tests. ``fault_rate`` makes the JSON-emitting side
drop a required field (or invent one) on a seeded fraction of calls, which
gives Pass^k something to measure without any model.
"""

from __future__ import annotations

import json
import random

from .backends import ScriptedBackend
from .environment import TaskSpec
from .orchestrator import STOP_TOKEN
from .protocol import JSON_SENTINEL, NL_SENTINEL, PromptMode
from .schema import StructuredToolCall, ToolCatalog


def nl_paragraph(call: StructuredToolCall) -> str:
    if not call.arguments:
        return f"Use the {call.tool_name} tool with no arguments."
    parts = [f"{k} {json.dumps(v, ensure_ascii=False)}" for k, v in call.arguments.items()]
    joined = parts[0] if len(parts) == 1 else ", ".join(parts[:-1]) + " and " + parts[-1]
    return f"Use the {call.tool_name} tool with {joined}."


def final_message(task: TaskSpec) -> str:
    if not task.required_outputs:
        return "All done. Is there anything else I can help with?"
    return "All done. Details: " + ", ".join(task.required_outputs) + ". Is there anything else I can help with?"


def corrupt(call: StructuredToolCall, catalog: ToolCatalog, rng: random.Random) -> StructuredToolCall:
    """Drop one required argument, or add an undeclared one when nothing is required."""
    schema = catalog.get(call.tool_name)
    args = dict(call.arguments)
    required = [p for p in (schema.required if schema else ()) if p in args]
    if required:
        del args[rng.choice(required)]
    else:
        args["note"] = "extra"
    return StructuredToolCall(call.tool_name, args)


def oracle_backends(
    task: TaskSpec,
    catalog: ToolCatalog,
    mode: PromptMode | str = PromptMode.FACTORED,
    fault_rate: float = 0.0,
    seed: int | str = 0,
    trial_index: int = 0,
) -> tuple[ScriptedBackend, ScriptedBackend, ScriptedBackend]:
    mode = PromptMode(mode)
    rng = random.Random(f"{seed}:{task.task_id}:{trial_index}")
    emitted = [
        corrupt(a, catalog, rng) if rng.random() < fault_rate else a
        for a in task.ground_truth_actions
    ]
    if mode is PromptMode.FACTORED:
        planner_script = [f"{NL_SENTINEL} {nl_paragraph(a)}" for a in task.ground_truth_actions]
        agent_script = [
            ((lambda turn, text=nl_paragraph(a): turn.content == text), f"{JSON_SENTINEL} {e.serialize()}")
            for a, e in zip(task.ground_truth_actions, emitted)
        ]
    else:
        planner_script = [f"{JSON_SENTINEL} {e.serialize()}" for e in emitted]
        agent_script = []
    planner_script.append(final_message(task))
    planner = ScriptedBackend(planner_script, "sequential", name=f"oracle-planner-{task.task_id}")
    tool_agent = ScriptedBackend(agent_script, "match", name=f"oracle-tool-agent-{task.task_id}")
    user_sim = ScriptedBackend(list(task.user_replies) + [STOP_TOKEN], "sequential", name=f"oracle-user-{task.task_id}")
    return planner, tool_agent, user_sim
