"""Factored planner / tool-agent runtime, Pass^k evaluation harness and synthetic data pipeline."""

__version__ = "0.1.0"

from .evalharness import aggregate, build_matrix, pass_hat_k, render_table
from .orchestrator import EpisodeConfig, EpisodeLog, augment_prompt, run_episode, run_trials
from .protocol import (
    ConversationTurn,
    PromptMode,
    extract_json_tool_call,
    extract_nl_tool_call,
    render_system_prompt,
    render_tool_agent_input,
)
from .schema import StructuredToolCall, ToolCatalog, parse_catalog, validate_call

__all__ = [
    "ConversationTurn",
    "EpisodeConfig",
    "EpisodeLog",
    "PromptMode",
    "StructuredToolCall",
    "ToolCatalog",
    "aggregate",
    "augment_prompt",
    "build_matrix",
    "extract_json_tool_call",
    "extract_nl_tool_call",
    "parse_catalog",
    "pass_hat_k",
    "render_system_prompt",
    "render_tool_agent_input",
    "render_table",
    "run_episode",
    "run_trials",
    "validate_call",
]
