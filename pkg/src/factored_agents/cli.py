"""Command-line entry point: run-eval, gen-data, validate, report.

Exit codes: 0 success, 1 negative verdict (invalid call), 2 configuration or
input error, 3 transport error.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import click
import yaml

from . import __version__
from .backends import BackendError, RetryPolicy, backend_from_ref, healthcheck
from .environment import FixtureError, UnknownDomainError, load_domain
from .evalharness import DEFAULT_KS, ResultTable, build_matrix, render_table, table_from_matrix
from .orchestrator import ConfigError, EpisodeConfig, EpisodeLog, LogSink, run_trials
from .oracle import oracle_backends
from .protocol import JSON_SENTINEL, ProtocolError, extract_json_tool_call
from .schema import (
    CatalogError,
    CatalogSyntaxError,
    StructuredToolCall,
    ToolCatalog,
    adapt_api_call,
    load_catalog,
    validate_call,
)
from .synthgen import StageConfig, build_manifest, export_jsonl, generate

EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_TRANSPORT = 0, 1, 2, 3
EPISODES_FILE = "episodes.jsonl"
MANIFEST_FILE = "manifest.json"
TABLE_FILE = "table.txt"
TABLE_JSONL_FILE = "table.jsonl"

logger = logging.getLogger("factored_agents")


class CliFailure(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def parse_ks(text: str | None) -> tuple[int, ...]:
    if text is None or text == "":
        return DEFAULT_KS
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out or any(k < 1 for k in out):
        raise CliFailure(f"invalid --ks {text!r}", EXIT_CONFIG)
    return tuple(sorted(set(out)))


@dataclass
class RunConfig:
    domain: str
    mode: str = "factored"
    n_trials: int = 4
    ks: tuple[int, ...] = DEFAULT_KS
    planner: str = "oracle"
    tool_agent: str | None = None
    user_sim: str = "oracle"
    planner_model: str = "gpt-4o"
    tool_agent_model: str = "tool-agent"
    user_model: str = "gpt-4o"
    auth_env: str | None = "FACTORED_AGENTS_API_KEY"
    seed: int = 0
    workers: int = 1
    out: str = "runs/latest"
    label: str | None = None
    max_turns: int = 30
    window: int = 4
    repair_attempts: int = 0
    fault_rate: float = 0.0
    timeout: float = 60.0
    max_attempts: int = 3

    def validate(self) -> None:
        if self.n_trials < 1:
            raise CliFailure("--trials must be >= 1", EXIT_CONFIG)
        bad = [k for k in self.ks if k > self.n_trials]
        if bad:
            raise CliFailure(f"--ks {bad} exceed --trials {self.n_trials}", EXIT_CONFIG)
        if self.mode not in ("factored", "baseline"):
            raise CliFailure(f"unknown mode {self.mode!r}", EXIT_CONFIG)
        if not 0.0 <= self.fault_rate <= 1.0:
            raise CliFailure("--fault-rate must be in [0, 1]", EXIT_CONFIG)
        for ref in (self.planner, self.tool_agent_ref, self.user_sim):
            if ref.startswith("script:") and not Path(ref[len("script:"):]).is_file():
                raise CliFailure(f"script file not found: {ref[len('script:'):]}", EXIT_CONFIG)

    @property
    def tool_agent_ref(self) -> str:
        return self.tool_agent or ("oracle" if self.planner == "oracle" else self.planner)

    @property
    def row_label(self) -> str:
        return self.label or self.mode

    def to_json(self) -> dict[str, Any]:
        out = asdict(self)
        out["ks"] = list(self.ks)
        out["tool_agent"] = self.tool_agent_ref
        return out

    def run_id(self) -> str:
        blob = json.dumps({k: v for k, v in self.to_json().items() if k not in ("out", "workers")}, sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _backend_factory(cfg: RunConfig, domain):
    retry = RetryPolicy(max_attempts=cfg.max_attempts)
    shared: dict[tuple[str, str], Any] = {}
    lock = threading.Lock()

    def resolve(role, ref, model, task, trial, oracle_set):
        if ref == "oracle":
            return oracle_set[role]
        if ref.startswith("script:"):
            # sequential scripts are per-episode state
            return backend_from_ref(ref, name=f"{role}-{task.task_id}-{trial}")
        with lock:
            if (ref, model) not in shared:
                shared[ref, model] = backend_from_ref(ref, model, cfg.auth_env, cfg.timeout, retry, role)
            return shared[ref, model]

    def factory(task, trial):
        planner, agent, user = oracle_backends(task, domain.catalog, cfg.mode, cfg.fault_rate, cfg.seed, trial)
        oracle_set = {"planner": planner, "tool_agent": agent, "user_sim": user}
        return (
            resolve("planner", cfg.planner, cfg.planner_model, task, trial, oracle_set),
            resolve("tool_agent", cfg.tool_agent_ref, cfg.tool_agent_model, task, trial, oracle_set),
            resolve("user_sim", cfg.user_sim, cfg.user_model, task, trial, oracle_set),
        )

    return factory


def run_eval(cfg: RunConfig) -> tuple[Path, str]:
    """Run the evaluation described by ``cfg``; returns the run directory and the plain table."""
    cfg.validate()
    try:
        domain = load_domain(cfg.domain)
    except UnknownDomainError as exc:
        raise CliFailure(f"fixture error: {exc}", EXIT_CONFIG) from None
    except (FixtureError, CatalogError) as exc:
        raise CliFailure(f"fixture error in domain {cfg.domain!r}: {exc}", EXIT_CONFIG) from None
    for ref in {cfg.planner, cfg.tool_agent_ref, cfg.user_sim}:
        if ref.startswith(("http://", "https://")):
            health = healthcheck(ref)
            if not health.reachable:
                raise CliFailure(f"backend {ref} unreachable: {health.detail}", EXIT_TRANSPORT)
        elif ref != "oracle" and not ref.startswith("script:"):
            raise CliFailure(f"unrecognised backend reference {ref!r}", EXIT_CONFIG)

    out = Path(cfg.out)
    if (out / EPISODES_FILE).exists():
        raise CliFailure(f"{out / EPISODES_FILE} already exists; choose a fresh --out", EXIT_CONFIG)
    out.mkdir(parents=True, exist_ok=True)
    run_id = cfg.run_id()
    episode_cfg = EpisodeConfig(mode=cfg.mode, max_turns=cfg.max_turns, window=cfg.window,
                                repair_attempts=cfg.repair_attempts)
    manifest = {
        "kind": "evaluation",
        "run_id": run_id,
        "package_version": __version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "domain": cfg.domain,
        "label": cfg.row_label,
        "config": cfg.to_json(),
        "episode_config": episode_cfg.to_json(),
        "catalog_digest": domain.catalog.digest(),
        "fixture_digest": domain.fixture_digest(),
        "n_tasks": len(domain.tasks),
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    # with workers > 1 lines arrive in completion order; tables do not depend on it
    logs = run_trials(domain.tasks, cfg.n_trials, episode_cfg, _backend_factory(cfg, domain), domain,
                      run_id=run_id, workers=cfg.workers, sink=LogSink(out / EPISODES_FILE))
    if logs and all(l.termination_reason == "protocol_failure" and _is_transport(l.error) for l in logs):
        raise CliFailure(f"every episode failed on transport: {logs[0].error}", EXIT_TRANSPORT)
    tables = {cfg.domain: table_from_matrix(build_matrix(logs), cfg.row_label, cfg.ks)}
    plain = render_table(tables, "plain")
    (out / TABLE_FILE).write_text(plain, encoding="utf-8")
    (out / TABLE_JSONL_FILE).write_text(render_table(tables, "jsonl"), encoding="utf-8")
    return out, plain


def _is_transport(error: str | None) -> bool:
    return bool(error) and error.split(":", 1)[0] in ("TransportError", "BackendTimeout")


def read_run(run_dir: str | Path) -> tuple[dict[str, Any], list[EpisodeLog]]:
    d = Path(run_dir)
    manifest_path, episodes_path = d / MANIFEST_FILE, d / EPISODES_FILE
    if not manifest_path.is_file() or not episodes_path.is_file():
        raise CliFailure(f"{d} is not a run directory (needs {MANIFEST_FILE} and {EPISODES_FILE})", EXIT_CONFIG)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    logs = []
    with episodes_path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                logs.append(EpisodeLog.from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise CliFailure(f"{episodes_path}:{lineno}: corrupt episode log ({exc})", EXIT_CONFIG) from None
    if not logs:
        raise CliFailure(f"{episodes_path} has no episodes", EXIT_CONFIG)
    return manifest, logs


def report_tables(run_dirs, ks=None) -> dict[str, ResultTable]:
    tables: dict[str, ResultTable] = {}
    for run_dir in run_dirs:
        manifest, logs = read_run(run_dir)
        run_ks = tuple(ks) if ks else tuple(manifest["config"]["ks"])
        matrix = build_matrix(logs)
        too_big = [k for k in run_ks if k > matrix.n_trials]
        if too_big:
            raise CliFailure(f"--ks {too_big} exceed the {matrix.n_trials} trials in {run_dir}", EXIT_CONFIG)
        table = table_from_matrix(matrix, manifest.get("label") or manifest["config"]["mode"], run_ks)
        existing = tables.get(manifest["domain"])
        if existing is None:
            tables[manifest["domain"]] = table
        else:
            if existing.ks != table.ks:
                raise CliFailure(f"runs for {manifest['domain']} disagree on ks; pass --ks", EXIT_CONFIG)
            existing.rows.extend(table.rows)
    return tables


def _load_config_file(path: str) -> dict[str, Any]:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise click.BadParameter(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise click.BadParameter(f"config {path} must be a mapping")
    commands = ("run-eval", "gen-data", "validate", "report")
    flat = {k.replace("-", "_"): v for k, v in data.items() if k not in commands}
    return {cmd: {**flat, **{k.replace("-", "_"): v for k, v in (data.get(cmd) or {}).items()}} for cmd in commands}


@click.group()
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML/JSON file of option defaults.")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def cli(ctx, config_path, verbose):
    """Factored planner / tool-agent evaluation and data tools."""
    logging.basicConfig(level=logging.WARNING - 10 * verbose, format="%(levelname)s %(name)s: %(message)s")
    if config_path:
        ctx.default_map = _load_config_file(config_path)


def _fail(exc: CliFailure):
    click.echo(f"error: {exc}", err=True)
    sys.exit(exc.code)


@cli.command("run-eval")
@click.option("--domain", required=True, help="mini-retail or mini-airline.")
@click.option("--mode", type=click.Choice(["factored", "baseline"]), default="factored", show_default=True)
@click.option("--trials", "n_trials", type=int, default=4, show_default=True)
@click.option("--ks", default="1,2,3,4", show_default=True, help="Comma list or range, e.g. 1-4.")
@click.option("--planner-url", default="oracle", show_default=True, help="http(s) URL, script:PATH, or oracle.")
@click.option("--tool-agent-url", default=None, help="Defaults to the planner reference.")
@click.option("--user-url", default="oracle", show_default=True)
@click.option("--planner-model", default="gpt-4o", show_default=True)
@click.option("--tool-agent-model", default="tool-agent", show_default=True)
@click.option("--user-model", default="gpt-4o", show_default=True)
@click.option("--auth-env", default="FACTORED_AGENTS_API_KEY", show_default=True,
              help="Environment variable holding the bearer token.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out", default="runs/latest", show_default=True, type=click.Path(file_okay=False))
@click.option("--label", default=None, help="Row label in the result table (default: the mode).")
@click.option("--max-turns", type=int, default=30, show_default=True)
@click.option("--window", type=int, default=4, show_default=True, help="Conversation turns shown to the tool agent.")
@click.option("--repair-attempts", type=int, default=0, show_default=True)
@click.option("--fault-rate", type=float, default=0.0, show_default=True,
              help="Oracle backends only: fraction of JSON calls corrupted.")
@click.option("--timeout", type=float, default=60.0, show_default=True)
@click.option("--max-attempts", type=int, default=3, show_default=True)
def cmd_run_eval(domain, mode, n_trials, ks, planner_url, tool_agent_url, user_url, planner_model,
                 tool_agent_model, user_model, auth_env, seed, workers, out, label, max_turns, window,
                 repair_attempts, fault_rate, timeout, max_attempts):
    """Run n trials per task and print the Pass^k table."""
    try:
        cfg = RunConfig(domain, mode, n_trials, parse_ks(ks), planner_url, tool_agent_url, user_url, planner_model,
                        tool_agent_model, user_model, auth_env, seed, workers, out, label, max_turns, window,
                        repair_attempts, fault_rate, timeout, max_attempts)
        run_dir, table = run_eval(cfg)
    except CliFailure as exc:
        _fail(exc)
    except (ConfigError, ValueError) as exc:
        _fail(CliFailure(str(exc), EXIT_CONFIG))
    click.echo(table, nl=False)
    click.echo(f"run directory: {run_dir}", err=True)


@cli.command("report")
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(file_okay=False))
@click.option("--ks", default=None, help="Subset of ks (default: those of the run).")
@click.option("--format", "fmt", type=click.Choice(["plain", "jsonl"]), default="plain", show_default=True)
def cmd_report(run_dirs, ks, fmt):
    """Recompute the Pass^k table from one or more run directories."""
    try:
        tables = report_tables(run_dirs, parse_ks(ks) if ks else None)
    except CliFailure as exc:
        _fail(exc)
    click.echo(render_table(tables, fmt), nl=False)


def _read_call(path: str, api_shape: bool) -> StructuredToolCall:
    text = Path(path).read_text(encoding="utf-8")
    if JSON_SENTINEL in text:
        try:
            return extract_json_tool_call(text)
        except ProtocolError as exc:
            raise CliFailure(f"{path}: {exc}", EXIT_CONFIG) from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliFailure(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}", EXIT_CONFIG) from None
    try:
        if api_shape and isinstance(obj, dict) and "api" in obj:
            return adapt_api_call(obj)
        return StructuredToolCall.from_json(obj)
    except ValueError as exc:
        raise CliFailure(f"{path}: {exc}", EXIT_CONFIG) from None


@cli.command("validate")
@click.argument("catalog_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("call_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--lenient", is_flag=True, help="Accept losslessly coercible values such as \"7\" for an integer.")
@click.option("--api-shape", is_flag=True, help="Accept {api, operation_id, ...} calls via the adapter.")
@click.option("--json", "as_json", is_flag=True, help="Print the report as JSON.")
def cmd_validate(catalog_path, call_path, lenient, api_shape, as_json):
    """Validate one structured tool call against a catalog; exit 0 iff valid."""
    try:
        catalog = load_catalog(catalog_path)
        call = _read_call(call_path, api_shape)
    except CatalogSyntaxError as exc:
        _fail(CliFailure(f"{catalog_path}: {exc}", EXIT_CONFIG))
    except CatalogError as exc:
        _fail(CliFailure(f"{catalog_path}: {exc}", EXIT_CONFIG))
    except CliFailure as exc:
        _fail(exc)
    report = validate_call(call, catalog, lenient=lenient)
    if as_json:
        click.echo(json.dumps(report.to_json(), indent=2))
    else:
        click.echo(f"{call.tool_name}: {'valid' if report.valid else 'invalid'}")
        for f in report.findings:
            click.echo(f"  {f.kind.value}" + (f" {f.field}" if f.field else "") + (f": {f.detail}" if f.detail else ""))
    sys.exit(EXIT_OK if report.valid else EXIT_INVALID)


@cli.command("gen-data")
@click.option("--schemas", "schemas_dir", required=True, type=click.Path(exists=True),
              help="A catalog file or a directory of catalog files (*.json, *.yaml, *.yml).")
@click.option("--count", type=int, default=10, show_default=True, help="Pipeline attempts.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--backend-url", required=True, help="http(s) URL or script:PATH.")
@click.option("--judge-url", default=None, help="Faithfulness judge (defaults to the generator backend).")
@click.option("--model", default="gemini-1.5-pro", show_default=True)
@click.option("--judge-model", default=None)
@click.option("--auth-env", default="FACTORED_AGENTS_API_KEY", show_default=True)
@click.option("--candidates", type=int, default=3, show_default=True, help="Candidates per stage.")
@click.option("--min-turns", type=int, default=2, show_default=True)
@click.option("--max-turns", type=int, default=8, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
def cmd_gen_data(schemas_dir, count, seed, backend_url, judge_url, model, judge_model, auth_env, candidates,
                 min_turns, max_turns, out):
    """Generate synthetic tool-agent training data as JSONL."""
    try:
        src = Path(schemas_dir)
        files = [src] if src.is_file() else sorted(
            p for p in src.iterdir() if p.suffix in (".json", ".yaml", ".yml"))
        if not files:
            raise CliFailure(f"no catalog files in {src}", EXIT_CONFIG)
        catalogs = [load_catalog(p) for p in files]
        config = StageConfig(candidates, (min_turns, max_turns), seed)
        backend = backend_from_ref(backend_url, model, auth_env, name="generator")
        judge = backend_from_ref(judge_url, judge_model or model, auth_env, name="judge") if judge_url else None
        merged = ToolCatalog(tuple(t for c in catalogs for t in c.tools), "+".join(c.domain_label for c in catalogs))
    except CliFailure as exc:
        _fail(exc)
    except (CatalogError, ValueError, OSError) as exc:
        _fail(CliFailure(str(exc), EXIT_CONFIG))
    try:
        run = generate(merged, backend, count, config, judge)
    except BackendError as exc:
        _fail(CliFailure(f"transport error: {exc}", EXIT_TRANSPORT))
    out_dir = Path(out)
    written = export_jsonl(run.examples, out_dir / "data.jsonl")
    describe = {"generator": backend.describe(), "judge": judge.describe() if judge else None}
    manifest = build_manifest(run, catalogs, config, describe)
    (out_dir / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    exits = {s: t["exits"] for s, t in manifest["stage_tallies"].items() if t["exits"]}
    click.echo(f"attempts={run.attempts} examples={written} yield={manifest['yield']:.3f} early_exits={json.dumps(exits)}")


def main():
    cli(prog_name="factored-agents")


if __name__ == "__main__":
    main()
