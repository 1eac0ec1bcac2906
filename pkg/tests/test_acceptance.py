"""Acceptance suite: one check per primary criterion.

Run with ``pytest tests/test_acceptance.py`` (a PASS/FAIL line per criterion
is printed in the terminal summary) or ``python -m tests.test_acceptance``.
"""

from __future__ import annotations

import hashlib
import json
import random
import tempfile
import time
from collections import Counter
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from factored_agents.environment import load_domain
from factored_agents.evalharness import TrialMatrix, aggregate, build_matrix, pass_hat_k, table_from_matrix
from factored_agents.oracle import oracle_backends
from factored_agents.orchestrator import EpisodeConfig, EpisodeLog, replay_episode, run_episode, run_trials
from factored_agents.protocol import PromptMode, prompt_suffix, render_system_prompt
from factored_agents.schema import FindingKind, StructuredToolCall, parse_catalog, validate_call
from factored_agents.synthgen import STAGES, StageConfig, SyntheticExample, export_jsonl, generate

from .oracles import brute_force_validate, subset_pass_hat_k
from .randomized import random_call, random_catalog_doc
from .scenarios import BOOK_JSON_NO_DATE, baseline_backends, golden_backends, stage_calls, synth_backend

RESULTS: dict[str, bool] = {}

# committed prompt transcriptions, locked by content hash
SUFFIX_SHA256 = {
    PromptMode.FACTORED: "6df1b3e74c1ab3d03e17723886cf7571d01c3b68beb15096367c1d547d1dd023",
    PromptMode.BASELINE: "f99875ea5487fed5a96e1629d5800c12a6c538d0b4ed607fd83ec4409532e6bc",
}


def check_validator_oracle():
    rng = random.Random(20250101)
    t0 = time.perf_counter()
    n = 10_000
    for _ in range(n):
        doc = random_catalog_doc(rng, max_params=4)
        raw = random_call(rng, doc)
        report = validate_call(StructuredToolCall(raw["name"], raw["arguments"]), parse_catalog(doc))
        ok, kinds = brute_force_validate(raw, doc)
        assert report.valid == ok and Counter(report.kinds) == kinds, (doc, raw, report.kinds, kinds)
    elapsed = time.perf_counter() - t0
    assert elapsed < 10, f"{n} pairs took {elapsed:.1f}s"


def check_pass_hat_k_exact():
    t0 = time.perf_counter()
    for n in range(1, 9):
        for c in range(n + 1):
            for k in range(1, n + 1):
                assert pass_hat_k(c, n, k) == subset_pass_hat_k(c, n, k), (c, n, k)
    assert pass_hat_k(2, 4, 2) == Fraction(1, 6)
    assert time.perf_counter() - t0 < 1


_matrices = st.dictionaries(
    st.text(min_size=1, max_size=4),
    st.integers(min_value=1, max_value=8).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))),
    min_size=1, max_size=8,
)


@settings(max_examples=500, deadline=None, database=None)
@given(_matrices)
def _row_nonincreasing(counts):
    m = TrialMatrix(counts)
    ks = list(range(1, m.n_trials + 1))
    row = aggregate(m, ks)
    assert all(row[b] <= row[a] for a, b in zip(ks, ks[1:]))


def check_pass_hat_k_monotone():
    _row_nonincreasing()
    # rows produced by real runs with faulty oracle backends
    domain = load_domain("mini-retail")
    cfg = EpisodeConfig("factored")
    for fault in (0.2, 0.5, 0.8):
        logs = run_trials(domain.tasks, 6, cfg,
                          lambda t, i: oracle_backends(t, domain.catalog, "factored", fault, 1, i), domain)
        table_from_matrix(build_matrix(logs), "oracle", range(1, 7)).check()


def check_golden_episode():
    domain = load_domain("mini-retail")
    task = domain.task("RT-01")
    t0 = time.perf_counter()
    log = run_episode(task, EpisodeConfig("factored"), *golden_backends(), domain)
    assert log.success is True and len(log.handoffs) == 1
    bad = run_episode(task, EpisodeConfig("factored"), *golden_backends(BOOK_JSON_NO_DATE), domain)
    assert bad.success is False
    findings = bad.handoffs[0].validation_report.findings
    assert [(f.kind, f.field) for f in findings] == [(FindingKind.MISSING_FIELD, "date")]
    assert time.perf_counter() - t0 < 1


def check_mode_parity():
    domain = load_domain("mini-retail")
    task = domain.task("RT-01")
    a = run_episode(task, EpisodeConfig("factored"), *golden_backends(), domain)
    b = run_episode(task, EpisodeConfig("baseline"), *baseline_backends(), domain)
    assert a.final_db_digest == b.final_db_digest
    for name in ("mini-retail", "mini-airline"):
        domain = load_domain(name)
        for task in domain.tasks:
            for fault in (0.0, 0.5):
                logs = [
                    run_episode(task, EpisodeConfig(mode), *oracle_backends(task, domain.catalog, mode, fault, 4), domain)
                    for mode in ("factored", "baseline")
                ]
                assert logs[0].final_db_digest == logs[1].final_db_digest, (name, task.task_id, fault)


def check_prompt_fidelity():
    catalog = load_domain("mini-retail").catalog
    for mode, digest in SUFFIX_SHA256.items():
        suffix = prompt_suffix(mode)
        assert hashlib.sha256(suffix.encode("utf-8")).hexdigest() == digest, mode
        rendered = render_system_prompt(catalog, mode).encode("utf-8")
        assert rendered.endswith(suffix.encode("utf-8"))


def check_synthgen():
    catalog = load_domain("mini-retail").catalog
    with tempfile.TemporaryDirectory() as tmp:
        paths = []
        for i in range(2):
            run = generate(catalog, synth_backend(), 5, StageConfig(seed=17))
            paths.append(Path(tmp) / f"run{i}.jsonl")
            assert export_jsonl(run.examples, paths[-1]) == 5
        assert paths[0].read_bytes() == paths[1].read_bytes()
        for line in paths[0].read_text().splitlines():
            _, _, call = SyntheticExample.core_from_record(json.loads(line))
            assert validate_call(call, catalog).valid
    backend = synth_backend({"conversation": "[]"})
    run = generate(catalog, backend, 3, StageConfig(seed=17))
    assert run.examples == []
    for later in STAGES[2:]:
        assert stage_calls(backend, later) == 0


def check_replay():
    episodes = []
    for name in ("mini-retail", "mini-airline"):
        domain = load_domain(name)
        for mode in ("factored", "baseline"):
            cfg = EpisodeConfig(mode, repair_attempts=1 if mode == "factored" else 0)
            for task in domain.tasks:
                for trial in range(2):
                    backends = oracle_backends(task, domain.catalog, mode, 0.5, 2, trial)
                    episodes.append((run_episode(task, cfg, *backends, domain, "acc", trial), cfg, domain))
    assert any(not log.success for log, _, _ in episodes)
    for log, cfg, domain in episodes:
        recorded = EpisodeLog.from_json(json.loads(log.to_line()))
        assert replay_episode(recorded, cfg, domain).comparable() == log.comparable(), log.task_id


CRITERIA = {
    "validator oracle (10k randomized pairs, < 10 s)": check_validator_oracle,
    "pass^k exactness (n <= 8 enumeration, 1/6 pinned, < 1 s)": check_pass_hat_k_exact,
    "pass^k rows nonincreasing in k": check_pass_hat_k_monotone,
    "end-to-end golden episode and missing-field mutation": check_golden_episode,
    "mode parity of final db digests": check_mode_parity,
    "prompt fidelity (byte-identical suffixes)": check_prompt_fidelity,
    "synthgen determinism, early exit, re-validation": check_synthgen,
    "replay reproduces episode logs": check_replay,
}


@pytest.mark.parametrize("name", list(CRITERIA))
def test_criterion(name):
    RESULTS[name] = False
    CRITERIA[name]()
    RESULTS[name] = True


def run_all() -> bool:
    ok = True
    for name, check in CRITERIA.items():
        try:
            check()
            print(f"PASS  {name}")
        except Exception as exc:  # noqa: BLE001
            ok = False
            print(f"FAIL  {name}: {type(exc).__name__}: {exc}")
    return ok


if __name__ == "__main__":
    raise SystemExit(0 if run_all() else 1)
