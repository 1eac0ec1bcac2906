import json
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from factored_agents.evalharness import (
    DomainError,
    InvariantViolation,
    MixedRunError,
    ResultRow,
    ResultTable,
    TrialMatrix,
    aggregate,
    build_matrix,
    pass_hat_k,
    render_table,
    table_from_matrix,
)
from factored_agents.orchestrator import EpisodeLog

from .oracles import subset_pass_hat_k


@pytest.mark.parametrize("c,n,k,expected", [
    (4, 4, 3, Fraction(1)),
    (2, 4, 1, Fraction(1, 2)),
    (2, 4, 2, Fraction(1, 6)),
    (0, 4, 2, Fraction(0)),
])
def test_pass_hat_k_examples(c, n, k, expected):
    assert pass_hat_k(c, n, k) == expected


def test_pass_hat_k_matches_enumeration():
    for n in range(1, 9):
        for c in range(n + 1):
            for k in range(1, n + 1):
                assert pass_hat_k(c, n, k) == subset_pass_hat_k(c, n, k)


@pytest.mark.parametrize("c,n,k", [(5, 4, 1), (-1, 4, 1), (2, 4, 0), (2, 4, 5)])
def test_pass_hat_k_domain(c, n, k):
    with pytest.raises(DomainError):
        pass_hat_k(c, n, k)


def test_aggregate_examples():
    m = TrialMatrix({"a": (4, 4), "b": (4, 0)})
    assert aggregate(m, [1, 4]) == {1: Fraction(1, 2), 4: Fraction(1, 2)}
    assert aggregate(TrialMatrix({"a": (4, 2), "b": (4, 3)}), [2])[2] == Fraction(1, 3)
    with pytest.raises(DomainError):
        aggregate(TrialMatrix({}), [1])


matrices = st.dictionaries(
    st.text(min_size=1, max_size=4),
    st.integers(min_value=1, max_value=8).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))),
    min_size=1, max_size=6,
)


@settings(max_examples=300, deadline=None)
@given(matrices)
def test_rows_nonincreasing(counts):
    m = TrialMatrix(counts)
    ks = range(1, m.n_trials + 1)
    values = aggregate(m, ks)
    ordered = [values[k] for k in ks]
    assert all(b <= a for a, b in zip(ordered, ordered[1:]))
    table_from_matrix(m, "x", ks).check()


def _log(task, success, run_id="r", reason="final_answer"):
    return EpisodeLog(run_id, "mini-retail", task, 0, "factored", success=success, termination_reason=reason)


def test_build_matrix():
    m = build_matrix([_log("A", True), _log("A", True), _log("A", False)])
    assert m.counts == {"A": (3, 2)} and m.run_id == "r"
    assert len(build_matrix([])) == 0
    m = build_matrix([_log("A", True), _log("A", False, reason="protocol_failure")])
    assert m.counts == {"A": (2, 1)}
    with pytest.raises(MixedRunError):
        build_matrix([_log("A", True), _log("A", True, run_id="other")])


def test_render_baseline_row_order():
    values = dict(zip((1, 2, 3, 4), map(Fraction, ("0.37", "0.23", "0.17", "0.14"))))
    text = render_table({"mini-retail": ResultTable([ResultRow("GPT-4o", values)])})
    header, row = text.splitlines()[1], text.splitlines()[2]
    assert header.split() == ["Model", "P^1", "P^2", "P^3", "P^4"]
    assert row.split() == ["GPT-4o", "0.37", "0.23", "0.17", "0.14"]
    assert "Retail" in text.splitlines()[0]


def test_render_single_cell_and_side_by_side():
    one = ResultTable([ResultRow("m", {1: Fraction(1, 2)})], (1,))
    text = render_table({"mini-retail": one, "mini-airline": one})
    assert text.splitlines()[2].split() == ["m", "0.50", "0.50"]
    title = text.splitlines()[0]
    assert title.index("Retail") < title.index("Airline")


def test_render_jsonl():
    t = ResultTable([ResultRow("m", {1: Fraction(3, 4), 2: Fraction(1, 2)}, 2, 4)], (1, 2))
    rows = [json.loads(x) for x in render_table({"mini-airline": t}, "jsonl").splitlines()]
    assert rows[0] == {"label": "m", "domain": "mini-airline", "k": 1, "value": 0.75, "n_tasks": 2, "n_trials": 4}
    assert [r["k"] for r in rows] == [1, 2]


def test_render_refuses_increasing_row():
    bad = ResultTable([ResultRow("m", {1: Fraction(1, 4), 2: Fraction(1, 2)})], (1, 2))
    with pytest.raises(InvariantViolation):
        render_table({"mini-retail": bad})
