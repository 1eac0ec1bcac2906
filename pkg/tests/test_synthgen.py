import json
import random

import pytest

from factored_agents.schema import validate_call
from factored_agents.synthgen import (
    STAGES,
    EmptyFixtureError,
    Persona,
    StageConfig,
    SyntheticExample,
    WorldState,
    check_conversation,
    check_nl_call,
    export_jsonl,
    gen_conversation,
    gen_structured_call,
    gen_world_state,
    generate,
    judge_faithfulness,
    gen_nl_call,
    load_personas,
    parse_yes_no,
    run_pipeline,
    sample_persona,
)

from .scenarios import stage_calls, synth_backend

SAM = Persona("Sam Ortiz", "San Francisco")
CFG = StageConfig()
PAWS_SENTENCE = "Use the paws_shelter tool to book an interview on November 2, 2025."


def _scripted(*responses):
    from factored_agents.backends import ScriptedBackend

    return ScriptedBackend(list(responses))


def _turns(roles):
    return [{"role": r, "content": f"line {i}"} for i, r in enumerate(roles)]


# -- personas ----------------------------------------------------------------


def test_persona_sampling():
    assert sample_persona(random.Random(5), [SAM]) == SAM
    bundled = load_personas()
    assert len(bundled) >= 10
    first = sample_persona(random.Random(42), bundled)
    assert sample_persona(random.Random(42), bundled) == first
    with pytest.raises(EmptyFixtureError):
        sample_persona(random.Random(0), [])


# -- individual stages -------------------------------------------------------


def test_world_state_stage(paws_catalog):
    schema = paws_catalog.get("paws_shelter")
    ok = gen_world_state(schema, SAM, _scripted('{"dates": ["2025-11-02"]}'), CFG, random.Random(0))
    assert ok.record.accepted and ok.value.state == {"dates": ["2025-11-02"]}
    bad = gen_world_state(schema, SAM, _scripted("no json", "still none", "{}"), CFG, random.Random(0))
    assert not bad.record.accepted and bad.record.candidates == 3
    # first acceptable candidate wins
    second = gen_world_state(schema, SAM, _scripted("nope", '{"a": 1}', '{"b": 2}'), CFG, random.Random(0))
    assert second.record.accepted_index == 1 and second.value.state == {"a": 1}


def test_conversation_checks():
    assert check_conversation(_turns(["user", "assistant", "user", "assistant"]), 4) == "accepted"
    assert check_conversation(_turns(["user", "assistant", "user"]), 4) != "accepted"
    assert check_conversation(_turns(["user", "assistant", "assistant", "user"]), 4) != "accepted"
    assert check_conversation(_turns(["assistant", "user"]), 2) != "accepted"


def test_conversation_stage():
    world = WorldState({"dates": ["2025-11-02"]}, 1)
    text = json.dumps(_turns(["user", "assistant", "user", "assistant"]))
    out = gen_conversation(world, SAM, 4, _scripted(text), CFG)
    assert out.record.accepted and [t.role for t in out.value] == ["user", "assistant", "user", "assistant"]
    with pytest.raises(ValueError):
        gen_conversation(world, SAM, 9, _scripted(text), CFG)


def test_nl_checks(paws_catalog, example_catalog):
    paws = paws_catalog.get("paws_shelter")
    assert check_nl_call(PAWS_SENTENCE, paws) == "accepted"
    assert check_nl_call(PAWS_SENTENCE, example_catalog.get("example_1")) != "accepted"
    assert check_nl_call('Use the paws_shelter tool with {"date": "2025-11-02"}.', paws) != "accepted"
    out = gen_nl_call([], paws, _scripted("natural_language_tool_call " + PAWS_SENTENCE), CFG)
    assert out.value == PAWS_SENTENCE


def test_structured_stage(paws_catalog):
    paws = paws_catalog.get("paws_shelter")
    good = '{"name": "paws_shelter", "arguments": {"date": "2025-11-02"}}'
    out = gen_structured_call([], PAWS_SENTENCE, paws, _scripted(good), CFG)
    assert out.record.accepted and out.value.arguments == {"date": "2025-11-02"}
    missing = gen_structured_call([], PAWS_SENTENCE, paws, _scripted('{"name": "paws_shelter", "arguments": {}}'),
                                  StageConfig(candidates_per_stage=1))
    assert not missing.record.accepted and "MissingField(date)" in missing.record.verdicts[0]
    extra = '{"name": "paws_shelter", "arguments": {"date": "2025-11-02", "color": "red"}}'
    assert not gen_structured_call([], PAWS_SENTENCE, paws, _scripted(extra), StageConfig(candidates_per_stage=1)).record.accepted


@pytest.mark.parametrize("reply,accepted", [("yes", True), ("Yes.", True), ("no", False), ("maybe", False)])
def test_judge(paws_catalog, reply, accepted):
    from factored_agents.schema import StructuredToolCall

    call = StructuredToolCall("paws_shelter", {"date": "2025-11-02"})
    out = judge_faithfulness(call, [], PAWS_SENTENCE, _scripted(reply), StageConfig(candidates_per_stage=1))
    assert out.record.accepted is accepted


def test_parse_yes_no():
    assert parse_yes_no("YES\nbecause") is True
    assert parse_yes_no("yes, mostly") is None
    assert parse_yes_no("") is None


# -- pipeline ----------------------------------------------------------------


def test_pipeline_happy_path(paws_catalog):
    schema = paws_catalog.get("paws_shelter")
    trace = []
    ex = run_pipeline(schema, synth_backend(), CFG, rng=random.Random(3), trace=trace)
    assert ex is not None
    assert [r.stage for r in trace] == list(STAGES)
    assert validate_call(ex.structured_call, paws_catalog).valid
    assert 2 <= len(ex.conversation) <= 8


def test_judge_always_rejects(paws_catalog):
    trace = []
    ex = run_pipeline(paws_catalog.get("paws_shelter"), synth_backend(judge="no"), CFG, rng=random.Random(0), trace=trace)
    assert ex is None and trace[-1].stage == "faithfulness" and trace[-1].candidates == 3


def test_conversation_rejects_means_no_later_calls(paws_catalog):
    backend = synth_backend({"conversation": "not a conversation"})
    trace = []
    assert run_pipeline(paws_catalog.get("paws_shelter"), backend, CFG, rng=random.Random(0), trace=trace) is None
    assert [r.stage for r in trace] == ["world_state", "conversation"]
    assert stage_calls(backend, "conversation") == 3
    for later in STAGES[2:]:
        assert stage_calls(backend, later) == 0


def test_separate_judge_backend(paws_catalog):
    judge = _scripted("yes")
    ex = run_pipeline(paws_catalog.get("paws_shelter"), synth_backend(judge="no"), CFG, judge, random.Random(0))
    assert ex is not None and len(judge.calls) == 1


def _generate_jsonl(catalog, path, seed):
    run = generate(catalog, synth_backend(), 4, StageConfig(seed=seed))
    export_jsonl(run.examples, path)
    return run


def test_generation_is_deterministic(retail, tmp_path):
    a = _generate_jsonl(retail.catalog, tmp_path / "a.jsonl", 11)
    b = _generate_jsonl(retail.catalog, tmp_path / "b.jsonl", 11)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert len(a.examples) == 4 and a.tallies() == b.tallies()
    _generate_jsonl(retail.catalog, tmp_path / "c.jsonl", 12)
    assert (tmp_path / "c.jsonl").read_bytes() != (tmp_path / "a.jsonl").read_bytes()


def test_exported_calls_revalidate(retail, tmp_path):
    _generate_jsonl(retail.catalog, tmp_path / "d.jsonl", 5)
    for line in (tmp_path / "d.jsonl").read_text().splitlines():
        _, _, call = SyntheticExample.core_from_record(json.loads(line))
        assert validate_call(call, retail.catalog).valid


def test_export_round_trip_and_duplicates(paws_catalog, tmp_path):
    assert export_jsonl([], tmp_path / "empty.jsonl") == 0
    assert (tmp_path / "empty.jsonl").read_text() == ""
    ex = run_pipeline(paws_catalog.get("paws_shelter"), synth_backend(), CFG, rng=random.Random(1))
    assert export_jsonl([ex], tmp_path / "one.jsonl") == 1
    turns, nl, call = SyntheticExample.core_from_record(json.loads((tmp_path / "one.jsonl").read_text()))
    assert (turns, nl, call) == (ex.conversation, ex.nl_tool_call, ex.structured_call)
    assert export_jsonl([ex, ex], tmp_path / "two.jsonl") == 2
    lines = (tmp_path / "two.jsonl").read_text().splitlines()
    assert lines[0] == lines[1]


def test_tallies_count_exits(retail):
    run = generate(retail.catalog, synth_backend(judge="no"), 3, StageConfig(candidates_per_stage=2))
    t = run.tallies()
    assert t["faithfulness"]["exits"] == 3 and t["faithfulness"]["candidates"] == 6
    assert t["world_state"]["accepted"] == 3 and run.examples == []


def test_stage_config_bounds():
    with pytest.raises(ValueError):
        StageConfig(candidates_per_stage=0)
    with pytest.raises(ValueError):
        StageConfig(turn_count_range=(1, 4))
