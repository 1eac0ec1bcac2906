import json
import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from factored_agents.schema import (
    CatalogSyntaxError,
    DuplicateNameError,
    FindingKind,
    Match,
    ParamSpec,
    StructuredToolCall,
    UnsupportedFeatureError,
    ValidationReport,
    adapt_api_call,
    coercion_check,
    parse_catalog,
    validate_call,
)

from .oracles import brute_force_validate
from .randomized import random_call, random_catalog_doc


def call(name, **args):
    return StructuredToolCall(name, args)


# -- catalog parsing ---------------------------------------------------------


def test_minimal_catalog(example_catalog):
    assert len(example_catalog) == 1
    tool = example_catalog.get("example_1")
    assert tool.required == ("salutation",)
    assert tool.param("salutation").kind == "string"


def test_duplicate_tool_names():
    doc = {"tools": [{"name": "book_interview"}, {"name": "book_interview"}]}
    with pytest.raises(DuplicateNameError, match="book_interview"):
        parse_catalog(doc)


def test_unsupported_kind_named():
    doc = {"tools": [{"name": "t", "parameters": {"properties": {"when": {"type": "datetime-tz"}}}}]}
    with pytest.raises(UnsupportedFeatureError, match="datetime-tz"):
        parse_catalog(doc)


@pytest.mark.parametrize("prop", [
    {"type": "string", "pattern": "^a"},
    {"type": "array", "items": {"type": "object"}},
    {"type": "string", "items": {"type": "string"}},
])
def test_unsupported_constructs_rejected(prop):
    doc = {"tools": [{"name": "t", "parameters": {"properties": {"x": prop}}}]}
    with pytest.raises(UnsupportedFeatureError):
        parse_catalog(doc)


def test_syntax_error_has_location():
    with pytest.raises(CatalogSyntaxError) as info:
        parse_catalog('{"tools": [\n  {"name": }]}')
    assert info.value.line == 2


def test_yaml_catalog():
    text = "domain: demo\ntools:\n  - name: greet\n    parameters:\n      properties:\n        who: {type: string}\n      required: [who]\n"
    cat = parse_catalog(text)
    assert cat.names == ["greet"]
    assert cat.get("greet").required == ("who",)


def test_tool_name_rules():
    with pytest.raises(Exception):
        parse_catalog({"tools": [{"name": "two words"}]})
    with pytest.raises(Exception):
        parse_catalog({"tools": [{"name": "functions.x"}]})


def test_catalog_digest_stable(example_catalog):
    again = parse_catalog(example_catalog.to_document())
    assert again.digest() == example_catalog.digest()


# -- validation examples -----------------------------------------------------


def test_valid_call(example_catalog):
    assert validate_call(call("example_1", salutation="Hello World"), example_catalog).valid


def test_missing_field(example_catalog):
    report = validate_call(call("example_1"), example_catalog)
    assert [(f.kind, f.field) for f in report.findings] == [(FindingKind.MISSING_FIELD, "salutation")]


def test_hallucinated_field(example_catalog):
    report = validate_call(call("example_1", salutation="Hello World", color="red"), example_catalog)
    assert [(f.kind, f.field) for f in report.findings] == [(FindingKind.HALLUCINATED_FIELD, "color")]


def test_malformed_field(example_catalog):
    report = validate_call(call("example_1", salutation=42), example_catalog)
    assert [(f.kind, f.field) for f in report.findings] == [(FindingKind.MALFORMED_FIELD, "salutation")]


def test_functions_prefix_is_unknown(example_catalog):
    report = validate_call(call("functions.example_1", salutation="Hello World"), example_catalog)
    assert report.kinds == ["UnknownTool"]
    assert report.findings[0].field is None
    assert "functions." in report.findings[0].detail


def test_canonical_order():
    cat = parse_catalog({"tools": [{"name": "t", "parameters": {
        "properties": {"b": {"type": "integer"}, "a": {"type": "string"}},
        "required": ["b", "a"]}}]})
    report = validate_call(call("t", zz=1, a=3, yy=2), cat)
    assert [(f.kind.value, f.field) for f in report.findings] == [
        ("MissingField", "b"), ("MalformedField", "a"), ("HallucinatedField", "yy"), ("HallucinatedField", "zz")]


def test_lenient_accepts_coercible():
    cat = parse_catalog({"tools": [{"name": "t", "parameters": {"properties": {"n": {"type": "integer"}}}}]})
    assert not validate_call(call("t", n="7"), cat).valid
    assert validate_call(call("t", n="7"), cat, lenient=True).valid
    assert not validate_call(call("t", n="abc"), cat, lenient=True).valid


def test_report_round_trip(example_catalog):
    report = validate_call(call("example_1", salutation=1, x=2), example_catalog)
    assert ValidationReport.from_json(json.loads(json.dumps(report.to_json()))) == report
    assert "MalformedField(salutation)" in report.summary()


@pytest.mark.parametrize("value,expected", [
    ("7", Match.COERCIBLE), (7, Match.EXACT), ("abc", Match.MISMATCH),
    (True, Match.MISMATCH), (7.0, Match.COERCIBLE),
])
def test_coercion_integer(value, expected):
    assert coercion_check(value, ParamSpec("n", "integer")) is expected


def test_coercion_other_kinds():
    assert coercion_check("a", ParamSpec("e", "enum", enum_values=("a", "b"))) is Match.EXACT
    assert coercion_check("c", ParamSpec("e", "enum", enum_values=("a", "b"))) is Match.MISMATCH
    assert coercion_check(["1", 2], ParamSpec("xs", "array", item_kind="integer")) is Match.COERCIBLE
    assert coercion_check("false", ParamSpec("b", "boolean")) is Match.COERCIBLE
    assert coercion_check('{"a": 1}', ParamSpec("o", "object")) is Match.COERCIBLE


def test_api_shape_adapter():
    c = adapt_api_call({"api": "paws_shelter", "operation_id": "book_interview", "date": "2025-11-02"})
    assert c == StructuredToolCall("paws_shelter.book_interview", {"date": "2025-11-02"})


# -- oracle agreement and properties ----------------------------------------


def _agree(doc, raw):
    cat = parse_catalog(doc)
    report = validate_call(StructuredToolCall(raw["name"], raw["arguments"]), cat)
    ok, kinds = brute_force_validate(raw, doc)
    return report.valid == ok and Counter(report.kinds) == kinds


def test_oracle_agreement_seeded():
    rng = random.Random(1234)
    for _ in range(2000):
        doc = random_catalog_doc(rng)
        assert _agree(doc, random_call(rng, doc))


@settings(max_examples=300, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_oracle_agreement_hypothesis(seed):
    rng = random.Random(seed)
    doc = random_catalog_doc(rng)
    assert _agree(doc, random_call(rng, doc))


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_removing_a_hallucinated_key_never_adds_findings(seed):
    rng = random.Random(seed)
    doc = random_catalog_doc(rng)
    raw = random_call(rng, doc)
    cat = parse_catalog(doc)
    before = validate_call(StructuredToolCall(raw["name"], raw["arguments"]), cat)
    extras = [f.field for f in before.findings if f.kind is FindingKind.HALLUCINATED_FIELD]
    if not extras:
        return
    args = {k: v for k, v in raw["arguments"].items() if k != extras[0]}
    after = validate_call(StructuredToolCall(raw["name"], args), cat)
    assert len(after.findings) == len(before.findings) - 1
    # determinism
    assert validate_call(StructuredToolCall(raw["name"], args), cat) == after
