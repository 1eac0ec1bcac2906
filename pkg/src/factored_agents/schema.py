"""Tool catalogs (an OpenAPI-style subset) and structured tool-call validation.

A catalog document looks like::

    domain: retail
    tools:
      - name: example_1
        description: Say hello.
        parameters:
          properties:
            salutation: {type: string, description: The greeting.}
          required: [salutation]

Validation never raises on a bad call: every defect becomes an
:class:`ErrorFinding` in the returned :class:`ValidationReport`.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

import yaml

SCALAR_KINDS = ("string", "integer", "number", "boolean")
PARAM_KINDS = SCALAR_KINDS + ("enum", "array", "object")

_PROPERTY_KEYS = {"type", "description", "enum", "items"}
_PARAMETERS_KEYS = {"type", "properties", "required"}
_TOOL_KEYS = {"name", "description", "parameters"}
_CATALOG_KEYS = {"domain", "tools"}
_INTEGER_TEXT = re.compile(r"[+-]?\d+")
_NUMBER_TEXT = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?")


class CatalogError(ValueError):
    """Base class for catalog ingestion failures."""


class CatalogSyntaxError(CatalogError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" at line {line}, column {column}" if line is not None else ""
        super().__init__(f"catalog syntax error{where}: {message}")


class UnsupportedFeatureError(CatalogError):
    def __init__(self, feature: str, where: str = ""):
        self.feature = feature
        suffix = f" (in {where})" if where else ""
        super().__init__(f"unsupported schema feature {feature!r}{suffix}")


class DuplicateNameError(CatalogError):
    def __init__(self, name: str, what: str = "tool"):
        self.name = name
        super().__init__(f"duplicate {what} name {name!r}")


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str
    required: bool = False
    description: str = ""
    enum_values: tuple[str, ...] = ()
    item_kind: str | None = None

    def __post_init__(self):
        if not self.name:
            raise CatalogError("parameter name must be non-empty")
        if self.kind not in PARAM_KINDS:
            raise UnsupportedFeatureError(self.kind, self.name)
        if (self.kind == "enum") != bool(self.enum_values):
            raise CatalogError(f"parameter {self.name!r}: enum_values must be non-empty iff kind is enum")
        if (self.kind == "array") != (self.item_kind is not None):
            raise CatalogError(f"parameter {self.name!r}: item_kind must be set iff kind is array")
        if self.item_kind is not None and self.item_kind not in SCALAR_KINDS:
            raise UnsupportedFeatureError(f"array of {self.item_kind}", self.name)

    def to_openapi(self) -> dict[str, Any]:
        if self.kind == "enum":
            prop: dict[str, Any] = {"type": "string", "enum": list(self.enum_values)}
        elif self.kind == "array":
            prop = {"type": "array", "items": {"type": self.item_kind}}
        else:
            prop = {"type": self.kind}
        if self.description:
            prop["description"] = self.description
        return prop


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str = ""
    params: tuple[ParamSpec, ...] = ()

    def __post_init__(self):
        if not self.name or any(ch.isspace() for ch in self.name):
            raise CatalogError(f"invalid tool name {self.name!r}")
        if self.name.startswith("functions."):
            raise CatalogError(f"tool name {self.name!r} must not carry the 'functions.' prefix")
        seen = set()
        for p in self.params:
            if p.name in seen:
                raise DuplicateNameError(p.name, what=f"parameter of {self.name}")
            seen.add(p.name)

    def param(self, name: str) -> ParamSpec | None:
        for p in self.params:
            if p.name == name:
                return p
        return None

    @property
    def required(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params if p.required)

    def to_openapi(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": {
                "type": "object",
                "properties": {p.name: p.to_openapi() for p in self.params},
                "required": list(self.required),
            },
        }


@dataclass(frozen=True)
class ToolCatalog:
    tools: tuple[ToolSchema, ...]
    domain_label: str = ""

    def __post_init__(self):
        seen = set()
        for t in self.tools:
            if t.name in seen:
                raise DuplicateNameError(t.name)
            seen.add(t.name)

    def get(self, name: str) -> ToolSchema | None:
        for t in self.tools:
            if t.name == name:
                return t
        return None

    def __contains__(self, name: object) -> bool:
        return any(t.name == name for t in self.tools)

    def __len__(self) -> int:
        return len(self.tools)

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.tools]

    def to_document(self) -> dict[str, Any]:
        return {"domain": self.domain_label, "tools": [t.to_openapi() for t in self.tools]}

    def digest(self) -> str:
        text = json.dumps(self.to_document(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class StructuredToolCall:
    tool_name: str
    arguments: Mapping[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {"name": self.tool_name, "arguments": dict(self.arguments)}

    def serialize(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False)

    @classmethod
    def from_json(cls, obj: Any) -> "StructuredToolCall":
        """Build a call from the canonical ``{"name", "arguments"}`` shape."""
        if not isinstance(obj, dict):
            raise CallShapeError(f"tool call must be a JSON object, got {type(obj).__name__}")
        missing = [k for k in ("name", "arguments") if k not in obj]
        if missing:
            raise CallShapeError(f"tool call is missing {', '.join(missing)}")
        if not isinstance(obj["name"], str):
            raise CallShapeError("tool call 'name' must be a string")
        if not isinstance(obj["arguments"], dict):
            raise CallShapeError("tool call 'arguments' must be a JSON object")
        return cls(obj["name"], obj["arguments"])

    def __eq__(self, other):
        if not isinstance(other, StructuredToolCall):
            return NotImplemented
        return self.tool_name == other.tool_name and dict(self.arguments) == dict(other.arguments)

    def __hash__(self):
        return hash((self.tool_name, json.dumps(dict(self.arguments), sort_keys=True)))


class CallShapeError(ValueError):
    """A JSON value that does not have the shape of a tool call."""


def adapt_api_call(obj: Mapping[str, Any]) -> StructuredToolCall:
    """Map the ``{"api", "operation_id", ...}`` call shape onto a canonical call.

    ``api`` and ``operation_id`` are joined with a dot to form the tool name;
    every other key becomes an argument.
    """
    if not isinstance(obj, Mapping) or "api" not in obj or "operation_id" not in obj:
        raise CallShapeError("api-style call needs both 'api' and 'operation_id'")
    args = {k: v for k, v in obj.items() if k not in ("api", "operation_id")}
    return StructuredToolCall(f"{obj['api']}.{obj['operation_id']}", args)


class FindingKind(str, Enum):
    UNKNOWN_TOOL = "UnknownTool"
    MISSING_FIELD = "MissingField"
    HALLUCINATED_FIELD = "HallucinatedField"
    MALFORMED_FIELD = "MalformedField"


@dataclass(frozen=True)
class ErrorFinding:
    kind: FindingKind
    field: str | None = None
    detail: str = ""

    def __post_init__(self):
        if (self.kind is FindingKind.UNKNOWN_TOOL) != (self.field is None):
            raise ValueError("field must be absent iff kind is UnknownTool")

    def __str__(self):
        return f"{self.kind.value}({self.field})" if self.field else self.kind.value

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "field": self.field, "detail": self.detail}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ErrorFinding":
        return cls(FindingKind(obj["kind"]), obj.get("field"), obj.get("detail", ""))


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[ErrorFinding, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.findings

    @property
    def kinds(self) -> list[str]:
        return [f.kind.value for f in self.findings]

    def summary(self) -> str:
        if self.valid:
            return "valid"
        return "invalid: " + "; ".join(f"{f}: {f.detail}" if f.detail else str(f) for f in self.findings)

    def to_json(self) -> dict[str, Any]:
        return {"valid": self.valid, "findings": [f.to_json() for f in self.findings]}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ValidationReport":
        return cls(tuple(ErrorFinding.from_json(f) for f in obj.get("findings", [])))


# -- catalog ingestion -------------------------------------------------------


def _load_document(text: str) -> Any:
    if text.lstrip().startswith(("{", "[")):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise CatalogSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        problem = getattr(exc, "problem", None) or str(exc)
        if mark is not None:
            raise CatalogSyntaxError(problem, mark.line + 1, mark.column + 1) from None
        raise CatalogSyntaxError(problem) from None


def _parse_param(tool: str, pname: str, prop: Any, required: bool) -> ParamSpec:
    where = f"{tool}.{pname}"
    if not isinstance(prop, dict):
        raise CatalogError(f"{where}: property definition must be a mapping")
    for key in prop:
        if key not in _PROPERTY_KEYS:
            raise UnsupportedFeatureError(key, where)
    ptype = prop.get("type")
    description = str(prop.get("description", ""))
    if "enum" in prop:
        values = prop["enum"]
        if ptype not in (None, "string"):
            raise UnsupportedFeatureError(f"enum of {ptype}", where)
        if not isinstance(values, list) or not values:
            raise CatalogError(f"{where}: enum must be a non-empty list")
        if len(set(map(str, values))) != len(values):
            raise CatalogError(f"{where}: duplicate enum values")
        return ParamSpec(pname, "enum", required, description, tuple(str(v) for v in values))
    if ptype is None:
        raise CatalogError(f"{where}: missing 'type'")
    if not isinstance(ptype, str) or ptype not in PARAM_KINDS or ptype == "enum":
        raise UnsupportedFeatureError(str(ptype), where)
    if ptype == "array":
        items = prop.get("items")
        if not isinstance(items, dict) or set(items) - {"type", "description"}:
            raise UnsupportedFeatureError("array items beyond a scalar type", where)
        item_kind = items.get("type")
        if item_kind not in SCALAR_KINDS:
            raise UnsupportedFeatureError(f"array of {item_kind}", where)
        return ParamSpec(pname, "array", required, description, item_kind=item_kind)
    if "items" in prop:
        raise UnsupportedFeatureError("items", where)
    return ParamSpec(pname, ptype, required, description)


def _parse_tool(doc: Any) -> ToolSchema:
    if not isinstance(doc, dict):
        raise CatalogError("each tool must be a mapping")
    for key in doc:
        if key not in _TOOL_KEYS:
            raise UnsupportedFeatureError(key, f"tool {doc.get('name', '?')}")
    name = doc.get("name")
    if not isinstance(name, str):
        raise CatalogError("tool is missing a string 'name'")
    params_doc = doc.get("parameters") or {}
    if not isinstance(params_doc, dict):
        raise CatalogError(f"{name}: 'parameters' must be a mapping")
    for key in params_doc:
        if key not in _PARAMETERS_KEYS:
            raise UnsupportedFeatureError(key, f"{name}.parameters")
    if params_doc.get("type", "object") != "object":
        raise UnsupportedFeatureError(f"parameters of type {params_doc['type']}", name)
    props = params_doc.get("properties") or {}
    required = params_doc.get("required") or []
    if not isinstance(props, dict) or not isinstance(required, list):
        raise CatalogError(f"{name}: malformed parameters block")
    if len(set(required)) != len(required):
        raise DuplicateNameError(next(r for r in required if required.count(r) > 1), "required entry")
    unknown = [r for r in required if r not in props]
    if unknown:
        raise CatalogError(f"{name}: required names undeclared properties {unknown}")
    params = tuple(_parse_param(name, pname, prop, pname in required) for pname, prop in props.items())
    return ToolSchema(name, str(doc.get("description", "")), params)


def parse_catalog(document: str | Mapping[str, Any]) -> ToolCatalog:
    """Parse a catalog document (JSON or YAML text, or an already-loaded mapping).

    Raises :class:`CatalogSyntaxError`, :class:`UnsupportedFeatureError` or
    :class:`DuplicateNameError`; nothing is ever silently dropped.
    """
    doc = _load_document(document) if isinstance(document, str) else document
    if not isinstance(doc, dict):
        raise CatalogError("catalog document must be a mapping with 'domain' and 'tools'")
    for key in doc:
        if key not in _CATALOG_KEYS:
            raise UnsupportedFeatureError(key, "catalog")
    tools = doc.get("tools")
    if not isinstance(tools, list):
        raise CatalogError("catalog needs a 'tools' list")
    seen: set[str] = set()
    parsed = []
    for tool_doc in tools:
        tool = _parse_tool(tool_doc)
        if tool.name in seen:
            raise DuplicateNameError(tool.name)
        seen.add(tool.name)
        parsed.append(tool)
    return ToolCatalog(tuple(parsed), str(doc.get("domain", "")))


def load_catalog(path: str | Path) -> ToolCatalog:
    return parse_catalog(Path(path).read_text(encoding="utf-8"))


# -- validation --------------------------------------------------------------


class Match(str, Enum):
    EXACT = "exact"
    COERCIBLE = "coercible"
    MISMATCH = "mismatch"


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _scalar_match(value: Any, kind: str) -> Match:
    if kind == "string":
        if isinstance(value, str):
            return Match.EXACT
        # numbers and booleans have a lossless textual form
        if isinstance(value, (int, float)):
            return Match.COERCIBLE
        return Match.MISMATCH
    if kind == "integer":
        if _is_int(value):
            return Match.EXACT
        if isinstance(value, float) and value.is_integer():
            return Match.COERCIBLE
        if isinstance(value, str) and _INTEGER_TEXT.fullmatch(value.strip()):
            return Match.COERCIBLE
        return Match.MISMATCH
    if kind == "number":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return Match.EXACT
        if isinstance(value, str) and _NUMBER_TEXT.fullmatch(value.strip()):
            return Match.COERCIBLE
        return Match.MISMATCH
    if kind == "boolean":
        if isinstance(value, bool):
            return Match.EXACT
        if isinstance(value, str) and value.strip().lower() in ("true", "false"):
            return Match.COERCIBLE
        return Match.MISMATCH
    raise ValueError(f"not a scalar kind: {kind}")


def coercion_check(value: Any, spec: ParamSpec) -> Match:
    """Classify how ``value`` fits ``spec``: exact type, losslessly coercible, or neither."""
    if spec.kind in SCALAR_KINDS:
        return _scalar_match(value, spec.kind)
    if spec.kind == "enum":
        if isinstance(value, str):
            return Match.EXACT if value in spec.enum_values else Match.MISMATCH
        if isinstance(value, (int, float)) and not isinstance(value, bool) and str(value) in spec.enum_values:
            return Match.COERCIBLE
        return Match.MISMATCH
    if spec.kind == "array":
        if not isinstance(value, list):
            return Match.MISMATCH
        verdicts = {_scalar_match(item, spec.item_kind) for item in value}
        if Match.MISMATCH in verdicts:
            return Match.MISMATCH
        return Match.COERCIBLE if Match.COERCIBLE in verdicts else Match.EXACT
    if spec.kind == "object":
        if isinstance(value, dict):
            return Match.EXACT
        if isinstance(value, str):
            try:
                return Match.COERCIBLE if isinstance(json.loads(value), dict) else Match.MISMATCH
            except ValueError:
                return Match.MISMATCH
        return Match.MISMATCH
    raise ValueError(f"unknown kind {spec.kind}")


def _describe_expected(spec: ParamSpec) -> str:
    if spec.kind == "enum":
        return "one of " + ", ".join(repr(v) for v in spec.enum_values)
    if spec.kind == "array":
        return f"array of {spec.item_kind}"
    return spec.kind


def validate_call(call: StructuredToolCall, catalog: ToolCatalog, lenient: bool = False) -> ValidationReport:
    """Check ``call`` against its schema in ``catalog`` and list every defect.

    Findings come in canonical order: schema parameter order (missing or
    malformed), then unexpected keys sorted lexicographically. An unknown tool
    name short-circuits to a single UnknownTool finding. With ``lenient`` a
    losslessly coercible value (e.g. ``"7"`` for an integer) is accepted.
    """
    schema = catalog.get(call.tool_name)
    if schema is None:
        detail = f"no tool named {call.tool_name!r}"
        if call.tool_name.startswith("functions.") and call.tool_name[len("functions."):] in catalog:
            detail += " (drop the 'functions.' prefix)"
        return ValidationReport((ErrorFinding(FindingKind.UNKNOWN_TOOL, None, detail),))

    findings = []
    args = call.arguments
    for spec in schema.params:
        if spec.name not in args:
            if spec.required:
                findings.append(ErrorFinding(FindingKind.MISSING_FIELD, spec.name, "required argument absent"))
            continue
        verdict = coercion_check(args[spec.name], spec)
        if verdict is Match.MISMATCH or (verdict is Match.COERCIBLE and not lenient):
            findings.append(
                ErrorFinding(
                    FindingKind.MALFORMED_FIELD,
                    spec.name,
                    f"expected {_describe_expected(spec)}, got {json.dumps(args[spec.name])}",
                )
            )
    declared = {p.name for p in schema.params}
    for key in sorted(k for k in args if k not in declared):
        findings.append(ErrorFinding(FindingKind.HALLUCINATED_FIELD, key, f"{schema.name} has no parameter {key!r}"))
    return ValidationReport(tuple(findings))
