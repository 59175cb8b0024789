"""Tool documentation model.

Ingests raw JSON tool documents (the field layout used by REST toolset
corpora: `method`, `url`, `name`, `description`,
`parameters[].{name,in,schema{type,default},description,required}`) and
normalizes them into validated, immutable records. Unknown fields are kept
in an opaque `extras` map so a parse → serialize → parse round trip loses
nothing.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Literal

from .diagnostics import Diagnostics, emit
from .errors import DocParseError, EmptyToolsetError

HttpMethod = Literal["GET", "POST", "PUT", "DELETE", "PATCH", "NONE"]
ParamLocation = Literal["query", "path", "body", "header"]
ValueType = Literal["string", "integer", "number", "boolean", "array", "object"]

HTTP_METHODS = ("GET", "POST", "PUT", "DELETE", "PATCH", "NONE")
PARAM_LOCATIONS = ("query", "path", "body", "header")
VALUE_TYPES = ("string", "integer", "number", "boolean", "array", "object")

_PLACEHOLDER_RE = re.compile(r"\{([^{}]+)\}")

# Runtime types a default value must have for each declared value_type.
_DEFAULT_TYPES: dict[str, tuple[type, ...]] = {
    "string": (str,),
    "integer": (int,),
    "number": (int, float),
    "boolean": (bool,),
    "array": (list,),
    "object": (dict,),
}


@dataclass(frozen=True)
class ParamSpec:
    """One documented tool parameter."""

    name: str
    location: ParamLocation
    value_type: ValueType
    required: bool = False
    default: Any = None
    has_default: bool = False
    description: str = ""
    extras: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.name:
            raise DocParseError("parameter with empty name")
        if self.location not in PARAM_LOCATIONS:
            raise DocParseError(f"unknown parameter location {self.location!r}")
        if self.value_type not in VALUE_TYPES:
            raise DocParseError(f"unknown value_type {self.value_type!r}")
        if self.has_default:
            if self.required:
                raise DocParseError(
                    f"required parameter {self.name!r} must not declare a default"
                )
            expected = _DEFAULT_TYPES[self.value_type]
            if self.default is not None and not isinstance(self.default, expected):
                raise DocParseError(
                    f"default for {self.name!r} is {type(self.default).__name__}, "
                    f"expected {self.value_type}"
                )
            if self.value_type != "boolean" and isinstance(self.default, bool):
                raise DocParseError(
                    f"default for {self.name!r} is bool, expected {self.value_type}"
                )

    def to_json(self) -> dict[str, Any]:
        schema: dict[str, Any] = {"type": self.value_type}
        if self.has_default:
            schema["default"] = self.default
        out: dict[str, Any] = {
            "name": self.name,
            "in": self.location,
            "schema": schema,
            "description": self.description,
            "required": self.required,
        }
        out.update(self.extras)
        return out


@dataclass(frozen=True)
class ToolDoc:
    """Normalized machine-readable documentation for one tool."""

    name: str
    method: HttpMethod
    url: str
    description: str = ""
    parameters: tuple[ParamSpec, ...] = ()
    request_body: Any = None
    response_example: str | None = None
    response_schema: Any = None
    extras: dict[str, Any] = field(default_factory=dict)
    unresolved_path_vars: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.name:
            raise DocParseError("missing field name")
        if self.method not in HTTP_METHODS:
            raise DocParseError(f"unknown method {self.method!r}")
        seen: set[str] = set()
        for p in self.parameters:
            if p.name in seen:
                raise DocParseError(f"duplicate parameter name {p.name!r}")
            seen.add(p.name)

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.parameters)

    def param(self, name: str) -> ParamSpec | None:
        for p in self.parameters:
            if p.name == name:
                return p
        return None

    @property
    def required_params(self) -> tuple[ParamSpec, ...]:
        return tuple(p for p in self.parameters if p.required)

    def path_placeholders(self) -> tuple[str, ...]:
        return tuple(m.group(1) for m in _PLACEHOLDER_RE.finditer(self.url))

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "method": self.method,
            "url": self.url,
            "name": self.name,
            "description": self.description,
            "parameters": [p.to_json() for p in self.parameters],
            "requestBody": self.request_body,
            "example": self.response_example,
            "responses": self.response_schema,
        }
        out.update(self.extras)
        return out

    def render_text(self) -> str:
        """The document as prompt-ready JSON text."""
        return json.dumps(self.to_json(), ensure_ascii=False, indent=2)


_DOC_KEYS = {"method", "url", "name", "description", "parameters", "requestBody", "example", "responses"}
_PARAM_KEYS = {"name", "in", "schema", "description", "required"}


def _parse_param(raw: dict[str, Any], doc_name: str, diagnostics: Diagnostics | None) -> ParamSpec:
    if not isinstance(raw, dict):
        raise DocParseError(f"parameter entry of {doc_name!r} is not an object")
    name = raw.get("name")
    if not name or not isinstance(name, str):
        raise DocParseError(f"parameter of {doc_name!r} missing name")
    location = raw.get("in", "query")
    if location not in PARAM_LOCATIONS:
        emit(
            diagnostics,
            "docmodel",
            "unknown_location",
            f"{doc_name}.{name}: location {location!r} mapped to body",
        )
        location = "body"
    schema = raw.get("schema") or {}
    if not isinstance(schema, dict):
        schema = {}
    value_type = schema.get("type")
    if value_type is None:
        emit(
            diagnostics,
            "docmodel",
            "missing_type",
            f"{doc_name}.{name}: no schema type, assuming string",
        )
        value_type = "string"
    if value_type not in VALUE_TYPES:
        raise DocParseError(f"unknown value_type {value_type!r} for {doc_name}.{name}")
    has_default = "default" in schema
    extras = {k: v for k, v in raw.items() if k not in _PARAM_KEYS}
    return ParamSpec(
        name=name,
        location=location,  # type: ignore[arg-type]
        value_type=value_type,  # type: ignore[arg-type]
        required=bool(raw.get("required", False)),
        default=schema.get("default"),
        has_default=has_default,
        description=raw.get("description", "") or "",
        extras=extras,
    )


def parse_tool_doc(raw: dict[str, Any], diagnostics: Diagnostics | None = None) -> ToolDoc:
    """Parse one raw JSON-like document into a validated ToolDoc.

    Raises DocParseError for missing name/method/url, duplicate parameter
    names, or an unknown value_type. Unknown top-level fields are preserved
    in `extras`; unknown `in` locations map to body with a diagnostic.
    """
    if not isinstance(raw, dict):
        raise DocParseError("document is not a JSON object")
    for key in ("name", "method", "url"):
        if key not in raw:
            raise DocParseError(f"missing field {key}")
    method = raw["method"]
    if method is None or method == "":
        method = "NONE"
    if isinstance(method, str):
        method = method.upper()
    params = tuple(
        _parse_param(p, raw["name"], diagnostics) for p in raw.get("parameters") or ()
    )
    extras = {k: v for k, v in raw.items() if k not in _DOC_KEYS}
    url = raw["url"] or ""
    param_names = {p.name for p in params}
    unresolved = tuple(
        m.group(1)
        for m in _PLACEHOLDER_RE.finditer(url)
        if m.group(1) not in param_names
    )
    return ToolDoc(
        name=raw["name"],
        method=method,
        url=url,
        description=raw.get("description", "") or "",
        parameters=params,
        request_body=raw.get("requestBody"),
        response_example=raw.get("example"),
        response_schema=raw.get("responses"),
        extras=extras,
        unresolved_path_vars=unresolved,
    )


@dataclass(frozen=True)
class Toolset:
    """An ordered collection of tool documents from one source."""

    tools: tuple[ToolDoc, ...]
    base_url: str | None = None
    domain_label: str | None = None

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for t in self.tools:
            if t.name in seen:
                raise DocParseError(f"duplicate tool name {t.name!r} in toolset")
            seen.add(t.name)

    def __len__(self) -> int:
        return len(self.tools)

    def __iter__(self) -> Iterator[ToolDoc]:
        return iter(self.tools)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.tools)

    def get(self, name: str) -> ToolDoc | None:
        for t in self.tools:
            if t.name == name:
                return t
        return None

    def permuted(self, seed: int) -> "Toolset":
        """A copy with tool order shuffled by a seeded RNG."""
        tools = list(self.tools)
        random.Random(seed).shuffle(tools)
        return Toolset(tools=tuple(tools), base_url=self.base_url, domain_label=self.domain_label)


META_FILENAME = "_meta.json"


def load_toolset(path: str | Path, diagnostics: Diagnostics | None = None) -> Toolset:
    """Load a toolset from a directory of `<name>.json` files or a single file.

    Directory entries load in lexicographic filename order; a single file may
    hold one document or a list. Per-document parse failures become
    diagnostics instead of aborting the load; EmptyToolsetError is raised only
    when nothing parses.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such toolset location: {path}")

    base_url: str | None = None
    domain_label: str | None = None
    raw_docs: list[tuple[str, Any]] = []

    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix == ".json")
        for f in files:
            if f.name == META_FILENAME:
                try:
                    meta = json.loads(f.read_text(encoding="utf-8"))
                    base_url = meta.get("base_url")
                    domain_label = meta.get("domain_label")
                except (OSError, json.JSONDecodeError) as exc:
                    emit(diagnostics, "docmodel", "bad_meta", f"{f}: {exc}")
                continue
            try:
                raw = json.loads(f.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                emit(diagnostics, "docmodel", "unreadable", f"{f}: {exc}", source=str(f))
                continue
            if isinstance(raw, list):
                raw_docs.extend((str(f), item) for item in raw)
            else:
                raw_docs.append((str(f), raw))
    else:
        raw = json.loads(path.read_text(encoding="utf-8"))
        if isinstance(raw, list):
            raw_docs = [(str(path), item) for item in raw]
        else:
            raw_docs = [(str(path), raw)]

    tools: list[ToolDoc] = []
    for source, item in raw_docs:
        try:
            tools.append(parse_tool_doc(item, diagnostics))
        except DocParseError as exc:
            emit(diagnostics, "docmodel", "parse_failure", f"{source}: {exc}", source=source)

    if not tools:
        raise EmptyToolsetError(f"no parseable tool documents under {path}")
    return Toolset(tools=tuple(tools), base_url=base_url, domain_label=domain_label)


def toolset_digest(toolset: Toolset) -> str:
    """Stable content digest of a toolset (used to stamp derived libraries)."""
    import hashlib

    payload = json.dumps(
        [t.to_json() for t in toolset.tools], sort_keys=True, ensure_ascii=True
    ).encode("utf-8")
    return "sha256:" + hashlib.sha256(payload).hexdigest()
