"""Persisted function library: the verified (function, demo, result kind) triples.

On-disk layout is human-diffable::

    library/
      manifest.json          # metadata + integrity digests, schema-versioned
      functions/<name>.src   # function definition text
      functions/<name>.demo  # usage demonstration (verification instance)

Writes are whole-library atomic (build in a temp dir, rename into place);
loads validate the manifest digest and per-file content hashes.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Literal

from .docmodel import ToolDoc, parse_tool_doc
from .errors import ManifestCorrupt, UnknownName
from .execbridge import ResultKind

RecordStatus = Literal["SyntaxChecked", "Verified", "Failed"]

MANIFEST_SCHEMA = 1


@dataclass(frozen=True)
class Provenance:
    attempts: int = 0
    tokens_spent: int = 0
    verified_at_pass: int | None = None
    failure_reason: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "attempts": self.attempts,
            "tokens_spent": self.tokens_spent,
            "verified_at_pass": self.verified_at_pass,
            "failure_reason": self.failure_reason,
        }

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> "Provenance":
        return cls(
            attempts=int(raw.get("attempts", 0)),
            tokens_spent=int(raw.get("tokens_spent", 0)),
            verified_at_pass=raw.get("verified_at_pass"),
            failure_reason=raw.get("failure_reason"),
        )


@dataclass(frozen=True)
class FunctionRecord:
    """One encapsulated function and its verification bookkeeping."""

    name: str
    source: str
    demo: str = ""
    result_kind: ResultKind = "none_declared"
    status: RecordStatus = "SyntaxChecked"
    provenance: Provenance = field(default_factory=Provenance)
    origin_doc: ToolDoc | None = None

    def __post_init__(self) -> None:
        if self.status == "Verified":
            if not self.demo:
                raise ValueError(f"verified record {self.name!r} must carry a usage demo")
            try:
                compile(self.source, f"<record:{self.name}>", "exec")
            except SyntaxError as exc:
                raise ValueError(
                    f"verified record {self.name!r} is not loadable: {exc.msg}"
                ) from exc

    def verified(self, demo: str, result_kind: ResultKind, at_pass: int) -> "FunctionRecord":
        return replace(
            self,
            status="Verified",
            demo=demo,
            result_kind=result_kind,
            provenance=replace(self.provenance, verified_at_pass=at_pass),
        )

    def failed(self, reason: str) -> "FunctionRecord":
        return replace(
            self,
            status="Failed",
            provenance=replace(self.provenance, failure_reason=reason),
        )

    @property
    def docstring(self) -> str:
        import ast

        try:
            tree = ast.parse(self.source)
        except SyntaxError:
            return ""
        for node in reversed(tree.body):
            if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
                return ast.get_docstring(node) or ""
        return ""


@dataclass
class FunctionLibrary:
    """Name-indexed function records plus build identity."""

    records: dict[str, FunctionRecord] = field(default_factory=dict)
    created_with: dict[str, str] = field(default_factory=dict)
    toolset_hash: str = ""

    def add(self, record: FunctionRecord) -> None:
        if record.name in self.records:
            raise ValueError(f"duplicate record name {record.name!r}")
        self.records[record.name] = record

    def replace(self, record: FunctionRecord) -> None:
        self.records[record.name] = record

    def verified_records(self) -> list[FunctionRecord]:
        return [r for r in sorted(self.records.values(), key=lambda r: r.name) if r.status == "Verified"]

    def verified_names(self) -> list[str]:
        return [r.name for r in self.verified_records()]

    def counts(self) -> dict[str, int]:
        out = {"SyntaxChecked": 0, "Verified": 0, "Failed": 0}
        for r in self.records.values():
            out[r.status] += 1
        return out

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class RenderedContext:
    text: str
    length: int


def render_context(lib: FunctionLibrary, subset: list[str] | None = None) -> RenderedContext:
    """In-context material for the agent: source + demo per verified record.

    Deterministic name order; only Verified records are renderable. The
    reported length lets callers enforce prompt budgets.
    """
    verified = {r.name: r for r in lib.verified_records()}
    if subset is not None:
        for name in subset:
            if name not in verified:
                raise UnknownName(name)
        names = sorted(set(subset))
    else:
        names = sorted(verified)
    blocks: list[str] = []
    for name in names:
        record = verified[name]
        block = f"# ==== function: {name} ====\n{record.source}"
        if record.demo:
            block += f"\n\n# usage:\n{record.demo}"
        blocks.append(block)
    text = "\n\n".join(blocks)
    return RenderedContext(text=text, length=len(text))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _manifest_digest(manifest: dict[str, Any]) -> str:
    body = {k: v for k, v in manifest.items() if k != "digest"}
    return _sha(json.dumps(body, sort_keys=True, ensure_ascii=True))


def save_library(lib: FunctionLibrary, path: str | Path) -> None:
    """Write the library atomically (temp dir + rename)."""
    path = Path(path)
    records = sorted(lib.records.values(), key=lambda r: r.name)
    manifest: dict[str, Any] = {
        "schema": MANIFEST_SCHEMA,
        "created_with": lib.created_with,
        "toolset_hash": lib.toolset_hash,
        "records": [
            {
                "name": r.name,
                "status": r.status,
                "result_kind": r.result_kind,
                "provenance": r.provenance.to_json(),
                "origin_doc": r.origin_doc.to_json() if r.origin_doc else None,
                "source_sha256": _sha(r.source),
                "demo_sha256": _sha(r.demo),
            }
            for r in records
        ],
    }
    manifest["digest"] = _manifest_digest(manifest)

    tmp = Path(tempfile.mkdtemp(prefix=path.name + ".", dir=path.parent if path.parent.exists() else None))
    try:
        (tmp / "functions").mkdir()
        for r in records:
            (tmp / "functions" / f"{r.name}.src").write_text(r.source, encoding="utf-8")
            (tmp / "functions" / f"{r.name}.demo").write_text(r.demo, encoding="utf-8")
        (tmp / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=True) + "\n",
            encoding="utf-8",
        )
        if path.exists():
            shutil.rmtree(path)
        tmp.rename(path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def load_library(path: str | Path) -> FunctionLibrary:
    """Load a saved library, validating manifest and file digests."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no library manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise ManifestCorrupt(f"unsupported manifest schema {manifest.get('schema')!r}")
    if manifest.get("digest") != _manifest_digest(manifest):
        raise ManifestCorrupt("manifest digest mismatch")

    lib = FunctionLibrary(
        created_with=dict(manifest.get("created_with") or {}),
        toolset_hash=manifest.get("toolset_hash", ""),
    )
    for entry in manifest["records"]:
        name = entry["name"]
        source = (path / "functions" / f"{name}.src").read_text(encoding="utf-8")
        demo = (path / "functions" / f"{name}.demo").read_text(encoding="utf-8")
        if _sha(source) != entry["source_sha256"] or _sha(demo) != entry["demo_sha256"]:
            raise ManifestCorrupt(f"content digest mismatch for {name!r}")
        origin = entry.get("origin_doc")
        lib.add(
            FunctionRecord(
                name=name,
                source=source,
                demo=demo,
                result_kind=entry.get("result_kind", "none_declared"),
                status=entry["status"],
                provenance=Provenance.from_json(entry.get("provenance") or {}),
                origin_doc=parse_tool_doc(origin) if origin else None,
            )
        )
    return lib
