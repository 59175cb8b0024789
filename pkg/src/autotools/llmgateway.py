"""Text-generation gateway.

Abstracts the completion backend behind one interface, renders the three
stage prompts from on-disk templates, logs every request/response pair for
replay, and parses model outputs into structured artifacts (code blocks,
name lists).

Backends:
  * LiveBackend     -- OpenAI-style chat completion over HTTP.
  * ScriptedBackend -- canned responses keyed on (tag, key); deterministic CI.
  * ReplayBackend   -- replays a recorded gateway log byte for byte.
"""

from __future__ import annotations

import ast
import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, Protocol

from .diagnostics import Diagnostics, emit
from .errors import (
    BackendUnavailable,
    EmptyBlock,
    MissingPlaceholder,
    NoCodeBlock,
    ScriptExhausted,
    UnparseableList,
)

Role = Literal["system", "user", "assistant", "environment"]
PromptKind = Literal["encapsulate", "relevance", "program"]

ENV_BACKEND_URL = "AUTOTOOLS_BACKEND_URL"
ENV_BACKEND_KEY = "AUTOTOOLS_BACKEND_KEY"
ENV_MODEL = "AUTOTOOLS_MODEL"

TEMPLATE_DIR = Path(__file__).parent / "templates"
TEMPLATE_KINDS: tuple[PromptKind, ...] = ("encapsulate", "relevance", "program")

_PLACEHOLDER_RE = re.compile(r"\{([a-z_][a-z0-9_]*)\}")


def count_tokens(text: str) -> int:
    """Whitespace token count, used for bookkeeping by offline backends."""
    return len(text.split())


# ---------------------------------------------------------------------------
# Messages and requests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self) -> None:
        if self.role in ("user", "assistant") and not self.content:
            raise ValueError(f"{self.role} message must have content")

    def to_json(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}

    @classmethod
    def from_json(cls, raw: dict[str, str]) -> "ChatMessage":
        return cls(role=raw["role"], content=raw["content"])


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 2048
    stop: tuple[str, ...] | None = None
    tag: str = ""
    key: str | None = None  # scripted/replay lookup hint (tool name or turn index)

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("request needs at least one message")
        if self.messages[0].role != "system":
            raise ValueError("first message must be the system instruction")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    @property
    def prompt_text(self) -> str:
        return "\n".join(m.content for m in self.messages)

    def to_json(self) -> dict[str, Any]:
        return {
            "messages": [m.to_json() for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "stop": list(self.stop) if self.stop else None,
        }


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    backend_id: str

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be >= 0")

    def to_json(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "backend_id": self.backend_id,
        }

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> "CompletionResponse":
        return cls(
            text=raw["text"],
            prompt_tokens=raw["prompt_tokens"],
            completion_tokens=raw["completion_tokens"],
            backend_id=raw["backend_id"],
        )


class Backend(Protocol):
    backend_id: str

    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


class ScriptedBackend:
    """Deterministic backend fed from a (tag -> key -> response) table.

    A string value repeats indefinitely; a list is consumed one entry per
    call and raises ScriptExhausted past its end. The table may come from a
    JSON file (the `scripted:<path>` CLI spec).
    """

    backend_id = "scripted"

    def __init__(self, table: dict[str, dict[str, Any]]) -> None:
        self._table = table
        self._cursors: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        key = request.key if request.key is not None else ""
        with self._lock:
            by_key = self._table.get(request.tag)
            if by_key is None:
                raise ScriptExhausted(request.tag, key)
            entry = by_key.get(key)
            if entry is None:
                raise ScriptExhausted(request.tag, key)
            if isinstance(entry, list):
                cursor = self._cursors.get((request.tag, key), 0)
                if cursor >= len(entry):
                    raise ScriptExhausted(request.tag, key)
                self._cursors[(request.tag, key)] = cursor + 1
                text = entry[cursor]
            else:
                text = entry
        return CompletionResponse(
            text=text,
            prompt_tokens=count_tokens(request.prompt_text),
            completion_tokens=count_tokens(text),
            backend_id=self.backend_id,
        )


class ReplayBackend:
    """Replays a recorded gateway log, in recorded order per (tag, key)."""

    backend_id = "replay"

    def __init__(self, entries: list[dict[str, Any]]) -> None:
        self._queues: dict[tuple[str, str], list[dict[str, Any]]] = {}
        for entry in entries:
            pair = (entry.get("tag", ""), entry.get("key") or "")
            self._queues.setdefault(pair, []).append(entry["response"])
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayBackend":
        entries = [
            json.loads(line)
            for line in Path(path).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        return cls(entries)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        pair = (request.tag, request.key or "")
        with self._lock:
            queue = self._queues.get(pair)
            if not queue:
                raise ScriptExhausted(request.tag, request.key)
            raw = queue.pop(0)
        return CompletionResponse.from_json(raw)


class LiveBackend:
    """OpenAI-style chat completion endpoint over HTTP.

    Configuration falls back to the AUTOTOOLS_BACKEND_URL / _KEY / _MODEL
    environment variables. Transport failures are retried twice with
    exponential backoff capped at 10 s; HTTP errors are not retried.
    """

    MAX_RETRIES = 2
    BACKOFF_CAP_S = 10.0

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        timeout_s: float = 60.0,
    ) -> None:
        self.base_url = (base_url or os.environ.get(ENV_BACKEND_URL) or "").rstrip("/")
        self.api_key = api_key or os.environ.get(ENV_BACKEND_KEY, "")
        self.model = model or os.environ.get(ENV_MODEL, "")
        self.timeout_s = timeout_s
        if not self.base_url:
            raise BackendUnavailable(
                f"no backend URL configured (set {ENV_BACKEND_URL})"
            )
        self.backend_id = self.model or self.base_url

    @staticmethod
    def _wire_role(role: Role) -> str:
        return "user" if role == "environment" else role

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        import requests

        payload: dict[str, Any] = {
            "model": self.model,
            "messages": [
                {"role": self._wire_role(m.role), "content": m.content}
                for m in request.messages
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.stop:
            payload["stop"] = list(request.stop)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_exc: Exception | None = None
        for attempt in range(self.MAX_RETRIES + 1):
            try:
                resp = requests.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout_s,
                )
            except requests.RequestException as exc:
                last_exc = exc
                if attempt < self.MAX_RETRIES:
                    time.sleep(min(2.0**attempt, self.BACKOFF_CAP_S))
                continue
            if resp.status_code != 200:
                raise BackendUnavailable(
                    f"backend returned HTTP {resp.status_code}: {resp.text[:200]}"
                )
            body = resp.json()
            usage = body.get("usage") or {}
            return CompletionResponse(
                text=body["choices"][0]["message"]["content"],
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
                backend_id=self.backend_id,
            )
        raise BackendUnavailable(f"transport failure after retries: {last_exc}")


# ---------------------------------------------------------------------------
# Gateway with session log
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogEntry:
    seq: int
    tag: str
    key: str | None
    request: dict[str, Any]
    response: dict[str, Any]

    @property
    def prompt_text(self) -> str:
        return "\n".join(m["content"] for m in self.request["messages"])

    def to_json(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "tag": self.tag,
            "key": self.key,
            "request": self.request,
            "response": self.response,
        }


class Gateway:
    """Single completion interface, safe for concurrent calls.

    Every request/response pair is appended to an in-memory session log
    (optionally mirrored to a JSON-lines file) so whole runs can be replayed
    deterministically through ReplayBackend.
    """

    def __init__(self, backend: Backend, log_path: str | Path | None = None) -> None:
        self.backend = backend
        self.log: list[LogEntry] = []
        self._log_path = Path(log_path) if log_path else None
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        response = self.backend.complete(request)
        entry = LogEntry(
            seq=0,
            tag=request.tag,
            key=request.key,
            request=request.to_json(),
            response=response.to_json(),
        )
        with self._lock:
            entry = LogEntry(
                seq=len(self.log),
                tag=entry.tag,
                key=entry.key,
                request=entry.request,
                response=entry.response,
            )
            self.log.append(entry)
            if self._log_path is not None:
                with self._log_path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry.to_json(), ensure_ascii=False) + "\n")
        return response

    def entries_for(self, tag: str | None = None, key: str | None = None) -> list[LogEntry]:
        with self._lock:
            out = list(self.log)
        if tag is not None:
            out = [e for e in out if e.tag == tag]
        if key is not None:
            out = [e for e in out if e.key == key]
        return out


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------


def _load_template(kind: PromptKind, template_dir: Path) -> tuple[str, str]:
    path = template_dir / f"{kind}.txt"
    text = path.read_text(encoding="utf-8")
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for line in text.splitlines():
        if line.strip() in ("[system]", "[user]"):
            current = line.strip()[1:-1]
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
    if "system" not in sections or "user" not in sections:
        raise ValueError(f"template {path} must contain [system] and [user] sections")
    return (
        "\n".join(sections["system"]).strip(),
        "\n".join(sections["user"]).strip(),
    )


def _render_value(value: Any) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, ensure_ascii=False, indent=2)


def render_prompt(
    kind: PromptKind,
    ctx: dict[str, Any],
    template_dir: str | Path | None = None,
) -> list[ChatMessage]:
    """Render the stage template `kind` with `ctx` fills.

    Pure in (kind, ctx, template file content). Every placeholder in the
    template must be supplied; extras in ctx are ignored.
    """
    tdir = Path(template_dir) if template_dir else TEMPLATE_DIR
    system_text, user_text = _load_template(kind, tdir)

    def substitute(text: str) -> str:
        def repl(match: re.Match[str]) -> str:
            name = match.group(1)
            if name not in ctx:
                raise MissingPlaceholder(name)
            return _render_value(ctx[name])

        return _PLACEHOLDER_RE.sub(repl, text)

    return [
        ChatMessage(role="system", content=substitute(system_text)),
        ChatMessage(role="user", content=substitute(user_text)),
    ]


def instruction_text(kind: PromptKind, template_dir: str | Path | None = None) -> str:
    """The stage's system instruction (used as-is by the data formatter)."""
    tdir = Path(template_dir) if template_dir else TEMPLATE_DIR
    system_text, _ = _load_template(kind, tdir)
    return system_text


def templates_digest(template_dir: str | Path | None = None) -> str:
    """Content digest of the template set, recorded in derived libraries."""
    tdir = Path(template_dir) if template_dir else TEMPLATE_DIR
    h = hashlib.sha256()
    for kind in TEMPLATE_KINDS:
        h.update((tdir / f"{kind}.txt").read_bytes())
    return "sha256:" + h.hexdigest()


# ---------------------------------------------------------------------------
# Output parsing
# ---------------------------------------------------------------------------


_FENCE_RE = re.compile(r"```(?:[A-Za-z0-9_+-]*)\n(.*?)```", re.DOTALL)


def extract_code_block(text: str, diagnostics: Diagnostics | None = None) -> str:
    """First fenced code block in `text`; extra blocks are a diagnostic."""
    matches = _FENCE_RE.findall(text)
    if not matches:
        raise NoCodeBlock("model output contains no fenced code block")
    if len(matches) > 1:
        emit(
            diagnostics,
            "llmgateway",
            "extra_code_blocks",
            f"{len(matches)} fenced blocks in one reply; using the first",
        )
    block = matches[0].strip("\n")
    if not block.strip():
        raise EmptyBlock("fenced code block is empty")
    return block


@dataclass(frozen=True)
class FunctionSource:
    """A generated function: definition text plus optional trailing test."""

    definition_text: str
    test_text: str | None = None
    declared_name: str | None = None

    def __post_init__(self) -> None:
        if not self.definition_text.strip():
            raise EmptyBlock("function definition is empty")


_TEST_MARKER_RE = re.compile(r"^\s*#\s*(begin your\s+)?test(ing)?\s+instance", re.IGNORECASE)
_DEF_RE = re.compile(r"^\s*def\s+([A-Za-z_]\w*)", re.MULTILINE)


def parse_function_block(text: str, diagnostics: Diagnostics | None = None) -> FunctionSource:
    """Extract the first fenced block and split it into definition and test.

    The split prefers syntax-tree structure (everything through the last
    top-level definition is the function part); a test-marker comment is the
    fallback when the block does not parse. Raises NoCodeBlock / EmptyBlock.
    """
    block = extract_code_block(text, diagnostics)
    lines = block.splitlines()

    try:
        tree = ast.parse(block)
    except SyntaxError:
        tree = None

    if tree is not None:
        fns = [
            n
            for n in tree.body
            if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))
        ]
        if fns:
            last = fns[-1]
            cut = last.end_lineno or len(lines)
            definition = "\n".join(lines[:cut]).strip("\n")
            test = "\n".join(lines[cut:]).strip("\n") or None
            return FunctionSource(
                definition_text=definition,
                test_text=test,
                declared_name=last.name,
            )
        return FunctionSource(definition_text=block, test_text=None, declared_name=None)

    # Unparseable: fall back to the marker comment, keep the raw text so the
    # syntax check can report the parse failure.
    for i, line in enumerate(lines):
        if _TEST_MARKER_RE.match(line):
            definition = "\n".join(lines[:i]).strip("\n")
            test = "\n".join(lines[i + 1 :]).strip("\n") or None
            if definition.strip():
                names = _DEF_RE.findall(definition)
                return FunctionSource(
                    definition_text=definition,
                    test_text=test,
                    declared_name=names[-1] if names else None,
                )
    names = _DEF_RE.findall(block)
    return FunctionSource(
        definition_text=block, test_text=None, declared_name=names[-1] if names else None
    )


_BRACKET_RE = re.compile(r"\[[^\[\]]*\]")


def parse_name_list(text: str) -> list[str]:
    """Parse a bracketed list of quoted names from model output.

    Order-preserving, whitespace-stripped, first-occurrence deduplicated.
    Raises UnparseableList when no bracketed list of strings exists anywhere.
    """
    for match in _BRACKET_RE.finditer(text):
        try:
            value = ast.literal_eval(match.group(0))
        except (ValueError, SyntaxError):
            continue
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            out: list[str] = []
            seen: set[str] = set()
            for v in value:
                v = v.strip()
                if v and v not in seen:
                    out.append(v)
                    seen.add(v)
            return out
    raise UnparseableList(f"no bracketed name list in: {text[:120]!r}")
