"""Execution sandbox: client interface, wire protocol, in-memory stub.

Two implementations of one contract:

  * StubBridge   -- an in-memory session executing programs in-process, so
                    the full pipeline runs with no worker subprocess.
  * WorkerBridge -- client of the real worker process.

Wire protocol (authoritative definition; the worker must conform bit-exactly):
newline-delimited UTF-8 JSON over the worker's stdio, one message per line,
serialized with sorted keys and compact separators, terminated by ``\\n``,
no embedded newlines.

Requests::

    {"op": "load",     "id": N, "functions": [{"name": ..., "source": ...}]}
    {"op": "exec",     "id": N, "code": ..., "timeout_ms": M}
    {"op": "reset",    "id": N}
    {"op": "check",    "id": N, "source": ...}
    {"op": "shutdown", "id": N}

Replies (one per request, ids echoed, in request order)::

    {"id": N, "result": {...}}

Result payloads::

    load     -> {"verdicts": [{"name", "ok", "error", "replaced"}]}
    exec     -> {"status": "ok"|"error"|"timeout", "stdout": str,
                 "error_payload": {"type","message","traceback"}|null,
                 "tool_trace": [{"name","args","result_kind","result_value","seq"}],
                 "duration_ms": int}
    reset    -> {"ok": true}
    check    -> {"parse_ok", "error", "functions", "params", "returns", "unresolved"}
    shutdown -> {"ok": true}

A malformed request line yields ``{"id": null, "result": {"status":
"protocol_error", "message": ...}}`` and never kills the worker.
"""

from __future__ import annotations

import abc
import builtins
import contextlib
import ctypes
import functools
import inspect
import io
import json
import os
import shlex
import subprocess
import sys
import threading
import time
import traceback
from dataclasses import dataclass
from queue import Empty, Queue
from typing import Any, Literal

from . import analysis
from .analysis import SourceAnalysis
from .errors import BridgeUnavailable

ResultKind = Literal["json_map", "json_list", "text", "number", "boolean", "none_declared"]
ExecStatus = Literal["ok", "error", "timeout"]

RESULT_KINDS = ("json_map", "json_list", "text", "number", "boolean", "none_declared")

DEFAULT_TIMEOUT_MS = 30_000
KILL_GRACE_MS = 2_000
STDOUT_LIMIT = 64 * 1024
TRUNCATION_MARKER = "\n...[stdout truncated at 65536 bytes]"

ENV_WORKER_CMD = "AUTOTOOLS_WORKER_CMD"

# Modules the sandbox may import: a small utility allowlist plus the HTTP
# client capability encapsulated functions need.
ALLOWED_IMPORTS = frozenset(
    {
        "json", "math", "re", "time", "datetime", "random", "string",
        "itertools", "functools", "collections", "statistics", "urllib",
        "urllib.parse", "html", "base64", "hashlib", "uuid", "textwrap",
        "copy", "heapq", "bisect", "decimal", "fractions", "requests",
    }
)
BLOCKED_BUILTINS = ("open", "input", "breakpoint", "exit", "quit", "eval", "exec", "compile")


def encode_message(obj: dict[str, Any]) -> bytes:
    """Canonical protocol framing for one message."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"


def classify_result(value: Any) -> ResultKind:
    """Kind of a runtime value; `none_declared` is the unclassified bucket."""
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, (int, float)):
        return "number"
    if isinstance(value, str):
        return "text"
    if isinstance(value, dict):
        return "json_map"
    if isinstance(value, (list, tuple)):
        return "json_list"
    return "none_declared"


def jsonify(value: Any, _depth: int = 0) -> Any:
    """Project a runtime value onto JSON-safe types (repr as last resort)."""
    if _depth > 6:
        return repr(value)
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, dict):
        return {str(k): jsonify(v, _depth + 1) for k, v in value.items()}
    if isinstance(value, (list, tuple, set)):
        return [jsonify(v, _depth + 1) for v in value]
    return repr(value)


def truncate_stdout(text: str) -> str:
    if len(text) > STDOUT_LIMIT:
        return text[:STDOUT_LIMIT] + TRUNCATION_MARKER
    return text


def user_traceback(exc: BaseException) -> str:
    """Traceback text starting at the user's own frames (<session>, <function:*>)."""
    te = traceback.TracebackException.from_exception(exc)
    stack = list(te.stack)
    start = next((i for i, f in enumerate(stack) if f.filename.startswith("<")), 0)
    te.stack = traceback.StackSummary.from_list(stack[start:])
    return "".join(te.format())


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorPayload:
    type: str
    message: str
    traceback: str = ""

    def to_wire(self) -> dict[str, str]:
        return {"type": self.type, "message": self.message, "traceback": self.traceback}

    @classmethod
    def from_wire(cls, raw: dict[str, str]) -> "ErrorPayload":
        return cls(
            type=raw.get("type", ""),
            message=raw.get("message", ""),
            traceback=raw.get("traceback", ""),
        )

    @property
    def last_frame(self) -> str:
        lines = [ln for ln in self.traceback.splitlines() if ln.strip()]
        return lines[-2].strip() if len(lines) >= 2 else ""


@dataclass(frozen=True)
class ToolCall:
    """One traced invocation of a loaded library function."""

    name: str
    args: dict[str, Any]
    result_kind: ResultKind
    seq: int
    result_value: Any = None

    def to_wire(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "args": self.args,
            "result_kind": self.result_kind,
            "result_value": self.result_value,
            "seq": self.seq,
        }

    @classmethod
    def from_wire(cls, raw: dict[str, Any]) -> "ToolCall":
        return cls(
            name=raw["name"],
            args=raw.get("args") or {},
            result_kind=raw.get("result_kind", "none_declared"),
            seq=int(raw["seq"]),
            result_value=raw.get("result_value"),
        )


@dataclass(frozen=True)
class ExecutionResult:
    """Outcome of one program execution in the sandbox session."""

    status: ExecStatus
    stdout: str = ""
    error_payload: ErrorPayload | None = None
    tool_trace: tuple[ToolCall, ...] = ()
    duration_ms: int = 0

    def __post_init__(self) -> None:
        if (self.status == "ok") != (self.error_payload is None):
            raise ValueError("status=ok iff error_payload absent")

    def to_wire(self) -> dict[str, Any]:
        return {
            "status": self.status,
            "stdout": self.stdout,
            "error_payload": self.error_payload.to_wire() if self.error_payload else None,
            "tool_trace": [c.to_wire() for c in self.tool_trace],
            "duration_ms": self.duration_ms,
        }

    @classmethod
    def from_wire(cls, raw: dict[str, Any]) -> "ExecutionResult":
        payload = raw.get("error_payload")
        return cls(
            status=raw["status"],
            stdout=raw.get("stdout", ""),
            error_payload=ErrorPayload.from_wire(payload) if payload else None,
            tool_trace=tuple(ToolCall.from_wire(c) for c in raw.get("tool_trace") or ()),
            duration_ms=int(raw.get("duration_ms", 0)),
        )


@dataclass(frozen=True)
class LoadVerdict:
    name: str
    ok: bool
    error: str | None = None
    replaced: bool = False

    def to_wire(self) -> dict[str, Any]:
        return {"name": self.name, "ok": self.ok, "error": self.error, "replaced": self.replaced}

    @classmethod
    def from_wire(cls, raw: dict[str, Any]) -> "LoadVerdict":
        return cls(
            name=raw["name"],
            ok=bool(raw["ok"]),
            error=raw.get("error"),
            replaced=bool(raw.get("replaced")),
        )


# ---------------------------------------------------------------------------
# Bridge interface
# ---------------------------------------------------------------------------


class ExecutionBridge(abc.ABC):
    """One bridge owns one session: persistent variables, loaded functions.

    Operations on a single bridge are serialized by callers; distinct bridges
    are independent sessions that never observe each other's variables.
    """

    @abc.abstractmethod
    def load_functions(self, sources: list[tuple[str, str]]) -> list[LoadVerdict]:
        """Define functions in the persistent namespace, wrapped with tracing shims."""

    @abc.abstractmethod
    def exec(self, program: str, timeout_ms: int | None = DEFAULT_TIMEOUT_MS) -> ExecutionResult:
        """Run a program in the session namespace; assigned variables persist."""

    @abc.abstractmethod
    def reset(self) -> None:
        """Clear session variables, keeping loaded functions. Idempotent."""

    @abc.abstractmethod
    def shutdown(self) -> None:
        """Terminate the session. Idempotent, best-effort."""

    @abc.abstractmethod
    def check(self, source: str) -> SourceAnalysis:
        """Full-fidelity signature/name analysis of a source fragment."""


# ---------------------------------------------------------------------------
# In-process stub
# ---------------------------------------------------------------------------


class _ExecTimeout(BaseException):
    """Raised asynchronously into an execution that exceeded its deadline."""


class _Watchdog:
    """Singleton deadline enforcer for in-process executions.

    Arms (thread id, deadline) entries; on expiry it raises _ExecTimeout in
    the registered thread via the interpreter's async-exception channel,
    which interrupts Python-level execution at the next bytecode boundary.
    """

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._entries: dict[int, tuple[int, float]] = {}
        self._next_token = 1
        self._thread: threading.Thread | None = None

    def _ensure_thread(self) -> None:
        if self._thread is None or not self._thread.is_alive():
            self._thread = threading.Thread(target=self._run, daemon=True, name="stub-watchdog")
            self._thread.start()

    def arm(self, thread_id: int, deadline: float) -> int:
        with self._cond:
            token = self._next_token
            self._next_token += 1
            self._entries[token] = (thread_id, deadline)
            self._ensure_thread()
            self._cond.notify()
        return token

    def disarm(self, token: int) -> bool:
        """Remove the entry; True when the watchdog already fired for it."""
        with self._cond:
            return self._entries.pop(token, None) is None

    def _run(self) -> None:
        while True:
            with self._cond:
                now = time.monotonic()
                expired = [t for t, (_, d) in self._entries.items() if d <= now]
                for token in expired:
                    thread_id, _ = self._entries.pop(token)
                    ctypes.pythonapi.PyThreadState_SetAsyncExc(
                        ctypes.c_long(thread_id), ctypes.py_object(_ExecTimeout)
                    )
                deadlines = [d for (_, d) in self._entries.values()]
                wait = min(deadlines) - now if deadlines else None
                self._cond.wait(timeout=max(wait, 0.005) if wait is not None else None)


_WATCHDOG = _Watchdog()

# Stdout capture swaps sys.stdout process-wide, so stub executions are
# serialized across all StubBridge instances.
_EXEC_LOCK = threading.Lock()


class _TraceRecord:
    __slots__ = ("name", "args", "seq", "result_kind", "result_value")

    def __init__(self, name: str, args: dict[str, Any], seq: int) -> None:
        self.name = name
        self.args = args
        self.seq = seq
        self.result_kind: ResultKind = "none_declared"
        self.result_value: Any = None

    def snapshot(self) -> ToolCall:
        return ToolCall(
            name=self.name,
            args=self.args,
            result_kind=self.result_kind,
            seq=self.seq,
            result_value=self.result_value,
        )


def make_sandbox_builtins() -> dict[str, Any]:
    """Builtins for sandboxed code: import allowlist, no file/console I/O."""
    table = dict(vars(builtins))
    for name in BLOCKED_BUILTINS:
        table.pop(name, None)
    real_import = builtins.__import__

    def guarded_import(name: str, globals=None, locals=None, fromlist=(), level=0):
        root = name.split(".")[0]
        if root not in ALLOWED_IMPORTS and name not in ALLOWED_IMPORTS:
            raise ImportError(f"import of {name!r} is not allowed in the tool sandbox")
        return real_import(name, globals, locals, fromlist, level)

    table["__import__"] = guarded_import
    return table


class StubBridge(ExecutionBridge):
    """In-memory session: real execution semantics, no subprocess.

    Timeouts interrupt Python-level execution via the watchdog; code blocked
    inside C calls is not interruptible here (the real worker is).
    """

    def __init__(self) -> None:
        self._sandbox_builtins = make_sandbox_builtins()
        self._lib_globals: dict[str, Any] = {"__builtins__": self._sandbox_builtins}
        self._functions: dict[str, Any] = {}
        self._globals: dict[str, Any] = {"__builtins__": self._sandbox_builtins}
        self._trace: list[_TraceRecord] = []
        self._seq = 0
        self._down = False

    def _require_up(self) -> None:
        if self._down:
            raise BridgeUnavailable("bridge has been shut down")

    def _make_shim(self, name: str, fn: Any):
        try:
            sig = inspect.signature(fn)
        except (TypeError, ValueError):
            sig = None

        @functools.wraps(fn)
        def shim(*args: Any, **kwargs: Any) -> Any:
            arg_map: dict[str, Any]
            if sig is not None:
                try:
                    bound = sig.bind(*args, **kwargs)
                    arg_map = {k: jsonify(v) for k, v in bound.arguments.items()}
                except TypeError:
                    arg_map = {"*args": jsonify(list(args)), "**kwargs": jsonify(kwargs)}
            else:
                arg_map = {"*args": jsonify(list(args)), "**kwargs": jsonify(kwargs)}
            self._seq += 1
            record = _TraceRecord(name=name, args=arg_map, seq=self._seq)
            self._trace.append(record)
            result = fn(*args, **kwargs)
            record.result_kind = classify_result(result)
            record.result_value = jsonify(result)
            return result

        return shim

    def load_functions(self, sources: list[tuple[str, str]]) -> list[LoadVerdict]:
        self._require_up()
        verdicts: list[LoadVerdict] = []
        for name, source in sources:
            replaced = name in self._functions
            try:
                code = compile(source, f"<function:{name}>", "exec")
                exec(code, self._lib_globals)
                fn = self._lib_globals.get(name)
                if not callable(fn):
                    raise NameError(f"source does not define a callable named {name!r}")
            except BaseException as exc:  # noqa: BLE001 - verdict, not crash
                verdicts.append(
                    LoadVerdict(name=name, ok=False, error=f"{type(exc).__name__}: {exc}")
                )
                continue
            shim = self._make_shim(name, fn)
            self._lib_globals[name] = shim
            self._functions[name] = shim
            self._globals[name] = shim
            verdicts.append(LoadVerdict(name=name, ok=True, replaced=replaced))
        return verdicts

    def exec(self, program: str, timeout_ms: int | None = DEFAULT_TIMEOUT_MS) -> ExecutionResult:
        self._require_up()
        with _EXEC_LOCK:
            self._trace = []
            self._seq = 0
            buf = io.StringIO()
            start = time.monotonic()
            timed_out = False
            payload: ErrorPayload | None = None

            token: int | None = None
            if timeout_ms is not None:
                token = _WATCHDOG.arm(threading.get_ident(), start + timeout_ms / 1000.0)
            try:
                try:
                    code = compile(program, "<session>", "exec")
                    with contextlib.redirect_stdout(buf):
                        exec(code, self._globals)
                finally:
                    if token is not None and _WATCHDOG.disarm(token):
                        self._absorb_pending_timeout()
            except _ExecTimeout:
                timed_out = True
            except BaseException as exc:  # noqa: BLE001 - reported, not raised
                payload = ErrorPayload(
                    type=type(exc).__name__,
                    message=str(exc),
                    traceback=user_traceback(exc),
                )

            duration = int((time.monotonic() - start) * 1000)
            trace = tuple(r.snapshot() for r in self._trace)
            if timed_out:
                return ExecutionResult(
                    status="timeout",
                    stdout=truncate_stdout(buf.getvalue()),
                    error_payload=ErrorPayload(
                        type="Timeout", message=f"execution exceeded {timeout_ms} ms"
                    ),
                    tool_trace=trace,
                    duration_ms=duration,
                )
            return ExecutionResult(
                status="ok" if payload is None else "error",
                stdout=truncate_stdout(buf.getvalue()),
                error_payload=payload,
                tool_trace=trace,
                duration_ms=duration,
            )

    @staticmethod
    def _absorb_pending_timeout() -> None:
        # The watchdog fired while we were finishing: its async exception is
        # pending and will land within a few bytecodes. Wait for it here so
        # it cannot escape; cancel and raise synchronously as a last resort.
        end = time.monotonic() + 0.2
        while time.monotonic() < end:
            pass
        ctypes.pythonapi.PyThreadState_SetAsyncExc(
            ctypes.c_long(threading.get_ident()), None
        )
        raise _ExecTimeout()

    def reset(self) -> None:
        self._require_up()
        self._globals = {"__builtins__": self._sandbox_builtins}
        self._globals.update(self._functions)

    def shutdown(self) -> None:
        self._down = True

    def check(self, source: str) -> SourceAnalysis:
        self._require_up()
        return analysis.analyze_source(source)


# ---------------------------------------------------------------------------
# Real worker client
# ---------------------------------------------------------------------------


def default_worker_cmd() -> list[str]:
    env_cmd = os.environ.get(ENV_WORKER_CMD, "").strip()
    if env_cmd:
        return shlex.split(env_cmd)
    return [sys.executable, "-m", "autotools_worker"]


class WorkerBridge(ExecutionBridge):
    """Client of the real worker process over the stdio protocol."""

    def __init__(self, cmd: list[str] | None = None) -> None:
        self._cmd = cmd or default_worker_cmd()
        try:
            self._proc = subprocess.Popen(
                self._cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
            )
        except OSError as exc:
            raise BridgeUnavailable(f"cannot spawn worker {self._cmd!r}: {exc}") from exc
        self._next_id = 1
        self._lock = threading.Lock()
        self._replies: Queue[bytes] = Queue()
        self._down = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self._stderr_tail: list[str] = []
        self._stderr_reader = threading.Thread(target=self._drain_stderr, daemon=True)
        self._stderr_reader.start()

    def _read_loop(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._replies.put(line)

    def _drain_stderr(self) -> None:
        assert self._proc.stderr is not None
        for line in self._proc.stderr:
            text = line.decode("utf-8", "replace").rstrip()
            self._stderr_tail.append(text)
            del self._stderr_tail[:-20]

    def _fail(self, why: str) -> BridgeUnavailable:
        self._down = True
        with contextlib.suppress(Exception):
            self._proc.kill()
        tail = "; ".join(self._stderr_tail[-3:])
        return BridgeUnavailable(f"{why}" + (f" (worker stderr: {tail})" if tail else ""))

    def _request(self, payload: dict[str, Any], deadline_s: float) -> dict[str, Any]:
        if self._down:
            raise BridgeUnavailable("bridge has been shut down")
        with self._lock:
            if self._proc.poll() is not None:
                raise self._fail(f"worker exited with code {self._proc.returncode}")
            msg_id = self._next_id
            self._next_id += 1
            payload = {**payload, "id": msg_id}
            assert self._proc.stdin is not None
            try:
                self._proc.stdin.write(encode_message(payload))
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise self._fail(f"worker stdin closed: {exc}") from exc
            try:
                line = self._replies.get(timeout=deadline_s)
            except Empty:
                raise self._fail(f"no reply from worker within {deadline_s:.1f}s") from None
            try:
                reply = json.loads(line)
            except json.JSONDecodeError as exc:
                raise self._fail(f"unparseable worker reply: {line[:120]!r}") from exc
            if reply.get("id") != msg_id:
                raise self._fail(
                    f"worker reply id {reply.get('id')!r} does not match request {msg_id}"
                )
            return reply["result"]

    def load_functions(self, sources: list[tuple[str, str]]) -> list[LoadVerdict]:
        result = self._request(
            {"op": "load", "functions": [{"name": n, "source": s} for n, s in sources]},
            deadline_s=30.0,
        )
        return [LoadVerdict.from_wire(v) for v in result["verdicts"]]

    def exec(self, program: str, timeout_ms: int | None = DEFAULT_TIMEOUT_MS) -> ExecutionResult:
        effective = DEFAULT_TIMEOUT_MS if timeout_ms is None else timeout_ms
        deadline = effective / 1000.0 + KILL_GRACE_MS / 1000.0 + 2.0
        result = self._request(
            {"op": "exec", "code": program, "timeout_ms": effective}, deadline_s=deadline
        )
        if result.get("status") == "protocol_error":
            raise self._fail(f"protocol error: {result.get('message')}")
        return ExecutionResult.from_wire(result)

    def reset(self) -> None:
        self._request({"op": "reset"}, deadline_s=10.0)

    def shutdown(self) -> None:
        if self._down:
            return
        self._down = True
        if self._proc.poll() is None:
            with contextlib.suppress(Exception):
                assert self._proc.stdin is not None
                self._proc.stdin.write(encode_message({"op": "shutdown", "id": self._next_id}))
                self._proc.stdin.flush()
            try:
                self._proc.wait(timeout=KILL_GRACE_MS / 1000.0)
            except subprocess.TimeoutExpired:
                self._proc.terminate()
                try:
                    self._proc.wait(timeout=KILL_GRACE_MS / 1000.0)
                except subprocess.TimeoutExpired:
                    self._proc.kill()

    def check(self, source: str) -> SourceAnalysis:
        result = self._request({"op": "check", "source": source}, deadline_s=30.0)
        return SourceAnalysis.from_wire(result)
