"""The interpreter-side session: persistent namespace, traced functions,
watchdog timeouts, and the stdio request loop.

Protocol frames are newline-delimited UTF-8 JSON with sorted keys and
compact separators. One reply per request, ids echoed, in request order.
A malformed line yields an error reply with id null; nothing short of
stream loss kills the worker.
"""

from __future__ import annotations

import builtins
import functools
import inspect
import io
import json
import signal
import sys
import time
import traceback
from typing import Any, BinaryIO

from . import analyzer

STDOUT_LIMIT = 64 * 1024
TRUNCATION_MARKER = "\n...[stdout truncated at 65536 bytes]"
DEFAULT_TIMEOUT_MS = 30_000

ALLOWED_IMPORTS = frozenset(
    {
        "json", "math", "re", "time", "datetime", "random", "string",
        "itertools", "functools", "collections", "statistics", "urllib",
        "urllib.parse", "html", "base64", "hashlib", "uuid", "textwrap",
        "copy", "heapq", "bisect", "decimal", "fractions", "requests",
    }
)
BLOCKED_BUILTINS = ("open", "input", "breakpoint", "exit", "quit", "eval", "exec", "compile")


def encode(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"


class _ExecTimeout(BaseException):
    """Raised by the watchdog; BaseException so user `except Exception` cannot eat it."""


def _classify(value: Any) -> str:
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


def _jsonify(value: Any, _depth: int = 0) -> Any:
    if _depth > 6:
        return repr(value)
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, dict):
        return {str(k): _jsonify(v, _depth + 1) for k, v in value.items()}
    if isinstance(value, (list, tuple, set)):
        return [_jsonify(v, _depth + 1) for v in value]
    return repr(value)


def _user_traceback(exc: BaseException) -> str:
    """Traceback text starting at the user's own frames (<session>, <function:*>)."""
    te = traceback.TracebackException.from_exception(exc)
    stack = list(te.stack)
    start = next((i for i, f in enumerate(stack) if f.filename.startswith("<")), 0)
    te.stack = traceback.StackSummary.from_list(stack[start:])
    return "".join(te.format())


def _sandbox_builtins() -> dict[str, Any]:
    table = dict(vars(builtins))
    for name in BLOCKED_BUILTINS:
        table.pop(name, None)
    real_import = builtins.__import__

    def guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
        root = name.split(".")[0]
        if root not in ALLOWED_IMPORTS and name not in ALLOWED_IMPORTS:
            raise ImportError(f"import of {name!r} is not allowed in the tool sandbox")
        return real_import(name, globals, locals, fromlist, level)

    table["__import__"] = guarded_import
    return table


class WorkerSession:
    """One persistent session: variables survive exec, reset clears them,
    loaded functions survive both."""

    def __init__(self) -> None:
        self._builtins = _sandbox_builtins()
        self._lib_globals: dict[str, Any] = {"__builtins__": self._builtins}
        self._functions: dict[str, Any] = {}
        self._globals: dict[str, Any] = {"__builtins__": self._builtins}
        self._trace: list[dict[str, Any]] = []
        self._seq = 0
        self._armed = False
        self.shutting_down = False
        signal.signal(signal.SIGALRM, self._on_alarm)

    # --- watchdog ---

    def _on_alarm(self, signum, frame):  # noqa: ANN001 - signal handler shape
        if self._armed:
            raise _ExecTimeout()

    # --- tracing ---

    def _make_shim(self, name: str, fn: Any):
        try:
            sig = inspect.signature(fn)
        except (TypeError, ValueError):
            sig = None

        @functools.wraps(fn)
        def shim(*args: Any, **kwargs: Any) -> Any:
            if sig is not None:
                try:
                    bound = sig.bind(*args, **kwargs)
                    arg_map = {k: _jsonify(v) for k, v in bound.arguments.items()}
                except TypeError:
                    arg_map = {"*args": _jsonify(list(args)), "**kwargs": _jsonify(kwargs)}
            else:
                arg_map = {"*args": _jsonify(list(args)), "**kwargs": _jsonify(kwargs)}
            self._seq += 1
            record = {
                "name": name,
                "args": arg_map,
                "result_kind": "none_declared",
                "result_value": None,
                "seq": self._seq,
            }
            self._trace.append(record)
            result = fn(*args, **kwargs)
            record["result_kind"] = _classify(result)
            record["result_value"] = _jsonify(result)
            return result

        return shim

    # --- ops ---

    def op_load(self, msg: dict) -> dict:
        verdicts = []
        for entry in msg.get("functions") or []:
            name = entry["name"]
            source = entry["source"]
            replaced = name in self._functions
            try:
                code = compile(source, f"<function:{name}>", "exec")
                exec(code, self._lib_globals)
                fn = self._lib_globals.get(name)
                if not callable(fn):
                    raise NameError(f"source does not define a callable named {name!r}")
            except BaseException as exc:  # noqa: BLE001 - verdict, not crash
                verdicts.append(
                    {"name": name, "ok": False, "error": f"{type(exc).__name__}: {exc}", "replaced": False}
                )
                continue
            shim = self._make_shim(name, fn)
            self._lib_globals[name] = shim
            self._functions[name] = shim
            self._globals[name] = shim
            verdicts.append({"name": name, "ok": True, "error": None, "replaced": replaced})
        return {"verdicts": verdicts}

    def op_exec(self, msg: dict) -> dict:
        code_text = msg.get("code", "")
        timeout_ms = msg.get("timeout_ms", DEFAULT_TIMEOUT_MS)
        self._trace = []
        self._seq = 0
        buf = io.StringIO()
        start = time.monotonic()
        timed_out = False
        error: BaseException | None = None
        error_tb = ""

        real_stdout = sys.stdout
        try:
            code = compile(code_text, "<session>", "exec")
        except SyntaxError as exc:
            error = exc
            error_tb = _user_traceback(exc)
        else:
            if timeout_ms:
                self._armed = True
                signal.setitimer(signal.ITIMER_REAL, timeout_ms / 1000.0)
            sys.stdout = buf
            try:
                try:
                    exec(code, self._globals)
                finally:
                    # Close the race where the alarm fires while unwinding:
                    # the handler only raises while armed.
                    self._armed = False
                    signal.setitimer(signal.ITIMER_REAL, 0)
                    sys.stdout = real_stdout
            except _ExecTimeout:
                timed_out = True
            except BaseException as exc:  # noqa: BLE001 - reported, not raised
                error = exc
                error_tb = _user_traceback(exc)

        duration = int((time.monotonic() - start) * 1000)
        stdout = buf.getvalue()
        if len(stdout) > STDOUT_LIMIT:
            stdout = stdout[:STDOUT_LIMIT] + TRUNCATION_MARKER

        if timed_out:
            payload = {"type": "Timeout", "message": f"execution exceeded {timeout_ms} ms", "traceback": ""}
            status = "timeout"
        elif error is not None:
            payload = {"type": type(error).__name__, "message": str(error), "traceback": error_tb}
            status = "error"
        else:
            payload = None
            status = "ok"

        return {
            "status": status,
            "stdout": stdout,
            "error_payload": payload,
            "tool_trace": list(self._trace),
            "duration_ms": duration,
        }

    def op_reset(self, msg: dict) -> dict:
        self._globals = {"__builtins__": self._builtins}
        self._globals.update(self._functions)
        return {"ok": True}

    def op_check(self, msg: dict) -> dict:
        return analyzer.analyze(msg.get("source", ""))

    def op_shutdown(self, msg: dict) -> dict:
        self.shutting_down = True
        return {"ok": True}

    # --- request loop ---

    def handle_line(self, line: bytes) -> dict:
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ValueError("message must be a JSON object")
        except (json.JSONDecodeError, ValueError) as exc:
            return {"id": None, "result": {"status": "protocol_error", "message": str(exc)}}

        msg_id = msg.get("id")
        op = msg.get("op")
        handler = getattr(self, f"op_{op}", None) if isinstance(op, str) else None
        if handler is None:
            return {
                "id": msg_id,
                "result": {"status": "protocol_error", "message": f"unknown op {op!r}"},
            }
        try:
            result = handler(msg)
        except Exception as exc:  # noqa: BLE001 - reply, never crash
            return {
                "id": msg_id,
                "result": {"status": "protocol_error", "message": f"{type(exc).__name__}: {exc}"},
            }
        return {"id": msg_id, "result": result}


def serve(stdin: BinaryIO | None = None, stdout: BinaryIO | None = None) -> int:
    """Run the request loop until shutdown or stream loss."""
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer
    session = WorkerSession()
    try:
        for line in stdin:
            if not line.strip():
                continue
            reply = session.handle_line(line)
            stdout.write(encode(reply))
            stdout.flush()
            if session.shutting_down:
                return 0
    except (BrokenPipeError, OSError):
        return 1
    return 0
