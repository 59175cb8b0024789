"""Integration verification: turn syntax-checked functions into a verified library.

Each pending function gets a dependency-aware test instance: the backend
first selects helpers from the already-verified cache whose outputs can
supply the target's private arguments, then writes an instance that calls
those helpers before the target. Passing functions move into the cache and
carry their instance forward as the usage demo; the loop repeats full passes
over the remainder until nothing is pending or the iteration bound is hit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import analysis
from .diagnostics import Diagnostics, emit
from .errors import ForeignReference, NoCodeBlock, ScriptExhausted, UnparseableList
from .execbridge import ExecutionBridge, ExecutionResult, ResultKind
from .funclib import FunctionRecord, Provenance
from .llmgateway import (
    CompletionRequest,
    Gateway,
    extract_code_block,
    parse_name_list,
    render_prompt,
)

DEFAULT_MAX_ITERATIONS = 4
RELEVANCE_CANDIDATE_CAP = 30


class Throttle:
    """Global pacing for live-endpoint verification (one wait per real call)."""

    def __init__(self, calls_per_s: float) -> None:
        self._interval = 1.0 / calls_per_s if calls_per_s > 0 else 0.0
        self._next_at = 0.0

    def wait(self) -> None:
        if self._interval <= 0:
            return
        import time

        now = time.monotonic()
        if now < self._next_at:
            time.sleep(self._next_at - now)
            now = time.monotonic()
        self._next_at = now + self._interval


@dataclass
class VerificationState:
    """Loop state: pending functions, the verified cache, pass counter."""

    pending: list[FunctionRecord]
    verified: list[FunctionRecord] = field(default_factory=list)
    iteration: int = 0
    max_iterations: int = DEFAULT_MAX_ITERATIONS

    def to_json(self) -> dict[str, Any]:
        def rec(r: FunctionRecord) -> dict[str, Any]:
            return {
                "name": r.name,
                "source": r.source,
                "demo": r.demo,
                "result_kind": r.result_kind,
                "status": r.status,
                "provenance": r.provenance.to_json(),
                "origin_doc": r.origin_doc.to_json() if r.origin_doc else None,
            }

        return {
            "pending": [rec(r) for r in self.pending],
            "verified": [rec(r) for r in self.verified],
            "iteration": self.iteration,
            "max_iterations": self.max_iterations,
        }

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> "VerificationState":
        from .docmodel import parse_tool_doc

        def rec(r: dict[str, Any]) -> FunctionRecord:
            return FunctionRecord(
                name=r["name"],
                source=r["source"],
                demo=r.get("demo", ""),
                result_kind=r.get("result_kind", "none_declared"),
                status=r.get("status", "SyntaxChecked"),
                provenance=Provenance.from_json(r.get("provenance") or {}),
                origin_doc=parse_tool_doc(r["origin_doc"]) if r.get("origin_doc") else None,
            )

        return cls(
            pending=[rec(r) for r in raw["pending"]],
            verified=[rec(r) for r in raw["verified"]],
            iteration=int(raw.get("iteration", 0)),
            max_iterations=int(raw.get("max_iterations", DEFAULT_MAX_ITERATIONS)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json(), indent=2, ensure_ascii=False), encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "VerificationState":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class TestInstance:
    """A generated program that exercises the target via verified helpers."""

    __test__ = False  # not a pytest class despite the name

    code: str
    target_name: str
    expected_kind: ResultKind = "none_declared"


@dataclass(frozen=True)
class VerificationVerdict:
    passed: bool
    result: ExecutionResult | None
    reason: str = ""


def _record_context(record: FunctionRecord) -> str:
    text = record.source
    if record.demo:
        text += f"\n# usage:\n{record.demo}"
    return text


def select_relevant(
    target: FunctionRecord,
    cache: list[FunctionRecord],
    gateway: Gateway,
    *,
    temperature: float = 0.0,
    max_tokens: int = 512,
    template_dir: str | Path | None = None,
    diagnostics: Diagnostics | None = None,
) -> list[FunctionRecord]:
    """Helpers from the cache the backend deems relevant to the target.

    An empty cache short-circuits without a backend call. Names the model
    invents are dropped with a diagnostic; an unparseable reply downgrades to
    an empty selection.
    """
    if not cache:
        return []
    candidates = list(reversed(cache[-RELEVANCE_CANDIDATE_CAP:]))  # most recently verified first
    api_list = "\n\n".join(_record_context(r) for r in candidates)
    messages = render_prompt(
        "relevance",
        {"doc": _record_context(target), "api_list": api_list},
        template_dir=template_dir,
    )
    response = gateway.complete(
        CompletionRequest(
            messages=tuple(messages),
            temperature=temperature,
            max_tokens=max_tokens,
            tag="relevance",
            key=target.name,
        )
    )
    try:
        names = parse_name_list(response.text)
    except UnparseableList as exc:
        emit(diagnostics, "verifier", "unparseable_selection", f"{target.name}: {exc}")
        return []
    by_name = {r.name: r for r in cache}
    selected: list[FunctionRecord] = []
    for name in names:
        if name in by_name:
            selected.append(by_name[name])
        else:
            emit(
                diagnostics,
                "verifier",
                "unknown_selection",
                f"{target.name}: selection {name!r} not in cache",
            )
    return selected


def generate_test_instance(
    target: FunctionRecord,
    helpers: list[FunctionRecord],
    gateway: Gateway,
    *,
    temperature: float = 0.0,
    max_tokens: int = 1024,
    template_dir: str | Path | None = None,
    diagnostics: Diagnostics | None = None,
) -> TestInstance:
    """Ask the backend for an instance calling helpers first, target last.

    Instances referencing anything outside {target, helpers, builtins} are
    rejected statically (ForeignReference) before touching the sandbox.
    """
    docs = "\n\n".join(_record_context(r) for r in helpers) if helpers else "(none)"
    messages = render_prompt(
        "encapsulate",
        {"t_doc": _record_context(target), "docs": docs},
        template_dir=template_dir,
    )
    response = gateway.complete(
        CompletionRequest(
            messages=tuple(messages),
            temperature=temperature,
            max_tokens=max_tokens,
            tag="test_instance",
            key=target.name,
        )
    )
    code = extract_code_block(response.text, diagnostics)

    allowed = {target.name, *(h.name for h in helpers)}
    result = analysis.analyze_source(code, extra_allowed=allowed)
    if not result.parse_ok:
        raise NoCodeBlock(f"test instance does not parse: {result.parse_error}")
    if result.unresolved:
        raise ForeignReference(result.unresolved[0])

    expected = _expected_kind(target)
    return TestInstance(code=code, target_name=target.name, expected_kind=expected)


def _expected_kind(record: FunctionRecord) -> ResultKind:
    """Expected result kind from the function's declared return type."""
    result = analysis.analyze_source(record.source)
    mapping: dict[str, ResultKind] = {
        "dict": "json_map",
        "list": "json_list",
        "str": "text",
        "int": "number",
        "float": "number",
        "bool": "boolean",
    }
    return mapping.get(result.returns or "", "none_declared")


def looks_like_error_payload(value: Any) -> bool:
    """Error-shaped tool responses: an `error` key, or an out-of-band status code."""
    if not isinstance(value, dict):
        return False
    if "error" in value:
        return True
    status = value.get("status_code")
    if isinstance(status, bool):
        return False
    if isinstance(status, (int, float)):
        return not (200 <= status < 400)
    return False


def verify_function(
    target: FunctionRecord,
    instance: TestInstance,
    bridge: ExecutionBridge,
    *,
    timeout_ms: int | None = 30_000,
) -> VerificationVerdict:
    """Execute the instance; pass iff it completes, the target was called,
    the traced return matches the expected kind, and is not error-shaped."""
    result = bridge.exec(instance.code, timeout_ms=timeout_ms)
    if result.status != "ok":
        detail = result.error_payload.message if result.error_payload else result.status
        return VerificationVerdict(False, result, f"execution {result.status}: {detail}")
    target_calls = [c for c in result.tool_trace if c.name == instance.target_name]
    if not target_calls:
        return VerificationVerdict(False, result, "instance never invoked the target")
    call = target_calls[-1]
    if instance.expected_kind != "none_declared" and call.result_kind != instance.expected_kind:
        return VerificationVerdict(
            False,
            result,
            f"result kind {call.result_kind} does not match expected {instance.expected_kind}",
        )
    if looks_like_error_payload(call.result_value):
        return VerificationVerdict(False, result, f"error-shaped response: {call.result_value}")
    return VerificationVerdict(True, result)


def run_integration_verification(
    records: list[FunctionRecord],
    gateway: Gateway,
    bridge: ExecutionBridge,
    *,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    timeout_ms: int | None = 30_000,
    temperature: float = 0.0,
    template_dir: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    diagnostics: Diagnostics | None = None,
    state: VerificationState | None = None,
    rate_limit_per_s: float | None = None,
) -> tuple[list[FunctionRecord], list[tuple[FunctionRecord, str]]]:
    """Run the verification loop; returns (verified records, residual failures).

    Full passes iterate the pending list in stable order; a function passing
    moves to the cache immediately (later functions in the same pass may use
    it). Failures stay in place and get a fresh instance next pass. The loop
    ends when nothing is pending or `max_iterations` passes ran. On backend or
    bridge failure the state is checkpointed (when a path is given) before the
    error propagates, so a rerun can resume. Each (function, pass) executes at
    most one instance; `rate_limit_per_s` paces those executions when the
    functions hit live endpoints.
    """
    if state is None:
        state = VerificationState(pending=list(records), max_iterations=max_iterations)
    last_reasons: dict[str, str] = {}
    throttle = Throttle(rate_limit_per_s) if rate_limit_per_s else None

    def checkpoint() -> None:
        if checkpoint_path is not None:
            state.save(checkpoint_path)

    try:
        while state.pending and state.iteration < state.max_iterations:
            state.iteration += 1
            still_pending: list[FunctionRecord] = []
            for record in state.pending:
                helpers = select_relevant(
                    record,
                    state.verified,
                    gateway,
                    temperature=temperature,
                    template_dir=template_dir,
                    diagnostics=diagnostics,
                )
                try:
                    instance = generate_test_instance(
                        record,
                        helpers,
                        gateway,
                        temperature=temperature,
                        template_dir=template_dir,
                        diagnostics=diagnostics,
                    )
                except (NoCodeBlock, ForeignReference, ScriptExhausted) as exc:
                    last_reasons[record.name] = f"instance generation failed: {exc}"
                    emit(diagnostics, "verifier", "instance_rejected", f"{record.name}: {exc}")
                    still_pending.append(record)
                    continue

                sources = [(h.name, h.source) for h in helpers]
                sources.append((record.name, record.source))
                bridge.load_functions(sources)
                bridge.reset()
                if throttle is not None:
                    throttle.wait()
                verdict = verify_function(record, instance, bridge, timeout_ms=timeout_ms)
                if verdict.passed:
                    assert verdict.result is not None
                    observed = [
                        c for c in verdict.result.tool_trace if c.name == record.name
                    ][-1].result_kind
                    state.verified.append(
                        record.verified(
                            demo=instance.code,
                            result_kind=observed,
                            at_pass=state.iteration,
                        )
                    )
                else:
                    last_reasons[record.name] = verdict.reason
                    emit(
                        diagnostics,
                        "verifier",
                        "verification_failed",
                        f"{record.name} (pass {state.iteration}): {verdict.reason}",
                    )
                    still_pending.append(record)
            state.pending = still_pending
            checkpoint()
    except Exception:
        checkpoint()
        raise

    failures = [
        (record, last_reasons.get(record.name, "never attempted"))
        for record in state.pending
    ]
    return list(state.verified), failures
