"""Tool encapsulation: one document in, one checked callable function out.

The backend is prompted with the raw documentation; the reply's function is
compiled to a syntax tree and its signature is checked against the document
(parameter presence, declared types, and name resolution — undefined
references are the classic hallucination). Failures feed back into a retry,
bounded by the retry budget.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Protocol

from . import analysis
from .analysis import SourceAnalysis
from .diagnostics import Diagnostics, emit
from .docmodel import ToolDoc
from .errors import AnalyzerUnavailable, EmptyBlock, NoCodeBlock
from .execbridge import ExecutionBridge
from .funclib import FunctionRecord, Provenance
from .llmgateway import (
    ChatMessage,
    CompletionRequest,
    FunctionSource,
    Gateway,
    parse_function_block,
    render_prompt,
)

ViolationKind = Literal[
    "parse_error", "missing_required", "name_mismatch", "type_mismatch", "undefined_reference"
]

# Documented value_type -> scripting-language type mapping. A conflicting
# annotation is a violation; an absent annotation is only a warning.
DOC_TYPE_TO_LANG = {
    "string": "str",
    "integer": "int",
    "number": "float",
    "boolean": "bool",
    "array": "list",
    "object": "dict",
}

DEFAULT_RETRY_BUDGET = 3


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    detail: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.detail}"


@dataclass(frozen=True)
class DeclaredParam:
    name: str
    value_type: str | None
    has_default: bool


@dataclass(frozen=True)
class SignatureReport:
    ok: bool
    declared_params: tuple[DeclaredParam, ...] = ()
    violations: tuple[Violation, ...] = ()
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.ok != (not self.violations):
            raise ValueError("ok must mirror an empty violation list")

    def summary(self) -> str:
        return "; ".join(str(v) for v in self.violations) or "ok"


@dataclass(frozen=True)
class EncapsulationOutcome:
    record: FunctionRecord | None
    attempts: int
    tokens_spent: int
    failure_reason: str | None = None

    def __post_init__(self) -> None:
        if (self.record is None) == (self.failure_reason is None):
            raise ValueError("exactly one of record / failure_reason must be set")


class SyntaxAnalyzer(Protocol):
    def analyze(self, source: str) -> SourceAnalysis: ...


class BuiltinAnalyzer:
    """Header/identifier analysis through the in-package grammar."""

    def analyze(self, source: str) -> SourceAnalysis:
        return analysis.analyze_source(source)


class BridgeAnalyzer:
    """Delegates analysis to the sandbox worker's full parser."""

    def __init__(self, bridge: ExecutionBridge) -> None:
        self._bridge = bridge

    def analyze(self, source: str) -> SourceAnalysis:
        return self._bridge.check(source)


# The default used when callers pass analyzer=None. Set to None to simulate
# an environment with no analyzer at all.
DEFAULT_ANALYZER: SyntaxAnalyzer | None = BuiltinAnalyzer()


def check_syntax(
    src: FunctionSource,
    doc: ToolDoc,
    analyzer: SyntaxAnalyzer | None = None,
) -> SignatureReport:
    """Check a generated function against its document.

    Violations: the source does not parse; a required documented parameter is
    missing from the signature; a signature parameter is absent from the
    document; a declared type conflicts with the documented value_type; the
    body references a name defined nowhere. Omitted optional parameters and
    untyped signature parameters only warn.
    """
    analyzer = analyzer or DEFAULT_ANALYZER
    if analyzer is None:
        raise AnalyzerUnavailable("no syntax analyzer configured")

    result = analyzer.analyze(src.definition_text)
    violations: list[Violation] = []
    warnings: list[str] = []

    if not result.parse_ok:
        violations.append(Violation("parse_error", result.parse_error or "unparseable source"))
        return SignatureReport(ok=False, violations=tuple(violations))
    if not result.functions:
        violations.append(Violation("parse_error", "source defines no function"))
        return SignatureReport(ok=False, violations=tuple(violations))

    declared = tuple(
        DeclaredParam(name=p.name, value_type=p.annotation, has_default=p.has_default)
        for p in result.params
    )
    sig_names = {p.name for p in result.params}

    for doc_param in doc.parameters:
        if doc_param.required and doc_param.name not in sig_names:
            violations.append(
                Violation("missing_required", f"required parameter {doc_param.name!r} absent from signature")
            )
        elif not doc_param.required and doc_param.name not in sig_names:
            warnings.append(f"optional parameter {doc_param.name!r} omitted from signature")

    for p in result.params:
        doc_param = doc.param(p.name)
        if doc_param is None:
            violations.append(
                Violation("name_mismatch", f"signature parameter {p.name!r} not in documentation")
            )
            continue
        expected = DOC_TYPE_TO_LANG[doc_param.value_type]
        if p.annotation is None:
            warnings.append(
                f"parameter {p.name!r} is untyped; documentation says {doc_param.value_type}"
            )
        elif p.annotation != expected:
            violations.append(
                Violation(
                    "type_mismatch",
                    f"parameter {p.name!r} annotated {p.annotation}, "
                    f"documentation requires {expected} ({doc_param.value_type})",
                )
            )

    for name in result.unresolved:
        violations.append(Violation("undefined_reference", f"{name!r} is defined nowhere"))

    return SignatureReport(
        ok=not violations,
        declared_params=declared,
        violations=tuple(violations),
        warnings=tuple(warnings),
    )


def _feedback_message(report: SignatureReport, src: FunctionSource | None) -> ChatMessage:
    lines = ["The previous function failed validation against the documentation:"]
    lines += [f"- {v}" for v in report.violations]
    if src is not None:
        lines.append("")
        lines.append("Previous attempt:")
        lines.append(f"```python\n{src.definition_text}\n```")
    lines.append("")
    lines.append("Regenerate the full function, fixing every listed problem.")
    return ChatMessage(role="user", content="\n".join(lines))


def encapsulate_tool(
    doc: ToolDoc,
    gateway: Gateway,
    *,
    retry_budget: int = DEFAULT_RETRY_BUDGET,
    analyzer: SyntaxAnalyzer | None = None,
    temperature: float = 0.0,
    max_tokens: int = 2048,
    template_dir: str | Path | None = None,
    helper_docs: str = "(none)",
    diagnostics: Diagnostics | None = None,
) -> EncapsulationOutcome:
    """Generate, check, and retry until a function passes or the budget ends.

    After a failed attempt, the next prompt carries the failed source plus
    its serialized violations as additional conversation turns.
    """
    if retry_budget < 1:
        raise ValueError("retry budget must be >= 1")

    messages = list(
        render_prompt(
            "encapsulate",
            {"t_doc": doc.render_text(), "docs": helper_docs},
            template_dir=template_dir,
        )
    )
    tokens = 0
    last_summary = "no attempts made"

    for attempt in range(1, retry_budget + 1):
        request = CompletionRequest(
            messages=tuple(messages),
            temperature=temperature,
            max_tokens=max_tokens,
            tag="encapsulate",
            key=doc.name,
        )
        response = gateway.complete(request)
        tokens += response.prompt_tokens + response.completion_tokens

        src: FunctionSource | None = None
        try:
            src = parse_function_block(response.text, diagnostics)
        except (NoCodeBlock, EmptyBlock) as exc:
            report = SignatureReport(
                ok=False, violations=(Violation("parse_error", str(exc)),)
            )
        else:
            report = check_syntax(src, doc, analyzer)

        if report.ok and src is not None:
            for warning in report.warnings:
                emit(diagnostics, "encapsulator", "signature_warning", f"{doc.name}: {warning}")
            record = FunctionRecord(
                name=src.declared_name or doc.name,
                source=src.definition_text,
                demo=src.test_text or "",
                status="SyntaxChecked",
                provenance=Provenance(attempts=attempt, tokens_spent=tokens),
                origin_doc=doc,
            )
            return EncapsulationOutcome(record=record, attempts=attempt, tokens_spent=tokens)

        last_summary = report.summary()
        emit(
            diagnostics,
            "encapsulator",
            "attempt_failed",
            f"{doc.name} attempt {attempt}: {last_summary}",
        )
        messages.append(ChatMessage(role="assistant", content=response.text or "(empty reply)"))
        messages.append(_feedback_message(report, src))

    return EncapsulationOutcome(
        record=None,
        attempts=retry_budget,
        tokens_spent=tokens,
        failure_reason=f"all {retry_budget} attempts failed; last: {last_summary}",
    )
