"""Training-data formatting for the three learning tasks.

Serializes (documentation -> function), (query -> relevant names), and
(query -> multi-turn program trajectory) examples into the unified
interactive format: a system instruction, then turns between user and model
or between model and execution environment. Corpus filters reject empty tool
responses, unsolvable queries, and (optionally, against a gold solution)
wrong tool-calling parameters.
"""

from __future__ import annotations

import ast
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Literal

from .docmodel import ToolDoc
from .encapsulator import SyntaxAnalyzer, check_syntax
from .errors import FilteredOut, GoldNotInCandidates, GoldRejected
from .funclib import FunctionRecord
from .llmgateway import ChatMessage, FunctionSource, instruction_text

TaskKind = Literal["understanding", "relevance", "function"]

IDENTIFIER_SEPARATOR = ", "
EXAMPLE_SCHEMA = 1


@dataclass(frozen=True)
class ExampleMeta:
    source_dataset: str = ""
    n_candidates: int | None = None
    n_turns: int | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "source_dataset": self.source_dataset,
            "n_candidates": self.n_candidates,
            "n_turns": self.n_turns,
        }

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> "ExampleMeta":
        return cls(
            source_dataset=raw.get("source_dataset", ""),
            n_candidates=raw.get("n_candidates"),
            n_turns=raw.get("n_turns"),
        )


@dataclass(frozen=True)
class TrainingExample:
    task: TaskKind
    messages: tuple[ChatMessage, ...]
    meta: ExampleMeta = field(default_factory=ExampleMeta)

    def to_json(self) -> dict[str, Any]:
        return {
            "schema": EXAMPLE_SCHEMA,
            "task": self.task,
            "messages": [m.to_json() for m in self.messages],
            "meta": self.meta.to_json(),
        }

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> "TrainingExample":
        return cls(
            task=raw["task"],
            messages=tuple(ChatMessage.from_json(m) for m in raw["messages"]),
            meta=ExampleMeta.from_json(raw.get("meta") or {}),
        )


# ---------------------------------------------------------------------------
# Formatters
# ---------------------------------------------------------------------------


def format_understanding(
    doc: ToolDoc,
    gold_fn: str,
    *,
    source_dataset: str = "",
    analyzer: SyntaxAnalyzer | None = None,
    template_dir: str | Path | None = None,
) -> TrainingExample:
    """(documentation -> function) example; the gold must pass the signature check."""
    report = check_syntax(FunctionSource(definition_text=gold_fn), doc, analyzer)
    if not report.ok:
        raise GoldRejected(f"gold function for {doc.name!r} rejected: {report.summary()}")
    return TrainingExample(
        task="understanding",
        messages=(
            ChatMessage(role="system", content=instruction_text("encapsulate", template_dir)),
            ChatMessage(role="user", content=doc.render_text()),
            ChatMessage(role="assistant", content=gold_fn),
        ),
        meta=ExampleMeta(source_dataset=source_dataset),
    )


def _candidate_line(record: FunctionRecord) -> str:
    doc = record.docstring.strip().splitlines()
    summary = doc[0] if doc else "(no docstring)"
    return f"- {record.name}: {summary}"


def format_relevance(
    query: str,
    candidates: list[FunctionRecord],
    gold_names: list[str],
    *,
    source_dataset: str = "",
    template_dir: str | Path | None = None,
) -> TrainingExample:
    """(query + candidates -> concatenated gold identifiers) example."""
    if not candidates:
        raise ValueError("relevance example needs a non-empty candidate list")
    names = {r.name for r in candidates}
    for gold in gold_names:
        if gold not in names:
            raise GoldNotInCandidates(gold)
    listing = "\n".join(_candidate_line(r) for r in candidates)
    user = f"Query: {query}\nCandidate functions:\n{listing}"
    return TrainingExample(
        task="relevance",
        messages=(
            ChatMessage(role="system", content=instruction_text("relevance", template_dir)),
            ChatMessage(role="user", content=user),
            ChatMessage(role="assistant", content=IDENTIFIER_SEPARATOR.join(gold_names)),
        ),
        meta=ExampleMeta(source_dataset=source_dataset, n_candidates=len(candidates)),
    )


@dataclass(frozen=True)
class TrajectoryStep:
    program: str
    env_result: str
    error: bool = False


def _program_calls(program: str, known: set[str]) -> list[tuple[str, dict[str, Any] | None]]:
    """Known-function calls in a program, with literal kwargs when extractable."""
    try:
        tree = ast.parse(program)
    except SyntaxError:
        return []
    calls: list[tuple[str, dict[str, Any] | None]] = []
    for node in ast.walk(tree):
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
            if node.func.id not in known:
                continue
            args: dict[str, Any] | None = {}
            for kw in node.keywords:
                try:
                    args[kw.arg or "**"] = ast.literal_eval(kw.value)
                except (ValueError, SyntaxError):
                    args = None
                    break
            if args is not None and node.args:
                args = None  # positional args are not attributable to names
            calls.append((node.func.id, args))
    return calls


def format_function(
    query: str,
    functions: list[FunctionRecord],
    trajectory: list[TrajectoryStep],
    *,
    source_dataset: str = "",
    gold_calls: list[tuple[str, dict[str, Any]]] | None = None,
    strict_gold: bool = False,
    template_dir: str | Path | None = None,
) -> TrainingExample:
    """Multi-turn (program, environment result) example with corpus filters.

    Filters: any empty environment result; a trajectory whose final step is
    an error (the unsolvable-query proxy); and, when a gold solution is given
    with strict_gold, called tools that differ from it.
    """
    if not trajectory:
        raise ValueError("trajectory must not be empty")
    for step in trajectory:
        if not step.env_result.strip():
            raise FilteredOut("empty_tool_response")
    if trajectory[-1].error:
        raise FilteredOut("unsolvable_query")

    if strict_gold and gold_calls is not None:
        known = {f.name for f in functions}
        observed: list[tuple[str, dict[str, Any] | None]] = []
        for step in trajectory:
            observed.extend(_program_calls(step.program, known))
        if Counter(n for n, _ in observed) != Counter(n for n, _ in gold_calls):
            raise FilteredOut("bad_params")
        gold_by_name: dict[str, list[dict[str, Any]]] = {}
        for name, args in gold_calls:
            gold_by_name.setdefault(name, []).append(args)
        for name, args in observed:
            if args is None:
                continue  # non-literal arguments are not comparable
            if not any(args == g for g in gold_by_name.get(name, [])):
                raise FilteredOut("bad_params")

    listing = "\n\n".join(f.source for f in functions)
    messages: list[ChatMessage] = [
        ChatMessage(role="system", content=instruction_text("program", template_dir)),
        ChatMessage(role="user", content=f"Available functions:\n{listing}\n\nQuery: {query}"),
    ]
    for step in trajectory:
        messages.append(ChatMessage(role="assistant", content=f"```python\n{step.program}\n```"))
        messages.append(ChatMessage(role="environment", content=f"```\n{step.env_result}\n```"))
    return TrainingExample(
        task="function",
        messages=tuple(messages),
        meta=ExampleMeta(source_dataset=source_dataset, n_turns=len(trajectory)),
    )


# ---------------------------------------------------------------------------
# Shape validation
# ---------------------------------------------------------------------------


def validate_example(example: TrainingExample) -> list[str]:
    """Machine-checkable shape rules per task; empty list means valid."""
    problems: list[str] = []
    msgs = example.messages
    if not msgs or msgs[0].role != "system":
        problems.append("must begin with a system instruction")
        return problems
    roles = [m.role for m in msgs[1:]]
    if example.task == "understanding":
        if roles != ["user", "assistant"]:
            problems.append(f"understanding shape is [system,user,assistant], got {roles}")
    elif example.task == "relevance":
        if roles != ["user", "assistant"]:
            problems.append(f"relevance shape is [system,user,assistant], got {roles}")
        elif "\n" in msgs[-1].content:
            problems.append("relevance target must be a single concatenated identifier line")
    elif example.task == "function":
        if not roles or roles[0] != "user":
            problems.append("function example needs a user query after the system message")
        else:
            pairs = roles[1:]
            if not pairs or len(pairs) % 2 != 0:
                problems.append("function example must hold (assistant, environment) pairs")
            else:
                for i in range(0, len(pairs), 2):
                    if pairs[i] != "assistant" or pairs[i + 1] != "environment":
                        problems.append("turns must alternate assistant/environment")
                        break
            declared = example.meta.n_turns
            if declared is not None and declared * 2 != len(pairs):
                problems.append(f"meta.n_turns={declared} does not match {len(pairs) // 2} turns")
    else:
        problems.append(f"unknown task {example.task!r}")
    return problems


# ---------------------------------------------------------------------------
# Corpus statistics and IO
# ---------------------------------------------------------------------------


def _ws_tokens(text: str) -> int:
    return len(text.split())


def corpus_stats(examples: list[TrainingExample]) -> dict[str, float]:
    """Table of corpus statistics (whitespace-token lengths, per example)."""
    if not examples:
        return {
            "count": 0,
            "avg_input_len": 0.0,
            "avg_output_len": 0.0,
            "avg_candidates": 0.0,
            "avg_turns": 0.0,
        }
    inputs: list[int] = []
    outputs: list[int] = []
    candidates: list[int] = []
    turns: list[int] = []
    for ex in examples:
        inputs.append(sum(_ws_tokens(m.content) for m in ex.messages if m.role != "assistant"))
        outputs.append(sum(_ws_tokens(m.content) for m in ex.messages if m.role == "assistant"))
        if ex.meta.n_candidates is not None:
            candidates.append(ex.meta.n_candidates)
        if ex.meta.n_turns is not None:
            turns.append(ex.meta.n_turns)
    return {
        "count": len(examples),
        "avg_input_len": sum(inputs) / len(inputs),
        "avg_output_len": sum(outputs) / len(outputs),
        "avg_candidates": (sum(candidates) / len(candidates)) if candidates else 0.0,
        "avg_turns": (sum(turns) / len(turns)) if turns else 0.0,
    }


def write_examples(examples: Iterable[TrainingExample], path: str | Path) -> int:
    count = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json(), ensure_ascii=False) + "\n")
            count += 1
    return count


def read_examples(path: str | Path) -> list[TrainingExample]:
    out: list[TrainingExample] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(TrainingExample.from_json(json.loads(line)))
    return out
