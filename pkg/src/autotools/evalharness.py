"""Benchmark harness: load tasks, run sessions, score tool paths.

Metrics per task, over the model's traced tool calls C against the ground
truth set gt (deduplicated names by default, (name, canonical args) pairs in
strict mode):

  success   = 1 iff gt is fully covered by set(C)
  path_rate = |set(C) ∩ gt| / |gt|
  precision = |set(C) ∩ gt| / |C|   (0 when C is empty)

Success and path use the deduplicated set; precision keeps the raw multiset
in its denominator so repeated calls keep costing. An optional judge adds a
pass/fail verdict on the final answer.
"""

from __future__ import annotations

import csv
import io
import json
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Literal

from .agent import SessionTranscript, run_session
from .diagnostics import Diagnostics, emit
from .errors import JudgeUnavailable, TaskSchemaError
from .execbridge import ExecutionBridge, StubBridge, ToolCall
from .funclib import FunctionLibrary
from .llmgateway import ChatMessage, CompletionRequest, Gateway

MetricsMode = Literal["name", "strict"]


@dataclass(frozen=True)
class BenchmarkTask:
    id: str
    query: str
    gt_solution: tuple[tuple[str, dict[str, Any]], ...]
    gt_tools: frozenset[str]
    candidate_tools: tuple[str, ...]
    base_url: str | None = None

    def __post_init__(self) -> None:
        solution_names = frozenset(name for name, _ in self.gt_solution)
        if not self.gt_solution:
            raise TaskSchemaError(self.id, "gt_solution must not be empty")
        if self.gt_tools != solution_names:
            raise TaskSchemaError(
                self.id, "gt_tools must equal the set of names in gt_solution"
            )
        if not solution_names <= set(self.candidate_tools):
            raise TaskSchemaError(self.id, "candidate_tools must cover gt_tools")

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "query": self.query,
            "base_url": self.base_url,
            "gt_solution": [{"tool": n, "args": a} for n, a in self.gt_solution],
            "gt_tools": sorted(self.gt_tools),
            "candidate_tools": list(self.candidate_tools),
        }


def task_from_json(raw: dict[str, Any]) -> BenchmarkTask:
    task_id = str(raw.get("id", "?"))
    try:
        solution = tuple(
            (entry["tool"], dict(entry.get("args") or {})) for entry in raw["gt_solution"]
        )
    except (KeyError, TypeError) as exc:
        raise TaskSchemaError(task_id, f"malformed gt_solution: {exc}") from exc
    gt_tools = raw.get("gt_tools")
    if gt_tools is None:
        gt_tools = sorted({name for name, _ in solution})
    candidates = raw.get("candidate_tools") or sorted({name for name, _ in solution})
    if "query" not in raw or "id" not in raw:
        raise TaskSchemaError(task_id, "missing id or query")
    return BenchmarkTask(
        id=task_id,
        query=raw["query"],
        gt_solution=solution,
        gt_tools=frozenset(gt_tools),
        candidate_tools=tuple(candidates),
        base_url=raw.get("base_url"),
    )


def load_benchmark(path: str | Path, diagnostics: Diagnostics | None = None) -> list[BenchmarkTask]:
    """Load tasks from a JSON file (list) or a directory of JSON files."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no benchmark at {path}")
    raw_tasks: list[dict[str, Any]] = []
    if path.is_dir():
        for f in sorted(path.glob("*.json")):
            raw = json.loads(f.read_text(encoding="utf-8"))
            raw_tasks.extend(raw if isinstance(raw, list) else [raw])
    else:
        raw = json.loads(path.read_text(encoding="utf-8"))
        raw_tasks = raw if isinstance(raw, list) else [raw]
    if not raw_tasks:
        emit(diagnostics, "evalharness", "empty_benchmark", f"{path} holds zero tasks")
        return []
    return [task_from_json(r) for r in raw_tasks]


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def extract_tool_calls(transcript: SessionTranscript) -> list[ToolCall]:
    """All traced calls across turns, in turn order, duplicates preserved."""
    calls: list[ToolCall] = []
    for turn in transcript.turns:
        calls.extend(turn.result.tool_trace)
    return calls


def _canonical_number(value: Any) -> Any:
    if isinstance(value, bool):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return value


def canonicalize_args(args: dict[str, Any]) -> str:
    """Stable form for strict comparison: sorted keys, normalized numbers."""

    def norm(value: Any) -> Any:
        if isinstance(value, dict):
            return {k: norm(v) for k, v in sorted(value.items())}
        if isinstance(value, list):
            return [norm(v) for v in value]
        return _canonical_number(value)

    return json.dumps(norm(args), sort_keys=True, ensure_ascii=True)


@dataclass(frozen=True)
class TaskMetrics:
    success: int
    path_rate: float
    precision: float

    def to_json(self) -> dict[str, Any]:
        return {"success": self.success, "path_rate": self.path_rate, "precision": self.precision}


def compute_metrics(
    calls: list[ToolCall], task: BenchmarkTask, mode: MetricsMode = "name"
) -> TaskMetrics:
    if mode == "name":
        observed: list[Any] = [c.name for c in calls]
        gt: set[Any] = set(task.gt_tools)
    else:
        observed = [(c.name, canonicalize_args(c.args)) for c in calls]
        gt = {(name, canonicalize_args(args)) for name, args in task.gt_solution}

    distinct = set(observed)
    success = 1 if gt <= distinct else 0
    path_rate = len(distinct & gt) / len(gt)
    precision = (len(distinct & gt) / len(observed)) if observed else 0.0
    return TaskMetrics(success=success, path_rate=path_rate, precision=precision)


# ---------------------------------------------------------------------------
# Judges
# ---------------------------------------------------------------------------


class Judge:
    """Pluggable pass/fail predicate over a finished transcript."""

    identity = "none"

    def verdict(self, transcript: SessionTranscript, task: BenchmarkTask) -> int:
        raise NotImplementedError


class AnswerRegexJudge(Judge):
    def __init__(self, patterns: dict[str, str]) -> None:
        self._patterns = patterns
        self.identity = "answer_regex"

    def verdict(self, transcript: SessionTranscript, task: BenchmarkTask) -> int:
        pattern = self._patterns.get(task.id)
        if pattern is None:
            raise JudgeUnavailable(f"no answer pattern for task {task.id!r}")
        if transcript.final_answer is None:
            return 0
        return 1 if re.search(pattern, transcript.final_answer) else 0


class ScriptedJudge(Judge):
    def __init__(self, table: dict[str, int]) -> None:
        self._table = table
        self.identity = "scripted"

    def verdict(self, transcript: SessionTranscript, task: BenchmarkTask) -> int:
        if task.id not in self._table:
            raise JudgeUnavailable(f"scripted judge has no entry for task {task.id!r}")
        return int(self._table[task.id])


class ModelJudge(Judge):
    """Backend-graded: asks for a single PASS/FAIL token."""

    def __init__(self, gateway: Gateway) -> None:
        self._gateway = gateway
        self.identity = "model"

    def verdict(self, transcript: SessionTranscript, task: BenchmarkTask) -> int:
        answer = transcript.final_answer or "(no final answer)"
        messages = (
            ChatMessage(
                role="system",
                content="Grade whether the answer completes the task. Reply PASS or FAIL only.",
            ),
            ChatMessage(role="user", content=f"Task: {task.query}\nAnswer: {answer}"),
        )
        try:
            response = self._gateway.complete(
                CompletionRequest(messages=messages, tag="judge", key=task.id, max_tokens=8)
            )
        except Exception as exc:
            raise JudgeUnavailable(f"model judge backend failed: {exc}") from exc
        return 1 if "PASS" in response.text.upper() else 0


def judge_pass(transcript: SessionTranscript, task: BenchmarkTask, judge: Judge) -> int:
    return judge.verdict(transcript, task)


# ---------------------------------------------------------------------------
# Batch evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalConfig:
    max_turns: int = 5
    mode: MetricsMode = "name"
    judge: Judge | None = None
    parallel: int = 1
    temperature: float = 0.0
    max_tokens: int = 2048
    timeout_ms: int | None = 30_000
    template_dir: str | Path | None = None
    runs_dir: str | Path | None = None


@dataclass
class MetricsReport:
    per_task: dict[str, dict[str, Any]] = field(default_factory=dict)
    aggregate: dict[str, float] = field(default_factory=dict)
    mode: str = "name"
    judge_identity: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "per_task": {k: self.per_task[k] for k in sorted(self.per_task)},
            "aggregate": self.aggregate,
            "mode": self.mode,
            "judge": self.judge_identity,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        fields = ["id", "success", "path_rate", "precision", "pass", "termination", "turns"]
        writer = csv.DictWriter(buf, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for task_id in sorted(self.per_task):
            writer.writerow({"id": task_id, **self.per_task[task_id]})
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.write_text(
            json.dumps(self.to_json(), indent=2, sort_keys=True, ensure_ascii=True) + "\n",
            encoding="utf-8",
        )
        path.with_suffix(".csv").write_text(self.to_csv(), encoding="utf-8")


def _aggregate(per_task: dict[str, dict[str, Any]]) -> dict[str, float]:
    if not per_task:
        return {"success": 0.0, "path_rate": 0.0, "precision": 0.0, "tasks": 0.0}
    rows = list(per_task.values())
    out = {
        "success": 100.0 * sum(r["success"] for r in rows) / len(rows),
        "path_rate": 100.0 * sum(r["path_rate"] for r in rows) / len(rows),
        "precision": 100.0 * sum(r["precision"] for r in rows) / len(rows),
        "tasks": float(len(rows)),
    }
    judged = [r["pass"] for r in rows if r.get("pass") is not None]
    if judged:
        out["pass_rate"] = 100.0 * sum(judged) / len(judged)
    return out


def run_eval(
    benchmark: list[BenchmarkTask],
    library: FunctionLibrary,
    gateway: Gateway,
    bridge_factory: Callable[[BenchmarkTask], ExecutionBridge] = lambda task: StubBridge(),
    config: EvalConfig | None = None,
    diagnostics: Diagnostics | None = None,
) -> MetricsReport:
    """One session per task; per-task failures never abort the batch."""
    config = config or EvalConfig()
    report = MetricsReport(
        mode=config.mode,
        judge_identity=config.judge.identity if config.judge else None,
    )
    if not benchmark:
        emit(diagnostics, "evalharness", "empty_benchmark", "nothing to evaluate")
        report.aggregate = _aggregate({})
        return report

    verified = set(library.verified_names())
    lock = threading.Lock()

    def one(task: BenchmarkTask) -> None:
        row: dict[str, Any]
        try:
            subset = [n for n in task.candidate_tools if n in verified]
            missing = [n for n in task.candidate_tools if n not in verified]
            bridge = bridge_factory(task)
            try:
                bridge.load_functions(
                    [(r.name, r.source) for r in library.verified_records() if r.name in subset]
                )
                transcript = run_session(
                    task.query,
                    library,
                    bridge,
                    gateway,
                    max_turns=config.max_turns,
                    temperature=config.temperature,
                    max_tokens=config.max_tokens,
                    timeout_ms=config.timeout_ms,
                    subset=subset,
                    session_label=task.id,
                    template_dir=config.template_dir,
                    diagnostics=diagnostics,
                )
            finally:
                bridge.shutdown()
            if config.runs_dir is not None:
                runs_dir = Path(config.runs_dir)
                runs_dir.mkdir(parents=True, exist_ok=True)
                transcript.save(runs_dir / f"{task.id}.json")
            calls = extract_tool_calls(transcript)
            metrics = compute_metrics(calls, task, config.mode)
            row = {
                **metrics.to_json(),
                "pass": None,
                "termination": transcript.termination,
                "turns": len(transcript.turns),
                "missing_tools": missing,
                "duration_ms": sum(t.result.duration_ms for t in transcript.turns),
            }
            if config.judge is not None:
                try:
                    row["pass"] = judge_pass(transcript, task, config.judge)
                except JudgeUnavailable as exc:
                    emit(diagnostics, "evalharness", "judge_unavailable", f"{task.id}: {exc}")
        except Exception as exc:  # noqa: BLE001 - per-task isolation
            emit(diagnostics, "evalharness", "task_failed", f"{task.id}: {exc}")
            row = {
                "success": 0,
                "path_rate": 0.0,
                "precision": 0.0,
                "pass": None,
                "termination": "harness_error",
                "turns": 0,
                "missing_tools": [],
                "duration_ms": 0,
                "error": str(exc),
            }
        with lock:
            report.per_task[task.id] = row

    if config.parallel > 1:
        with ThreadPoolExecutor(max_workers=config.parallel) as pool:
            list(pool.map(one, benchmark))
    else:
        for task in benchmark:
            one(task)

    report.aggregate = _aggregate(report.per_task)
    return report
