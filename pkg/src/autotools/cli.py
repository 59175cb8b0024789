"""Command-line entry point.

Subcommands cover the full workflow: `encapsulate` documentation into a
library, `verify` it against the sandbox, `solve` a query, `eval` a
benchmark, `synth` training data, and `mock-serve` the local tool fixture.
Every flag can also be set in an `autotools.toml` next to the working
directory (per-subcommand tables, underscore keys); explicit flags win.

Exit codes: 0 success, 1 operational failure, 2 usage error.
"""

from __future__ import annotations

import functools
import hashlib
import json
import shlex
import sys
from pathlib import Path
from typing import Any, Callable

import click

from . import datasynth
from .agent import run_session
from .diagnostics import Diagnostics
from .docmodel import load_toolset, parse_tool_doc, toolset_digest
from .encapsulator import encapsulate_tool
from .errors import AutoToolsError
from .evalharness import (
    AnswerRegexJudge,
    EvalConfig,
    Judge,
    ModelJudge,
    ScriptedJudge,
    load_benchmark,
    run_eval,
)
from .execbridge import ExecutionBridge, StubBridge, WorkerBridge
from .funclib import FunctionLibrary, FunctionRecord, load_library, save_library
from .llmgateway import (
    Backend,
    Gateway,
    LiveBackend,
    ReplayBackend,
    ScriptedBackend,
    templates_digest,
)
from .mocktools import MockToolService
from .verifier import run_integration_verification

CONFIG_FILENAME = "autotools.toml"


def _load_default_map() -> dict[str, Any]:
    path = Path(CONFIG_FILENAME)
    if not path.exists():
        return {}
    try:
        import tomllib  # type: ignore[import-not-found]
    except ModuleNotFoundError:
        import tomli as tomllib  # type: ignore[no-redef]
    with path.open("rb") as fh:
        return tomllib.load(fh)


def build_backend(spec: str) -> Backend:
    scheme, _, arg = spec.partition(":")
    if scheme == "scripted":
        if not arg:
            raise click.UsageError("--backend scripted:<path> needs a script file")
        return ScriptedBackend.from_file(arg)
    if scheme == "replay":
        if not arg:
            raise click.UsageError("--backend replay:<path> needs a recorded log")
        return ReplayBackend.from_file(arg)
    if scheme == "live":
        return LiveBackend(model=arg or None)
    raise click.UsageError(f"unknown backend spec {spec!r} (scripted:/replay:/live)")


def build_bridge(spec: str) -> ExecutionBridge:
    scheme, _, arg = spec.partition(":")
    if scheme == "stub":
        return StubBridge()
    if scheme == "worker":
        return WorkerBridge(shlex.split(arg) if arg else None)
    raise click.UsageError(f"unknown bridge spec {spec!r} (stub or worker[:cmd])")


def build_judge(spec: str | None, gateway: Gateway) -> Judge | None:
    if not spec:
        return None
    scheme, _, arg = spec.partition(":")
    if scheme == "answer_regex":
        return AnswerRegexJudge(json.loads(Path(arg).read_text(encoding="utf-8")))
    if scheme == "scripted":
        return ScriptedJudge(json.loads(Path(arg).read_text(encoding="utf-8")))
    if scheme == "model":
        return ModelJudge(gateway)
    raise click.UsageError(f"unknown judge spec {spec!r}")


def operational(fn: Callable[..., Any]) -> Callable[..., Any]:
    """Convert domain/IO failures into exit code 1."""

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return fn(*args, **kwargs)
        except (AutoToolsError, OSError, json.JSONDecodeError) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _echo(payload: dict[str, Any], as_json: bool, human: str) -> None:
    if as_json:
        click.echo(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=True))
    else:
        click.echo(human)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def cli() -> None:
    """Tool-agent workflow: encapsulate, verify, solve, evaluate, synthesize."""


@cli.command()
@click.option("--docs", required=True, type=click.Path(exists=True), help="Toolset file or directory.")
@click.option("--out", required=True, type=click.Path(), help="Library output directory.")
@click.option("--backend", default="live", show_default=True, help="scripted:<path> | replay:<path> | live[:model]")
@click.option("--retries", default=3, show_default=True, type=click.IntRange(min=1), help="Attempts per tool.")
@click.option("--seed", default=None, type=int, help="Seed for the optional toolset permutation.")
@click.option("--permute", is_flag=True, help="Shuffle toolset order with --seed.")
@click.option("--template-dir", default=None, type=click.Path(exists=True))
@click.option("--log", "log_path", default=None, type=click.Path(), help="Gateway JSONL log file.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable stdout.")
@operational
def encapsulate(
    docs: str,
    out: str,
    backend: str,
    retries: int,
    seed: int | None,
    permute: bool,
    template_dir: str | None,
    log_path: str | None,
    as_json: bool,
) -> None:
    """Turn raw tool documentation into a syntax-checked function library."""
    diagnostics = Diagnostics()
    toolset = load_toolset(docs, diagnostics)
    if permute:
        toolset = toolset.permuted(seed if seed is not None else 0)
    gateway = Gateway(build_backend(backend), log_path=log_path)

    lib = FunctionLibrary(
        created_with={
            "backend_id": gateway.backend.backend_id,
            "templates": templates_digest(template_dir),
        },
        toolset_hash=toolset_digest(toolset),
    )
    attempts_total = 0
    tokens_total = 0
    for doc in toolset:
        outcome = encapsulate_tool(
            doc,
            gateway,
            retry_budget=retries,
            template_dir=template_dir,
            diagnostics=diagnostics,
        )
        attempts_total += outcome.attempts
        tokens_total += outcome.tokens_spent
        if outcome.record is not None:
            lib.add(outcome.record)
        else:
            lib.add(
                FunctionRecord(
                    name=doc.name,
                    source="",
                    status="Failed",
                    origin_doc=doc,
                ).failed(outcome.failure_reason or "encapsulation failed")
            )
    save_library(lib, out)

    counts = lib.counts()
    summary = {
        "total": len(toolset),
        "encapsulated": counts["SyntaxChecked"] + counts["Verified"],
        "failed": counts["Failed"],
        "avg_attempts": attempts_total / max(len(toolset), 1),
        "avg_tokens": tokens_total / max(len(toolset), 1),
        "library": str(out),
        "diagnostics": len(diagnostics),
    }
    _echo(
        summary,
        as_json,
        "tools total        {total}\n"
        "encapsulated       {encapsulated}\n"
        "failed             {failed}\n"
        "avg attempts/tool  {avg_attempts:.2f}\n"
        "avg tokens/tool    {avg_tokens:.1f}\n"
        "library written to {library}".format(**summary),
    )


@cli.command()
@click.option("--lib", "lib_path", required=True, type=click.Path(exists=True))
@click.option("--backend", default="live", show_default=True)
@click.option("--max-iterations", default=4, show_default=True, type=click.IntRange(min=1))
@click.option("--bridge", "bridge_spec", default="stub", show_default=True, help="stub or worker[:cmd]")
@click.option("--timeout-ms", default=30000, show_default=True, type=int)
@click.option("--rate-limit", default=2.0, show_default=True, type=float,
              help="Max instance executions per second (0 disables pacing).")
@click.option("--checkpoint", default=None, type=click.Path())
@click.option("--template-dir", default=None, type=click.Path(exists=True))
@click.option("--log", "log_path", default=None, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
@operational
def verify(
    lib_path: str,
    backend: str,
    max_iterations: int,
    bridge_spec: str,
    timeout_ms: int,
    rate_limit: float,
    checkpoint: str | None,
    template_dir: str | None,
    log_path: str | None,
    as_json: bool,
) -> None:
    """Run integration verification over a syntax-checked library, in place."""
    diagnostics = Diagnostics()
    lib = load_library(lib_path)
    gateway = Gateway(build_backend(backend), log_path=log_path)
    bridge = build_bridge(bridge_spec)
    pending = [r for r in lib.records.values() if r.status == "SyntaxChecked"]
    try:
        verified, failures = run_integration_verification(
            pending,
            gateway,
            bridge,
            max_iterations=max_iterations,
            timeout_ms=timeout_ms,
            template_dir=template_dir,
            checkpoint_path=checkpoint,
            diagnostics=diagnostics,
            rate_limit_per_s=rate_limit or None,
        )
    finally:
        bridge.shutdown()
    for record in verified:
        lib.replace(record)
    for record, reason in failures:
        lib.replace(record.failed(reason))
    save_library(lib, lib_path)

    summary = {
        "attempted": len(pending),
        "verified": len(verified),
        "failed": len(failures),
        "failures": {r.name: reason for r, reason in failures},
        "library": str(lib_path),
    }
    _echo(
        summary,
        as_json,
        "attempted {attempted}\nverified  {verified}\nfailed    {failed}".format(**summary),
    )


@cli.command()
@click.option("--lib", "lib_path", required=True, type=click.Path(exists=True))
@click.option("--query", required=True)
@click.option("--backend", default="live", show_default=True)
@click.option("--max-turns", default=5, show_default=True, type=click.IntRange(min=1))
@click.option("--bridge", "bridge_spec", default="stub", show_default=True)
@click.option("--timeout-ms", default=30000, show_default=True, type=int)
@click.option("--runs-dir", default="runs", show_default=True, type=click.Path())
@click.option("--template-dir", default=None, type=click.Path(exists=True))
@click.option("--log", "log_path", default=None, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
@operational
def solve(
    lib_path: str,
    query: str,
    backend: str,
    max_turns: int,
    bridge_spec: str,
    timeout_ms: int,
    runs_dir: str,
    template_dir: str | None,
    log_path: str | None,
    as_json: bool,
) -> None:
    """Answer one query with a tool-programming session."""
    lib = load_library(lib_path)
    gateway = Gateway(build_backend(backend), log_path=log_path)
    bridge = build_bridge(bridge_spec)
    try:
        bridge.load_functions([(r.name, r.source) for r in lib.verified_records()])
        transcript = run_session(
            query,
            lib,
            bridge,
            gateway,
            max_turns=max_turns,
            timeout_ms=timeout_ms,
            template_dir=template_dir,
        )
    finally:
        bridge.shutdown()

    run_id = hashlib.sha1(query.encode("utf-8")).hexdigest()[:12]
    runs = Path(runs_dir)
    runs.mkdir(parents=True, exist_ok=True)
    transcript.save(runs / f"{run_id}.json")

    if as_json:
        click.echo(json.dumps(transcript.to_json(), indent=2, sort_keys=True, ensure_ascii=True))
    else:
        click.echo(f"termination: {transcript.termination} (turns: {len(transcript.turns)})")
        if transcript.final_answer is not None:
            click.echo(f"answer: {transcript.final_answer}")
        click.echo(f"transcript: {runs / (run_id + '.json')}")
    if transcript.termination in ("backend_failure", "bridge_failure"):
        sys.exit(1)


@cli.command("eval")
@click.option("--benchmark", required=True, type=click.Path(exists=True))
@click.option("--lib", "lib_path", required=True, type=click.Path(exists=True))
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--backend", default="live", show_default=True)
@click.option("--mode", default="name", show_default=True, type=click.Choice(["name", "strict"]))
@click.option("--judge", "judge_spec", default=None, help="answer_regex:<file> | scripted:<file> | model")
@click.option("--max-turns", default=5, show_default=True, type=click.IntRange(min=1))
@click.option("--parallel", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("--bridge", "bridge_spec", default="stub", show_default=True)
@click.option("--timeout-ms", default=30000, show_default=True, type=int)
@click.option("--runs-dir", default=None, type=click.Path())
@click.option("--template-dir", default=None, type=click.Path(exists=True))
@click.option("--log", "log_path", default=None, type=click.Path())
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--json", "as_json", is_flag=True)
@operational
def eval_cmd(
    benchmark: str,
    lib_path: str,
    report_path: str,
    backend: str,
    mode: str,
    judge_spec: str | None,
    max_turns: int,
    parallel: int,
    bridge_spec: str,
    timeout_ms: int,
    runs_dir: str | None,
    template_dir: str | None,
    log_path: str | None,
    seed: int,
    as_json: bool,
) -> None:
    """Run a benchmark and write the metrics report (JSON + CSV)."""
    del seed  # reserved for future sampling; permutations happen in encapsulate
    diagnostics = Diagnostics()
    tasks = load_benchmark(benchmark, diagnostics)
    lib = load_library(lib_path)
    gateway = Gateway(build_backend(backend), log_path=log_path)
    config = EvalConfig(
        max_turns=max_turns,
        mode=mode,  # type: ignore[arg-type]
        judge=build_judge(judge_spec, gateway),
        parallel=parallel,
        timeout_ms=timeout_ms,
        template_dir=template_dir,
        runs_dir=runs_dir,
    )
    report = run_eval(
        tasks,
        lib,
        gateway,
        bridge_factory=lambda task: build_bridge(bridge_spec),
        config=config,
        diagnostics=diagnostics,
    )
    report.write(report_path)

    payload = report.to_json()
    agg = payload["aggregate"]
    human = "tasks: {tasks:.0f}\nsuccess: {success:.2f}\npath:    {path_rate:.2f}\nprecision: {precision:.2f}".format(
        **agg
    )
    if "pass_rate" in agg:
        human += f"\npass rate: {agg['pass_rate']:.2f}"
    _echo(payload, as_json, human + f"\nreport: {report_path}")


@cli.command()
@click.option("--task", required=True, type=click.Choice(["understanding", "relevance", "function"]))
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--strict-gold", is_flag=True, help="Reject trajectories whose calls differ from the gold solution.")
@click.option("--template-dir", default=None, type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True)
@operational
def synth(
    task: str,
    in_path: str,
    out_path: str,
    strict_gold: bool,
    template_dir: str | None,
    as_json: bool,
) -> None:
    """Reformat generic records (JSON lines) into training examples.

    Input schemas, one JSON object per line:

    \b
    understanding: {"doc": {...tool document...}, "function": "def ..."}
    relevance:     {"query": str, "candidates": [{"name", "source"}], "gold": [names]}
    function:      {"query": str, "functions": [{"name", "source"}],
                    "trajectory": [{"program", "result", "error"?}],
                    "gold_calls": [{"tool", "args"}]?}
    """
    records = [
        json.loads(line)
        for line in Path(in_path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    accepted: list[datasynth.TrainingExample] = []
    rejected: dict[str, int] = {}

    def reject(reason: str) -> None:
        rejected[reason] = rejected.get(reason, 0) + 1

    for raw in records:
        try:
            if task == "understanding":
                example = datasynth.format_understanding(
                    parse_tool_doc(raw["doc"]),
                    raw["function"],
                    source_dataset=raw.get("source_dataset", ""),
                    template_dir=template_dir,
                )
            elif task == "relevance":
                candidates = [
                    FunctionRecord(name=c["name"], source=c.get("source", f"def {c['name']}(): ..."))
                    for c in raw["candidates"]
                ]
                example = datasynth.format_relevance(
                    raw["query"],
                    candidates,
                    list(raw["gold"]),
                    source_dataset=raw.get("source_dataset", ""),
                    template_dir=template_dir,
                )
            else:
                functions = [
                    FunctionRecord(name=f["name"], source=f.get("source", f"def {f['name']}(): ..."))
                    for f in raw.get("functions", [])
                ]
                trajectory = [
                    datasynth.TrajectoryStep(
                        program=step["program"],
                        env_result=step.get("result", ""),
                        error=bool(step.get("error", False)),
                    )
                    for step in raw["trajectory"]
                ]
                gold_calls = [
                    (g["tool"], dict(g.get("args") or {})) for g in raw.get("gold_calls") or []
                ] or None
                example = datasynth.format_function(
                    raw["query"],
                    functions,
                    trajectory,
                    source_dataset=raw.get("source_dataset", ""),
                    gold_calls=gold_calls,
                    strict_gold=strict_gold,
                    template_dir=template_dir,
                )
        except AutoToolsError as exc:
            reject(getattr(exc, "reason", type(exc).__name__))
            continue
        problems = datasynth.validate_example(example)
        if problems:
            reject("invalid_shape")
            continue
        accepted.append(example)

    datasynth.write_examples(accepted, out_path)
    stats = datasynth.corpus_stats(accepted)
    summary = {"accepted": len(accepted), "rejected": rejected, "stats": stats, "out": str(out_path)}
    _echo(
        summary,
        as_json,
        f"accepted {len(accepted)} examples, rejected {sum(rejected.values())} "
        f"({', '.join(f'{k}={v}' for k, v in sorted(rejected.items())) or 'none'})\n"
        + "\n".join(f"{k}: {v}" for k, v in stats.items()),
    )


@cli.command("mock-serve")
@click.option("--port", default=8765, show_default=True, type=int)
@operational
def mock_serve(port: int) -> None:
    """Serve the local mock tool endpoints in the foreground."""
    service = MockToolService(port=port)
    click.echo(f"mock tool service listening on {service.base_url}")
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        service.stop()


def main() -> None:
    cli(default_map=_load_default_map())


if __name__ == "__main__":
    main()
