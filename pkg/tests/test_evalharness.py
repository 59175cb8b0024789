"""Benchmark loading, metric computation, judges, batch evaluation."""

from __future__ import annotations

import json
import random

import pytest
import requests

from autotools.agent import SessionTranscript, Turn
from autotools.diagnostics import Diagnostics
from autotools.errors import JudgeUnavailable, TaskSchemaError
from autotools.evalharness import (
    AnswerRegexJudge,
    BenchmarkTask,
    EvalConfig,
    ModelJudge,
    ScriptedJudge,
    compute_metrics,
    extract_tool_calls,
    judge_pass,
    load_benchmark,
    run_eval,
    task_from_json,
)
from autotools.execbridge import ExecutionResult, ToolCall
from autotools.mocktools import MockToolService

from conftest import make_gateway
from eval_fixture import make_eval_library, make_script, make_tasks
from oracles import oracle_metrics


def call(name: str, seq: int = 1, args: dict | None = None) -> ToolCall:
    return ToolCall(name=name, args=args or {}, result_kind="json_map", seq=seq)


def task(gt: list[str], *, args: dict | None = None) -> BenchmarkTask:
    solution = tuple((name, args or {}) for name in gt)
    return BenchmarkTask(
        id="task",
        query="q",
        gt_solution=solution,
        gt_tools=frozenset(gt),
        candidate_tools=tuple(sorted(set(gt)) + ["extra"]),
    )


class TestLoadBenchmark:
    def test_food_domain_example(self, tmp_path):
        # Six solution steps over three distinct tools, mirroring a recipe
        # search that chains equipment and ingredient lookups by recipe id.
        raw = {
            "id": "food-1",
            "query": "Find a steak recipe and a pasta recipe within the carb and "
            "protein bounds; which needs fewer equipment pieces and how many "
            "ingredients does it have?",
            "base_url": "https://recipes.example",
            "gt_solution": [
                {"tool": "GET_recipes_complexSearch", "args": {"query": "steak", "minCarbs": 5, "maxCarbs": 80, "minProtein": 5, "number": 1}},
                {"tool": "GET_recipes_complexSearch", "args": {"query": "pasta", "minCarbs": 5, "maxCarbs": 80, "minProtein": 5, "number": 1}},
                {"tool": "GET_recipes_equipmentWidget", "args": {"recipe_id": 1094259}},
                {"tool": "GET_recipes_ingredientWidget", "args": {"recipe_id": 1094259}},
                {"tool": "GET_recipes_equipmentWidget", "args": {"recipe_id": 532245}},
                {"tool": "GET_recipes_ingredientWidget", "args": {"recipe_id": 532245}},
            ],
            "gt_tools": [
                "GET_recipes_complexSearch",
                "GET_recipes_equipmentWidget",
                "GET_recipes_ingredientWidget",
            ],
            "candidate_tools": [
                "GET_recipes_complexSearch",
                "GET_recipes_equipmentWidget",
                "GET_recipes_ingredientWidget",
                "GET_recipes_similar",
            ],
        }
        (tmp_path / "food.json").write_text(json.dumps([raw]))
        tasks = load_benchmark(tmp_path / "food.json")
        assert len(tasks) == 1
        assert len(tasks[0].gt_solution) == 6
        assert len(tasks[0].gt_tools) == 3

    def test_gt_tools_mismatch_rejected(self):
        with pytest.raises(TaskSchemaError, match="gt_tools"):
            task_from_json(
                {
                    "id": "bad",
                    "query": "q",
                    "gt_solution": [{"tool": "a", "args": {}}],
                    "gt_tools": ["a", "phantom"],
                    "candidate_tools": ["a", "phantom"],
                }
            )

    def test_candidates_must_cover_gt(self):
        with pytest.raises(TaskSchemaError, match="candidate_tools"):
            task_from_json(
                {
                    "id": "bad",
                    "query": "q",
                    "gt_solution": [{"tool": "a", "args": {}}],
                    "gt_tools": ["a"],
                    "candidate_tools": ["b"],
                }
            )

    def test_empty_benchmark_warns(self, tmp_path):
        (tmp_path / "empty.json").write_text("[]")
        diag = Diagnostics()
        assert load_benchmark(tmp_path / "empty.json", diag) == []
        assert diag.of_kind("empty_benchmark")


class TestExtractToolCalls:
    def _transcript(self, traces: list[list[ToolCall]]) -> SessionTranscript:
        t = SessionTranscript(query="q")
        for i, trace in enumerate(traces, 1):
            t.turns.append(
                Turn(
                    index=i,
                    program="p",
                    result=ExecutionResult(status="ok", tool_trace=tuple(trace)),
                    raw_model_output="r",
                )
            )
        return t

    def test_concatenation_preserves_order_and_duplicates(self):
        t = self._transcript([[call("A")], [call("B"), call("A", seq=2)]])
        assert [c.name for c in extract_tool_calls(t)] == ["A", "B", "A"]

    def test_trace_before_failure_included(self):
        t = SessionTranscript(query="q")
        t.turns.append(
            Turn(
                index=1,
                program="p",
                result=ExecutionResult(
                    status="error",
                    error_payload=None
                    if False
                    else __import__("autotools.execbridge", fromlist=["ErrorPayload"]).ErrorPayload(
                        type="E", message="m"
                    ),
                    tool_trace=(call("A"),),
                ),
                raw_model_output="r",
            )
        )
        assert [c.name for c in extract_tool_calls(t)] == ["A"]

    def test_zero_turns(self):
        assert extract_tool_calls(SessionTranscript(query="q")) == []


class TestComputeMetrics:
    def test_hand_case_partial(self):
        metrics = compute_metrics([call("A", 1), call("C", 2), call("A", 3)], task(["A", "B"]))
        assert metrics.success == 0
        assert metrics.path_rate == 0.5
        assert metrics.precision == pytest.approx(1 / 3)

    def test_hand_case_perfect(self):
        metrics = compute_metrics([call("A")], task(["A"]))
        assert (metrics.success, metrics.path_rate, metrics.precision) == (1, 1.0, 1.0)

    def test_hand_case_empty_calls(self):
        metrics = compute_metrics([], task(["A", "B"]))
        assert (metrics.success, metrics.path_rate, metrics.precision) == (0, 0.0, 0.0)

    def test_success_iff_full_path(self):
        rng = random.Random(0)
        names = list("ABCDEF")
        for _ in range(200):
            gt = rng.sample(names, rng.randint(1, 4))
            calls = [call(rng.choice(names), i) for i in range(rng.randint(0, 8))]
            m = compute_metrics(calls, task(sorted(set(gt))))
            assert (m.success == 1) == (m.path_rate == 1.0)

    def test_permutation_invariance_in_name_mode(self):
        rng = random.Random(1)
        calls = [call(n, i) for i, n in enumerate("ABACAD")]
        t = task(["A", "B"])
        base = compute_metrics(calls, t)
        for _ in range(10):
            shuffled = calls[:]
            rng.shuffle(shuffled)
            assert compute_metrics(shuffled, t) == base

    def test_matches_oracle_on_random_instances(self):
        rng = random.Random(2)
        names = list("ABCDEFGH")
        for _ in range(300):
            gt = sorted(rng.sample(names, rng.randint(1, 6)))
            calls = [call(rng.choice(names), i) for i in range(rng.randint(0, 12))]
            m = compute_metrics(calls, task(gt))
            expected = oracle_metrics(list(gt), [c.name for c in calls])
            assert (m.success, m.path_rate, m.precision) == expected

    def test_strict_mode_distinguishes_args(self):
        t = task(["A"], args={"k": 1})
        right = [call("A", args={"k": 1})]
        wrong = [call("A", args={"k": 2})]
        assert compute_metrics(right, t, "strict").success == 1
        assert compute_metrics(wrong, t, "strict").success == 0

    def test_strict_mode_normalizes_numbers_and_key_order(self):
        t = task(["A"], args={"a": 1, "b": 2.0})
        observed = [call("A", args={"b": 2, "a": 1.0})]
        assert compute_metrics(observed, t, "strict").success == 1


class TestJudges:
    def _finished(self, answer: str | None) -> SessionTranscript:
        t = SessionTranscript(query="q")
        if answer is not None:
            t.termination = "finished"
            t.final_answer = answer
        return t

    def test_answer_regex_hit(self):
        judge = AnswerRegexJudge({"task": r"\b1094259\b"})
        assert judge_pass(self._finished("the id is 1094259."), task(["A"]), judge) == 1

    def test_turn_limit_fails_regex_judge(self):
        judge = AnswerRegexJudge({"task": r"\b1094259\b"})
        assert judge_pass(self._finished(None), task(["A"]), judge) == 0

    def test_scripted_judge_missing_task(self):
        judge = ScriptedJudge({"other": 1})
        with pytest.raises(JudgeUnavailable):
            judge_pass(self._finished("x"), task(["A"]), judge)

    def test_model_judge(self):
        gw = make_gateway({"judge": {"task": "PASS"}})
        judge = ModelJudge(gw)
        assert judge_pass(self._finished("done"), task(["A"]), judge) == 1


class TestRunEval:
    def test_cooperative_script_scores_hundred(self):
        report = run_eval(
            make_tasks(),
            make_eval_library(),
            make_gateway(make_script()),
            config=EvalConfig(max_turns=5),
        )
        assert report.aggregate["success"] == 100.0
        assert report.aggregate["path_rate"] == 100.0
        assert report.aggregate["tasks"] == 5.0

    def test_one_corrupted_call_drops_to_eighty(self):
        report = run_eval(
            make_tasks(),
            make_eval_library(),
            make_gateway(make_script(corrupt_task="t3")),
            config=EvalConfig(max_turns=5),
        )
        assert report.aggregate["success"] == 80.0
        assert report.per_task["t3"]["success"] == 0
        assert report.per_task["t3"]["path_rate"] < 1.0

    def test_empty_benchmark_ok_with_warning(self):
        diag = Diagnostics()
        report = run_eval([], make_eval_library(), make_gateway({}), diagnostics=diag)
        assert report.aggregate["tasks"] == 0.0
        assert diag.of_kind("empty_benchmark")

    def test_per_task_failure_does_not_abort_batch(self):
        # t1 has no scripted entries at all -> backend failure for that task only
        script = make_script()
        del script["program"]["t1:1"]
        del script["program"]["t1:2"]
        report = run_eval(
            make_tasks(), make_eval_library(), make_gateway(script), config=EvalConfig()
        )
        assert report.per_task["t1"]["success"] == 0
        assert report.aggregate["success"] == 80.0

    def test_parallel_matches_serial(self):
        serial = run_eval(
            make_tasks(), make_eval_library(), make_gateway(make_script()),
            config=EvalConfig(parallel=1),
        )
        parallel = run_eval(
            make_tasks(), make_eval_library(), make_gateway(make_script()),
            config=EvalConfig(parallel=4),
        )
        mask = lambda r: {k: {**v, "duration_ms": 0} for k, v in r.per_task.items()}
        assert mask(serial) == mask(parallel)
        assert serial.aggregate == parallel.aggregate

    def test_report_write_json_and_csv(self, tmp_path):
        report = run_eval(
            make_tasks(), make_eval_library(), make_gateway(make_script()),
            config=EvalConfig(),
        )
        report.write(tmp_path / "report.json")
        data = json.loads((tmp_path / "report.json").read_text())
        assert data["aggregate"]["success"] == 100.0
        csv_text = (tmp_path / "report.csv").read_text()
        assert csv_text.splitlines()[0] == "id,success,path_rate,precision,pass,termination,turns"
        assert len(csv_text.splitlines()) == 6

    def test_missing_tools_reported(self):
        lib = make_eval_library()
        del lib.records["wrong_tool"]
        report = run_eval(
            make_tasks(), lib, make_gateway(make_script()), config=EvalConfig()
        )
        assert report.per_task["t1"]["missing_tools"] == ["wrong_tool"]
        assert report.aggregate["success"] == 100.0


@pytest.fixture(scope="module")
def service():
    with MockToolService() as svc:
        yield svc


class TestMockToolService:
    def test_search_person(self, service):
        body = requests.get(f"{service.base_url}/search/person", params={"query": "Nolan"}).json()
        assert body["results"][0]["id"] == 525

    def test_credits_chain(self, service):
        body = requests.get(f"{service.base_url}/person/525/movie_credits").json()
        director_movies = [c for c in body["crew"] if c["job"] == "Director"]
        assert {m["title"] for m in director_movies} == {"Inception", "The Dark Knight"}

    def test_images(self, service):
        body = requests.get(f"{service.base_url}/movie/27205/images").json()
        assert body["posters"][0]["file_path"] == "/inception_a.jpg"

    def test_error_endpoint_mirrors_invalid_key_shape(self, service):
        body = requests.get(f"{service.base_url}/error/always").json()
        assert body["status_code"] == 7
        assert body["success"] is False

    def test_unknown_route_404(self, service):
        resp = requests.get(f"{service.base_url}/nope")
        assert resp.status_code == 404

    def test_deterministic_payloads(self, service):
        a = requests.get(f"{service.base_url}/search/person", params={"query": "greta"}).json()
        b = requests.get(f"{service.base_url}/search/person", params={"query": "greta"}).json()
        assert a == b
