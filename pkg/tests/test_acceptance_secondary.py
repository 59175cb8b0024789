"""Acceptance criteria that require the real worker.

Skipped entirely when the worker package is not installed; the core suite
stands alone on the in-memory stub.
"""

from __future__ import annotations

import importlib.util
import re
import subprocess
import sys
import time
from pathlib import Path

import pytest

from autotools.evalharness import BenchmarkTask, EvalConfig, run_eval
from autotools.execbridge import WorkerBridge
from autotools.funclib import FunctionLibrary, FunctionRecord
from autotools.llmgateway import Gateway, ScriptedBackend
from autotools.mocktools import MockToolService

from bridge_contract import BridgeContract

pytestmark = pytest.mark.skipif(
    importlib.util.find_spec("autotools_worker") is None,
    reason="secondary component (autotools_worker) not installed",
)

WORKER_CMD = [sys.executable, "-m", "autotools_worker"]
WORKER_GOLDEN = Path(__file__).parent.parent / "worker" / "tests" / "golden"


class TestWorkerBridgeContract(BridgeContract):
    """The execbridge conformance suite against the real worker process."""

    def make_bridge(self):
        return WorkerBridge(cmd=WORKER_CMD)


NESTED_SOURCES = [
    ("inner", 'def inner(x: int) -> int:\n    """Inner step."""\n    return x + 1'),
    ("middle", 'def middle(x: int) -> int:\n    """Middle step."""\n    return x * 2'),
    ("outer", 'def outer(x: int) -> int:\n    """Outer step."""\n    return x - 3'),
]


def test_worker_trace_fidelity_on_nested_calls():
    """Three nested library calls yield exactly three ToolCalls, in
    invocation order, with the exact argument values."""
    bridge = WorkerBridge(cmd=WORKER_CMD)
    try:
        verdicts = bridge.load_functions(NESTED_SOURCES)
        assert all(v.ok for v in verdicts)
        result = bridge.exec("print(outer(middle(inner(2))))")
        assert result.status == "ok"
        assert result.stdout == "3\n"
        trace = result.tool_trace
        assert [c.name for c in trace] == ["inner", "middle", "outer"]
        assert trace[0].args == {"x": 2}
        assert trace[1].args == {"x": 3}
        assert trace[2].args == {"x": 6}
        assert [c.seq for c in trace] == [1, 2, 3]
    finally:
        bridge.shutdown()


def test_worker_golden_transcript_replay():
    """Replaying the recorded protocol transcript yields byte-identical
    replies, modulo masked duration fields."""
    requests = (WORKER_GOLDEN / "requests.jsonl").read_bytes()
    expected = (WORKER_GOLDEN / "replies.jsonl").read_bytes()
    proc = subprocess.run(WORKER_CMD, input=requests, capture_output=True, timeout=60)
    assert proc.returncode == 0
    mask = re.compile(rb'"duration_ms":\d+')
    assert mask.sub(b'"duration_ms":0', proc.stdout) == mask.sub(b'"duration_ms":0', expected)


# ---------------------------------------------------------------------------
# End-to-end desk benchmark: mock HTTP service + real worker + scripted model
# ---------------------------------------------------------------------------


def _tool_sources(base: str) -> dict[str, str]:
    return {
        "search_person": f'''import requests

def search_person(query: str) -> dict:
    """Find people by name via the movie service."""
    response = requests.get("{base}/search/person", params={{"query": query}})
    if response.status_code != 200:
        return {{"error": response.status_code}}
    return response.json()''',
        "get_movie_credits": f'''import requests

def get_movie_credits(person_id: int) -> dict:
    """Movie credits for a person id."""
    response = requests.get(f"{base}/person/{{person_id}}/movie_credits")
    if response.status_code != 200:
        return {{"error": response.status_code}}
    return response.json()''',
        "get_movie_posters": f'''import requests

def get_movie_posters(movie_id: int) -> dict:
    """Poster images for a movie id."""
    response = requests.get(f"{base}/movie/{{movie_id}}/images")
    if response.status_code != 200:
        return {{"error": response.status_code}}
    return response.json()''',
        "broken_tool": f'''import requests

def broken_tool() -> dict:
    """An endpoint that always reports an invalid key."""
    return requests.get("{base}/error/always").json()''',
    }


def _library(base: str) -> FunctionLibrary:
    lib = FunctionLibrary(created_with={"backend_id": "scripted"}, toolset_hash="sha256:e2e")
    for name, source in _tool_sources(base).items():
        lib.add(
            FunctionRecord(
                name=name, source=source, demo=f"# call {name}", result_kind="json_map",
                status="Verified",
            )
        )
    return lib


_E2E_SPECS: list[tuple[str, list[tuple[str, dict]]]] = [
    ("e1", [("search_person", {"query": "Christopher Nolan"})]),
    ("e2", [("search_person", {"query": "Christopher Nolan"}), ("get_movie_credits", {"person_id": 525})]),
    ("e3", [("search_person", {"query": "Christopher Nolan"}), ("get_movie_credits", {"person_id": 525}),
            ("get_movie_posters", {"movie_id": 27205})]),
    ("e4", [("get_movie_posters", {"movie_id": 27205})]),
    ("e5", [("search_person", {"query": "Greta Gerwig"}), ("get_movie_credits", {"person_id": 45400})]),
]

_E2E_PROGRAMS = {
    "e1": 'r = search_person(query="Christopher Nolan")\nprint(r["results"][0]["id"])',
    "e2": (
        'person = search_person(query="Christopher Nolan")["results"][0]\n'
        "credits = get_movie_credits(person_id=person[\"id\"])\n"
        'print([m["title"] for m in credits["crew"] if m["job"] == "Director"])'
    ),
    "e3": (
        'person = search_person(query="Christopher Nolan")["results"][0]\n'
        "credits = get_movie_credits(person_id=person[\"id\"])\n"
        'directed = [m for m in credits["crew"] if m["job"] == "Director"]\n'
        "posters = get_movie_posters(movie_id=directed[0][\"id\"])\n"
        'print([p["file_path"] for p in posters["posters"]])'
    ),
    "e4": 'posters = get_movie_posters(movie_id=27205)\nprint(posters["posters"])',
    "e5": (
        'person = search_person(query="Greta Gerwig")["results"][0]\n'
        "credits = get_movie_credits(person_id=person[\"id\"])\n"
        'print([m["title"] for m in credits["crew"]])'
    ),
}

_E2E_CORRUPTED_E3 = (
    'person = search_person(query="Christopher Nolan")["results"][0]\n'
    "credits = get_movie_credits(person_id=person[\"id\"])\n"
    "posters = broken_tool()\n"
    "print(posters)"
)


def _tasks() -> list[BenchmarkTask]:
    out = []
    for task_id, solution in _E2E_SPECS:
        names = sorted({n for n, _ in solution})
        out.append(
            BenchmarkTask(
                id=task_id,
                query=f"desk task {task_id}",
                gt_solution=tuple(solution),
                gt_tools=frozenset(names),
                candidate_tools=tuple(names + ["broken_tool"]),
            )
        )
    return out


def _script(corrupt_e3: bool = False) -> dict:
    table = {}
    for task_id, _ in _E2E_SPECS:
        program = _E2E_CORRUPTED_E3 if (corrupt_e3 and task_id == "e3") else _E2E_PROGRAMS[task_id]
        table[f"{task_id}:1"] = f"```python\n{program}\n```"
        table[f"{task_id}:2"] = f"Finish[answer: {task_id} complete]"
    return {"program": table}


def _run(service: MockToolService, corrupt_e3: bool) -> dict:
    report = run_eval(
        _tasks(),
        _library(service.base_url),
        Gateway(ScriptedBackend(_script(corrupt_e3))),
        bridge_factory=lambda task: WorkerBridge(cmd=WORKER_CMD),
        config=EvalConfig(max_turns=5, timeout_ms=20_000),
    )
    return report.to_json()


def test_e2e_desk_benchmark():
    """Five fixture tasks against the local mock tool service with scripted
    transcripts: Success 100.0 and Path 100.0; corrupting one scripted tool
    call drops Success to 80.0. Under 30 s total."""
    start = time.monotonic()
    with MockToolService() as service:
        clean = _run(service, corrupt_e3=False)
        assert clean["aggregate"]["success"] == 100.0
        assert clean["aggregate"]["path_rate"] == 100.0
        assert all(row["termination"] == "finished" for row in clean["per_task"].values())

        corrupted = _run(service, corrupt_e3=True)
        assert corrupted["aggregate"]["success"] == 80.0
        assert corrupted["per_task"]["e3"]["success"] == 0
        assert corrupted["per_task"]["e3"]["path_rate"] < 1.0
    assert time.monotonic() - start < 30.0
