"""Test doubles for the verification loop: a cooperative backend over a
dependency DAG, synthetic node functions, and random DAG generation."""

from __future__ import annotations

import json
import random

from autotools.funclib import FunctionRecord
from autotools.llmgateway import CompletionRequest, CompletionResponse, count_tokens


def node_source(name: str) -> str:
    return (
        f"def {name}(*inputs):\n"
        f'    """Produce the {name} token, combining upstream tokens."""\n'
        f'    return {{"node": "{name}", "upstream": [str(v) for v in inputs]}}\n'
    )


def node_records(parents: dict[str, list[str]]) -> list[FunctionRecord]:
    return [FunctionRecord(name=name, source=node_source(name)) for name in parents]


class CooperativeBackend:
    """Knows the dependency DAG and plays along:

    relevance -> the target's direct parents (the loop filters to the cache);
    test_instance -> a correct instance when every parent's definition is in
    the prompt (i.e. verified and offered as a helper), a failing one
    otherwise. Nodes in `fail` never get a working instance.
    """

    backend_id = "cooperative"

    def __init__(self, parents: dict[str, list[str]], fail: set[str] | None = None) -> None:
        self.parents = parents
        self.fail = fail or set()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        target = request.key or ""
        if request.tag == "relevance":
            text = json.dumps(self.parents.get(target, []))
        elif request.tag == "test_instance":
            text = f"```python\n{self._instance_code(target, request.prompt_text)}\n```"
        else:
            raise AssertionError(f"unexpected stage {request.tag!r}")
        return CompletionResponse(
            text=text,
            prompt_tokens=count_tokens(request.prompt_text),
            completion_tokens=count_tokens(text),
            backend_id=self.backend_id,
        )

    def _instance_code(self, target: str, prompt: str) -> str:
        if target in self.fail:
            return 'raise RuntimeError("scripted permanent failure")'
        parents = self.parents.get(target, [])
        if not all(f"def {p}(" in prompt for p in parents):
            return 'raise RuntimeError("prerequisites not yet verified")'
        lines = [f"h{i} = {p}()" for i, p in enumerate(parents)]
        args = ", ".join(f"h{i}" for i in range(len(parents)))
        lines.append(f"out = {target}({args})")
        lines.append("print(out)")
        return "\n".join(lines)


def random_dag(rng: random.Random, max_nodes: int = 10, max_depth: int = 4) -> dict[str, list[str]]:
    """Random DAG as name -> direct parents; longest chain <= max_depth nodes."""
    n = rng.randint(1, max_nodes)
    depth = rng.randint(1, min(max_depth, n))
    levels = list(range(depth)) + [rng.randrange(depth) for _ in range(n - depth)]
    rng.shuffle(levels)
    names = [f"node_{i}" for i in range(n)]
    level_of = dict(zip(names, levels))
    parents: dict[str, list[str]] = {}
    for name in names:
        lvl = level_of[name]
        if lvl == 0:
            parents[name] = []
            continue
        lower = [m for m in names if level_of[m] < lvl]
        parents[name] = rng.sample(lower, rng.randint(1, min(3, len(lower))))
    return parents
