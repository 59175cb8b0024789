"""Multi-turn tool programming sessions.

Each turn the model sees the query, the rendered function library, and the
full history of (program, result) pairs. Its reply either carries a program
(executed in the session, where variables persist across turns) or the
Finish marker carrying the final answer. Sessions stop on Finish, on the
turn bound, or on backend/bridge failure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

from .diagnostics import Diagnostics, emit
from .errors import (
    BackendUnavailable,
    BridgeUnavailable,
    EmptyBlock,
    NoCodeBlock,
    ScriptExhausted,
)
from .execbridge import ErrorPayload, ExecutionBridge, ExecutionResult
from .funclib import FunctionLibrary, render_context
from .llmgateway import ChatMessage, CompletionRequest, Gateway, extract_code_block, render_prompt

Termination = Literal["finished", "turn_limit", "backend_failure", "bridge_failure"]

DEFAULT_MAX_TURNS = 5
RESULT_PROMPT_BUDGET = 8 * 1024
RESULT_TRUNCATION_MARKER = "\n...[result truncated]"

FINISH_TOKEN = "Finish[answer:"


def detect_finish(raw: str) -> str | None:
    """Extract the final answer from a `Finish[answer: <text>]` marker.

    First marker wins; brackets inside the answer are balanced. Returns None
    when no well-formed marker exists.
    """
    start = raw.find(FINISH_TOKEN)
    if start == -1:
        return None
    depth = 1
    i = start + len(FINISH_TOKEN)
    begin = i
    while i < len(raw):
        ch = raw[i]
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth == 0:
                return raw[begin:i].strip()
        i += 1
    return None


@dataclass(frozen=True)
class Turn:
    index: int
    program: str
    result: ExecutionResult
    raw_model_output: str

    def to_json(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "program": self.program,
            "result": self.result.to_wire(),
            "raw_model_output": self.raw_model_output,
        }

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> "Turn":
        return cls(
            index=raw["index"],
            program=raw["program"],
            result=ExecutionResult.from_wire(raw["result"]),
            raw_model_output=raw["raw_model_output"],
        )


@dataclass
class SessionTranscript:
    query: str
    turns: list[Turn] = field(default_factory=list)
    termination: Termination = "turn_limit"
    final_answer: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "turns": [t.to_json() for t in self.turns],
            "termination": self.termination,
            "final_answer": self.final_answer,
        }

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> "SessionTranscript":
        return cls(
            query=raw["query"],
            turns=[Turn.from_json(t) for t in raw.get("turns") or []],
            termination=raw.get("termination", "turn_limit"),
            final_answer=raw.get("final_answer"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json(), indent=2, ensure_ascii=False, sort_keys=True),
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "SessionTranscript":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def render_result_feedback(result: ExecutionResult, budget: int = RESULT_PROMPT_BUDGET) -> str:
    """Execution feedback shown to the model: stdout plus the error payload."""
    stdout = result.stdout
    if len(stdout) > budget:
        stdout = stdout[:budget] + RESULT_TRUNCATION_MARKER
    parts = []
    if stdout:
        parts.append(stdout.rstrip("\n"))
    if result.status == "timeout":
        parts.append("[timeout] the program exceeded its execution deadline")
    elif result.error_payload is not None:
        p = result.error_payload
        line = f"[error] {p.type}: {p.message}"
        if p.last_frame:
            line += f"\n{p.last_frame}"
        parts.append(line)
    if not parts:
        parts.append("(no output)")
    return "\n".join(parts)


def history_messages(turns: list[Turn]) -> list[ChatMessage]:
    """History serialization: fenced program then fenced result per turn."""
    messages: list[ChatMessage] = []
    for turn in turns:
        messages.append(
            ChatMessage(role="assistant", content=f"```python\n{turn.program}\n```")
        )
        messages.append(
            ChatMessage(
                role="environment",
                content=f"```\n{render_result_feedback(turn.result)}\n```",
            )
        )
    return messages


def run_session(
    query: str,
    lib: FunctionLibrary,
    bridge: ExecutionBridge,
    gateway: Gateway,
    *,
    max_turns: int = DEFAULT_MAX_TURNS,
    temperature: float = 0.0,
    max_tokens: int = 2048,
    timeout_ms: int | None = 30_000,
    subset: list[str] | None = None,
    session_label: str | None = None,
    template_dir: str | Path | None = None,
    diagnostics: Diagnostics | None = None,
) -> SessionTranscript:
    """Run one tool-programming session against a verified library.

    The scripted-backend key for turn j is `j` (or `<label>:j` when a session
    label is set, e.g. the benchmark task id).
    """
    context = render_context(lib, subset=subset)
    base = render_prompt(
        "program",
        {"functions": context.text, "query": query},
        template_dir=template_dir,
    )
    transcript = SessionTranscript(query=query)

    for index in range(1, max_turns + 1):
        messages = tuple(base + history_messages(transcript.turns))
        key = f"{session_label}:{index}" if session_label else str(index)
        request = CompletionRequest(
            messages=messages,
            temperature=temperature,
            max_tokens=max_tokens,
            tag="program",
            key=key,
        )
        try:
            response = gateway.complete(request)
        except (BackendUnavailable, ScriptExhausted) as exc:
            emit(diagnostics, "agent", "backend_failure", str(exc))
            transcript.termination = "backend_failure"
            return transcript

        answer = detect_finish(response.text)
        if answer is not None:
            if "```" in response.text:
                emit(
                    diagnostics,
                    "agent",
                    "finish_with_code",
                    f"turn {index}: Finish marker wins over code block; program discarded",
                )
            transcript.termination = "finished"
            transcript.final_answer = answer
            return transcript

        try:
            program = extract_code_block(response.text, diagnostics)
        except (NoCodeBlock, EmptyBlock) as exc:
            result = ExecutionResult(
                status="error",
                error_payload=ErrorPayload(
                    type=type(exc).__name__,
                    message=f"{exc}; reply with one fenced code block or Finish[answer: ...]",
                ),
            )
            transcript.turns.append(
                Turn(index=index, program="", result=result, raw_model_output=response.text)
            )
            continue

        try:
            result = bridge.exec(program, timeout_ms=timeout_ms)
        except BridgeUnavailable as exc:
            emit(diagnostics, "agent", "bridge_failure", str(exc))
            transcript.termination = "bridge_failure"
            return transcript

        transcript.turns.append(
            Turn(index=index, program=program, result=result, raw_model_output=response.text)
        )

    transcript.termination = "turn_limit"
    return transcript
