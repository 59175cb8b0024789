"""Tool-agent orchestration: documentation in, verified callable library out,
tasks solved by multi-turn programmatic tool-use sessions."""

from .agent import SessionTranscript, Turn, detect_finish, run_session
from .docmodel import ParamSpec, ToolDoc, Toolset, load_toolset, parse_tool_doc
from .encapsulator import (
    EncapsulationOutcome,
    SignatureReport,
    check_syntax,
    encapsulate_tool,
)
from .evalharness import (
    BenchmarkTask,
    EvalConfig,
    MetricsReport,
    compute_metrics,
    extract_tool_calls,
    judge_pass,
    load_benchmark,
    run_eval,
)
from .execbridge import (
    ExecutionBridge,
    ExecutionResult,
    StubBridge,
    ToolCall,
    WorkerBridge,
)
from .funclib import (
    FunctionLibrary,
    FunctionRecord,
    load_library,
    render_context,
    save_library,
)
from .llmgateway import (
    ChatMessage,
    CompletionRequest,
    CompletionResponse,
    Gateway,
    LiveBackend,
    ReplayBackend,
    ScriptedBackend,
    parse_function_block,
    parse_name_list,
    render_prompt,
)
from .verifier import TestInstance, VerificationState, run_integration_verification

__version__ = "0.1.0"

__all__ = [
    "BenchmarkTask",
    "ChatMessage",
    "CompletionRequest",
    "CompletionResponse",
    "EncapsulationOutcome",
    "EvalConfig",
    "ExecutionBridge",
    "ExecutionResult",
    "FunctionLibrary",
    "FunctionRecord",
    "Gateway",
    "LiveBackend",
    "MetricsReport",
    "ParamSpec",
    "ReplayBackend",
    "ScriptedBackend",
    "SessionTranscript",
    "SignatureReport",
    "StubBridge",
    "TestInstance",
    "ToolCall",
    "ToolDoc",
    "Toolset",
    "Turn",
    "VerificationState",
    "WorkerBridge",
    "check_syntax",
    "compute_metrics",
    "detect_finish",
    "encapsulate_tool",
    "extract_tool_calls",
    "judge_pass",
    "load_benchmark",
    "load_library",
    "load_toolset",
    "parse_function_block",
    "parse_name_list",
    "parse_tool_doc",
    "render_context",
    "render_prompt",
    "run_eval",
    "run_integration_verification",
    "run_session",
    "save_library",
]
