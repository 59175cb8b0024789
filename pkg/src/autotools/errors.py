"""Exception types shared across the package."""

from __future__ import annotations


class AutoToolsError(Exception):
    """Base class for all package-specific errors."""


# --- documentation model ---


class DocParseError(AutoToolsError):
    """A tool document is structurally invalid."""


class EmptyToolsetError(AutoToolsError):
    """A toolset location yielded zero parseable documents."""


# --- text-generation gateway ---


class BackendUnavailable(AutoToolsError):
    """The completion backend cannot be reached or refused the request."""


class ScriptExhausted(AutoToolsError):
    """A scripted or replay backend has no remaining entry for this call."""

    def __init__(self, tag: str, key: str | None) -> None:
        super().__init__(f"no scripted response left for tag={tag!r} key={key!r}")
        self.tag = tag
        self.key = key


class MissingPlaceholder(AutoToolsError):
    """A prompt template placeholder was not supplied by the caller."""

    def __init__(self, name: str) -> None:
        super().__init__(f"missing template placeholder {name!r}")
        self.name = name


class NoCodeBlock(AutoToolsError):
    """Model output contains no fenced code block."""


class EmptyBlock(AutoToolsError):
    """The extracted fenced code block is empty."""


class UnparseableList(AutoToolsError):
    """Model output contains no bracketed list of quoted names."""


# --- encapsulation / verification ---


class AnalyzerUnavailable(AutoToolsError):
    """Neither the built-in source analyzer nor a delegated one is configured."""


class ForeignReference(AutoToolsError):
    """A generated test instance references a name outside its allowed set."""

    def __init__(self, name: str) -> None:
        super().__init__(f"test instance references unknown name {name!r}")
        self.name = name


# --- execution bridge ---


class BridgeUnavailable(AutoToolsError):
    """The execution worker is gone or was never started."""


# --- function library ---


class ManifestCorrupt(AutoToolsError):
    """A persisted library manifest failed its integrity check."""


class UnknownName(AutoToolsError):
    """A requested function name is not renderable from the library."""

    def __init__(self, name: str) -> None:
        super().__init__(f"no verified function named {name!r}")
        self.name = name


# --- evaluation harness ---


class TaskSchemaError(AutoToolsError):
    """A benchmark task violates the task schema."""

    def __init__(self, task_id: str, detail: str) -> None:
        super().__init__(f"task {task_id!r}: {detail}")
        self.task_id = task_id
        self.detail = detail


class JudgeUnavailable(AutoToolsError):
    """The configured pass/fail judge cannot produce a verdict."""


# --- training-data synthesis ---


class GoldRejected(AutoToolsError):
    """A gold function failed the signature check against its document."""


class GoldNotInCandidates(AutoToolsError):
    """A gold identifier is absent from the candidate list."""

    def __init__(self, name: str) -> None:
        super().__init__(f"gold name {name!r} not among candidates")
        self.name = name


class FilteredOut(AutoToolsError):
    """A training example was rejected by a corpus filter."""

    def __init__(self, reason: str) -> None:
        super().__init__(f"example filtered out: {reason}")
        self.reason = reason
