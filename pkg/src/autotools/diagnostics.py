"""Lightweight diagnostics collection.

Several operations downgrade recoverable problems (a malformed document in a
toolset, a hallucinated name in a selection list, a second code block) to
diagnostics instead of aborting. Callers that care pass a `Diagnostics` sink;
everything else falls back to module logging.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class Diagnostic:
    stage: str
    kind: str
    message: str
    detail: dict[str, Any]

    def to_json(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "kind": self.kind,
            "message": self.message,
            **({"detail": self.detail} if self.detail else {}),
        }


class Diagnostics:
    """Thread-safe accumulator, optionally mirrored to a JSON-lines file."""

    def __init__(self, jsonl_path: str | Path | None = None) -> None:
        self._entries: list[Diagnostic] = []
        self._lock = threading.Lock()
        self._path = Path(jsonl_path) if jsonl_path else None

    def emit(self, stage: str, kind: str, message: str, **detail: Any) -> None:
        entry = Diagnostic(stage=stage, kind=kind, message=message, detail=detail)
        with self._lock:
            self._entries.append(entry)
            if self._path is not None:
                with self._path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry.to_json(), ensure_ascii=False) + "\n")
        LOGGER.debug("[%s] %s: %s", stage, kind, message)

    def __iter__(self) -> Iterator[Diagnostic]:
        with self._lock:
            return iter(list(self._entries))

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def of_kind(self, kind: str) -> list[Diagnostic]:
        with self._lock:
            return [e for e in self._entries if e.kind == kind]


def emit(sink: Diagnostics | None, stage: str, kind: str, message: str, **detail: Any) -> None:
    """Emit into `sink` when given, else log."""
    if sink is not None:
        sink.emit(stage, kind, message, **detail)
    else:
        LOGGER.debug("[%s] %s: %s", stage, kind, message)
