"""Config fingerprints and the append-only training log."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from collections.abc import Mapping
    from pathlib import Path


def canonical_json(payload: Mapping[str, Any] | list[Any]) -> str:
    """Serialize *payload* with sorted keys and no whitespace."""

    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(payload: Mapping[str, Any] | list[Any]) -> str:
    """Return the SHA-256 hex digest of the canonical JSON of *payload*."""

    serialized = canonical_json(payload)
    return hashlib.sha256(serialized.encode("utf-8")).hexdigest()


@dataclass(slots=True, frozen=True)
class TrainingLogEntry:
    """One optimizer step: global iteration, learning rate and batch loss."""

    iteration: int
    lr: float
    loss: float

    def to_line(self) -> str:
        return f"{self.iteration} {self.lr!r} {self.loss!r}"


class TrainingLog:
    """Append-only ``iter lr loss`` writer with ``# stage`` header lines."""

    def __init__(self, path: Path) -> None:
        self.path = path
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("", encoding="utf-8")

    def begin_stage(self, index: int, description: Mapping[str, Any]) -> None:
        self._write(f"# stage {index} {canonical_json(dict(description))}")

    def append(self, entry: TrainingLogEntry) -> None:
        self._write(entry.to_line())

    def extend(self, entries: list[TrainingLogEntry]) -> None:
        if entries:
            self._write("\n".join(entry.to_line() for entry in entries))

    def _write(self, text: str) -> None:
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(text)
            handle.write("\n")


def read_training_log(path: Path) -> list[TrainingLogEntry]:
    """Parse a training log, skipping stage header lines."""

    entries: list[TrainingLogEntry] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        iteration, lr, loss = line.split()
        entries.append(TrainingLogEntry(int(iteration), float(lr), float(loss)))
    return entries


__all__ = [
    "TrainingLog",
    "TrainingLogEntry",
    "canonical_json",
    "config_hash",
    "read_training_log",
]
