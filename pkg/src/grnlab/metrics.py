"""Append-only JSONL metrics.

One JSON object per line, flushed per record, so a killed run always leaves
a parseable prefix.  ``wall_ms`` is wall-clock and therefore the one field
excluded from determinism comparisons; everything else must replay
bit-identically for a fixed (config, seed).
"""

from __future__ import annotations

import json
from pathlib import Path


class MetricsWriter:
    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")
        self._last_step: int | None = None

    def write(self, step: int, loss: float, wall_ms: int, **extra: float) -> None:
        if self._last_step is not None and step <= self._last_step:
            raise ValueError(f"metrics steps must increase: {step} after {self._last_step}")
        self._last_step = step
        record = {"step": step, "loss": loss, "wall_ms": wall_ms}
        record.update(extra)
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    records = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records


def strip_volatile(records: list[dict]) -> list[dict]:
    """Drop wall-clock fields before determinism comparisons."""
    return [{k: v for k, v in r.items() if k != "wall_ms"} for r in records]
