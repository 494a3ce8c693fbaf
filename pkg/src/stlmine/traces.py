"""Time-indexed 2-D coordinate traces and their JSON file format."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class Trace:
    """An ordered sequence of (x, y) samples at unit time-steps t = 0..L-1.

    Immutable after construction; every coordinate must be finite and the
    trace must contain at least one sample.
    """

    samples: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.samples) < 1:
            raise ValueError("trace must contain at least one sample")
        for t, (x, y) in enumerate(self.samples):
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError(f"non-finite coordinate at t={t}: ({x}, {y})")

    @property
    def length(self) -> int:
        return len(self.samples)

    @cached_property
    def array(self) -> np.ndarray:
        """The trace as a read-only (L, 2) float array."""
        arr = np.asarray(self.samples, dtype=np.float64)
        arr.setflags(write=False)
        return arr

    @classmethod
    def from_points(cls, points) -> "Trace":
        return cls(tuple((float(x), float(y)) for x, y in points))

    def to_dict(self) -> dict:
        return {"length": self.length, "samples": [[x, y] for x, y in self.samples]}

    @classmethod
    def from_dict(cls, obj: dict) -> "Trace":
        trace = cls.from_points(obj["samples"])
        declared = obj.get("length")
        if declared is not None and declared != trace.length:
            raise ValueError(
                f"declared length {declared} does not match {trace.length} samples"
            )
        return trace


def save_trace(trace: Trace, path) -> None:
    with open(path, "w") as fh:
        json.dump(trace.to_dict(), fh)


def load_trace(path) -> Trace:
    with open(path) as fh:
        return Trace.from_dict(json.load(fh))


def stack_traces(traces) -> np.ndarray:
    """Stack equal-length traces into an (N, L, 2) array.

    Raises ValueError when the traces differ in length (mixed-length
    datasets would silently corrupt batched robustness evaluation).
    """
    traces = list(traces)
    if not traces:
        return np.empty((0, 0, 2), dtype=np.float64)
    lengths = {tr.length for tr in traces}
    if len(lengths) != 1:
        raise ValueError(f"traces have mixed lengths: {sorted(lengths)}")
    return np.stack([tr.array for tr in traces])
