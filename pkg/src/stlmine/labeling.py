"""Safe/unsafe labels for traces: automated oracle or brokered human batches.

A labeling session holds one batch of traces under stable ids 0..n-1. In
oracle mode the labels are filled immediately from the hidden ground-truth
constraint; in interactive mode labels arrive through submit_labels, which
applies a whole submission atomically or not at all.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .formulas import Formula, robustness
from .mining import LabeledDataset
from .traces import Trace


class LabelValue(enum.Enum):
    SAFE = "safe"
    UNSAFE = "unsafe"


class LabelSource(enum.Enum):
    ORACLE = "oracle"
    HUMAN = "human"


@dataclass(frozen=True)
class Label:
    value: LabelValue
    source: LabelSource
    trace: Trace


class LabelingError(ValueError):
    pass


class UnknownIdError(LabelingError):
    pass


class DuplicateIdError(LabelingError):
    pass


class AlreadyLabeledError(LabelingError):
    pass


class IncompleteSessionError(LabelingError):
    pass


def oracle_label(phi_true: Formula, w: Trace) -> Label:
    """Safe iff robustness of the hidden constraint at t=0 is >= 0."""
    rho = robustness(phi_true, w, 0)
    value = LabelValue.SAFE if rho >= 0.0 else LabelValue.UNSAFE
    return Label(value, LabelSource.ORACLE, w)


@dataclass
class LabelingSession:
    traces: list[Trace]
    mode: str
    iteration: int = 0
    labels: dict[int, Label] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.traces)

    def pending_ids(self) -> list[int]:
        return [i for i in range(self.size) if i not in self.labels]

    @property
    def is_complete(self) -> bool:
        return len(self.labels) == self.size


def open_session(
    traces: list[Trace],
    mode: str,
    oracle_formula: Formula | None = None,
    iteration: int = 0,
) -> LabelingSession:
    """Create a session over a batch; oracle mode labels it immediately."""
    if not traces:
        raise LabelingError("cannot open a labeling session over an empty batch")
    if mode not in ("oracle", "interactive"):
        raise LabelingError(f"unknown labeling mode {mode!r}")
    session = LabelingSession(list(traces), mode, iteration)
    if mode == "oracle":
        if oracle_formula is None:
            raise LabelingError("oracle mode needs the ground-truth formula")
        for i, tr in enumerate(session.traces):
            session.labels[i] = oracle_label(oracle_formula, tr)
    return session


def submit_labels(session: LabelingSession, labels) -> LabelingSession:
    """Record human labels for pending ids; all-or-nothing.

    `labels` is a list of (id, LabelValue | "safe" | "unsafe") pairs.
    Unknown ids, duplicate ids within the submission, and ids that are
    already labeled are each rejected without touching the session.
    """
    seen: set[int] = set()
    normalized: list[tuple[int, LabelValue]] = []
    for trace_id, value in labels:
        if not isinstance(value, LabelValue):
            value = LabelValue(value)
        if trace_id in seen:
            raise DuplicateIdError(f"id {trace_id} appears twice in one submission")
        seen.add(trace_id)
        if not 0 <= trace_id < session.size:
            raise UnknownIdError(f"id {trace_id} is not part of this session")
        if trace_id in session.labels:
            raise AlreadyLabeledError(f"id {trace_id} is already labeled")
        normalized.append((trace_id, value))
    for trace_id, value in normalized:
        session.labels[trace_id] = Label(value, LabelSource.HUMAN, session.traces[trace_id])
    return session


def merge_into_dataset(data: LabeledDataset, session: LabelingSession) -> LabeledDataset:
    """Append the session's safe traces to D_p and unsafe ones to D_n.

    Returns a new dataset; the input is left untouched (and untouched on
    error, since an incomplete session raises before any copying matters).
    """
    if not session.is_complete:
        raise IncompleteSessionError(
            f"{len(session.pending_ids())} traces still pending"
        )
    merged = data.copy()
    for i in range(session.size):
        label = session.labels[i]
        if label.value is LabelValue.SAFE:
            merged.positives.append(session.traces[i])
        else:
            merged.negatives.append(session.traces[i])
    return merged
