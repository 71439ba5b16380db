"""Task-specific neuron scoring, selection, and critical-set estimation.

Importance of a neuron for a task is the mean absolute activation over that
task's sample set. The task-specific score subtracts a penalty proportional
to the neuron's strongest importance for any *other* task, which decouples
shared neurons from genuinely task-specific ones. Selection greedily takes
neurons in descending score order until the selected mass reaches a fraction
tau of the total.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .container import ModelContainer
from .errors import (
    AllZeroScores,
    DuplicateTask,
    MismatchedNeuronCount,
    ThresholdUnreachable,
    TruncatedTensor,
    BadMagic,
    UnknownTask,
)

DEFAULT_LAMBDA = 0.5
DEFAULT_TAU = 0.15

TRACE_MAGIC = b"SNTRACE1"


@dataclass
class ActivationTrace:
    """Accumulated |activation| sums for one task over `count` samples."""

    task: str
    sums: np.ndarray
    count: int

    def __post_init__(self) -> None:
        self.sums = np.asarray(self.sums, dtype=np.float64)
        if self.sums.ndim != 1:
            raise MismatchedNeuronCount("trace sums must be one value per neuron")
        if self.count <= 0:
            raise MismatchedNeuronCount(f"trace sample count must be > 0, got {self.count}")
        if np.any(self.sums < 0):
            raise MismatchedNeuronCount("trace sums must be non-negative")


@dataclass
class ImportanceMatrix:
    tasks: list[str]
    values: np.ndarray  # shape (n_tasks, n_neurons), rows follow `tasks`

    def row(self, task: str) -> np.ndarray:
        try:
            return self.values[self.tasks.index(task)]
        except ValueError:
            raise UnknownTask(f"task {task!r} not in importance matrix") from None


@dataclass
class SelectionResult:
    lam: float
    tau: float
    sets: dict[str, list[int]]
    # tasks selected with non-default (lambda, tau), when per-task overrides are used
    per_task: dict[str, tuple[float, float]] = field(default_factory=dict)


def compute_importance(traces: Sequence[ActivationTrace]) -> ImportanceMatrix:
    """Mean absolute activation per (task, neuron): sums / sample count."""
    if not traces:
        raise MismatchedNeuronCount("need at least one trace")
    n = len(traces[0].sums)
    tasks: list[str] = []
    rows = []
    for tr in traces:
        if tr.task in tasks:
            raise DuplicateTask(f"duplicate trace for task {tr.task!r}")
        if len(tr.sums) != n:
            raise MismatchedNeuronCount(
                f"trace {tr.task!r} has {len(tr.sums)} neurons, expected {n}"
            )
        tasks.append(tr.task)
        rows.append(tr.sums / float(tr.count))
    return ImportanceMatrix(tasks, np.vstack(rows))


def task_specific_scores(
    imp: ImportanceMatrix, task: str, lam: float = DEFAULT_LAMBDA
) -> np.ndarray:
    """Importance for `task` minus lam * max importance over the other tasks.

    With a single task the penalty term is an empty max, defined as zero.
    Scores may be negative; select_neurons handles the shift.
    """
    own = imp.row(task)
    others = [r for t, r in zip(imp.tasks, imp.values) if t != task]
    if not others:
        return own.copy()
    return own - lam * np.max(others, axis=0)


def select_neurons(scores: np.ndarray, tau: float = DEFAULT_TAU) -> list[int]:
    """Greedy mass-based selection with deterministic tie-breaking.

    Scores are shifted by -min(score, 0) so all are non-negative, then
    normalized to unit mass. Neurons are taken in descending normalized
    score (ties: ascending index) while cumulative + next < tau; the walk
    stops at the first violation.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    lo = float(scores.min(initial=0.0))
    shifted = scores - lo if lo < 0.0 else scores.copy()
    total = float(shifted.sum())
    if total <= 0.0:
        raise AllZeroScores("all scores are zero after shifting; selection undefined")
    norm = shifted / total
    # stable sort on (-score, index): argsort is stable, so ties keep index order
    order = np.argsort(-norm, kind="stable")
    picked: list[int] = []
    cum = 0.0
    for idx in order:
        s = float(norm[idx])
        if cum + s >= tau:
            break
        picked.append(int(idx))
        cum += s
    return picked


def select_all(
    imp: ImportanceMatrix,
    lam: float = DEFAULT_LAMBDA,
    tau: float = DEFAULT_TAU,
    per_task: Optional[Mapping[str, tuple[float, float]]] = None,
) -> SelectionResult:
    """Run scoring + selection for every task in the matrix."""
    per_task = dict(per_task or {})
    sets = {}
    for task in imp.tasks:
        t_lam, t_tau = per_task.get(task, (lam, tau))
        sets[task] = select_neurons(task_specific_scores(imp, task, t_lam), t_tau)
    return SelectionResult(lam=lam, tau=tau, sets=sets, per_task=per_task)


def estimate_critical_set(
    model: ModelContainer,
    task: str,
    evaluate: Callable[[ModelContainer, np.ndarray], float],
    delta: float,
    importance: np.ndarray,
    batch: Optional[int] = None,
) -> list[int]:
    """Greedy critical-set estimate: smallest importance-ordered prefix whose
    pruning drives task accuracy below `delta`.

    Neurons are pruned in descending importance (ties: ascending index),
    re-evaluating every `batch` prunes (default max(1, N // 256)), then the
    exact boundary is refined by binary search. The refinement matches a
    batch-size-1 exhaustive scan when accuracy is monotone non-increasing
    along the prefix, which holds for the fixtures this is used on.
    """
    importance = np.asarray(importance, dtype=np.float64)
    n = model.n_neurons
    if importance.shape != (n,):
        raise MismatchedNeuronCount(
            f"importance vector length {importance.shape} != ({n},)"
        )
    order = np.argsort(-importance, kind="stable")
    if batch is None:
        batch = max(1, n // 256)

    def acc_for(k: int) -> float:
        mask = np.ones(n, dtype=bool)
        mask[order[:k]] = False
        return float(evaluate(model, mask))

    if acc_for(0) < delta:
        return []
    lo = 0  # largest k known to have acc >= delta
    hi = None  # smallest k known to have acc < delta
    k = batch
    while k < n:
        if acc_for(k) < delta:
            hi = k
            break
        lo = k
        k += batch
    if hi is None:
        if acc_for(n) < delta:
            hi = n
        else:
            raise ThresholdUnreachable(
                f"accuracy for task {task!r} never falls below {delta} "
                f"even with all {n} neurons pruned"
            )
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if acc_for(mid) < delta:
            hi = mid
        else:
            lo = mid
    return [int(i) for i in order[:hi]]


def capacity_check(critical_sizes: Sequence[int], total_neurons: int) -> bool:
    """Necessary (not sufficient) condition: sum of critical sets fits the model."""
    if any(s < 0 for s in critical_sizes):
        raise ValueError("critical set sizes must be non-negative")
    return sum(critical_sizes) <= total_neurons


# -- trace files -----------------------------------------------------------------

_TRACE_HDR = struct.Struct("<8sH")
_U64 = struct.Struct("<Q")


def write_trace(trace: ActivationTrace) -> bytes:
    name = trace.task.encode("utf-8")
    buf = io.BytesIO()
    buf.write(_TRACE_HDR.pack(TRACE_MAGIC, len(name)))
    buf.write(name)
    buf.write(_U64.pack(len(trace.sums)))
    buf.write(np.ascontiguousarray(trace.sums, dtype="<f8").tobytes())
    buf.write(_U64.pack(trace.count))
    return buf.getvalue()


def read_trace(raw: bytes) -> ActivationTrace:
    if len(raw) < _TRACE_HDR.size or not raw.startswith(TRACE_MAGIC):
        raise BadMagic("not a SNTRACE1 trace file")
    _, name_len = _TRACE_HDR.unpack_from(raw, 0)
    pos = _TRACE_HDR.size
    if len(raw) < pos + name_len + _U64.size:
        raise TruncatedTensor("trace header truncated")
    task = raw[pos : pos + name_len].decode("utf-8")
    pos += name_len
    (n,) = _U64.unpack_from(raw, pos)
    pos += _U64.size
    need = n * 8 + _U64.size
    if len(raw) != pos + need:
        raise TruncatedTensor(f"trace body: expected {need} bytes, have {len(raw) - pos}")
    sums = np.frombuffer(raw, "<f8", n, pos).copy()
    (count,) = _U64.unpack_from(raw, pos + n * 8)
    return ActivationTrace(task=task, sums=sums, count=count)


def load_trace(path) -> ActivationTrace:
    with open(path, "rb") as fh:
        return read_trace(fh.read())


def save_trace(trace: ActivationTrace, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_trace(trace))


def selection_report(
    imp: ImportanceMatrix, result: SelectionResult
) -> str:
    """Human/machine-readable selection summary (JSON document)."""
    doc: dict = {"lambda": result.lam, "tau": result.tau, "tasks": {}}
    for task, picked in result.sets.items():
        lam, tau = result.per_task.get(task, (result.lam, result.tau))
        scores = task_specific_scores(imp, task, lam)
        lo = float(scores.min(initial=0.0))
        shifted = scores - lo if lo < 0.0 else scores
        total = float(shifted.sum()) or 1.0
        norm = shifted / total
        doc["tasks"][task] = {
            "lambda": lam,
            "tau": tau,
            "neurons": picked,
            "scores": [float(scores[i]) for i in picked],
            "cumulative_mass": float(norm[picked].sum()) if picked else 0.0,
        }
    return json.dumps(doc, indent=2)
