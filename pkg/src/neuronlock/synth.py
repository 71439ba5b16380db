"""Synthetic model and task fixtures.

Two families:

- `random_model`: layers filled with trained-looking weight distributions
  (clipped Gaussians; discrete Gaussians for INT8). No task semantics; used
  for format, cipher, detection, and overhead work where only the byte
  statistics matter.
- `TaskFixture`: a hand-constructed multi-task classifier with one hidden
  bank per task plus shared and padding neurons. Task t's inputs occupy
  feature block t; bank neuron (t, j) routes that block's feature j to
  logit t*c+j. Intact accuracy is ~1.0 per task, pruning a task's bank
  degrades it towards chance, and activation traces concentrate on the
  owning bank, so selection, critical sets, and capability control are all
  exercised without any training loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .container import Dtype, LayerSpec, ModelContainer, forward
from .selector import ActivationTrace


def build_container(
    w_ins: Sequence[np.ndarray],
    b_ins: Sequence[np.ndarray],
    w_out_ts: Sequence[np.ndarray],
    dtype: Dtype,
    head: Optional[bytes] = None,
) -> ModelContainer:
    """Pack per-layer arrays (already in model units) into a container."""
    layers = []
    chunks = []
    for w_in, b_in, w_out_t in zip(w_ins, b_ins, w_out_ts):
        h, d_in = w_in.shape
        h2, d_out = w_out_t.shape
        assert h == h2 == b_in.shape[0]
        layers.append(LayerSpec(d_in=d_in, d_hidden=h, d_out=d_out))
        nd = dtype.np_dtype
        chunks += [
            np.ascontiguousarray(w_in, nd).tobytes(),
            np.ascontiguousarray(b_in, nd).tobytes(),
            np.ascontiguousarray(w_out_t, nd).tobytes(),
        ]
    return ModelContainer(
        layers=layers, dtype=dtype, data=bytearray(b"".join(chunks)), head=head
    )


def _trained_like(shape, dtype: Dtype, rs: np.random.RandomState) -> np.ndarray:
    if dtype is Dtype.INT8:
        w = np.round(rs.normal(0.0, 18.0, shape))
        return np.clip(w, -127, 127).astype(np.int8)
    w = np.clip(rs.normal(0.0, 0.3, shape), -2.0, 2.0)
    return w.astype(dtype.np_dtype)


def random_model(
    layers: Sequence[LayerSpec], dtype: Dtype, seed: int = 0
) -> ModelContainer:
    """Container with trained-looking weight statistics and no task structure."""
    rs = np.random.RandomState(seed)
    w_ins, b_ins, w_outs = [], [], []
    for spec in layers:
        w_ins.append(_trained_like((spec.d_hidden, spec.d_in), dtype, rs))
        b_ins.append(_trained_like((spec.d_hidden,), dtype, rs))
        w_outs.append(_trained_like((spec.d_hidden, spec.d_out), dtype, rs))
    return build_container(w_ins, b_ins, w_outs, dtype)


@dataclass
class TaskFixture:
    model: ModelContainer
    tasks: list[str]
    classes: int
    features_per_task: int
    noise: float
    banks: dict[str, list[int]]  # global neuron indices of each task's bank
    seed: int

    @property
    def chance(self) -> float:
        return 1.0 / self.classes

    def sample(
        self, task: str, n: int, rs: Optional[np.random.RandomState] = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Task inputs: one-hot class feature in the task's block plus noise."""
        rs = rs or np.random.RandomState(self.seed + 7919 * self.tasks.index(task))
        t = self.tasks.index(task)
        f = self.features_per_task
        y = rs.randint(0, self.classes, size=n)
        x = rs.normal(0.0, self.noise, size=(n, f * len(self.tasks)))
        x[np.arange(n), t * f + y] += 1.0
        return x, y

    def evaluate(
        self,
        model: ModelContainer,
        task: str,
        n: int = 512,
        prune_mask: Optional[np.ndarray] = None,
        seed_offset: int = 1,
    ) -> float:
        """Classification accuracy of `task` on fresh samples (argmax of its logits)."""
        rs = np.random.RandomState(
            self.seed + 7919 * self.tasks.index(task) + 104729 * seed_offset
        )
        x, y = self.sample(task, n, rs)
        t = self.tasks.index(task)
        logits = forward(model, x, prune_mask=prune_mask)
        sl = logits[:, t * self.classes : (t + 1) * self.classes]
        return float(np.mean(np.argmax(sl, axis=1) == y))

    def traces(self, samples: int = 256) -> list[ActivationTrace]:
        out = []
        for task in self.tasks:
            rs = np.random.RandomState(self.seed + 31 * self.tasks.index(task))
            x, _ = self.sample(task, samples, rs)
            _, acts = forward(self.model, x, capture=True)
            out.append(
                ActivationTrace(task=task, sums=np.abs(acts).sum(axis=0), count=samples)
            )
        return out


def task_fixture(
    tasks: Sequence[str] = ("health", "code"),
    classes: int = 4,
    features_per_task: int = 8,
    tails_per_task: int = 36,
    shared: int = 4,
    padding: int = 8,
    coupling: float = 0.1,
    noise: float = 0.05,
    dtype: Dtype = Dtype.FLOAT32,
    seed: int = 0,
) -> TaskFixture:
    """Build the hand-wired multi-task fixture.

    Per task: `classes` bank neurons (each routes one class feature to its
    logit; pruning the bank collapses the task to chance) plus
    `tails_per_task` tail neurons that respond to the task's feature block
    but feed (almost) nothing into the logits. Tails dilute the score mass
    so a 0.15 mass threshold captures a task's whole bank plus a few inert
    tails, mirroring how a small fraction of neurons carries a task.
    `shared` neurons respond to every block (coupled neurons a penalty
    factor must down-rank), `padding` neurons carry near-zero weights
    (common subset material), `coupling` adds a weak cross-task response
    to bank neurons.
    """
    tasks = list(tasks)
    k = len(tasks)
    f = features_per_task
    assert classes <= f
    d_in = k * f
    d_out = k * classes
    rs = np.random.RandomState(seed)

    rows_w_in, rows_w_out = [], []
    banks: dict[str, list[int]] = {t: [] for t in tasks}
    gid = 0
    for ti, task in enumerate(tasks):
        for j in range(classes):
            # bank: mean |activation| ~ 2.0 / classes on this task, ~0 elsewhere
            w_in = rs.normal(0.0, 0.005, d_in)
            w_in[ti * f + j] = 2.0
            if coupling > 0 and k > 1:
                other = (ti + 1 + rs.randint(k - 1)) % k
                w_in[other * f + rs.randint(f)] += coupling
            w_out = np.zeros(d_out)
            w_out[ti * classes + j] = 1.5
            rows_w_in.append(w_in)
            rows_w_out.append(w_out)
            banks[task].append(gid)
            gid += 1
    tail_gain = 0.55 * (2.0 / classes)  # rank strictly below the bank neurons
    for ti, task in enumerate(tasks):
        for _ in range(tails_per_task):
            w_in = rs.normal(0.0, 0.005, d_in)
            w_in[ti * f : ti * f + f] += tail_gain * rs.uniform(0.6, 1.0, f) / f * classes
            w_out = rs.normal(0.0, 0.01, d_out)
            rows_w_in.append(w_in)
            rows_w_out.append(w_out)
            gid += 1
    for _ in range(shared):
        w_in = rs.normal(0.0, 0.005, d_in)
        for ti in range(k):
            w_in[ti * f + rs.randint(f)] = 0.6
        w_out = rs.normal(0.0, 0.02, d_out)
        rows_w_in.append(w_in)
        rows_w_out.append(w_out)
        gid += 1
    for _ in range(padding):
        rows_w_in.append(rs.normal(0.0, 0.005, d_in))
        rows_w_out.append(rs.normal(0.0, 0.005, d_out))
        gid += 1

    w_in = np.asarray(rows_w_in)
    w_out = np.asarray(rows_w_out)
    b_in = np.zeros(gid)
    model = build_container([w_in], [b_in], [w_out], dtype)
    return TaskFixture(
        model=model,
        tasks=tasks,
        classes=classes,
        features_per_task=f,
        noise=noise,
        banks=banks,
        seed=seed,
    )
