"""Ciphertext-vs-plaintext classification of neuron weight spans.

An AES-CTR encrypted span is indistinguishable from uniform random bytes,
while trained weights are anything but. Two dtype-specific statistics keep
the classes apart:

- FLOAT16/FLOAT32: the max absolute value m of the span read as scalars.
  Random bit patterns produce astronomically large or non-finite values
  with near certainty; trained weights stay within a few units.
- INT8: every byte is a valid in-range value, so magnitude says nothing.
  Instead, the variance v_H of the 256-bin normalized value histogram:
  uniform ciphertext sits at the multinomial noise floor, trained weights
  concentrate mass in few bins and sit orders of magnitude higher.

Thresholds are calibrated per model at encryption time from the measured
ranges of both classes; calibration refuses to guess when the ranges
overlap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .container import Dtype, ModelContainer, neuron_spans
from .errors import RangesOverlap, UnsupportedDtype

HIST_BINS = 256


@dataclass(frozen=True)
class DetectionThresholds:
    m_max: float  # FLOAT dtypes: decrypted iff max |value| <= m_max
    v_split: float  # INT8: decrypted iff histogram variance >= v_split
    hist_bins: int = HIST_BINS

    def to_json(self) -> str:
        return json.dumps(
            {"m_max": self.m_max, "v_split": self.v_split, "hist_bins": self.hist_bins},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "DetectionThresholds":
        doc = json.loads(text)
        return cls(
            m_max=float(doc["m_max"]),
            v_split=float(doc["v_split"]),
            hist_bins=int(doc.get("hist_bins", HIST_BINS)),
        )


def _as_u8(span: bytes | bytearray | memoryview | np.ndarray) -> np.ndarray:
    if isinstance(span, np.ndarray):
        return np.ascontiguousarray(span, dtype=np.uint8)
    return np.frombuffer(span, np.uint8)


def span_metric(span: bytes | np.ndarray, dtype: Dtype) -> float:
    """The detection statistic for one W_IN span."""
    if dtype in (Dtype.FLOAT32, Dtype.FLOAT16):
        with np.errstate(invalid="ignore", over="ignore"):
            values = _as_u8(span).view(dtype.np_dtype).astype(np.float64)
        if values.size == 0:
            return 0.0
        if not np.all(np.isfinite(values)):
            return float("inf")
        return float(np.max(np.abs(values)))
    if dtype is Dtype.INT8:
        counts = np.bincount(_as_u8(span), minlength=HIST_BINS).astype(np.float64)
        freq = counts / max(counts.sum(), 1.0)
        return float(np.var(freq))
    raise UnsupportedDtype(f"no detection metric for {dtype}")


def span_metrics_batch(rows: np.ndarray, dtype: Dtype) -> np.ndarray:
    """span_metric over a (n, span_bytes) uint8 matrix, vectorized."""
    rows = np.ascontiguousarray(rows, dtype=np.uint8)
    n = rows.shape[0]
    if n == 0:
        return np.zeros(0, np.float64)
    if dtype in (Dtype.FLOAT32, Dtype.FLOAT16):
        with np.errstate(invalid="ignore", over="ignore"):
            values = rows.view(dtype.np_dtype).astype(np.float64)
        metrics = np.abs(values).max(axis=1)
        metrics[~np.isfinite(values).all(axis=1)] = np.inf
        return metrics
    if dtype is Dtype.INT8:
        span = rows.shape[1]
        flat = (np.arange(n, dtype=np.int64)[:, None] * HIST_BINS + rows).ravel()
        counts = np.bincount(flat, minlength=n * HIST_BINS).reshape(n, HIST_BINS)
        freq = counts / max(span, 1)
        return np.var(freq, axis=1)
    raise UnsupportedDtype(f"no detection metric for {dtype}")


def decrypted_mask(
    metrics: np.ndarray, dtype: Dtype, thresholds: DetectionThresholds
) -> np.ndarray:
    """Vectorized threshold rule over precomputed metrics."""
    if dtype in (Dtype.FLOAT32, Dtype.FLOAT16):
        return metrics <= thresholds.m_max
    if dtype is Dtype.INT8:
        return metrics >= thresholds.v_split
    raise UnsupportedDtype(f"no detection rule for {dtype}")


def detect_decrypted(
    span: bytes | np.ndarray, dtype: Dtype, thresholds: DetectionThresholds
) -> tuple[bool, float]:
    """Classify a W_IN span as decrypted (True) or still ciphertext (False)."""
    metric = span_metric(span, dtype)
    if dtype in (Dtype.FLOAT32, Dtype.FLOAT16):
        return metric <= thresholds.m_max, metric
    if dtype is Dtype.INT8:
        return metric >= thresholds.v_split, metric
    raise UnsupportedDtype(f"no detection rule for {dtype}")


def calibrate_thresholds(
    model: ModelContainer, samples: int, rng
) -> DetectionThresholds:
    """Measure both metric ranges on the plaintext model and split the gap.

    The decrypted range covers every neuron's W_IN span as-is; the
    undecrypted range covers `samples` randomly chosen spans encrypted
    under throwaway random keys. m_max is 10x the largest trained
    magnitude, v_split the geometric midpoint of the variance gap.
    Raises RangesOverlap when no separating threshold exists.
    """
    from .cipher import encrypt_neuron, NeuronCipherConfig  # cycle-free at runtime

    dec_parts = []
    for layer, spec in enumerate(model.layers):
        es = model.dtype.element_size
        off = model._offsets[layer]
        rows = np.frombuffer(
            model.data, np.uint8, spec.d_hidden * spec.d_in * es, off.w_in
        ).reshape(spec.d_hidden, spec.d_in * es)
        dec_parts.append(span_metrics_batch(rows, model.dtype))
    dec_metrics = np.concatenate(dec_parts)

    undec_metrics = []
    picks = [rng.randbelow(model.n_neurons) for _ in range(max(1, samples))]
    scratch = model.copy()
    for g in picks:
        ref = scratch.ref_from_global(g)
        cfg = NeuronCipherConfig(
            key=rng.randbytes(16), nonce=rng.randbits(64), counter_base=None
        )
        encrypt_neuron(cfg, scratch, ref)
        s, e = neuron_spans(scratch, ref).w_in
        undec_metrics.append(span_metric(scratch.data[s:e], scratch.dtype))
        scratch.data[s:e] = model.data[s:e]  # restore for the next sample
        s2, e2 = neuron_spans(scratch, ref).b_in
        scratch.data[s2:e2] = model.data[s2:e2]
        s3, e3 = neuron_spans(scratch, ref).w_out
        scratch.data[s3:e3] = model.data[s3:e3]
    undec_metrics = np.asarray(undec_metrics)

    if model.dtype in (Dtype.FLOAT32, Dtype.FLOAT16):
        dec_max = float(dec_metrics.max())
        undec_min = float(undec_metrics.min())
        m_max = 10.0 * dec_max if dec_max > 0 else 1.0
        if not np.isfinite(dec_max) or undec_min <= m_max:
            raise RangesOverlap(
                f"magnitude ranges overlap: decrypted max {dec_max}, "
                f"undecrypted min {undec_min}, threshold {m_max}"
            )
        v_split = 0.0  # unused for float dtypes, kept for the record
        return DetectionThresholds(m_max=m_max, v_split=v_split)

    dec_min = float(dec_metrics.min())
    undec_max = float(undec_metrics.max())
    if undec_max >= dec_min:
        raise RangesOverlap(
            f"histogram variance ranges overlap: undecrypted max {undec_max}, "
            f"decrypted min {dec_min}"
        )
    v_split = float(np.sqrt(undec_max * dec_min))
    # m_max still needs a sane value so mixed tooling can serialize it
    return DetectionThresholds(m_max=float("inf"), v_split=v_split)
