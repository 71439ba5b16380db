"""Deployer-side selective decryption pipeline.

Two modes over the same encrypted container:

- T-E (transmission-efficient): no metadata. Every neuron is trial-decrypted
  with each authorized key in ascending subset-id order; the first trial
  whose W_IN span passes ciphertext detection is accepted. Worst case work
  is O(|keys| * model).
- C-E (computation-efficient): the key map F names each neuron's subset, so
  only neurons whose subset key is authorized are touched (bulk-decrypted
  per subset); detection still runs as a safety assert against corrupted F.

Trial decryptions operate on scratch buffers; the output container is only
mutated when a trial is accepted. Both modes batch their keystream and
detection work per (layer, key) group, which is semantically identical to
the per-neuron loop but runs one AES-ECB pass per group. Neurons that no
authorized key decrypts are marked in the report and zeroized by the
adaptive pruner, so the deployed artifact computes as if they were absent
and leaks no ciphertext.

Conventions: report.prune_mask is True for *pruned* neurons; the keep-mask
accepted by container.forward is its negation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .cipher import keystream_matrix, xor_neurons_bulk
from .container import ModelContainer, neuron_spans
from .detection import (
    DetectionThresholds,
    decrypted_mask,
    span_metrics_batch,
)
from .errors import EncryptedModelError, KeyMapLengthMismatch, ShapeMismatch

MODE_TE = "te"
MODE_CE = "ce"


@dataclass
class DecryptReport:
    mode: str
    subset_id: np.ndarray  # int32, accepted/assigned subset per neuron, -1 unknown
    keys_tried: np.ndarray  # uint16 trial decryptions per neuron
    decrypted: np.ndarray  # bool
    metric: np.ndarray  # float64, detection statistic of the final span state
    prune_mask: np.ndarray  # bool, True = pruned (== ~decrypted)
    detection_failures: list[int] = field(default_factory=list)  # corrupted-F flags

    @property
    def n_decrypted(self) -> int:
        return int(self.decrypted.sum())

    @property
    def n_pruned(self) -> int:
        return int(self.prune_mask.sum())

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "neurons": int(self.decrypted.size),
            "decrypted": self.n_decrypted,
            "pruned": self.n_pruned,
            "trial_decryptions": int(self.keys_tried.sum()),
            "detection_failures": list(self.detection_failures),
        }

    def to_json(self, per_neuron: bool = False) -> str:
        doc = self.summary()
        if per_neuron:
            doc["per_neuron"] = [
                {
                    "subset": int(self.subset_id[i]),
                    "tried": int(self.keys_tried[i]),
                    "decrypted": bool(self.decrypted[i]),
                    "metric": float(self.metric[i]),
                }
                for i in range(self.decrypted.size)
            ]
        return json.dumps(doc, indent=2)


def _empty_report(mode: str, n: int) -> DecryptReport:
    return DecryptReport(
        mode=mode,
        subset_id=np.full(n, -1, np.int32),
        keys_tried=np.zeros(n, np.uint16),
        decrypted=np.zeros(n, bool),
        metric=np.zeros(n, np.float64),
        prune_mask=np.zeros(n, bool),
    )


def _require_encrypted(enc: ModelContainer) -> None:
    if not enc.encrypted or enc.nonce is None:
        raise EncryptedModelError("decryption needs an encrypted container")


def _layer_groups(model: ModelContainer, globals_: np.ndarray):
    """Split a sorted global-index array by layer; yields (layer, rows_g)."""
    base = np.asarray(model._neuron_base, dtype=np.uint64)
    for layer in range(len(model.layers)):
        rows_g = globals_[(globals_ >= base[layer]) & (globals_ < base[layer + 1])]
        if rows_g.size:
            yield layer, rows_g, (rows_g - base[layer]).astype(np.int64)


def _w_in_rows_u8(model: ModelContainer, layer: int) -> np.ndarray:
    spec = model.layers[layer]
    es = model.dtype.element_size
    off = model._offsets[layer]
    arr = np.frombuffer(model.data, np.uint8, spec.d_hidden * spec.d_in * es, off.w_in)
    return arr.reshape(spec.d_hidden, spec.d_in * es)


def _trial_w_in_metrics(
    enc: ModelContainer,
    layer: int,
    rows_g: np.ndarray,
    rows: np.ndarray,
    key: bytes,
    thresholds: DetectionThresholds,
) -> tuple[np.ndarray, np.ndarray]:
    """Metrics + pass mask of trial-decrypting these neurons' W_IN spans."""
    spec = enc.layers[layer]
    es = enc.dtype.element_size
    w_len = spec.d_in * es
    blocks = (w_len + 15) // 16
    ks = keystream_matrix(key, enc.nonce, rows_g, blocks)[:, :w_len]
    trial = _w_in_rows_u8(enc, layer)[rows] ^ ks
    metrics = span_metrics_batch(trial, enc.dtype)
    return metrics, decrypted_mask(metrics, enc.dtype, thresholds)


def decrypt_te(
    enc: ModelContainer,
    keys: Mapping[int, bytes],
    thresholds: DetectionThresholds,
) -> tuple[ModelContainer, DecryptReport]:
    """Trial-decrypt every neuron with all authorized keys.

    Keys are tried in ascending subset-id order and the first trial whose
    W_IN span passes detection is accepted, so a neuron's trial count is
    the rank of its accepting key (or the full key count if none accepts).
    Returns the pruned plaintext artifact and the per-neuron report.
    """
    _require_encrypted(enc)
    out = enc.copy()
    n = enc.n_neurons
    report = _empty_report(MODE_TE, n)
    undecided = np.arange(n, dtype=np.uint64)
    for rank, sid in enumerate(sorted(keys), start=1):
        if undecided.size == 0:
            break
        key = keys[sid]
        accepted_all = []
        for layer, rows_g, rows in _layer_groups(out, undecided):
            metrics, ok = _trial_w_in_metrics(out, layer, rows_g, rows, key, thresholds)
            took = rows_g[ok]
            if took.size:
                accepted_all.append(took)
                idx = took.astype(np.int64)
                report.metric[idx] = metrics[ok]
                report.subset_id[idx] = sid
                report.decrypted[idx] = True
                report.keys_tried[idx] = rank
        if accepted_all:
            taken = np.concatenate(accepted_all)
            xor_neurons_bulk(out, taken, key, enc.nonce)
            undecided = undecided[~np.isin(undecided, taken)]
    # neurons no key decrypted: tried everything, metric of the ciphertext span
    if undecided.size:
        idx = undecided.astype(np.int64)
        report.keys_tried[idx] = len(keys)
        for layer, rows_g, rows in _layer_groups(out, undecided):
            report.metric[rows_g.astype(np.int64)] = span_metrics_batch(
                _w_in_rows_u8(out, layer)[rows], out.dtype
            )
    report.prune_mask = ~report.decrypted
    out.encrypted = False
    out.nonce = None
    adaptive_prune(out, report, in_place=True)
    return out, report


def decrypt_ce(
    enc: ModelContainer,
    keys: Mapping[int, bytes],
    kmap: np.ndarray,
    thresholds: DetectionThresholds,
) -> tuple[ModelContainer, DecryptReport]:
    """Decrypt exactly the neurons whose key-map subset is authorized.

    Bulk-decrypts per subset, then applies detection as a safety assert: a
    neuron that fails detection after its designated key was applied (a
    corrupted F entry) is restored to ciphertext, flagged, and pruned.
    Produces bitwise the same artifact as decrypt_te on consistent inputs.
    """
    _require_encrypted(enc)
    kmap = np.asarray(kmap)
    if kmap.shape != (enc.n_neurons,):
        raise KeyMapLengthMismatch(
            f"key map covers {kmap.shape} neurons, model has {enc.n_neurons}"
        )
    out = enc.copy()
    report = _empty_report(MODE_CE, enc.n_neurons)
    report.subset_id = kmap.astype(np.int32)
    for sid in sorted(keys):
        members = np.nonzero(kmap == sid)[0].astype(np.uint64)
        if members.size == 0:
            continue
        key = keys[sid]
        report.keys_tried[members.astype(np.int64)] = 1
        xor_neurons_bulk(out, members, key, enc.nonce)
        for layer, rows_g, rows in _layer_groups(out, members):
            metrics = span_metrics_batch(_w_in_rows_u8(out, layer)[rows], out.dtype)
            ok = decrypted_mask(metrics, out.dtype, thresholds)
            idx = rows_g.astype(np.int64)
            report.metric[idx] = metrics
            report.decrypted[idx] = ok
            bad = rows_g[~ok]
            if bad.size:
                # corrupted map entries: undo, flag, leave for the pruner
                xor_neurons_bulk(out, bad, key, enc.nonce)
                report.detection_failures.extend(int(g) for g in bad)
    left = np.nonzero(~report.decrypted)[0]
    untouched = left[report.keys_tried[left] == 0].astype(np.uint64)
    for layer, rows_g, rows in _layer_groups(out, untouched):
        report.metric[rows_g.astype(np.int64)] = span_metrics_batch(
            _w_in_rows_u8(out, layer)[rows], out.dtype
        )
    report.prune_mask = ~report.decrypted
    out.encrypted = False
    out.nonce = None
    adaptive_prune(out, report, in_place=True)
    return out, report


def adaptive_prune(
    model: ModelContainer, report: DecryptReport, in_place: bool = False
) -> ModelContainer:
    """Zeroize the spans of pruned neurons so no ciphertext leaks.

    A zeroized neuron contributes exactly nothing to forward computation
    (zero activation times zero output row), which is the mask semantics.
    """
    if report.prune_mask.shape != (model.n_neurons,):
        raise ShapeMismatch("report does not match the model's neuron count")
    out = model if in_place else model.copy()
    for g in np.nonzero(report.prune_mask)[0]:
        for start, stop in neuron_spans(out, out.ref_from_global(int(g))):
            out.data[start:stop] = b"\x00" * (stop - start)
    return out
