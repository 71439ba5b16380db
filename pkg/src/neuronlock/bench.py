"""Overhead measurement: first deployment vs capability update.

Runs the full pipeline over a list of model sizes and a permission-change
schedule, recording computation times and artifact sizes for the encryptor,
both decryption modes, and a naive re-encrypt baseline (which must ship the
whole model again on every permission change). The point being measured:
capability updates move attribute-key bytes only, independent of model
size, while the naive baseline scales with the model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .abe import abe_keygen, abe_setup, encrypt_bundle, recover_keys, write_bundle, write_secret_key
from .cipher import encrypt_model, write_kmap
from .container import Dtype, LayerSpec, write_container
from .detection import calibrate_thresholds
from .decryptor import decrypt_ce, decrypt_te
from .policy import parse_policy
from .rng import Rng
from .selector import ActivationTrace, compute_importance, select_all
from .subsets import build_policies, decompose_subsets
from .synth import random_model

DEFAULT_SCENARIO = {
    "profile": "ss512",
    "tasks": ["health", "code"],
    "attributes": {
        "health": ["Institution=Hospital", "Licence=True"],
        "code": ["Team=Dev"],
    },
    "updates": [
        ["Institution=Hospital", "Licence=True"],
        ["Team=Dev"],
        ["Institution=Hospital", "Licence=True", "Team=Dev"],
    ],
    "sizes": [
        {"label": "s", "layers": [[64, 512, 32]], "dtype": "FLOAT32"},
        {"label": "m", "layers": [[128, 4096, 64]], "dtype": "FLOAT32"},
        {"label": "l", "layers": [[256, 25600, 64]], "dtype": "FLOAT32"},
    ],
}


@dataclass
class BenchRow:
    label: str
    n_neurons: int
    model_bytes: int
    encrypt_s: float
    bundle_bytes: int
    kmap_bytes: int
    calib_s: float
    te_s: float
    ce_s: float
    keygen_ms: list[float] = field(default_factory=list)
    sk_bytes: list[int] = field(default_factory=list)
    naive_update_bytes: int = 0

    @property
    def update_bytes(self) -> int:
        return max(self.sk_bytes) if self.sk_bytes else 0


def _synthetic_traces(n_neurons: int, tasks: Sequence[str], rng: Rng) -> list:
    rs = np.random.RandomState(rng.randbits(32))
    return [
        ActivationTrace(task=t, sums=rs.uniform(0.0, 4.0, n_neurons), count=16)
        for t in tasks
    ]


def run_scenario(scenario: Optional[dict] = None, seed: Optional[int] = 1) -> list[BenchRow]:
    sc = dict(DEFAULT_SCENARIO)
    if scenario:
        sc.update(scenario)
    rng = Rng(seed)
    tasks = list(sc["tasks"])
    user_policies = {
        t: parse_policy(_attrs_to_policy(sc["attributes"][t])) for t in tasks
    }
    rows = []
    for size in sc["sizes"]:
        layers = [LayerSpec(*dims) for dims in size["layers"]]
        dtype = Dtype[size.get("dtype", "FLOAT32")]
        model = random_model(layers, dtype, seed=rng.randbits(31))
        model_bytes = len(write_container(model))
        traces = _synthetic_traces(model.n_neurons, tasks, rng)
        sel = select_all(compute_importance(traces))
        part = decompose_subsets(sel, model.n_neurons)
        policies = build_policies(part, user_policies)
        pk, msk = abe_setup(rng, sc.get("profile", "ss512"))

        t0 = time.perf_counter()
        thresholds = calibrate_thresholds(model, 32, rng)
        t_calib = time.perf_counter() - t0

        t0 = time.perf_counter()
        bundle, keys = encrypt_bundle(pk, part, policies, rng, thresholds=thresholds)
        enc, kmap = encrypt_model(model, part, keys, rng.randbits(64))
        t_encrypt = time.perf_counter() - t0

        row = BenchRow(
            label=size.get("label", f"{model.n_neurons}n"),
            n_neurons=model.n_neurons,
            model_bytes=model_bytes,
            encrypt_s=t_encrypt,
            bundle_bytes=len(write_bundle(bundle)),
            kmap_bytes=len(write_kmap(kmap)),
            calib_s=t_calib,
            te_s=0.0,
            ce_s=0.0,
            naive_update_bytes=model_bytes,
        )
        first_keys = None
        for attrs in sc["updates"]:
            t0 = time.perf_counter()
            sk = abe_keygen(msk, attrs, rng)
            row.keygen_ms.append((time.perf_counter() - t0) * 1e3)
            row.sk_bytes.append(len(write_secret_key(sk)))
            if first_keys is None:
                first_keys = recover_keys(pk, sk, bundle)
        t0 = time.perf_counter()
        decrypt_te(enc, first_keys, thresholds)
        row.te_s = time.perf_counter() - t0
        t0 = time.perf_counter()
        decrypt_ce(enc, first_keys, kmap, thresholds)
        row.ce_s = time.perf_counter() - t0
        rows.append(row)
    return rows


def _attrs_to_policy(attrs: Sequence[str]) -> str:
    if len(attrs) == 1:
        return attrs[0]
    return "and(" + ",".join(attrs) + ")"


def format_table(rows: Sequence[BenchRow]) -> str:
    lines = []
    hdr = (
        f"{'size':>8} {'neurons':>9} {'model MB':>9} {'encrypt s':>10} "
        f"{'bundle B':>9} {'kmap B':>8} {'TE dec s':>9} {'CE dec s':>9} "
        f"{'keygen ms':>10} {'update B':>9} {'naive B':>11}"
    )
    lines.append(hdr)
    lines.append("-" * len(hdr))
    for r in rows:
        lines.append(
            f"{r.label:>8} {r.n_neurons:>9} {r.model_bytes / 1e6:>9.2f} {r.encrypt_s:>10.3f} "
            f"{r.bundle_bytes:>9} {r.kmap_bytes:>8} {r.te_s:>9.3f} {r.ce_s:>9.3f} "
            f"{max(r.keygen_ms):>10.2f} {r.update_bytes:>9} {r.naive_update_bytes:>11}"
        )
    lines.append("")
    lines.append("capability update = attribute-key bytes only (constant); naive = re-send model")
    return "\n".join(lines)


def check_scaling(rows: Sequence[BenchRow]) -> list[str]:
    """Assertions the overhead contract makes; returns violation messages."""
    problems = []
    if len(rows) >= 2:
        sk_sizes = {b for r in rows for b in r.sk_bytes[:1]}
        if len(sk_sizes) > 1:
            problems.append(f"update bytes vary across model sizes: {sorted(sk_sizes)}")
        bundles = [r.bundle_bytes for r in rows]
        if max(bundles) != min(bundles):
            problems.append(f"bundle size varies with model size: {bundles}")
        span = max(r.model_bytes for r in rows) / min(r.model_bytes for r in rows)
        if span < 2:
            problems.append(f"model sizes span only {span:.1f}x; scaling not observable")
    for r in rows:
        if r.update_bytes >= r.naive_update_bytes:
            problems.append(
                f"{r.label}: update bytes {r.update_bytes} not below naive {r.naive_update_bytes}"
            )
    return problems
