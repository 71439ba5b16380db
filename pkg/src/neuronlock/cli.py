"""Operator CLI: encrypt / keygen / decrypt / inspect / bench / calibrate.

Exit codes: 0 ok (full decryption), 2 partial decryption, 3 zero
decryption, 4 error. All artifact writes go through temp-and-rename so a
failing command never leaves a partial file behind.
"""

from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path
from typing import Optional

import click
import numpy as np

from . import abe, bench as bench_mod, cipher, container, detection, decryptor, selector, subsets
from .errors import ArtifactMismatch, MissingTaskPolicy, NeuronLockError
from .policy import parse_policy_file
from .rng import Rng

EXIT_OK = 0
EXIT_PARTIAL = 2
EXIT_ZERO = 3
EXIT_ERROR = 4


def _write_atomic(path: Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _fail(exc: Exception) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(EXIT_ERROR)


@click.group()
def main() -> None:
    """Task-level capability control for MLP weight containers."""


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--trace", "trace_paths", multiple=True, required=True, type=click.Path(exists=True))
@click.option("--policy-file", required=True, type=click.Path(exists=True))
@click.option("--lam", default=selector.DEFAULT_LAMBDA, show_default=True, help="penalty factor")
@click.option("--tau", default=selector.DEFAULT_TAU, show_default=True, help="importance mass threshold")
@click.option("--task-param", multiple=True, metavar="TASK=LAM:TAU", help="per-task override")
@click.option("--out-model", required=True, type=click.Path())
@click.option("--out-bundle", required=True, type=click.Path())
@click.option("--out-kmap", required=True, type=click.Path())
@click.option("--out-thresholds", required=True, type=click.Path())
@click.option("--out-msk", required=True, type=click.Path())
@click.option("--out-report", type=click.Path(), help="selection report (JSON)")
@click.option("--seed", type=int, default=None, help="seeded RNG for reproducible artifacts")
@click.option("--profile", default="ss512", show_default=True)
@click.option("--calib-samples", default=64, show_default=True)
def encrypt(
    model_path, trace_paths, policy_file, lam, tau, task_param,
    out_model, out_bundle, out_kmap, out_thresholds, out_msk, out_report,
    seed, profile, calib_samples,
) -> None:
    """Select, partition, and encrypt a model; emit all deployment artifacts."""
    try:
        model = container.load(model_path)
        traces = [selector.load_trace(p) for p in trace_paths]
        user_policies = parse_policy_file(Path(policy_file).read_text())
        for tr in traces:
            if tr.task not in user_policies:
                raise MissingTaskPolicy(f"no policy for traced task {tr.task!r}")
        per_task = {}
        for spec in task_param:
            name, _, params = spec.partition("=")
            l, _, t = params.partition(":")
            per_task[name] = (float(l), float(t))

        rng = Rng(seed)
        imp = selector.compute_importance(traces)
        sel = selector.select_all(imp, lam=lam, tau=tau, per_task=per_task)
        part = subsets.decompose_subsets(sel, model.n_neurons)
        policies = subsets.build_policies(part, user_policies)
        pk, msk = abe.abe_setup(rng, profile)
        thresholds = detection.calibrate_thresholds(model, calib_samples, rng)
        nonce = rng.randbits(64)
        bundle, keys = abe.encrypt_bundle(
            pk, part, policies, rng, model_nonce=nonce, thresholds=thresholds
        )
        enc, kmap = cipher.encrypt_model(model, part, keys, nonce)

        _write_atomic(Path(out_model), container.write_container(enc))
        _write_atomic(Path(out_bundle), abe.write_bundle(bundle))
        _write_atomic(Path(out_kmap), cipher.write_kmap(kmap))
        _write_atomic(Path(out_thresholds), thresholds.to_json().encode())
        _write_atomic(Path(out_msk), abe.write_master_key(msk))
        if out_report:
            _write_atomic(Path(out_report), selector.selection_report(imp, sel).encode())
        click.echo(
            f"encrypted {model.n_neurons} neurons into {len(part.subsets)} subsets "
            f"({len(bundle.entries)} bundle entries)"
        )
    except NeuronLockError as exc:
        _fail(exc)


@main.command()
@click.option("--msk", "msk_path", required=True, type=click.Path(exists=True))
@click.option("--attr", "attrs", multiple=True, required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def keygen(msk_path, attrs, out_path) -> None:
    """Issue an attribute secret key (.ask); prints size and elapsed time."""
    try:
        msk = abe.read_master_key(Path(msk_path).read_bytes())
        rng = Rng()
        t0 = time.perf_counter()
        sk = abe.abe_keygen(msk, attrs, rng)
        elapsed = time.perf_counter() - t0
        raw = abe.write_secret_key(sk)
        _write_atomic(Path(out_path), raw)
        click.echo(f"wrote {len(raw)} bytes in {elapsed * 1e3:.2f} ms")
    except NeuronLockError as exc:
        _fail(exc)


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--bundle", "bundle_path", required=True, type=click.Path(exists=True))
@click.option("--key", "key_path", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["te", "ce"]), default="te", show_default=True)
@click.option("--kmap", "kmap_path", type=click.Path(exists=True), help="required for --mode ce")
@click.option("--thresholds", "thresholds_path", type=click.Path(exists=True), help="override bundle thresholds")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--report", "report_path", type=click.Path())
@click.option("--per-neuron", is_flag=True, help="include per-neuron rows in the report")
def decrypt(
    model_path, bundle_path, key_path, mode, kmap_path, thresholds_path,
    out_path, report_path, per_neuron,
) -> None:
    """Recover authorized keys, selectively decrypt, detect, and prune."""
    try:
        enc = container.load(model_path)
        bundle = abe.read_bundle(Path(bundle_path).read_bytes())
        sk = abe.read_secret_key(Path(key_path).read_bytes())
        if not enc.encrypted:
            raise ArtifactMismatch("model container is not encrypted")
        if bundle.model_nonce and bundle.model_nonce != enc.nonce:
            raise ArtifactMismatch(
                f"bundle nonce {bundle.model_nonce:#x} does not match model nonce {enc.nonce:#x}"
            )
        if sk.pk_id and sk.pk_id != bundle.public.fingerprint():
            raise ArtifactMismatch("secret key was not issued under this bundle's public params")
        if thresholds_path:
            thresholds = detection.DetectionThresholds.from_json(
                Path(thresholds_path).read_text()
            )
        else:
            thresholds = bundle.thresholds
        if thresholds is None:
            raise ArtifactMismatch("no detection thresholds in bundle; pass --thresholds")

        keys = abe.recover_keys(bundle.public, sk, bundle)
        if mode == "ce":
            if not kmap_path:
                raise ArtifactMismatch("--mode ce needs --kmap")
            kmap = cipher.load_kmap(kmap_path)
            out, report = decryptor.decrypt_ce(enc, keys, kmap, thresholds)
        else:
            out, report = decryptor.decrypt_te(enc, keys, thresholds)

        _write_atomic(Path(out_path), container.write_container(out))
        if report_path:
            _write_atomic(Path(report_path), report.to_json(per_neuron).encode())
        summary = report.summary()
        click.echo(json.dumps(summary))
        if report.n_decrypted == 0:
            sys.exit(EXIT_ZERO)
        if report.n_pruned > 0:
            sys.exit(EXIT_PARTIAL)
    except NeuronLockError as exc:
        _fail(exc)


@main.command()
@click.argument("path", type=click.Path(exists=True))
@click.option("--forward", "forward_path", type=click.Path(exists=True),
              help="JSON {\"input\": [...]} to run through a plaintext container")
def inspect(path, forward_path) -> None:
    """Describe an artifact (.snm, .abk, .ask, .kmap, .trace) by its magic."""
    try:
        raw = Path(path).read_bytes()
        if raw.startswith(container.MAGIC):
            m = container.read_container(raw)
            info = {
                "kind": "model",
                "dtype": m.dtype.name,
                "encrypted": m.encrypted,
                "layers": [[s.d_in, s.d_hidden, s.d_out] for s in m.layers],
                "neurons": m.n_neurons,
                "body_bytes": m.body_bytes,
                "head_bytes": len(m.head) if m.head else 0,
            }
            if m.encrypted:
                info["nonce"] = f"{m.nonce:#x}"
            click.echo(json.dumps(info, indent=2))
            if forward_path:
                doc = json.loads(Path(forward_path).read_text())
                out = container.forward(m, np.asarray(doc["input"], dtype=np.float64))
                click.echo(json.dumps({"output": np.asarray(out).tolist()}))
        elif raw.startswith(abe.BUNDLE_MAGIC):
            b = abe.read_bundle(raw)
            click.echo(json.dumps({
                "kind": "bundle",
                "profile": b.profile,
                "bundle_id": f"{b.bundle_id:#x}",
                "model_nonce": f"{b.model_nonce:#x}",
                "tasks": b.tasks,
                "entries": [
                    {"subset": e.subset_id, "owners": sorted(e.owners),
                     "policy": e.policy.to_text()}
                    for e in b.entries
                ],
                "thresholds": None if b.thresholds is None else {
                    "m_max": b.thresholds.m_max, "v_split": b.thresholds.v_split},
            }, indent=2))
        elif raw.startswith(abe.SK_MAGIC):
            sk = abe.read_secret_key(raw)
            click.echo(json.dumps({
                "kind": "attribute-key",
                "profile": sk.profile,
                "attributes": sorted(sk.attributes),
                "bytes": len(raw),
            }, indent=2))
        elif raw.startswith(cipher.KMAP_MAGIC):
            kmap = cipher.read_kmap(raw)
            click.echo(json.dumps({
                "kind": "key-map",
                "neurons": int(kmap.size),
                "subsets": sorted(int(s) for s in np.unique(kmap)),
            }, indent=2))
        elif raw.startswith(selector.TRACE_MAGIC):
            tr = selector.read_trace(raw)
            click.echo(json.dumps({
                "kind": "trace",
                "task": tr.task,
                "neurons": int(tr.sums.size),
                "samples": tr.count,
            }, indent=2))
        else:
            raise NeuronLockError(f"unrecognized artifact magic {raw[:8]!r}")
    except NeuronLockError as exc:
        _fail(exc)


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--samples", default=64, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
def calibrate(model_path, samples, seed, out_path) -> None:
    """Measure detection metric ranges on a plaintext model, emit thresholds."""
    try:
        model = container.load(model_path)
        thresholds = detection.calibrate_thresholds(model, samples, Rng(seed))
        _write_atomic(Path(out_path), thresholds.to_json().encode())
        click.echo(thresholds.to_json())
    except NeuronLockError as exc:
        _fail(exc)


@main.command()
@click.option("--scenario", "scenario_path", type=click.Path(exists=True),
              help="JSON scenario; omit for the built-in 3-size default")
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--out", "out_path", type=click.Path(), help="also write the table to a file")
def bench(scenario_path, seed, out_path) -> None:
    """Measure first-deployment vs capability-update overhead."""
    try:
        scenario = None
        if scenario_path:
            scenario = json.loads(Path(scenario_path).read_text())
        rows = bench_mod.run_scenario(scenario, seed=seed)
        table = bench_mod.format_table(rows)
        problems = bench_mod.check_scaling(rows)
        click.echo(table)
        for p in problems:
            click.echo(f"VIOLATION: {p}", err=True)
        if out_path:
            _write_atomic(Path(out_path), (table + "\n").encode())
        if problems:
            sys.exit(EXIT_ERROR)
    except NeuronLockError as exc:
        _fail(exc)


if __name__ == "__main__":
    main()
