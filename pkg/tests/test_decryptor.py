import numpy as np
import pytest

from neuronlock.abe import abe_keygen, encrypt_bundle, recover_keys
from neuronlock.cipher import encrypt_model
from neuronlock.container import forward, neuron_spans, write_container
from neuronlock.decryptor import adaptive_prune, decrypt_ce, decrypt_te
from neuronlock.detection import calibrate_thresholds
from neuronlock.errors import KeyMapLengthMismatch
from neuronlock.policy import parse_policy
from neuronlock.rng import Rng
from neuronlock.selector import compute_importance, select_all
from neuronlock.subsets import build_policies, decompose_subsets
from neuronlock.synth import task_fixture


@pytest.fixture(scope="module")
def pipeline(abe_system_module=None):
    """2-task fixture taken through selection, partition, and encryption."""
    from neuronlock.abe import abe_setup

    rng = Rng(2024)
    fx = task_fixture(tasks=("health", "code"), seed=3)
    model = fx.model
    sel = select_all(compute_importance(fx.traces()))
    part = decompose_subsets(sel, model.n_neurons)
    policies = build_policies(
        part,
        {
            "health": parse_policy("and(Institution=Hospital,Licence=True)"),
            "code": parse_policy("Team=Dev"),
        },
    )
    pk, msk = abe_setup(rng)
    th = calibrate_thresholds(model, 32, rng)
    bundle, keys = encrypt_bundle(pk, part, policies, rng, thresholds=th)
    enc, kmap = encrypt_model(model, part, keys, nonce=rng.randbits(64))
    sks = {
        "admin": abe_keygen(msk, {"Institution=Hospital", "Licence=True", "Team=Dev"}, rng),
        "health": abe_keygen(msk, {"Institution=Hospital", "Licence=True"}, rng),
        "none": abe_keygen(msk, {"Visitor=1"}, rng),
    }
    recovered = {name: recover_keys(pk, sk, bundle) for name, sk in sks.items()}
    return dict(
        fx=fx, model=model, part=part, th=th, keys=keys, enc=enc, kmap=kmap,
        recovered=recovered,
    )


def test_te_admin_bit_identical(pipeline):
    out, report = decrypt_te(pipeline["enc"], pipeline["recovered"]["admin"], pipeline["th"])
    assert report.n_decrypted == pipeline["model"].n_neurons
    assert report.n_pruned == 0
    assert write_container(out) == write_container(pipeline["model"])


def test_te_empty_keys_prunes_everything(pipeline):
    out, report = decrypt_te(pipeline["enc"], {}, pipeline["th"])
    assert report.n_decrypted == 0
    assert report.n_pruned == pipeline["model"].n_neurons
    # all spans zeroized: no ciphertext leaks into the artifact
    assert not any(bytes(out.data))
    fx = pipeline["fx"]
    for task in fx.tasks:
        assert abs(fx.evaluate(out, task) - fx.chance) < 0.1


def test_te_health_only_prunes_exactly_code_subsets(pipeline):
    out, report = decrypt_te(pipeline["enc"], pipeline["recovered"]["health"], pipeline["th"])
    expected_pruned = {
        n
        for s in pipeline["part"].subsets
        if s.owners and "health" not in s.owners
        for n in s.neurons
    }
    assert set(np.nonzero(report.prune_mask)[0]) == expected_pruned


def test_te_trial_order_is_ascending_subset_id(pipeline):
    _, report = decrypt_te(pipeline["enc"], pipeline["recovered"]["admin"], pipeline["th"])
    kmap = pipeline["kmap"]
    order = sorted(pipeline["recovered"]["admin"])
    for g in range(len(kmap)):
        assert report.keys_tried[g] == order.index(int(kmap[g])) + 1


def test_ce_equals_te(pipeline):
    for who in ("admin", "health", "none"):
        keys = pipeline["recovered"][who]
        te, rep_te = decrypt_te(pipeline["enc"], keys, pipeline["th"])
        ce, rep_ce = decrypt_ce(pipeline["enc"], keys, pipeline["kmap"], pipeline["th"])
        assert write_container(ce) == write_container(te)
        assert np.array_equal(rep_ce.prune_mask, rep_te.prune_mask)


def test_ce_trial_count_equals_authorized(pipeline):
    keys = pipeline["recovered"]["health"]
    _, report = decrypt_ce(pipeline["enc"], keys, pipeline["kmap"], pipeline["th"])
    authorized = int(np.isin(pipeline["kmap"], list(keys)).sum())
    assert int(report.keys_tried.sum()) == authorized


def test_ce_kmap_length_mismatch(pipeline):
    with pytest.raises(KeyMapLengthMismatch):
        decrypt_ce(
            pipeline["enc"],
            pipeline["recovered"]["admin"],
            pipeline["kmap"][:-1],
            pipeline["th"],
        )


def test_ce_corrupted_kmap_flagged(pipeline):
    kmap = pipeline["kmap"].copy()
    keys = pipeline["recovered"]["admin"]
    victim = 0
    wrong = next(s for s in keys if s != kmap[victim])
    kmap[victim] = wrong
    out, report = decrypt_ce(pipeline["enc"], keys, kmap, pipeline["th"])
    assert victim in report.detection_failures
    assert not report.decrypted[victim]
    assert report.prune_mask[victim]
    # the victim's spans are zeroized, not left as wrong-key garbage
    for s, e in neuron_spans(out, out.ref_from_global(victim)):
        assert bytes(out.data[s:e]) == bytes(e - s)


def test_monotonicity_of_key_sets(pipeline):
    smaller = pipeline["recovered"]["health"]
    larger = pipeline["recovered"]["admin"]
    assert set(smaller) <= set(larger)
    _, rep_small = decrypt_te(pipeline["enc"], smaller, pipeline["th"])
    _, rep_large = decrypt_te(pipeline["enc"], larger, pipeline["th"])
    small_set = set(np.nonzero(rep_small.decrypted)[0])
    large_set = set(np.nonzero(rep_large.decrypted)[0])
    assert small_set <= large_set


def test_wrong_key_fails_detection(pipeline):
    """Trial decryptions with wrong key material must never pass detection."""
    kmap = pipeline["kmap"]
    sids = sorted(pipeline["keys"])
    bogus = {sids[0]: Rng(99).randbytes(16)}
    _, report = decrypt_te(pipeline["enc"], bogus, pipeline["th"])
    assert not report.decrypted.any()


def test_te_accepts_by_detection_not_label(pipeline):
    """The subset id on a trial key is ordering metadata; detection decides."""
    keys = pipeline["keys"]
    kmap = pipeline["kmap"]
    sids = sorted(keys)
    mislabeled = {sids[0]: keys[sids[1]]}  # subset 1's key under subset 0's label
    _, report = decrypt_te(pipeline["enc"], mislabeled, pipeline["th"])
    assert report.decrypted[kmap == sids[1]].all()
    assert not report.decrypted[kmap == sids[0]].any()


def test_wrong_counter_fails_detection(pipeline):
    """Right key, shifted counter stream: flagged undecrypted."""
    from neuronlock.cipher import keystream, BLOCK_BUDGET
    from neuronlock.detection import detect_decrypted

    enc = pipeline["enc"]
    kmap = pipeline["kmap"]
    keys = pipeline["keys"]
    g = 0
    sid = int(kmap[g])
    s, e = neuron_spans(enc, enc.ref_from_global(g)).w_in
    for delta in (-1, 1):
        ks = keystream(keys[sid], enc.nonce, (g + delta) * BLOCK_BUDGET, e - s)
        trial = bytes(a ^ b for a, b in zip(bytes(enc.data[s:e]), ks))
        ok, _ = detect_decrypted(trial, enc.dtype, pipeline["th"])
        assert not ok


def test_adaptive_prune_noop(pipeline):
    model = pipeline["model"]
    out, report = decrypt_te(pipeline["enc"], pipeline["recovered"]["admin"], pipeline["th"])
    pruned = adaptive_prune(out, report)
    assert write_container(pruned) == write_container(model)
    x = np.linspace(-1, 1, model.layers[0].d_in)
    assert np.array_equal(forward(pruned, x), forward(model, x))


def test_adaptive_prune_whole_layer():
    from neuronlock.decryptor import _empty_report
    from neuronlock.synth import random_model
    from neuronlock.container import Dtype, LayerSpec

    m = random_model([LayerSpec(4, 6, 3)], Dtype.FLOAT32, seed=9)
    report = _empty_report("te", m.n_neurons)
    report.prune_mask = np.ones(m.n_neurons, bool)
    pruned = adaptive_prune(m, report)
    out = forward(pruned, np.ones(4))
    assert np.array_equal(out, np.zeros(3))


def test_prune_fraction_matches_selection_fraction():
    """5-task fixture: dropping one task prunes ~that task's exclusive share."""
    from neuronlock.cipher import xor_neurons_bulk

    fx = task_fixture(
        tasks=("t0", "t1", "t2", "t3", "t4"), classes=3, tails_per_task=20, seed=5
    )
    model = fx.model
    sel = select_all(compute_importance(fx.traces()))
    part = decompose_subsets(sel, model.n_neurons)
    rng = Rng(3)
    keys = {s.subset_id: rng.randbytes(16) for s in part.subsets}
    th = calibrate_thresholds(model, 32, rng)
    enc, kmap = encrypt_model(model, part, keys, nonce=7)
    # drop exactly the {t4}-exclusive subset
    authorized = {
        s.subset_id: keys[s.subset_id]
        for s in part.subsets
        if s.owners != frozenset({"t4"})
    }
    out, report = decrypt_te(enc, authorized, th)
    exclusive = {n for s in part.subsets if s.owners == frozenset({"t4"}) for n in s.neurons}
    assert report.n_pruned == len(exclusive)
    sel_fraction = len(sel.sets["t4"]) / model.n_neurons
    prune_fraction = report.n_pruned / model.n_neurons
    assert prune_fraction <= sel_fraction
    assert prune_fraction >= sel_fraction / 2  # most of the selection is exclusive
