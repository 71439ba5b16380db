import numpy as np
import pytest

from neuronlock.cipher import (
    BLOCK_BUDGET,
    NeuronCipherConfig,
    decrypt_neuron,
    encrypt_model,
    encrypt_neuron,
    keystream,
    read_kmap,
    write_kmap,
    xor_neurons_bulk,
)
from neuronlock.container import Dtype, LayerSpec, neuron_spans, write_container
from neuronlock.errors import MissingSubsetKey, SpanTooLarge
from neuronlock.rng import Rng
from neuronlock.selector import compute_importance, select_all
from neuronlock.subsets import decompose_subsets
from neuronlock.synth import build_container, random_model

KEY = bytes(range(16))


# -- keystream layout against published known-answer vectors -------------------------


def test_fips197_single_block():
    # AES-128 core: FIPS-197 Appendix C.1
    key = bytes.fromhex("000102030405060708090a0b0c0d0e0f")
    iv_block = bytes.fromhex("00112233445566778899aabbccddeeff")
    nonce = int.from_bytes(iv_block[:8], "big")
    counter = int.from_bytes(iv_block[8:], "big")
    ks = keystream(key, nonce, counter, 16)
    assert ks == bytes.fromhex("69c4e0d86a7b0430d8cdb78070b4c55a")


def test_sp800_38a_ctr_vectors():
    # NIST SP 800-38A F.5.1 CTR-AES128.Encrypt
    key = bytes.fromhex("2b7e151628aed2a6abf7158809cf4f3c")
    iv = bytes.fromhex("f0f1f2f3f4f5f6f7f8f9fafbfcfdfeff")
    pt = bytes.fromhex(
        "6bc1bee22e409f96e93d7e117393172a"
        "ae2d8a571e03ac9c9eb76fac45af8e51"
        "30c81c46a35ce411e5fbc1191a0a52ef"
        "f69f2445df4f9b17ad2b417be66c3710"
    )
    expect = bytes.fromhex(
        "874d6191b620e3261bef6864990db6ce"
        "9806f66b7970fdff8617187bb9fffdff"
        "5ae4df3edbd5d35e5b4f09020db03eab"
        "1e031dda2fbe03d1792170a0f3009cee"
    )
    ks = keystream(
        key,
        int.from_bytes(iv[:8], "big"),
        int.from_bytes(iv[8:], "big"),
        len(pt),
    )
    assert bytes(a ^ b for a, b in zip(pt, ks)) == expect


def test_neuron_keystream_layout(tiny_f32):
    """Neuron g consumes counters starting exactly at g * BLOCK_BUDGET."""
    m = tiny_f32.copy()
    ref = m.neuron_ref(0, 2)
    before = bytes(m.data)
    encrypt_neuron(NeuronCipherConfig(key=KEY, nonce=0xA5A5), m, ref)
    spans = neuron_spans(m, ref)
    ks = keystream(KEY, 0xA5A5, ref.global_index * BLOCK_BUDGET, spans.total_bytes)
    pos = 0
    for s, e in spans:
        assert bytes(m.data[s:e]) == bytes(
            x ^ k for x, k in zip(before[s:e], ks[pos : pos + (e - s)])
        )
        pos += e - s


# -- involution and locality -------------------------------------------------------


@pytest.mark.parametrize("dtype", list(Dtype))
def test_involution_all_dtypes(dtype):
    m = random_model([LayerSpec(6, 9, 4)], dtype, seed=3)
    original = bytes(m.data)
    cfg = NeuronCipherConfig(key=KEY, nonce=77)
    for g in range(m.n_neurons):
        encrypt_neuron(cfg, m, m.ref_from_global(g))
    assert bytes(m.data) != original
    for g in range(m.n_neurons):
        decrypt_neuron(cfg, m, m.ref_from_global(g))
    assert bytes(m.data) == original


def test_other_neurons_untouched(tiny_f32):
    m = tiny_f32.copy()
    before = bytes(m.data)
    encrypt_neuron(NeuronCipherConfig(key=KEY, nonce=1), m, m.neuron_ref(0, 0))
    touched = neuron_spans(m, m.neuron_ref(0, 0))
    for g in (1, 2):
        for s, e in neuron_spans(m, m.ref_from_global(g)):
            assert bytes(m.data[s:e]) == before[s:e]
    changed = any(bytes(m.data[s:e]) != before[s:e] for s, e in touched)
    assert changed


def test_span_too_large():
    # one neuron owning > 2^16 blocks of 16 bytes
    w_in = np.zeros((1, 262200), dtype=np.float32)
    m = build_container([w_in], [np.zeros(1)], [np.zeros((1, 4))], Dtype.FLOAT32)
    with pytest.raises(SpanTooLarge):
        encrypt_neuron(NeuronCipherConfig(key=KEY, nonce=0), m, m.neuron_ref(0, 0))


def test_counter_ranges_disjoint():
    # largest possible span stays inside one neuron's counter budget
    span_bytes = BLOCK_BUDGET * 16
    blocks = (span_bytes + 15) // 16
    assert blocks <= BLOCK_BUDGET


def test_empty_segment_handling(tiny_f32):
    # xor helper must accept zero-length segments
    from neuronlock.cipher import _xor_span

    m = tiny_f32.copy()
    before = bytes(m.data)
    _xor_span(m.data, 4, 4, memoryview(b""))
    assert bytes(m.data) == before


# -- bulk path -----------------------------------------------------------------------


@pytest.mark.parametrize("dtype", list(Dtype))
def test_bulk_equals_per_neuron(dtype):
    m1 = random_model([LayerSpec(5, 11, 3), LayerSpec(3, 7, 2)], dtype, seed=4)
    m2 = m1.copy()
    picks = [0, 2, 3, 9, 12, 17]
    cfg = NeuronCipherConfig(key=KEY, nonce=9)
    for g in picks:
        encrypt_neuron(cfg, m1, m1.ref_from_global(g))
    xor_neurons_bulk(m2, picks, KEY, 9)
    assert bytes(m1.data) == bytes(m2.data)


def _partitioned(model, seed=5):
    rng = Rng(seed)
    rs = np.random.RandomState(seed)
    from neuronlock.selector import ActivationTrace

    traces = [
        ActivationTrace(t, rs.uniform(0, 1, model.n_neurons), 4) for t in ("a", "b")
    ]
    sel = select_all(compute_importance(traces), tau=0.3)
    part = decompose_subsets(sel, model.n_neurons)
    keys = {s.subset_id: rng.randbytes(16) for s in part.subsets}
    return part, keys


def test_encrypt_model_roundtrip_and_kmap(tiny_int8):
    part, keys = _partitioned(tiny_int8)
    enc, kmap = encrypt_model(tiny_int8, part, keys, nonce=123)
    assert enc.encrypted and enc.nonce == 123
    assert not tiny_int8.encrypted  # input untouched
    assert len(kmap) == tiny_int8.n_neurons
    # full-permission decrypt restores the exact plaintext
    for sub in part.subsets:
        xor_neurons_bulk(enc, sub.neurons, keys[sub.subset_id], 123)
    enc.encrypted = False
    enc.nonce = None
    assert write_container(enc) == write_container(tiny_int8)


def test_encrypt_model_deterministic(tiny_int8):
    part, keys = _partitioned(tiny_int8)
    e1, k1 = encrypt_model(tiny_int8, part, keys, nonce=5)
    e2, k2 = encrypt_model(tiny_int8, part, keys, nonce=5)
    assert write_container(e1) == write_container(e2)
    assert np.array_equal(k1, k2)


def test_encrypt_model_missing_key(tiny_int8):
    part, keys = _partitioned(tiny_int8)
    keys.pop(part.subsets[0].subset_id)
    with pytest.raises(MissingSubsetKey):
        encrypt_model(tiny_int8, part, keys, nonce=5)


def test_key_locality(tiny_int8):
    """Changing subset B's key must only change subset B neurons' bytes."""
    part, keys = _partitioned(tiny_int8)
    assert len(part.subsets) >= 2
    e1, _ = encrypt_model(tiny_int8, part, keys, nonce=9)
    keys2 = dict(keys)
    sid_b = part.subsets[1].subset_id
    keys2[sid_b] = bytes(16)
    e2, _ = encrypt_model(tiny_int8, part, keys2, nonce=9)
    b_neurons = set(part.subsets[1].neurons)
    for g in range(tiny_int8.n_neurons):
        spans = neuron_spans(e1, e1.ref_from_global(g))
        same = all(
            bytes(e1.data[s:e]) == bytes(e2.data[s:e]) for s, e in spans
        )
        assert same == (g not in b_neurons)


def test_ciphertext_bytes_uniform_chi_square():
    """>= 64 KB of ciphertext passes a chi-square uniformity test at p > 0.01."""
    from scipy import stats

    m = random_model([LayerSpec(256, 256, 64)], Dtype.FLOAT32, seed=6)
    assert m.body_bytes >= 64 * 1024
    part, keys = _partitioned(m, seed=8)
    enc, _ = encrypt_model(m, part, keys, nonce=2024)
    counts = np.bincount(np.frombuffer(bytes(enc.data), np.uint8), minlength=256)
    _, p = stats.chisquare(counts)
    assert p > 0.01


def test_kmap_roundtrip():
    kmap = np.array([0, 1, 2, 1, 0], dtype=np.uint32)
    assert np.array_equal(read_kmap(write_kmap(kmap)), kmap)
