"""Per-neuron AES-128-CTR encryption of the three weight spans.

Counter layout: the 128-bit counter block is the 64-bit per-model nonce
followed by a 64-bit counter, both big-endian (standard incrementing CTR
semantics). Neuron n owns the counter range [g(n)*B, (g(n)+1)*B) where
g(n) is its global index and B = 2^16 blocks (a 1 MiB keystream budget per
neuron), so no two neurons ever consume the same counter under one key.
The three spans are treated as one concatenated stream W_IN | B_IN | W_OUT_T
starting at counter g(n)*B.

Because CTR keystream is just AES-ECB over the counter blocks, bulk
operations build the counter-block buffer for thousands of neurons at once
and run a single ECB pass, then XOR with numpy. The per-neuron path and the
batch path produce identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .container import ModelContainer, NeuronRef, neuron_spans
from .errors import MissingSubsetKey, ShapeMismatch, SpanTooLarge
from .subsets import SubsetPartition

BLOCK_BUDGET = 1 << 16  # counter blocks reserved per neuron
SPAN_BYTE_LIMIT = BLOCK_BUDGET * 16

KMAP_MAGIC = b"SNKMAP01"


@dataclass
class NeuronCipherConfig:
    key: bytes  # 16 bytes (AES-128)
    nonce: int  # 64-bit per-model value
    counter_base: Optional[int] = None  # g(n) * BLOCK_BUDGET; None = derive from ref

    def __post_init__(self) -> None:
        if len(self.key) != 16:
            raise ValueError("AES-128 key must be 16 bytes")
        if not 0 <= self.nonce < 1 << 64:
            raise ValueError("nonce must fit in 64 bits")


def keystream(key: bytes, nonce: int, start_block: int, length: int) -> bytes:
    """CTR keystream bytes for counter blocks starting at `start_block`."""
    iv = nonce.to_bytes(8, "big") + (start_block & ((1 << 64) - 1)).to_bytes(8, "big")
    enc = Cipher(algorithms.AES(key), modes.CTR(iv)).encryptor()
    return enc.update(bytes(length))


def _xor_span(data: bytearray, start: int, stop: int, ks: memoryview) -> None:
    view = np.frombuffer(data, np.uint8, stop - start, start)
    view ^= np.frombuffer(ks, np.uint8)


def _neuron_stream_base(ref: NeuronRef) -> int:
    return ref.global_index * BLOCK_BUDGET


def encrypt_neuron(
    cfg: NeuronCipherConfig, model: ModelContainer, ref: NeuronRef
) -> None:
    """XOR the neuron's three spans with its keystream, in place.

    CTR is an involution, so the same call decrypts. Spans of all other
    neurons are untouched.
    """
    spans = neuron_spans(model, ref)
    total = spans.total_bytes
    if total > SPAN_BYTE_LIMIT:
        raise SpanTooLarge(
            f"neuron spans of {total} bytes exceed the {SPAN_BYTE_LIMIT} byte budget"
        )
    base = cfg.counter_base
    if base is None:
        base = _neuron_stream_base(ref)
    ks = memoryview(keystream(cfg.key, cfg.nonce, base, total))
    pos = 0
    for start, stop in spans:
        n = stop - start
        if n:
            _xor_span(model.data, start, stop, ks[pos : pos + n])
        pos += n


decrypt_neuron = encrypt_neuron  # XOR involution


def _layer_u8_views(model: ModelContainer, layer: int):
    spec = model.layers[layer]
    off = model._offsets[layer]
    es = model.dtype.element_size
    data = model.data
    w_in = np.frombuffer(data, np.uint8, spec.d_hidden * spec.d_in * es, off.w_in)
    b_in = np.frombuffer(data, np.uint8, spec.d_hidden * es, off.b_in)
    w_out = np.frombuffer(data, np.uint8, spec.d_hidden * spec.d_out * es, off.w_out)
    return (
        w_in.reshape(spec.d_hidden, spec.d_in * es),
        b_in.reshape(spec.d_hidden, es),
        w_out.reshape(spec.d_hidden, spec.d_out * es),
    )


def keystream_matrix(
    key: bytes, nonce: int, rows_g: np.ndarray, blocks: int
) -> np.ndarray:
    """Per-neuron keystream rows: AES-ECB over each neuron's counter blocks.

    rows_g holds global neuron indices; row i gets the keystream of counter
    range [rows_g[i] * BLOCK_BUDGET, ... + blocks). Shape (len(rows_g),
    blocks * 16) uint8.
    """
    rows_g = np.asarray(rows_g, dtype=np.uint64)
    counters = np.empty((rows_g.size, blocks, 2), dtype=">u8")
    counters[:, :, 0] = nonce
    counters[:, :, 1] = (
        rows_g[:, None] * np.uint64(BLOCK_BUDGET)
        + np.arange(blocks, dtype=np.uint64)[None, :]
    )
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    ks = np.frombuffer(enc.update(counters.tobytes()), np.uint8)
    return ks.reshape(rows_g.size, blocks * 16)


def xor_neurons_bulk(
    model: ModelContainer, globals_: Sequence[int], key: bytes, nonce: int
) -> None:
    """Encrypt/decrypt many neurons under one key with a single ECB pass."""
    if len(globals_) == 0:
        return
    order = np.asarray(sorted(globals_), dtype=np.uint64)
    base = np.asarray(model._neuron_base, dtype=np.uint64)
    for layer in range(len(model.layers)):
        lo_g, hi_g = base[layer], base[layer + 1]
        rows_g = order[(order >= lo_g) & (order < hi_g)]
        if rows_g.size == 0:
            continue
        rows = (rows_g - lo_g).astype(np.int64)
        spec = model.layers[layer]
        es = model.dtype.element_size
        span_len = spec.neuron_bytes * es
        if span_len > SPAN_BYTE_LIMIT:
            raise SpanTooLarge(
                f"neuron spans of {span_len} bytes exceed the {SPAN_BYTE_LIMIT} byte budget"
            )
        blocks = (span_len + 15) // 16
        ks = keystream_matrix(key, nonce, rows_g, blocks)[:, :span_len]
        w_in, b_in, w_out = _layer_u8_views(model, layer)
        w_len = spec.d_in * es
        w_in[rows] ^= ks[:, :w_len]
        b_in[rows] ^= ks[:, w_len : w_len + es]
        w_out[rows] ^= ks[:, w_len + es :]


def encrypt_model(
    model: ModelContainer,
    partition: SubsetPartition,
    keys: Mapping[int, bytes],
    nonce: int,
) -> tuple[ModelContainer, np.ndarray]:
    """Encrypt every neuron under its subset's key; returns (model, key map F).

    The input container is left untouched; the returned container has
    encrypted_flag set and carries the nonce. F holds the subset_id of each
    global neuron (the C-E decryption metadata).
    """
    if model.encrypted:
        raise ShapeMismatch("container is already encrypted")
    if partition.total_neurons != model.n_neurons:
        raise ShapeMismatch(
            f"partition covers {partition.total_neurons} neurons, model has {model.n_neurons}"
        )
    for sub in partition.subsets:
        if sub.subset_id not in keys:
            raise MissingSubsetKey(f"no AES key for subset {sub.subset_id}")
    enc = model.copy()
    enc.encrypted = True
    enc.nonce = nonce
    for sub in partition.subsets:
        xor_neurons_bulk(enc, sub.neurons, keys[sub.subset_id], nonce)
    return enc, np.asarray(partition.subset_of(), dtype=np.uint32)


# -- key map file (.kmap) -------------------------------------------------------


def write_kmap(kmap: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(kmap, dtype="<u4")
    return KMAP_MAGIC + len(arr).to_bytes(8, "little") + arr.tobytes()


def read_kmap(raw: bytes) -> np.ndarray:
    from .errors import BadMagic, TruncatedTensor

    if len(raw) < 16 or not raw.startswith(KMAP_MAGIC):
        raise BadMagic("not a SNKMAP01 key map")
    n = int.from_bytes(raw[8:16], "little")
    if len(raw) != 16 + 4 * n:
        raise TruncatedTensor(f"key map: expected {4 * n} payload bytes")
    return np.frombuffer(raw, "<u4", n, 16).copy()


def load_kmap(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_kmap(fh.read())


def save_kmap(kmap: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_kmap(kmap))
