"""Neuron-structured MLP weight container (.snm).

Binary layout, all integers little-endian:

    magic       8 bytes     b"SNMODEL1"
    version     u16         currently 1
    dtype       u8          0=FLOAT32, 1=FLOAT16, 2=INT8
    encrypted   u8          0 or 1
    sigma       u8          activation tag, 0=ReLU (the only reference value)
    nonce       u64         present iff encrypted == 1
    layer_count u16
    layer table layer_count x (d_in u32, d_hidden u32, d_out u32)
    tensors     per layer, in order: W_IN (d_hidden x d_in, row-major),
                B_IN (d_hidden), W_OUT_T (d_hidden x d_out, row-major)
    head        optional: u64 byte length + raw bytes (absent = EOF)

W_OUT is stored transposed (one row per neuron) so that each hidden neuron
owns exactly three contiguous byte spans: its W_IN row, its B_IN element and
its W_OUT_T row. The optional head section carries weights that are outside
the neuron encryption scope and is never touched by the cipher.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    BadMagic,
    EncryptedModelError,
    OutOfRange,
    ShapeMismatch,
    TruncatedTensor,
    UnknownDtype,
    UnsupportedVersion,
)

MAGIC = b"SNMODEL1"
VERSION = 1

SIGMA_RELU = 0


class Dtype(enum.Enum):
    FLOAT32 = 0
    FLOAT16 = 1
    INT8 = 2

    @property
    def element_size(self) -> int:
        return {Dtype.FLOAT32: 4, Dtype.FLOAT16: 2, Dtype.INT8: 1}[self]

    @property
    def np_dtype(self) -> np.dtype:
        return {
            Dtype.FLOAT32: np.dtype("<f4"),
            Dtype.FLOAT16: np.dtype("<f2"),
            Dtype.INT8: np.dtype("i1"),
        }[self]

    @classmethod
    def from_tag(cls, tag: int) -> "Dtype":
        try:
            return cls(tag)
        except ValueError:
            raise UnknownDtype(f"unknown dtype tag {tag}") from None


@dataclass(frozen=True)
class LayerSpec:
    d_in: int
    d_hidden: int
    d_out: int

    def __post_init__(self) -> None:
        if min(self.d_in, self.d_hidden, self.d_out) <= 0:
            raise ShapeMismatch(f"layer dims must be positive, got {self}")

    @property
    def neuron_bytes(self) -> int:
        """Scalar count owned by one neuron (W_IN row + bias + W_OUT_T row)."""
        return self.d_in + 1 + self.d_out


@dataclass(frozen=True)
class NeuronRef:
    layer: int
    index: int
    global_index: int


class NeuronSpans(NamedTuple):
    """Byte ranges (start, stop) into the container body for one neuron."""

    w_in: tuple[int, int]
    b_in: tuple[int, int]
    w_out: tuple[int, int]

    @property
    def total_bytes(self) -> int:
        return sum(stop - start for start, stop in self)


class _LayerOffsets(NamedTuple):
    w_in: int
    b_in: int
    w_out: int
    end: int


@dataclass
class ModelContainer:
    layers: list[LayerSpec]
    dtype: Dtype
    data: bytearray
    version: int = VERSION
    encrypted: bool = False
    sigma: int = SIGMA_RELU
    nonce: Optional[int] = None
    head: Optional[bytes] = None
    _offsets: list[_LayerOffsets] = field(init=False, repr=False)
    _neuron_base: list[int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.layers:
            raise ShapeMismatch("container needs at least one layer")
        es = self.dtype.element_size
        offsets = []
        pos = 0
        base = [0]
        for spec in self.layers:
            w_in = pos
            b_in = w_in + spec.d_hidden * spec.d_in * es
            w_out = b_in + spec.d_hidden * es
            pos = w_out + spec.d_hidden * spec.d_out * es
            offsets.append(_LayerOffsets(w_in, b_in, w_out, pos))
            base.append(base[-1] + spec.d_hidden)
        if len(self.data) != pos:
            raise TruncatedTensor(
                f"tensor body is {len(self.data)} bytes, layer table implies {pos}"
            )
        if self.encrypted and self.nonce is None:
            raise ShapeMismatch("encrypted container requires a nonce")
        self._offsets = offsets
        self._neuron_base = base

    # -- shape bookkeeping ---------------------------------------------------

    @property
    def n_neurons(self) -> int:
        return self._neuron_base[-1]

    @property
    def body_bytes(self) -> int:
        return self._offsets[-1].end

    def global_index(self, layer: int, index: int) -> int:
        self._check(layer, index)
        return self._neuron_base[layer] + index

    def neuron_ref(self, layer: int, index: int) -> NeuronRef:
        return NeuronRef(layer, index, self.global_index(layer, index))

    def ref_from_global(self, g: int) -> NeuronRef:
        if not 0 <= g < self.n_neurons:
            raise OutOfRange(f"global neuron index {g} not in [0, {self.n_neurons})")
        layer = int(np.searchsorted(self._neuron_base, g, side="right")) - 1
        return NeuronRef(layer, g - self._neuron_base[layer], g)

    def _check(self, layer: int, index: int) -> None:
        if not 0 <= layer < len(self.layers):
            raise OutOfRange(f"layer {layer} not in [0, {len(self.layers)})")
        if not 0 <= index < self.layers[layer].d_hidden:
            raise OutOfRange(
                f"neuron {index} not in [0, {self.layers[layer].d_hidden}) of layer {layer}"
            )

    # -- tensor views (no copies) ---------------------------------------------

    def w_in(self, layer: int) -> np.ndarray:
        spec, off = self.layers[layer], self._offsets[layer]
        return self._view(off.w_in, spec.d_hidden * spec.d_in).reshape(
            spec.d_hidden, spec.d_in
        )

    def b_in(self, layer: int) -> np.ndarray:
        spec, off = self.layers[layer], self._offsets[layer]
        return self._view(off.b_in, spec.d_hidden)

    def w_out_t(self, layer: int) -> np.ndarray:
        spec, off = self.layers[layer], self._offsets[layer]
        return self._view(off.w_out, spec.d_hidden * spec.d_out).reshape(
            spec.d_hidden, spec.d_out
        )

    def _view(self, offset: int, count: int) -> np.ndarray:
        es = self.dtype.element_size
        return np.frombuffer(self.data, self.dtype.np_dtype, count, offset)

    def copy(self) -> "ModelContainer":
        return ModelContainer(
            layers=list(self.layers),
            dtype=self.dtype,
            data=bytearray(self.data),
            version=self.version,
            encrypted=self.encrypted,
            sigma=self.sigma,
            nonce=self.nonce,
            head=self.head,
        )


def neuron_spans(model: ModelContainer, ref: NeuronRef) -> NeuronSpans:
    """Exact byte ranges of the three weight spans owned by one neuron."""
    model._check(ref.layer, ref.index)
    expect = model._neuron_base[ref.layer] + ref.index
    if ref.global_index != expect:
        raise OutOfRange(
            f"global index {ref.global_index} inconsistent with ({ref.layer}, {ref.index})"
        )
    spec = model.layers[ref.layer]
    off = model._offsets[ref.layer]
    es = model.dtype.element_size
    w_in = off.w_in + ref.index * spec.d_in * es
    b_in = off.b_in + ref.index * es
    w_out = off.w_out + ref.index * spec.d_out * es
    return NeuronSpans(
        (w_in, w_in + spec.d_in * es),
        (b_in, b_in + es),
        (w_out, w_out + spec.d_out * es),
    )


# -- serialization -------------------------------------------------------------

_HDR_FIXED = struct.Struct("<8sHBBB")
_NONCE = struct.Struct("<Q")
_LAYER = struct.Struct("<III")
_COUNT = struct.Struct("<H")
_HEADLEN = struct.Struct("<Q")


def write_container(model: ModelContainer) -> bytes:
    """Serialize a container; read_container inverts this bit-exactly."""
    parts = [
        _HDR_FIXED.pack(
            MAGIC, model.version, model.dtype.value, int(model.encrypted), model.sigma
        )
    ]
    if model.encrypted:
        parts.append(_NONCE.pack(model.nonce))
    parts.append(_COUNT.pack(len(model.layers)))
    for spec in model.layers:
        parts.append(_LAYER.pack(spec.d_in, spec.d_hidden, spec.d_out))
    parts.append(bytes(model.data))
    if model.head is not None:
        parts.append(_HEADLEN.pack(len(model.head)))
        parts.append(model.head)
    return b"".join(parts)


def read_container(raw: bytes) -> ModelContainer:
    """Parse container bytes; spans become offsets into one shared buffer."""
    if len(raw) < _HDR_FIXED.size or not raw.startswith(MAGIC):
        raise BadMagic("not a SNMODEL1 container")
    _, version, dtag, enc, sigma = _HDR_FIXED.unpack_from(raw, 0)
    if version != VERSION:
        raise UnsupportedVersion(f"container version {version}, supported: {VERSION}")
    dtype = Dtype.from_tag(dtag)
    if enc not in (0, 1):
        raise TruncatedTensor(f"encrypted flag must be 0/1, got {enc}")
    pos = _HDR_FIXED.size
    nonce = None
    if enc:
        if len(raw) < pos + _NONCE.size:
            raise TruncatedTensor("header truncated before nonce")
        (nonce,) = _NONCE.unpack_from(raw, pos)
        pos += _NONCE.size
    if len(raw) < pos + _COUNT.size:
        raise TruncatedTensor("header truncated before layer count")
    (n_layers,) = _COUNT.unpack_from(raw, pos)
    pos += _COUNT.size
    if n_layers == 0:
        raise TruncatedTensor("layer table is empty")
    if len(raw) < pos + n_layers * _LAYER.size:
        raise TruncatedTensor("layer table truncated")
    layers = []
    for _ in range(n_layers):
        d_in, d_hidden, d_out = _LAYER.unpack_from(raw, pos)
        pos += _LAYER.size
        layers.append(LayerSpec(d_in, d_hidden, d_out))
    es = dtype.element_size
    body = sum(s.d_hidden * (s.d_in + 1 + s.d_out) for s in layers) * es
    if len(raw) < pos + body:
        raise TruncatedTensor(
            f"tensor body truncated: need {body} bytes, have {len(raw) - pos}"
        )
    data = bytearray(raw[pos : pos + body])
    pos += body
    head = None
    if pos < len(raw):
        if len(raw) < pos + _HEADLEN.size:
            raise TruncatedTensor("head length prefix truncated")
        (head_len,) = _HEADLEN.unpack_from(raw, pos)
        pos += _HEADLEN.size
        if len(raw) != pos + head_len:
            raise TruncatedTensor(
                f"head section: declared {head_len} bytes, {len(raw) - pos} remain"
            )
        head = bytes(raw[pos:])
    return ModelContainer(
        layers=layers,
        dtype=dtype,
        data=data,
        version=version,
        encrypted=bool(enc),
        sigma=sigma,
        nonce=nonce,
        head=head,
    )


def load(path) -> ModelContainer:
    with open(path, "rb") as fh:
        return read_container(fh.read())


def save(model: ModelContainer, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_container(model))


# -- reference inference --------------------------------------------------------


def forward(
    model: ModelContainer,
    x: np.ndarray,
    capture: bool = False,
    prune_mask: Optional[np.ndarray] = None,
):
    """Reference MLP forward pass: per layer W_OUT . relu(W_IN x + B_IN).

    `x` is one input vector (d_in,) or a batch (B, d_in). With capture=True
    also returns |activation| per hidden neuron, concatenated in global
    neuron order (shape (..., n_neurons)). A prune mask (True = keep) forces
    the activation of masked-out neurons to zero before the output product.
    """
    if model.encrypted:
        raise EncryptedModelError("forward() needs a plaintext container")
    if model.sigma != SIGMA_RELU:
        raise ShapeMismatch(f"unsupported activation tag {model.sigma}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.layers[0].d_in:
        raise ShapeMismatch(
            f"input width {x.shape[-1] if x.ndim else '?'} != d_in {model.layers[0].d_in}"
        )
    if prune_mask is not None:
        prune_mask = np.asarray(prune_mask, dtype=bool)
        if prune_mask.shape != (model.n_neurons,):
            raise ShapeMismatch(
                f"prune mask length {prune_mask.shape} != ({model.n_neurons},)"
            )
    captured = [] if capture else None
    for li, spec in enumerate(model.layers):
        if x.shape[1] != spec.d_in:
            raise ShapeMismatch(
                f"layer {li} expects width {spec.d_in}, got {x.shape[1]}"
            )
        w_in = model.w_in(li).astype(np.float64)
        b_in = model.b_in(li).astype(np.float64)
        act = np.maximum(x @ w_in.T + b_in, 0.0)
        if prune_mask is not None:
            base = model._neuron_base[li]
            keep = prune_mask[base : base + spec.d_hidden]
            act = act * keep
        if capture:
            captured.append(np.abs(act))
        x = act @ model.w_out_t(li).astype(np.float64)
    out = x[0] if single else x
    if capture:
        acts = np.concatenate(captured, axis=-1)
        return out, (acts[0] if single else acts)
    return out
