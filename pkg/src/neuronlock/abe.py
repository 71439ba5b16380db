"""Ciphertext-policy attribute-based encryption for subset key management.

The scheme follows the classic large-universe CP-ABE construction over a
symmetric pairing (Bethencourt-Sahai-Waters style):

    setup:   alpha, beta <- Z_r;  PK = (g^beta, e(g,g)^alpha),  MSK = (beta, g^alpha)
    keygen:  rho <- Z_r;  D = g^((alpha+rho)/beta)
             per attribute j: r_j <- Z_r, D_j = g^rho * H(j)^{r_j}, D'_j = g^{r_j}
    encrypt: share s <- Z_r down the policy tree (Shamir per gate);
             C~ = M * e(g,g)^{alpha s}, C = (g^beta)^s,
             per leaf y: C_y = g^{q_y}, C'_y = H(att(y))^{q_y}
    decrypt: Lagrange-combine e(D_j, C_y)/e(D'_j, C'_y) = e(g,g)^{rho q_y}
             up the tree to e(g,g)^{rho s}, then M = C~ * A / e(C, D)

Collusion resistance comes from the per-issuance rho: components of two
keys share no rho, so mixing them cannot cancel the blinding factor.
Decryption shares one final exponentiation across all pairings of an entry.

Subset keys are random target-group elements; the AES key for a subset is
the truncated SHA-256 of the element's canonical encoding.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .detection import DetectionThresholds
from .errors import (
    BadMagic,
    BadMasterKey,
    EmptyAttributeSet,
    InvalidPolicy,
    MissingTaskPolicy,
    TruncatedTensor,
)
from .pairing import Fp2, PairingGroup, Point, get_group
from .policy import PolicyNode, parse_policy
from .rng import Rng
from .subsets import SubsetPartition

BUNDLE_MAGIC = b"SNABE001"
SK_MAGIC = b"SNASK001"
MSK_MAGIC = b"SNMSK001"
FORMAT_VERSION = 1

AES_KEY_BYTES = 16


@dataclass
class PublicParams:
    profile: str
    h: Point  # g^beta
    e_gg_alpha: Fp2

    def group(self) -> PairingGroup:
        return get_group(self.profile)

    def to_bytes(self) -> bytes:
        grp = self.group()
        return grp.point_bytes(self.h) + grp.gt_bytes(self.e_gg_alpha)

    @classmethod
    def from_bytes(cls, profile: str, raw: bytes) -> "PublicParams":
        grp = get_group(profile)
        n = 1 + grp.fp_bytes
        if len(raw) != n + 2 * grp.fp_bytes:
            raise TruncatedTensor("public params blob has wrong length")
        return cls(
            profile=profile,
            h=grp.point_from_bytes(raw[:n]),
            e_gg_alpha=grp.gt_from_bytes(raw[n:]),
        )

    def fingerprint(self) -> int:
        return int.from_bytes(hashlib.sha256(self.to_bytes()).digest()[:8], "little")


@dataclass
class MasterKey:
    profile: str
    beta: int
    g_alpha: Point
    public: PublicParams


@dataclass
class AttributeSecretKey:
    profile: str
    attributes: frozenset[str]
    d: Point
    comps: dict[str, tuple[Point, Point]]  # attr -> (D_j, D'_j)
    pk_id: int = 0


@dataclass
class AbeCiphertext:
    policy: PolicyNode
    c_tilde: Fp2
    c: Point
    leaves: list[tuple[Point, Point]]  # (C_y, C'_y) in policy DFS leaf order


@dataclass
class BundleEntry:
    subset_id: int
    owners: frozenset[str]
    ciphertext: AbeCiphertext

    @property
    def policy(self) -> PolicyNode:
        return self.ciphertext.policy


@dataclass
class AbeBundle:
    profile: str
    bundle_id: int
    model_nonce: int
    tasks: list[str]
    public: PublicParams
    entries: list[BundleEntry]
    thresholds: Optional[DetectionThresholds] = None

    def entry(self, subset_id: int) -> BundleEntry:
        for e in self.entries:
            if e.subset_id == subset_id:
                return e
        raise KeyError(subset_id)


# -- core scheme -----------------------------------------------------------------


def abe_setup(rng: Rng, profile: str = "ss512") -> tuple[PublicParams, MasterKey]:
    """Randomized setup; PK is enough for encrypt + decrypt, MSK stays developer-side."""
    grp = get_group(profile)
    alpha = grp.random_scalar(rng)
    beta = grp.random_scalar(rng)
    pk = PublicParams(
        profile=profile,
        h=grp.mul(grp.g, beta),
        e_gg_alpha=grp.gt_exp(grp.gt_base(), alpha),
    )
    msk = MasterKey(
        profile=profile, beta=beta, g_alpha=grp.mul(grp.g, alpha), public=pk
    )
    return pk, msk


def abe_keygen(
    msk: MasterKey, attributes: Iterable[str], rng: Rng
) -> AttributeSecretKey:
    """Issue a secret key for an attribute set; randomized per call."""
    attrs = frozenset(attributes)
    if not attrs:
        raise EmptyAttributeSet("attribute set must be non-empty")
    grp = get_group(msk.profile)
    rho = grp.random_scalar(rng)
    beta_inv = pow(int(msk.beta), -1, int(grp.r))
    d = grp.mul(grp.add(msk.g_alpha, grp.mul(grp.g, rho)), beta_inv)
    g_rho = grp.mul(grp.g, rho)
    comps = {}
    for attr in sorted(attrs):
        r_j = grp.random_scalar(rng)
        comps[attr] = (
            grp.add(g_rho, grp.mul(grp.hash_to_point(attr), r_j)),
            grp.mul(grp.g, r_j),
        )
    return AttributeSecretKey(
        profile=msk.profile,
        attributes=attrs,
        d=d,
        comps=comps,
        pk_id=msk.public.fingerprint(),
    )


def _share_secret(
    grp: PairingGroup, node: PolicyNode, secret: int, rng: Rng, out: list[int]
) -> None:
    """Shamir-share `secret` down the tree; appends leaf shares in DFS order."""
    if node.kind == "attr":
        out.append(secret)
        return
    coeffs = [secret] + [grp.random_scalar(rng) for _ in range(node.k - 1)]
    r = int(grp.r)
    for i, child in enumerate(node.children, start=1):
        share = 0
        xp = 1
        for c in coeffs:
            share = (share + c * xp) % r
            xp = (xp * i) % r
        _share_secret(grp, child, share, rng, out)


def abe_encrypt(
    pk: PublicParams, element: Fp2, policy: PolicyNode, rng: Rng
) -> AbeCiphertext:
    """Encrypt a target-group element under a policy tree."""
    if not isinstance(policy, PolicyNode):
        raise InvalidPolicy("policy must be a PolicyNode")
    grp = pk.group()
    s = grp.random_scalar(rng)
    shares: list[int] = []
    _share_secret(grp, policy, s, rng, shares)
    leaves = []
    for leaf, q in zip(policy.leaves(), shares):
        leaves.append(
            (grp.mul(grp.g, q), grp.mul(grp.hash_to_point(leaf.attribute), q))
        )
    return AbeCiphertext(
        policy=policy,
        c_tilde=grp.gt_mul(element, grp.gt_exp(pk.e_gg_alpha, s)),
        c=grp.mul(pk.h, s),
        leaves=leaves,
    )


def _lagrange_at_zero(grp: PairingGroup, i: int, points: Sequence[int]) -> int:
    r = int(grp.r)
    num, den = 1, 1
    for j in points:
        if j == i:
            continue
        num = (num * (-j)) % r
        den = (den * (i - j)) % r
    return num * pow(den, -1, r) % r


def _select_leaves(
    grp: PairingGroup,
    node: PolicyNode,
    attrs: frozenset[str],
    coeff: int,
    leaf_base: int,
    out: list[tuple[int, int]],
) -> bool:
    """Pick a satisfying subtree; collects (leaf index, Lagrange coefficient).

    Children are probed in order and the first k satisfied are used, which
    makes decryption deterministic.
    """
    if node.kind == "attr":
        if node.attribute in attrs:
            out.append((leaf_base, coeff))
            return True
        return False
    satisfied: list[tuple[int, int, list[tuple[int, int]]]] = []
    base = leaf_base
    for pos, child in enumerate(node.children, start=1):
        sub: list[tuple[int, int]] = []
        if _select_leaves(grp, child, attrs, 1, base, sub):
            satisfied.append((pos, base, sub))
            if len(satisfied) == node.k:
                break
        base += sum(1 for _ in child.leaves())
    if len(satisfied) < node.k:
        return False
    points = [pos for pos, _, _ in satisfied]
    r = int(grp.r)
    for pos, _, sub in satisfied:
        lag = _lagrange_at_zero(grp, pos, points)
        for leaf_idx, c in sub:
            out.append((leaf_idx, coeff * lag % r * c % r))
    return True


def abe_decrypt(
    pk: PublicParams, sk: AttributeSecretKey, ct: AbeCiphertext
) -> Optional[Fp2]:
    """Recover the element, or None when the attributes don't satisfy the policy."""
    if not ct.policy.satisfies(sk.attributes):
        return None
    grp = pk.group()
    chosen: list[tuple[int, int]] = []
    if not _select_leaves(grp, ct.policy, sk.attributes, 1, 0, chosen):
        return None
    leaf_list = list(ct.policy.leaves())
    r = int(grp.r)
    terms = []
    for leaf_idx, coeff in chosen:
        attr = leaf_list[leaf_idx].attribute
        d_j, d_jp = sk.comps[attr]
        c_y, c_yp = ct.leaves[leaf_idx]
        terms.append((d_j, c_y, coeff))
        terms.append((grp.neg(d_jp), c_yp, coeff))
    # A / e(C, D) in one product, then M = C~ * that
    terms.append((grp.neg(ct.c), sk.d, 1))
    return grp.gt_mul(ct.c_tilde, grp.pair_prod(terms))


def derive_aes_key(grp: PairingGroup, element: Fp2) -> bytes:
    """First 128 bits of SHA-256 over the element's canonical encoding."""
    return hashlib.sha256(grp.gt_bytes(element)).digest()[:AES_KEY_BYTES]


# -- bundle construction ------------------------------------------------------------


def encrypt_bundle(
    pk: PublicParams,
    partition: SubsetPartition,
    policies: Mapping[int, PolicyNode],
    rng: Rng,
    model_nonce: int = 0,
    thresholds: Optional[DetectionThresholds] = None,
) -> tuple[AbeBundle, dict[int, bytes]]:
    """Fresh random subset elements, one CP-ABE entry per subset.

    Returns the bundle and the derived per-subset AES keys for the
    execution layer. Bundle size scales with subset count only.
    """
    grp = pk.group()
    entries = []
    keys: dict[int, bytes] = {}
    for sub in partition.subsets:
        if sub.subset_id not in policies:
            raise MissingTaskPolicy(f"no policy for subset {sub.subset_id}")
        k_gt = grp.random_gt(rng)
        ct = abe_encrypt(pk, k_gt, policies[sub.subset_id], rng)
        entries.append(
            BundleEntry(subset_id=sub.subset_id, owners=sub.owners, ciphertext=ct)
        )
        keys[sub.subset_id] = derive_aes_key(grp, k_gt)
    bundle = AbeBundle(
        profile=pk.profile,
        bundle_id=rng.randbits(64),
        model_nonce=model_nonce,
        tasks=list(partition.tasks),
        public=pk,
        entries=entries,
        thresholds=thresholds,
    )
    return bundle, keys


def recover_keys(
    pk: PublicParams, sk: AttributeSecretKey, bundle: AbeBundle
) -> dict[int, bytes]:
    """Derive AES keys for exactly the entries whose policy the key satisfies."""
    grp = pk.group()
    out: dict[int, bytes] = {}
    for entry in bundle.entries:
        element = abe_decrypt(pk, sk, entry.ciphertext)
        if element is not None:
            out[entry.subset_id] = derive_aes_key(grp, element)
    return out


# -- serialization -------------------------------------------------------------------

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_F64 = struct.Struct("<d")


class _Writer:
    def __init__(self) -> None:
        self.buf = io.BytesIO()

    def raw(self, b: bytes) -> None:
        self.buf.write(b)

    def u16(self, v: int) -> None:
        self.buf.write(_U16.pack(v))

    def u32(self, v: int) -> None:
        self.buf.write(_U32.pack(v))

    def u64(self, v: int) -> None:
        self.buf.write(_U64.pack(v))

    def f64(self, v: float) -> None:
        self.buf.write(_F64.pack(v))

    def blob(self, b: bytes) -> None:
        self.u32(len(b))
        self.buf.write(b)

    def text(self, s: str) -> None:
        b = s.encode("utf-8")
        self.u16(len(b))
        self.buf.write(b)

    def value(self) -> bytes:
        return self.buf.getvalue()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedTensor("artifact truncated")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return _U16.unpack(self.take(2))[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def f64(self) -> float:
        return _F64.unpack(self.take(8))[0]

    def blob(self) -> bytes:
        return self.take(self.u32())

    def text(self) -> str:
        return self.take(self.u16()).decode("utf-8")

    def done(self) -> bool:
        return self.pos == len(self.raw)


def _ct_to_bytes(grp: PairingGroup, ct: AbeCiphertext) -> bytes:
    w = _Writer()
    w.raw(grp.gt_bytes(ct.c_tilde))
    w.raw(grp.point_bytes(ct.c))
    w.u16(len(ct.leaves))
    for c_y, c_yp in ct.leaves:
        w.raw(grp.point_bytes(c_y))
        w.raw(grp.point_bytes(c_yp))
    return w.value()


def _ct_from_bytes(grp: PairingGroup, policy: PolicyNode, raw: bytes) -> AbeCiphertext:
    rd = _Reader(raw)
    pt = 1 + grp.fp_bytes
    c_tilde = grp.gt_from_bytes(rd.take(2 * grp.fp_bytes))
    c = grp.point_from_bytes(rd.take(pt))
    n = rd.u16()
    n_leaves = sum(1 for _ in policy.leaves())
    if n != n_leaves:
        raise InvalidPolicy(
            f"ciphertext has {n} leaf components, policy has {n_leaves} leaves"
        )
    leaves = []
    for _ in range(n):
        leaves.append(
            (grp.point_from_bytes(rd.take(pt)), grp.point_from_bytes(rd.take(pt)))
        )
    if not rd.done():
        raise TruncatedTensor("trailing bytes in ABE ciphertext")
    return AbeCiphertext(policy=policy, c_tilde=c_tilde, c=c, leaves=leaves)


def write_bundle(bundle: AbeBundle) -> bytes:
    grp = get_group(bundle.profile)
    w = _Writer()
    w.raw(BUNDLE_MAGIC)
    w.u16(FORMAT_VERSION)
    w.text(bundle.profile)
    w.u64(bundle.bundle_id)
    w.u64(bundle.model_nonce)
    if bundle.thresholds is None:
        w.raw(b"\x00")
    else:
        w.raw(b"\x01")
        w.f64(bundle.thresholds.m_max)
        w.f64(bundle.thresholds.v_split)
        w.u16(bundle.thresholds.hist_bins)
    w.u16(len(bundle.tasks))
    for t in bundle.tasks:
        w.text(t)
    w.blob(bundle.public.to_bytes())
    w.u32(len(bundle.entries))
    task_bit = {t: i for i, t in enumerate(bundle.tasks)}
    for entry in bundle.entries:
        w.u32(entry.subset_id)
        bitmap = 0
        for t in entry.owners:
            bitmap |= 1 << task_bit[t]
        w.u32(bitmap)
        w.blob(entry.policy.to_text().encode("utf-8"))
        w.blob(_ct_to_bytes(grp, entry.ciphertext))
    return w.value()


def read_bundle(raw: bytes) -> AbeBundle:
    if not raw.startswith(BUNDLE_MAGIC):
        raise BadMagic("not a SNABE001 bundle")
    rd = _Reader(raw)
    rd.take(8)
    version = rd.u16()
    if version != FORMAT_VERSION:
        raise BadMagic(f"unsupported bundle version {version}")
    profile = rd.text()
    grp = get_group(profile)
    bundle_id = rd.u64()
    model_nonce = rd.u64()
    thresholds = None
    if rd.take(1) == b"\x01":
        thresholds = DetectionThresholds(
            m_max=rd.f64(), v_split=rd.f64(), hist_bins=rd.u16()
        )
    tasks = [rd.text() for _ in range(rd.u16())]
    public = PublicParams.from_bytes(profile, rd.blob())
    entries = []
    for _ in range(rd.u32()):
        subset_id = rd.u32()
        bitmap = rd.u32()
        owners = frozenset(t for i, t in enumerate(tasks) if bitmap >> i & 1)
        policy = parse_policy(rd.blob().decode("utf-8"))
        ct = _ct_from_bytes(grp, policy, rd.blob())
        entries.append(BundleEntry(subset_id=subset_id, owners=owners, ciphertext=ct))
    if not rd.done():
        raise TruncatedTensor("trailing bytes in bundle")
    return AbeBundle(
        profile=profile,
        bundle_id=bundle_id,
        model_nonce=model_nonce,
        tasks=tasks,
        public=public,
        entries=entries,
        thresholds=thresholds,
    )


def write_secret_key(sk: AttributeSecretKey) -> bytes:
    grp = get_group(sk.profile)
    w = _Writer()
    w.raw(SK_MAGIC)
    w.u16(FORMAT_VERSION)
    w.text(sk.profile)
    w.u64(sk.pk_id)
    attrs = sorted(sk.attributes)
    w.u16(len(attrs))
    for a in attrs:
        w.text(a)
    w.blob(grp.point_bytes(sk.d))
    w.u16(len(sk.comps))
    for a in sorted(sk.comps):
        d_j, d_jp = sk.comps[a]
        w.text(a)
        w.blob(grp.point_bytes(d_j))
        w.blob(grp.point_bytes(d_jp))
    return w.value()


def read_secret_key(raw: bytes) -> AttributeSecretKey:
    if not raw.startswith(SK_MAGIC):
        raise BadMagic("not a SNASK001 secret key")
    rd = _Reader(raw)
    rd.take(8)
    if rd.u16() != FORMAT_VERSION:
        raise BadMagic("unsupported secret key version")
    profile = rd.text()
    grp = get_group(profile)
    pk_id = rd.u64()
    attrs = frozenset(rd.text() for _ in range(rd.u16()))
    d = grp.point_from_bytes(rd.blob())
    comps = {}
    for _ in range(rd.u16()):
        a = rd.text()
        comps[a] = (grp.point_from_bytes(rd.blob()), grp.point_from_bytes(rd.blob()))
    if not rd.done():
        raise TruncatedTensor("trailing bytes in secret key")
    return AttributeSecretKey(
        profile=profile, attributes=attrs, d=d, comps=comps, pk_id=pk_id
    )


def write_master_key(msk: MasterKey) -> bytes:
    grp = get_group(msk.profile)
    w = _Writer()
    w.raw(MSK_MAGIC)
    w.u16(FORMAT_VERSION)
    w.text(msk.profile)
    w.blob(grp.scalar_bytes(msk.beta))
    w.blob(grp.point_bytes(msk.g_alpha))
    w.blob(msk.public.to_bytes())
    return w.value()


def read_master_key(raw: bytes) -> MasterKey:
    if not raw.startswith(MSK_MAGIC):
        raise BadMasterKey("not a SNMSK001 master key")
    try:
        rd = _Reader(raw)
        rd.take(8)
        if rd.u16() != FORMAT_VERSION:
            raise BadMasterKey("unsupported master key version")
        profile = rd.text()
        grp = get_group(profile)
        beta = grp.scalar_from_bytes(rd.blob())
        g_alpha = grp.point_from_bytes(rd.blob())
        public = PublicParams.from_bytes(profile, rd.blob())
        if not rd.done():
            raise BadMasterKey("trailing bytes in master key")
    except (TruncatedTensor, ValueError) as exc:
        raise BadMasterKey(f"malformed master key: {exc}") from exc
    return MasterKey(profile=profile, beta=beta, g_alpha=g_alpha, public=public)
