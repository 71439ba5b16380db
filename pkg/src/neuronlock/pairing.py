"""Symmetric bilinear pairing group for the policy-layer cryptor.

Construction: supersingular curve E: y^2 = x^3 + x over F_p with
p ≡ 3 (mod 4), so #E(F_p) = p + 1 = h*r with r prime. The pairing is the
reduced Tate pairing of order r with the distortion map
phi(x, y) = (-x, i*y), i^2 = -1, evaluated in F_{p^2} = F_p[i]:

    e(P, Q) = f_{r,P}(phi(Q)) ^ ((p^2 - 1) / r)

which is a non-degenerate symmetric bilinear map on the order-r subgroup.
Vertical-line factors lie in F_p and are erased by the final exponentiation
(denominator elimination), and (p^2-1)/r = (p-1)*h lets the final power be
computed as (conj(f)/f)^h.

Group parameters are generated as in scripts/gen_pairing_params.py: r is a
low-Hamming-weight prime, h = 4*(2^m + k) is the smallest such cofactor
making p = h*r - 1 prime. The default profile uses a 512-bit field
(~80-bit security, the ballpark of the classic PBC type-A parameters most
CP-ABE toolkits default to); "ss1024" doubles the field size.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence, Tuple

try:
    from gmpy2 import mpz, invert as _invert, legendre as _legendre, powmod as _powmod
except ImportError:  # pragma: no cover - gmpy2 is a declared dependency
    mpz = int

    def _invert(a, p):
        return pow(a, -1, p)

    def _legendre(a, p):
        r = pow(a, (p - 1) // 2, p)
        return -1 if r == p - 1 else int(r)

    _powmod = pow

Point = Optional[Tuple[int, int]]  # affine (x, y); None is the point at infinity
Fp2 = Tuple[int, int]  # a + b*i with i^2 = -1


@dataclass(frozen=True)
class GroupProfile:
    name: str
    p: int  # field prime, p ≡ 3 (mod 4)
    r: int  # prime subgroup order
    h: int  # cofactor, p + 1 = h * r


def _profile(name: str, r: int, h: int) -> GroupProfile:
    p = h * r - 1
    return GroupProfile(name=name, p=mpz(p), r=mpz(r), h=mpz(h))


PROFILES = {
    "ss512": _profile("ss512", r=(1 << 159) + (1 << 17) + 1, h=4 * ((1 << 349) + 134)),
    "ss1024": _profile("ss1024", r=(1 << 255) + (1 << 41) + 1, h=4 * ((1 << 765) + 334)),
}

DEFAULT_PROFILE = "ss512"

_H2P_DOMAIN = b"nlock-h2p-v1:"
_GEN_SEED = b"nlock-generator-v1"


class PairingGroup:
    """Order-r symmetric pairing group with point/GT (de)serialization."""

    def __init__(self, profile: str = DEFAULT_PROFILE):
        if profile not in PROFILES:
            raise ValueError(f"unknown pairing profile {profile!r}")
        prof = PROFILES[profile]
        self.name = prof.name
        self.p = prof.p
        self.r = prof.r
        self.h = prof.h
        self.fp_bytes = (int(self.p).bit_length() + 7) // 8
        self.g = self.hash_to_point(_GEN_SEED)
        self._gt_base: Optional[Fp2] = None

    # -- F_p^2 ------------------------------------------------------------------

    def gt_one(self) -> Fp2:
        return (mpz(1), mpz(0))

    def gt_mul(self, x: Fp2, y: Fp2) -> Fp2:
        p = self.p
        a, b = x
        c, d = y
        ac = a * c
        bd = b * d
        return ((ac - bd) % p, ((a + b) * (c + d) - ac - bd) % p)

    def gt_sqr(self, x: Fp2) -> Fp2:
        p = self.p
        a, b = x
        return ((a - b) * (a + b) % p, (a * b << 1) % p)

    def gt_inv(self, x: Fp2) -> Fp2:
        p = self.p
        a, b = x
        n = _invert(a * a + b * b, p)
        return (a * n % p, -b * n % p)

    def gt_conj(self, x: Fp2) -> Fp2:
        return (x[0], -x[1] % self.p)

    def gt_exp(self, x: Fp2, e: int) -> Fp2:
        e = int(e) % (self.p * self.p - 1) if e < 0 else int(e)
        if e == 0:
            return self.gt_one()
        acc = x
        for bit in bin(e)[3:]:
            acc = self.gt_sqr(acc)
            if bit == "1":
                acc = self.gt_mul(acc, x)
        return acc

    def gt_eq(self, x: Fp2, y: Fp2) -> bool:
        return x[0] % self.p == y[0] % self.p and x[1] % self.p == y[1] % self.p

    # -- curve ops (affine, F_p) --------------------------------------------------

    def is_on_curve(self, P: Point) -> bool:
        if P is None:
            return True
        x, y = P
        return (y * y - (x * x * x + x)) % self.p == 0

    def neg(self, P: Point) -> Point:
        if P is None:
            return None
        return (P[0], -P[1] % self.p)

    def add(self, P: Point, Q: Point) -> Point:
        if P is None:
            return Q
        if Q is None:
            return P
        p = self.p
        x1, y1 = P
        x2, y2 = Q
        if x1 == x2:
            if (y1 + y2) % p == 0:
                return None
            m = (3 * x1 * x1 + 1) * _invert(y1 << 1, p) % p
        else:
            m = (y2 - y1) * _invert(x2 - x1, p) % p
        x3 = (m * m - x1 - x2) % p
        return (x3, (m * (x1 - x3) - y1) % p)

    def mul(self, P: Point, k: int) -> Point:
        k = int(k) % int(self.r)
        if k == 0 or P is None:
            return None
        acc: Point = None
        add = self.add
        for bit in bin(k)[2:]:
            acc = add(acc, acc)
            if bit == "1":
                acc = add(acc, P)
        return acc

    # -- hashing and randomness ----------------------------------------------------

    def hash_to_point(self, tag: bytes | str) -> Point:
        if isinstance(tag, str):
            tag = tag.encode("utf-8")
        return self._h2p_cached(bytes(tag))

    @lru_cache(maxsize=4096)
    def _h2p_cached(self, tag: bytes) -> Point:
        p = self.p
        ctr = 0
        while True:
            digest = b""
            blk = 0
            while len(digest) * 8 < int(p).bit_length() + 64:
                digest += hashlib.sha512(
                    _H2P_DOMAIN
                    + self.name.encode()
                    + b":"
                    + ctr.to_bytes(4, "little")
                    + blk.to_bytes(2, "little")
                    + tag
                ).digest()
                blk += 1
            x = mpz(int.from_bytes(digest, "big") % p)
            ctr += 1
            t = (x * x * x + x) % p
            if t == 0 or _legendre(t, p) != 1:
                continue
            y = _powmod(t, (p + 1) >> 2, p)
            if (y & 1) == 1:
                y = p - y  # canonical even-y representative
            P = self.mul_cofactor((x, y))
            if P is not None:
                return P

    def mul_cofactor(self, P: Point) -> Point:
        if P is None:
            return None
        acc: Point = None
        add = self.add
        for bit in bin(int(self.h))[2:]:
            acc = add(acc, acc)
            if bit == "1":
                acc = add(acc, P)
        return acc

    def random_scalar(self, rng) -> int:
        return rng.randbelow(int(self.r) - 1) + 1

    def gt_base(self) -> Fp2:
        if self._gt_base is None:
            self._gt_base = self.pair(self.g, self.g)
        return self._gt_base

    def random_gt(self, rng) -> Fp2:
        return self.gt_exp(self.gt_base(), self.random_scalar(rng))

    # -- pairing ---------------------------------------------------------------------

    def _miller(self, P: Point, Q: Point) -> Fp2:
        """Miller function f_{r,P} evaluated at phi(Q), without final power."""
        p = self.p
        xq, yq = Q
        fa, fb = mpz(1), mpz(0)  # accumulator in F_p^2
        xt, yt = P
        inf = False
        for bit in bin(int(self.r))[3:]:
            # f <- f^2 * l_{T,T}(phi Q)
            t = (fa - fb) * (fa + fb) % p
            fb = (fa * fb << 1) % p
            fa = t
            if not inf:
                m = (3 * xt * xt + 1) * _invert(yt << 1, p) % p
                la = (m * (xq + xt) - yt) % p  # line = la + yq*i
                t = fa * la - fb * yq
                fb = (fa * yq + fb * la) % p
                fa = t % p
                x3 = (m * m - (xt << 1)) % p
                yt = (m * (xt - x3) - yt) % p
                xt = x3
            if bit == "1" and not inf:
                # f <- f * l_{T,P}(phi Q); vertical chords lie in F_p -> skip
                x1, y1 = P
                if xt == x1:
                    if (yt + y1) % p == 0:
                        inf = True
                        continue
                    m = (3 * xt * xt + 1) * _invert(yt << 1, p) % p
                else:
                    m = (y1 - yt) * _invert(x1 - xt, p) % p
                la = (m * (xq + xt) - yt) % p
                t = fa * la - fb * yq
                fb = (fa * yq + fb * la) % p
                fa = t % p
                x3 = (m * m - xt - x1) % p
                yt = (m * (xt - x3) - yt) % p
                xt = x3
        return (fa, fb)

    def final_exp(self, f: Fp2) -> Fp2:
        # f^((p^2-1)/r) = (f^(p-1))^h = (conj(f) / f)^h
        u = self.gt_mul(self.gt_conj(f), self.gt_inv(f))
        return self.gt_exp(u, int(self.h))

    def pair(self, P: Point, Q: Point) -> Fp2:
        if P is None or Q is None:
            return self.gt_one()
        return self.final_exp(self._miller(P, Q))

    def pair_prod(self, terms: Iterable[tuple[Point, Point, int]]) -> Fp2:
        """prod_i e(P_i, Q_i)^{e_i} with one shared final exponentiation."""
        acc = self.gt_one()
        for P, Q, e in terms:
            e = int(e) % int(self.r)
            if e == 0 or P is None or Q is None:
                continue
            f = self._miller(P, Q)
            if e != 1:
                f = self.gt_exp(f, e)
            acc = self.gt_mul(acc, f)
        return self.final_exp(acc)

    # -- serialization ------------------------------------------------------------------

    def point_bytes(self, P: Point) -> bytes:
        if P is None:
            return b"\x00" * (1 + self.fp_bytes)
        x, y = P
        prefix = 0x03 if (y & 1) else 0x02
        return bytes([prefix]) + int(x).to_bytes(self.fp_bytes, "big")

    def point_from_bytes(self, raw: bytes) -> Point:
        if len(raw) != 1 + self.fp_bytes:
            raise ValueError(f"point encoding must be {1 + self.fp_bytes} bytes")
        if raw[0] == 0x00:
            return None
        if raw[0] not in (0x02, 0x03):
            raise ValueError(f"bad point prefix {raw[0]:#x}")
        p = self.p
        x = mpz(int.from_bytes(raw[1:], "big"))
        if x >= p:
            raise ValueError("point x-coordinate out of field range")
        t = (x * x * x + x) % p
        if t != 0 and _legendre(t, p) != 1:
            raise ValueError("x-coordinate is not on the curve")
        y = _powmod(t, (p + 1) >> 2, p)
        if (y * y - t) % p != 0:
            raise ValueError("x-coordinate is not on the curve")
        if (y & 1) != (raw[0] & 1):
            y = p - y
        return (x, y)

    def gt_bytes(self, z: Fp2) -> bytes:
        return int(z[0] % self.p).to_bytes(self.fp_bytes, "big") + int(
            z[1] % self.p
        ).to_bytes(self.fp_bytes, "big")

    def gt_from_bytes(self, raw: bytes) -> Fp2:
        if len(raw) != 2 * self.fp_bytes:
            raise ValueError(f"GT encoding must be {2 * self.fp_bytes} bytes")
        a = mpz(int.from_bytes(raw[: self.fp_bytes], "big"))
        b = mpz(int.from_bytes(raw[self.fp_bytes :], "big"))
        if a >= self.p or b >= self.p:
            raise ValueError("GT coordinate out of field range")
        return (a, b)

    def scalar_bytes(self, k: int) -> bytes:
        width = (int(self.r).bit_length() + 7) // 8
        return int(k % self.r).to_bytes(width, "big")

    def scalar_from_bytes(self, raw: bytes) -> int:
        return mpz(int.from_bytes(raw, "big") % self.r)


@lru_cache(maxsize=8)
def get_group(profile: str = DEFAULT_PROFILE) -> PairingGroup:
    """Shared group instance per profile (parameters are immutable)."""
    return PairingGroup(profile)
