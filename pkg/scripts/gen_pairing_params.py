#!/usr/bin/env python3
"""Regenerate the pairing group profiles hardcoded in neuronlock.pairing.

Construction: pick the smallest low-Hamming-weight prime r = 2^(b-1) + 2^k + 1,
then the smallest cofactor h = 4*(2^m + j) such that p = h*r - 1 is prime.
p ≡ 3 (mod 4) holds by construction (h divisible by 4), which makes
y^2 = x^3 + x supersingular over F_p with #E(F_p) = p + 1 = h*r, gives
F_{p^2} = F_p[i]/(i^2+1), and makes square roots cheap (exponent (p+1)/4).
The low weight of r and h keeps Miller loops and the final exponentiation
short. Deterministic, so anyone can re-derive the constants.
"""

import gmpy2
from gmpy2 import is_prime, mpz


def find_r(rbits: int) -> tuple[int, int]:
    for k in range(1, 64):
        cand = (mpz(1) << (rbits - 1)) + (mpz(1) << k) + 1
        if is_prime(cand):
            return cand, k
    raise AssertionError(f"no trinomial prime near 2^{rbits - 1}")


def find_h(r: int, pbits: int, rbits: int) -> tuple[int, int]:
    mbits = pbits - rbits - 2
    m0 = mpz(1) << (mbits - 1)
    j = 0
    while True:
        h = 4 * (m0 + j)
        if is_prime(h * r - 1):
            return h, j
        j += 1


def main() -> None:
    for name, rbits, pbits in [("ss512", 160, 512), ("ss1024", 256, 1024)]:
        r, k = find_r(rbits)
        h, j = find_h(r, pbits, rbits)
        p = h * r - 1
        assert p % 4 == 3
        print(f'    "{name}": _profile(')
        print(f'        "{name}",')
        print(f"        r=(1 << {rbits - 1}) + (1 << {k}) + 1,")
        print(f"        h=4 * ((1 << {pbits - rbits - 3}) + {j}),")
        print(f"    ),  # p: {int(p).bit_length()} bits")


if __name__ == "__main__":
    main()
