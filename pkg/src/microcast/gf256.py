"""GF(2^8) arithmetic for random linear network coding.

Tables are built over the field defined by x^8 + x^4 + x^3 + x^2 + 1
(0x11d, the polynomial commonly used by Reed-Solomon codecs; 2 is a
primitive element). Addition is XOR. Multiplication goes through a
full 256x256 product table so row operations vectorize as plain numpy
fancy indexing.
"""

from __future__ import annotations

import numpy as np

POLY = 0x11D

# exp table doubled so a sum of two logs never needs a modulo
EXP = np.zeros(510, dtype=np.uint8)
LOG = np.zeros(256, dtype=np.int64)


def _build_tables() -> None:
    x = 1
    for i in range(255):
        EXP[i] = x
        LOG[x] = i
        x <<= 1
        if x & 0x100:
            x ^= POLY
    EXP[255:] = EXP[:255]


_build_tables()

# 64 KiB product table: MUL[a, b] = a*b in the field
MUL = np.zeros((256, 256), dtype=np.uint8)
MUL[1:, 1:] = EXP[LOG[1:, None] + LOG[None, 1:]]

# INV[a] = a^-1 for a >= 1; INV[0] unused
INV = np.zeros(256, dtype=np.uint8)
INV[1:] = EXP[255 - LOG[1:]]


def gf_mul(a: int, b: int) -> int:
    return int(MUL[a, b])


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no multiplicative inverse in GF(256)")
    return int(INV[a])


def gf_div(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError("division by 0 in GF(256)")
    return int(MUL[a, INV[b]])


def scale_row(c: int, row: np.ndarray) -> np.ndarray:
    """c * row elementwise; row is a uint8 vector."""
    return MUL[c, row]


def gf_dot(coeffs: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Linear combination sum_k coeffs[k] * matrix[k, :] over GF(256).

    coeffs: (k,) uint8; matrix: (k, w) uint8; returns (w,) uint8.
    An empty combination is the zero vector.
    """
    if len(coeffs) == 0:
        return np.zeros(matrix.shape[1], dtype=np.uint8)
    prod = MUL[np.asarray(coeffs)[:, None], matrix]
    return np.bitwise_xor.reduce(prod, axis=0)
