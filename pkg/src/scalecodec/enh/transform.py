"""8x8 integer DCT-II and dead-zone quantization.

The basis is the orthonormal 8-point DCT-II scaled by 2^14 and rounded to
integers. The forward pair of shifts (25 bits in total) leaves coefficients
at 8x the orthonormal scale; the inverse pair (31 bits) undoes the basis gain
of 2^28 and that factor of 8. Everything is integer, so encoder and
decoder agree bit for bit.

Quantization step sizes follow the familiar QP convention, step =
2^((qp - 4) / 6) for 8-bit samples, doubling per extra bit of depth.
"""

from __future__ import annotations

import numpy as np

BASIS = np.array(
    [
        [5793, 5793, 5793, 5793, 5793, 5793, 5793, 5793],
        [8035, 6811, 4551, 1598, -1598, -4551, -6811, -8035],
        [7568, 3135, -3135, -7568, -7568, -3135, 3135, 7568],
        [6811, -1598, -8035, -4551, 4551, 8035, 1598, -6811],
        [5793, -5793, -5793, 5793, 5793, -5793, -5793, 5793],
        [4551, -8035, 1598, 6811, -6811, -1598, 8035, -4551],
        [3135, -7568, 7568, -3135, -3135, 7568, -7568, 3135],
        [1598, -4551, 6811, -8035, 8035, -6811, 4551, -1598],
    ],
    dtype=np.int64,
)

FWD_SHIFT_1, FWD_SHIFT_2 = 11, 14
INV_SHIFT_1, INV_SHIFT_2 = 15, 16
COEFF_SCALE = 8

# round(1024 * 2^(r/6)), r = 0..5
_QSTEP_Q10 = (1024, 1149, 1290, 1448, 1625, 1825)
# dead-zone 2/3: level = floor(|c| / step + 1/3)
DEAD_ZONE_NUM, DEAD_ZONE_DEN = 2, 3

MAX_QP = 51


def _check_qp(qp):
    if not 0 <= qp <= MAX_QP:
        raise ValueError(f"qp must be in [0, {MAX_QP}], got {qp}")


def qp_to_qstep(qp: int) -> float:
    _check_qp(qp)
    return 2.0 ** ((qp - 4) / 6)


def qstep_fraction(qp: int, bit_depth: int = 8) -> tuple:
    """Step size in the coefficient domain as an exact ``(num, den)`` pair."""
    _check_qp(qp)
    r, k = (qp - 4) % 6, (qp - 4) // 6
    num = _QSTEP_Q10[r] * COEFF_SCALE << (bit_depth - 8)
    den = 1024
    if k >= 0:
        num <<= k
    else:
        den <<= -k
    return num, den


def _round_shift(x, bits):
    return (x + (1 << (bits - 1))) >> bits


def forward_transform(block):
    """Residual ``(..., 8, 8)`` -> coefficients at 8x orthonormal scale."""
    x = np.asarray(block, dtype=np.int64)
    tmp = _round_shift(BASIS @ x, FWD_SHIFT_1)
    return _round_shift(tmp @ BASIS.T, FWD_SHIFT_2)


def inverse_transform(coeffs):
    c = np.asarray(coeffs, dtype=np.int64)
    tmp = _round_shift(BASIS.T @ c, INV_SHIFT_1)
    return _round_shift(tmp @ BASIS, INV_SHIFT_2)


def quantize(coeffs, qp: int, bit_depth: int = 8):
    num, den = qstep_fraction(qp, bit_depth)
    c = np.asarray(coeffs, dtype=np.int64)
    mag = (DEAD_ZONE_DEN * np.abs(c) * den + (DEAD_ZONE_DEN - DEAD_ZONE_NUM) * num) // (
        DEAD_ZONE_DEN * num
    )
    return np.where(c < 0, -mag, mag)


def dequantize(levels, qp: int, bit_depth: int = 8):
    num, den = qstep_fraction(qp, bit_depth)
    lv = np.asarray(levels, dtype=np.int64)
    mag = (np.abs(lv) * num + den // 2) // den
    return np.where(lv < 0, -mag, mag)


def transform_quantize(residual, qp: int, bit_depth: int = 8):
    return quantize(forward_transform(residual), qp, bit_depth)


def dequantize_inverse_transform(levels, qp: int, bit_depth: int = 8):
    limit = (1 << bit_depth) - 1
    out = inverse_transform(dequantize(levels, qp, bit_depth))
    return np.clip(out, -limit, limit)


def _zigzag_order(n=8):
    order = sorted(
        ((y, x) for y in range(n) for x in range(n)),
        key=lambda p: (p[0] + p[1], p[1] if (p[0] + p[1]) % 2 == 0 else p[0]),
    )
    return np.array([y * n + x for y, x in order], dtype=np.intp)


ZIGZAG = _zigzag_order()
UNZIGZAG = np.argsort(ZIGZAG)
