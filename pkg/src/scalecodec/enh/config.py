from __future__ import annotations

from dataclasses import dataclass

from .transform import MAX_QP

BLOCK_SIZE = 16
SUB_BLOCK = 8

# round(65536 * 2^(r/3)), r = 0..2
_CBRT2_Q16 = (65536, 82570, 104032)
LAMBDA_FRAC_BITS = 16


@dataclass(frozen=True)
class EnhConfig:
    qp: int = 27
    search_range: int = 32
    lambda_mode_scale: float = 0.85
    intra_only: bool = False
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        if not 0 <= self.qp <= MAX_QP:
            raise ValueError(f"qp must be in [0, {MAX_QP}], got {self.qp}")
        if self.search_range < 0:
            raise ValueError("search_range must be >= 0")
        if self.block_size != BLOCK_SIZE:
            raise ValueError(f"block_size is fixed at {BLOCK_SIZE}")
        if not self.lambda_mode_scale > 0:
            raise ValueError("lambda_mode_scale must be positive")


def lambda_q16(qp: int, scale: float = 0.85, bit_depth: int = 8) -> int:
    """``scale * 2^((qp - 12) / 3)`` in Q16, times 4 per extra bit of depth.

    The float scale is snapped to Q16 once; everything after is integer.
    """
    scale_q16 = int(round(scale * (1 << LAMBDA_FRAC_BITS)))
    r, k = (qp - 12) % 3, (qp - 12) // 3
    val = scale_q16 * _CBRT2_Q16[r]
    val = val << k if k >= 0 else val >> -k
    val >>= LAMBDA_FRAC_BITS
    return max(1, val << (2 * (bit_depth - 8)))
