"""Integer-pel full-search motion estimation on luma.

Cost is ``J = SAD + lambda * bits(mv)`` where ``bits`` counts the signed
exp-Golomb bins of both components. Candidates are visited in tie-break
order (smaller |dx| + |dy|, then smaller dy, then smaller dx) and only a
strictly lower cost replaces the incumbent. The search window is clamped so
the reference block stays inside the frame.
"""

from __future__ import annotations

import numpy as np

from ..rangecoder import se_bins
from .config import BLOCK_SIZE, LAMBDA_FRAC_BITS, lambda_q16

_INVALID = np.int64(1) << 40


class MotionVector(tuple):
    __slots__ = ()

    def __new__(cls, dx: int, dy: int):
        return super().__new__(cls, (int(dx), int(dy)))

    @property
    def dx(self) -> int:
        return self[0]

    @property
    def dy(self) -> int:
        return self[1]

    def __repr__(self):
        return f"MotionVector(dx={self[0]}, dy={self[1]})"


def mv_bits(dx: int, dy: int) -> int:
    return se_bins(dx) + se_bins(dy)


def candidate_order(search_range: int) -> np.ndarray:
    """All (dx, dy) in the window, sorted into tie-break order."""
    r = search_range
    cands = [(dx, dy) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
    cands.sort(key=lambda c: (abs(c[0]) + abs(c[1]), c[1], c[0]))
    return np.array(cands, dtype=np.int64).reshape(-1, 2)


def motion_search(block, reference, origin, cfg, bit_depth=None):
    """Single-block full search; returns ``(MotionVector, cost)``.

    ``block`` is the 16x16 luma block (or a ``(3, 16, 16)`` stack, of which
    only luma is used), ``reference`` a frame, ``origin`` its ``(x, y)``.
    """
    cur = np.asarray(block, dtype=np.int64)
    if cur.ndim == 3:
        cur = cur[0]
    ref = reference.planes[0].astype(np.int64)
    depth = reference.bit_depth if bit_depth is None else bit_depth
    lam = lambda_q16(cfg.qp, cfg.lambda_mode_scale, depth)
    n = cur.shape[0]
    x0, y0 = origin
    h, w = ref.shape
    if not (0 <= x0 <= w - n and 0 <= y0 <= h - n):
        raise ValueError(f"block at {origin} does not fit in the frame")
    best, best_cost = None, None
    for dx, dy in candidate_order(cfg.search_range).tolist():
        x, y = x0 + dx, y0 + dy
        if x < 0 or y < 0 or x + n > w or y + n > h:
            continue
        sad = int(np.abs(ref[y:y + n, x:x + n] - cur).sum())
        cost = (sad << LAMBDA_FRAC_BITS) + lam * mv_bits(dx, dy)
        if best_cost is None or cost < best_cost:
            best, best_cost = (dx, dy), cost
    return MotionVector(*best), best_cost / (1 << LAMBDA_FRAC_BITS)


class SadTable:
    """Luma SAD of every block against every displacement in the window.

    Independent of QP, so one table serves a whole QP sweep over the same
    (original, preview) pair. Both luma planes must already be padded to a
    multiple of the block size.
    """

    def __init__(self, cur_luma, ref_luma, search_range: int, block: int = BLOCK_SIZE):
        # |diff| <= 1023 and a 16-sample row sum still fits in int16
        cur = np.asarray(cur_luma, dtype=np.int16)
        ref = np.asarray(ref_luma, dtype=np.int16)
        h, w = cur.shape
        if ref.shape != cur.shape or h % block or w % block:
            raise ValueError("luma planes must match and be block aligned")
        r = search_range
        by, bx = h // block, w // block
        self.search_range = r
        self.order = candidate_order(r)
        side = 2 * r + 1
        grid = np.empty((side, side, by, bx), dtype=np.int64)  # [dy, dx]
        ref_pad = np.pad(ref, r, mode="edge")
        diff = np.empty((h, w), dtype=np.int16)
        for i in range(side):
            column = np.ascontiguousarray(ref_pad[:, i:i + w])
            for j in range(side):
                np.subtract(column[j:j + h], cur, out=diff)
                np.abs(diff, out=diff)
                rows = diff.reshape(h, bx, block).sum(axis=-1, dtype=np.int16)
                grid[j, i] = rows.reshape(by, block, bx).sum(axis=1, dtype=np.int32)
        # clamp window at frame borders
        ys = np.arange(by) * block
        xs = np.arange(bx) * block
        d = np.arange(-r, r + 1)
        bad_y = (ys[None, :] + d[:, None] < 0) | (ys[None, :] + d[:, None] + block > h)
        bad_x = (xs[None, :] + d[:, None] < 0) | (xs[None, :] + d[:, None] + block > w)
        grid[bad_y[:, None, :, None] | bad_x[None, :, None, :]] = _INVALID
        dx, dy = self.order[:, 0], self.order[:, 1]
        self.sad = grid[dy + r, dx + r]  # (n_candidates, by, bx)
        self.bits = np.array([mv_bits(a, b) for a, b in self.order.tolist()], dtype=np.int64)

    def select(self, qp: int, lambda_mode_scale: float = 0.85, bit_depth: int = 8):
        """Best vector per block: ``(mvs[by, bx, 2], sad[by, bx])``."""
        lam = lambda_q16(qp, lambda_mode_scale, bit_depth)
        cost = (self.sad << LAMBDA_FRAC_BITS) + (lam * self.bits)[:, None, None]
        best = np.argmin(cost, axis=0)  # first minimum = tie-break winner
        mvs = self.order[best]
        sad = np.take_along_axis(self.sad, best[None], axis=0)[0]
        return mvs, sad
