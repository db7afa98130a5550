"""Enhancement-layer block codec: codes the original frame by inter
prediction from the preview.

Each 16x16 block picks one of three modes by RD cost
``J = SSD + lambda * bins`` (integer, lambda in Q16):

* SKIP: copy the co-located preview block, no residual;
* INTER: integer-pel motion-compensated preview block plus coded residual;
* INTRA_DC: per-plane DC of the reconstructed top/left neighbours plus
  coded residual.

The encoder makes its decisions on its own reconstruction, which is exactly
what the decoder rebuilds. Frames whose sides are not multiples of 16 are
edge-padded internally and cropped on output. Syntax and context indices are
listed in docs/FORMATS.md.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from .. import rangecoder
from ..pixel import ColorSpace, RasterImage, Yuv444Frame
from ..rangecoder import eg0_bins, se_bins
from .config import BLOCK_SIZE, LAMBDA_FRAC_BITS, EnhConfig, lambda_q16
from .motion import SadTable
from .transform import UNZIGZAG, ZIGZAG, dequantize_inverse_transform, transform_quantize

MAGIC = b"SME1"
VERSION = 1
# magic, version, width, height, bit depth, qp, payload length
_HEADER = struct.Struct("<4sBIIBBI")
HEADER_BYTES = _HEADER.size
SENTINEL = 0x5A3C
SENTINEL_BITS = 16

# context layout
CTX_SKIP = 0        # 3: number of SKIP neighbours (left, above)
CTX_INTRA = 3       # 1
CTX_MVD = 4         # 2 components x 4 prefix bins
CTX_CBF = 12        # 3 planes x 2 (inter, intra)
CTX_LAST = 18       # 2 plane classes x 5 prefix bins
CTX_SIG = 28        # 2 plane classes x 16 positions
CTX_ABS = 60        # 2 plane classes x 5 prefix bins
N_CTX = 70
_MVD_BINS = 4
_LAST_BINS = 5
_ABS_BINS = 5
_SIG_POS = 16

_N_SUB = 12  # 3 planes x 4 sub-blocks of 8x8


class EnhCodecError(ValueError):
    pass


class Mode(enum.IntEnum):
    SKIP = 0
    INTER = 1
    INTRA_DC = 2


@dataclass(frozen=True)
class EnhBitstream:
    width: int
    height: int
    bit_depth: int
    qp: int
    payload: bytes

    @property
    def bit_count(self) -> int:
        return 8 * len(self.payload)

    @property
    def header_bits(self) -> int:
        return 8 * HEADER_BYTES

    @property
    def block_count(self) -> int:
        return -(-self.width // BLOCK_SIZE) * -(-self.height // BLOCK_SIZE)

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(
            MAGIC, VERSION, self.width, self.height, self.bit_depth, self.qp, len(self.payload)
        )
        return header + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "EnhBitstream":
        if len(data) < HEADER_BYTES:
            raise EnhCodecError("enhancement bitstream shorter than its header")
        magic, version, w, h, depth, qp, n = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise EnhCodecError(f"bad magic {magic!r}")
        if version != VERSION:
            raise EnhCodecError(f"unsupported enhancement bitstream version {version}")
        if depth not in (8, 10) or qp > 51 or w == 0 or h == 0:
            raise EnhCodecError("invalid enhancement bitstream header")
        payload = data[HEADER_BYTES:]
        if len(payload) != n:
            raise EnhCodecError(f"payload length {len(payload)}, header says {n}")
        return cls(w, h, depth, qp, bytes(payload))


@dataclass
class EncodeResult:
    bitstream: EnhBitstream
    recon: RasterImage
    modes: np.ndarray   # (by, bx) of Mode values
    mvs: np.ndarray     # (by, bx, 2); zero where not INTER

    def mode_counts(self) -> dict:
        return {m.name: int(np.count_nonzero(self.modes == m)) for m in Mode}


# -- helpers -----------------------------------------------------------------

def _padded_dims(width, height):
    return -(-height // BLOCK_SIZE) * BLOCK_SIZE, -(-width // BLOCK_SIZE) * BLOCK_SIZE


def pad_planes(planes: np.ndarray) -> np.ndarray:
    h, w = planes.shape[1:]
    ph, pw = _padded_dims(w, h)
    return np.pad(planes.astype(np.int32), ((0, 0), (0, ph - h), (0, pw - w)), mode="edge")


def _to_sub_blocks(res):
    """(..., 3, 16, 16) -> (..., 12, 8, 8), plane-major, raster within plane."""
    lead = res.shape[:-3]
    r = res.reshape(lead + (3, 2, 8, 2, 8))
    r = np.moveaxis(r, -2, -3)
    return r.reshape(lead + (_N_SUB, 8, 8))


def _from_sub_blocks(sub):
    lead = sub.shape[:-3]
    r = sub.reshape(lead + (3, 2, 2, 8, 8))
    r = np.moveaxis(r, -3, -2)
    return r.reshape(lead + (3, 16, 16))


def _eg0_bins_np(v):
    return 2 * np.frexp(v + 1)[1].astype(np.int64) - 1


def residual_bins(levels_zz: np.ndarray) -> np.ndarray:
    """Bin count of the residual syntax, per block.

    ``levels_zz`` is ``(..., 12, 64)`` in zigzag order; result has shape
    ``(...)``. Must agree with :func:`_encode_residual` bin for bin.
    """
    nz = levels_zz != 0
    coded = nz.any(axis=-1)
    last = 63 - np.argmax(nz[..., ::-1], axis=-1)
    mags = np.abs(levels_zz)
    level_bins = np.where(nz, _eg0_bins_np(np.maximum(mags - 1, 0)) + 1, 0).sum(axis=-1)
    sub = np.where(coded, _eg0_bins_np(last) + last + level_bins, 0) + 1
    return sub.sum(axis=-1)


def _encode_residual(enc, levels_zz, intra):
    for k in range(_N_SUB):
        plane = k >> 2
        cls = 1 if plane else 0
        row = levels_zz[k]
        nz = [i for i, v in enumerate(row) if v]
        enc.encode_bit(CTX_CBF + 2 * plane + intra, 1 if nz else 0)
        if not nz:
            continue
        last = nz[-1]
        enc.encode_eg0(last, CTX_LAST + _LAST_BINS * cls, _LAST_BINS)
        sig_base = CTX_SIG + _SIG_POS * cls
        abs_base = CTX_ABS + _ABS_BINS * cls
        for pos in range(last + 1):
            v = row[pos]
            if pos < last:
                enc.encode_bit(sig_base + (pos if pos < 15 else 15), 1 if v else 0)
            if v:
                enc.encode_eg0(abs(v) - 1, abs_base, _ABS_BINS)
                enc.encode_bypass(1 if v < 0 else 0, 1)


def _decode_residual(dec, intra):
    out = np.zeros((_N_SUB, 64), dtype=np.int64)
    for k in range(_N_SUB):
        plane = k >> 2
        cls = 1 if plane else 0
        if not dec.decode_bit(CTX_CBF + 2 * plane + intra):
            continue
        last = dec.decode_eg0(CTX_LAST + _LAST_BINS * cls, _LAST_BINS)
        if last > 63:
            raise rangecoder.CorruptStreamError("last position out of range")
        sig_base = CTX_SIG + _SIG_POS * cls
        abs_base = CTX_ABS + _ABS_BINS * cls
        row = [0] * 64
        for pos in range(last + 1):
            if pos < last and not dec.decode_bit(sig_base + (pos if pos < 15 else 15)):
                continue
            mag = dec.decode_eg0(abs_base, _ABS_BINS) + 1
            row[pos] = -mag if dec.decode_bypass(1) else mag
        out[k] = row
    return out


def _reconstruct(pred, levels_zz, qp, bit_depth):
    """pred (..., 3, 16, 16) + dequantized residual -> clipped recon."""
    levels = levels_zz[..., UNZIGZAG].reshape(levels_zz.shape[:-1] + (8, 8))
    res = _from_sub_blocks(dequantize_inverse_transform(levels, qp, bit_depth))
    return np.clip(pred + res, 0, (1 << bit_depth) - 1)


def _code_block(pred, orig, qp, bit_depth):
    """Residual-code ``orig`` against ``pred`` -> (levels_zz, recon, ssd)."""
    levels = transform_quantize(_to_sub_blocks(orig - pred), qp, bit_depth)
    levels_zz = levels.reshape(levels.shape[:-2] + (64,))[..., ZIGZAG]
    recon = _reconstruct(pred, levels_zz, qp, bit_depth)
    d = (orig - recon).astype(np.int64)
    return levels_zz, recon, (d * d).sum(axis=(-3, -2, -1))


def _intra_dc_pred(recon, y, x, bit_depth):
    """Per-plane DC from reconstructed samples above and to the left."""
    n = BLOCK_SIZE
    total = np.zeros(3, dtype=np.int64)
    count = 0
    if y:
        total += recon[:, y - 1, x:x + n].sum(axis=1)
        count += n
    if x:
        total += recon[:, y:y + n, x - 1].sum(axis=1)
        count += n
    if not count:
        dc = np.full(3, 1 << (bit_depth - 1), dtype=np.int64)
    else:
        dc = (total + count // 2) // count
    return np.broadcast_to(dc[:, None, None], (3, n, n)).astype(np.int64)


def _mv_predictor(modes, mvs, by, bx):
    if bx and modes[by, bx - 1] == Mode.INTER:
        return mvs[by, bx - 1]
    if by and modes[by - 1, bx] == Mode.INTER:
        return mvs[by - 1, bx]
    return (0, 0)


def _skip_ctx(modes, by, bx):
    return (
        CTX_SKIP
        + (1 if bx and modes[by, bx - 1] == Mode.SKIP else 0)
        + (1 if by and modes[by - 1, bx] == Mode.SKIP else 0)
    )


def _check_frames(original, preview):
    for f in (original, preview):
        if f.color_space != ColorSpace.YUV444:
            raise EnhCodecError("enhancement coder works on YUV444 frames")
    if not original.same_format(preview):
        raise EnhCodecError(f"original {original!r} and preview {preview!r} differ in format")


def _blocks(planes):
    """(3, H, W) -> (by, bx, 3, 16, 16)."""
    _, h, w = planes.shape
    n = BLOCK_SIZE
    return planes.reshape(3, h // n, n, w // n, n).transpose(1, 3, 0, 2, 4)


def prepare_motion(original: RasterImage, preview: RasterImage, search_range: int = 32) -> SadTable:
    """Motion cost table for an (original, preview) pair, reusable across QPs."""
    _check_frames(original, preview)
    return SadTable(pad_planes(original.planes)[0], pad_planes(preview.planes)[0], search_range)


# -- encoder -----------------------------------------------------------------

def encode_frame(original: RasterImage, preview: RasterImage, cfg: EnhConfig,
                 sad_table: SadTable | None = None) -> EncodeResult:
    _check_frames(original, preview)
    depth, qp = original.bit_depth, cfg.qp
    lam = lambda_q16(qp, cfg.lambda_mode_scale, depth)
    orig = pad_planes(original.planes).astype(np.int64)
    ref = pad_planes(preview.planes).astype(np.int64)
    _, ph, pw = orig.shape
    nby, nbx = ph // BLOCK_SIZE, pw // BLOCK_SIZE
    n = BLOCK_SIZE
    orig_blocks = _blocks(orig)

    if not cfg.intra_only:
        # SKIP and INTER depend only on the preview, so evaluate them in bulk.
        skip_pred = _blocks(ref)
        d = orig_blocks - skip_pred
        skip_ssd = (d * d).sum(axis=(2, 3, 4))
        if sad_table is None:
            sad_table = SadTable(orig[0], ref[0], cfg.search_range)
        elif sad_table.search_range != cfg.search_range or sad_table.sad.shape[1:] != (nby, nbx):
            raise EnhCodecError("sad_table does not match this frame and search range")
        mvs_best, _ = sad_table.select(qp, cfg.lambda_mode_scale, depth)
        ys = (np.arange(nby) * n)[:, None] + mvs_best[..., 1]
        xs = (np.arange(nbx) * n)[None, :] + mvs_best[..., 0]
        rows = ys[..., None] + np.arange(n)                  # (by, bx, 16)
        cols = xs[..., None] + np.arange(n)
        inter_pred = ref[:, rows[..., :, None], cols[..., None, :]]  # (3, by, bx, 16, 16)
        inter_pred = np.moveaxis(inter_pred, 0, 2)
        inter_levels, inter_recon, inter_ssd = _code_block(inter_pred, orig_blocks, qp, depth)
        inter_bins = residual_bins(inter_levels)

    recon = np.zeros_like(orig)
    modes = np.zeros((nby, nbx), dtype=np.int64)
    mvs = np.zeros((nby, nbx, 2), dtype=np.int64)
    levels_out = {}
    for by in range(nby):
        for bx in range(nbx):
            y, x = by * n, bx * n
            best = None
            if not cfg.intra_only:
                j_skip = (int(skip_ssd[by, bx]) << LAMBDA_FRAC_BITS) + lam * 1
                best = (j_skip, Mode.SKIP)
                mv = mvs_best[by, bx]
                pdx, pdy = _mv_predictor(modes, mvs, by, bx)
                bins = 2 + se_bins(int(mv[0]) - int(pdx)) + se_bins(int(mv[1]) - int(pdy))
                j_inter = (int(inter_ssd[by, bx]) << LAMBDA_FRAC_BITS) + lam * (
                    bins + int(inter_bins[by, bx])
                )
                if j_inter < best[0]:
                    best = (j_inter, Mode.INTER)
            pred = _intra_dc_pred(recon, y, x, depth)
            i_levels, i_recon, i_ssd = _code_block(pred, orig_blocks[by, bx], qp, depth)
            j_intra = (int(i_ssd) << LAMBDA_FRAC_BITS) + lam * (2 + int(residual_bins(i_levels)))
            if best is None or j_intra < best[0]:
                best = (j_intra, Mode.INTRA_DC)
            mode = best[1]
            modes[by, bx] = mode
            if mode == Mode.SKIP:
                recon[:, y:y + n, x:x + n] = skip_pred[by, bx]
            elif mode == Mode.INTER:
                mvs[by, bx] = mvs_best[by, bx]
                recon[:, y:y + n, x:x + n] = inter_recon[by, bx]
                levels_out[by, bx] = inter_levels[by, bx]
            else:
                recon[:, y:y + n, x:x + n] = i_recon
                levels_out[by, bx] = i_levels

    payload = _entropy_code(modes, mvs, levels_out)
    h, w = original.height, original.width
    bs = EnhBitstream(w, h, depth, qp, payload)
    out = Yuv444Frame(recon[:, :h, :w].astype(np.int32), depth)
    return EncodeResult(bs, out, modes, mvs)


def _entropy_code(modes, mvs, levels_out):
    enc = rangecoder.Encoder(N_CTX)
    nby, nbx = modes.shape
    for by in range(nby):
        for bx in range(nbx):
            mode = modes[by, bx]
            enc.encode_bit(_skip_ctx(modes, by, bx), 1 if mode == Mode.SKIP else 0)
            if mode == Mode.SKIP:
                continue
            enc.encode_bit(CTX_INTRA, 1 if mode == Mode.INTRA_DC else 0)
            if mode == Mode.INTER:
                pdx, pdy = _mv_predictor(modes, mvs, by, bx)
                enc.encode_se(int(mvs[by, bx, 0] - pdx), CTX_MVD, _MVD_BINS)
                enc.encode_se(int(mvs[by, bx, 1] - pdy), CTX_MVD + _MVD_BINS, _MVD_BINS)
            _encode_residual(enc, levels_out[by, bx].tolist(), 1 if mode == Mode.INTRA_DC else 0)
    enc.encode_bypass(SENTINEL, SENTINEL_BITS)
    return enc.finish()


def enh_encode(original: RasterImage, preview: RasterImage, cfg: EnhConfig,
               sad_table: SadTable | None = None):
    """Encode ``original`` against ``preview``; returns ``(bitstream, recon)``."""
    result = encode_frame(original, preview, cfg, sad_table)
    return result.bitstream, result.recon


# -- decoder -----------------------------------------------------------------

def enh_decode(bs: EnhBitstream, preview: RasterImage) -> RasterImage:
    if preview.color_space != ColorSpace.YUV444:
        raise EnhCodecError("preview must be a YUV444 frame")
    if (preview.width, preview.height, preview.bit_depth) != (bs.width, bs.height, bs.bit_depth):
        raise EnhCodecError(
            f"preview {preview!r} does not match stream {bs.width}x{bs.height} {bs.bit_depth}-bit"
        )
    try:
        return _decode(bs, preview)
    except rangecoder.CorruptStreamError as exc:
        raise EnhCodecError(f"corrupt enhancement payload: {exc}") from exc


def _decode(bs, preview):
    depth, qp, n = bs.bit_depth, bs.qp, BLOCK_SIZE
    ref = pad_planes(preview.planes).astype(np.int64)
    _, ph, pw = ref.shape
    nby, nbx = ph // n, pw // n
    recon = np.zeros_like(ref)
    modes = np.zeros((nby, nbx), dtype=np.int64)
    mvs = np.zeros((nby, nbx, 2), dtype=np.int64)
    dec = rangecoder.Decoder(bs.payload, N_CTX)
    for by in range(nby):
        for bx in range(nbx):
            y, x = by * n, bx * n
            if dec.decode_bit(_skip_ctx(modes, by, bx)):
                modes[by, bx] = Mode.SKIP
                recon[:, y:y + n, x:x + n] = ref[:, y:y + n, x:x + n]
                continue
            intra = dec.decode_bit(CTX_INTRA)
            if intra:
                modes[by, bx] = Mode.INTRA_DC
                pred = _intra_dc_pred(recon, y, x, depth)
            else:
                modes[by, bx] = Mode.INTER
                pdx, pdy = _mv_predictor(modes, mvs, by, bx)
                dx = pdx + dec.decode_se(CTX_MVD, _MVD_BINS)
                dy = pdy + dec.decode_se(CTX_MVD + _MVD_BINS, _MVD_BINS)
                ry, rx = y + dy, x + dx
                if ry < 0 or rx < 0 or ry + n > ph or rx + n > pw:
                    raise rangecoder.CorruptStreamError("motion vector points outside the frame")
                mvs[by, bx] = (dx, dy)
                pred = ref[:, ry:ry + n, rx:rx + n]
            levels_zz = _decode_residual(dec, intra)
            recon[:, y:y + n, x:x + n] = _reconstruct(pred, levels_zz, qp, depth)
    if dec.decode_bypass(SENTINEL_BITS) != SENTINEL:
        raise rangecoder.CorruptStreamError("sentinel mismatch")
    dec.finish()
    return Yuv444Frame(recon[:, :bs.height, :bs.width].astype(np.int32), depth)


def enh_rate_bpp(bs: EnhBitstream, include_header: bool = False) -> float:
    """Enhancement rate in bits per pixel. The preview costs nothing here:
    it is rebuilt from the base layer the decoder already has."""
    bits = bs.bit_count + (bs.header_bits if include_header else 0)
    return bits / (bs.width * bs.height)
