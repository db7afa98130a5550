"""Pluggable base layer and a deterministic surrogate machine codec.

The surrogate box-downsamples the input by ``scale_factor``, requantizes each
sample to ``quant_bits`` bits and entropy codes the levels with left-neighbour
prediction. Its decoded latent feeds :func:`synthesize_preview`, which makes
the preview image the enhancement layer predicts from.

Any codec can serve as the base layer as long as it yields a preview with the
original's dimensions; see :class:`BaseCodec`.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import rangecoder
from .pixel import FILTERS, ColorSpace, RasterImage, resample

MAGIC = b"SMB1"
VERSION = 1
# magic, version, scale, bits, filter, color space, bit depth, width, height, payload length
_HEADER = struct.Struct("<4sBBBBBBIII")
HEADER_BYTES = _HEADER.size

_FILTER_CODES = {name: i for i, name in enumerate(FILTERS)}
_COLOR_CODES = {ColorSpace.RGB: 0, ColorSpace.YUV444: 1}

# context layout (see docs/FORMATS.md)
_CTX_ZERO = 0       # 2 plane classes x 2 (previous residual zero?)
_CTX_SIGN = 4       # 2 plane classes
_CTX_MAG = 6        # 2 plane classes x 6 prefix bins
_N_CTX = 18
_MAG_BINS = 6


class BaseCodecError(ValueError):
    pass


class BaseCodec(Protocol):
    """What the enhancement layer needs from a base-layer codec."""

    def encode(self, image: RasterImage) -> "BaseBitstream": ...

    def decode(self, bitstream: "BaseBitstream") -> "BaseLatent": ...

    def synthesize_preview(self, latent: "BaseLatent") -> RasterImage: ...


@dataclass(frozen=True)
class SurrogateConfig:
    scale_factor: int = 2
    quant_bits: int = 6
    preview_filter: str = "bilinear"

    def __post_init__(self):
        if self.scale_factor not in (1, 2, 4, 8):
            raise BaseCodecError(f"scale_factor must be 1, 2, 4 or 8, got {self.scale_factor}")
        if not 2 <= self.quant_bits <= 8:
            raise BaseCodecError(f"quant_bits must be in [2, 8], got {self.quant_bits}")
        if self.preview_filter not in FILTERS:
            raise BaseCodecError(f"unknown preview filter {self.preview_filter!r}")

    @property
    def label(self) -> str:
        return f"s{self.scale_factor}b{self.quant_bits}"


@dataclass(frozen=True, eq=False)
class BaseLatent:
    latent_planes: np.ndarray
    scale_factor: int
    quant_bits: int
    original_dims: tuple
    original_bit_depth: int
    color_space: ColorSpace = ColorSpace.YUV444
    preview_filter: str = "bilinear"

    def __post_init__(self):
        w, h = self.original_dims
        s = self.scale_factor
        expected = (3, -(-h // s), -(-w // s))
        if self.latent_planes.shape != expected:
            raise BaseCodecError(f"latent shape {self.latent_planes.shape}, expected {expected}")
        if self.latent_planes.size and self.latent_planes.max() >= 1 << self.quant_bits:
            raise BaseCodecError("latent sample exceeds quant_bits")

    def __eq__(self, other):
        if not isinstance(other, BaseLatent):
            return NotImplemented
        return (
            self.scale_factor == other.scale_factor
            and self.quant_bits == other.quant_bits
            and tuple(self.original_dims) == tuple(other.original_dims)
            and self.original_bit_depth == other.original_bit_depth
            and self.color_space == other.color_space
            and self.preview_filter == other.preview_filter
            and np.array_equal(self.latent_planes, other.latent_planes)
        )


@dataclass(frozen=True)
class BaseBitstream:
    scale_factor: int
    quant_bits: int
    preview_filter: str
    color_space: ColorSpace
    bit_depth: int
    width: int
    height: int
    payload: bytes

    @property
    def bit_count(self) -> int:
        return 8 * len(self.payload)

    @property
    def header_bits(self) -> int:
        return 8 * HEADER_BYTES

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(
            MAGIC, VERSION, self.scale_factor, self.quant_bits,
            _FILTER_CODES[self.preview_filter], _COLOR_CODES[self.color_space],
            self.bit_depth, self.width, self.height, len(self.payload),
        )
        return header + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "BaseBitstream":
        if len(data) < HEADER_BYTES:
            raise BaseCodecError("base bitstream shorter than its header")
        magic, version, s, b, filt, color, depth, w, h, n = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise BaseCodecError(f"bad magic {magic!r}")
        if version != VERSION:
            raise BaseCodecError(f"unsupported base bitstream version {version}")
        if filt >= len(FILTERS) or color not in (0, 1) or depth not in (8, 10):
            raise BaseCodecError("invalid base bitstream header")
        payload = data[HEADER_BYTES:]
        if len(payload) != n:
            raise BaseCodecError(f"payload length {len(payload)}, header says {n}")
        SurrogateConfig(s, b, FILTERS[filt])
        colors = {v: k for k, v in _COLOR_CODES.items()}
        return cls(s, b, FILTERS[filt], colors[color], depth, w, h, bytes(payload))


def quantize_latent(image: RasterImage, cfg: SurrogateConfig) -> BaseLatent:
    """Box-average each s x s cell (partial edge cells use their valid samples)
    and requantize the mean to ``quant_bits`` bits with a mid-rise quantizer."""
    s, b, depth = cfg.scale_factor, cfg.quant_bits, image.bit_depth
    h, w = image.height, image.width
    lh, lw = -(-h // s), -(-w // s)
    padded = np.zeros((3, lh * s, lw * s), dtype=np.int64)
    padded[:, :h, :w] = image.planes
    sums = padded.reshape(3, lh, s, lw, s).sum(axis=(2, 4))
    counts = np.zeros((lh * s, lw * s), dtype=np.int64)
    counts[:h, :w] = 1
    counts = counts.reshape(lh, s, lw, s).sum(axis=(1, 3))
    # level = floor(mean * 2^b / 2^depth)
    levels = (sums << b) // (counts << depth)
    return BaseLatent(
        levels.astype(np.int32), s, b, (w, h), depth, image.color_space, cfg.preview_filter
    )


def _code_planes(coder, planes, quant_bits):
    """Shared syntax walk; ``coder`` is an Encoder (planes given) or Decoder."""
    decoding = isinstance(coder, rangecoder.Decoder)
    n_planes, lh, lw = planes.shape
    mid = 1 << (quant_bits - 1)
    for c in range(n_planes):
        cls = 0 if c == 0 else 1
        zero_ctx = _CTX_ZERO + 2 * cls
        sign_ctx = _CTX_SIGN + cls
        mag_ctx = _CTX_MAG + _MAG_BINS * cls
        plane = planes[c]
        prev_zero = 1
        above_row = None
        for y in range(lh):
            row = [0] * lw if decoding else plane[y].tolist()
            for x in range(lw):
                if x:
                    pred = row[x - 1]
                elif above_row is not None:
                    pred = above_row[0]
                else:
                    pred = mid
                if decoding:
                    if coder.decode_bit(zero_ctx + prev_zero):
                        r = 0
                    else:
                        neg = coder.decode_bit(sign_ctx)
                        mag = coder.decode_eg0(mag_ctx, _MAG_BINS) + 1
                        r = -mag if neg else mag
                    v = pred + r
                    if not 0 <= v < 1 << quant_bits:
                        raise rangecoder.CorruptStreamError("latent level out of range")
                    row[x] = v
                else:
                    r = row[x] - pred
                    coder.encode_bit(zero_ctx + prev_zero, 1 if r == 0 else 0)
                    if r:
                        coder.encode_bit(sign_ctx, 1 if r < 0 else 0)
                        coder.encode_eg0(abs(r) - 1, mag_ctx, _MAG_BINS)
                prev_zero = 1 if r == 0 else 0
            if decoding:
                plane[y] = row
            above_row = row


def _latent_crc(levels: np.ndarray) -> int:
    return zlib.crc32(levels.astype("<u1").tobytes())


def encode_latent(latent: BaseLatent) -> BaseBitstream:
    enc = rangecoder.Encoder(_N_CTX)
    _code_planes(enc, latent.latent_planes, latent.quant_bits)
    enc.encode_bypass(_latent_crc(latent.latent_planes), 32)
    w, h = latent.original_dims
    return BaseBitstream(
        latent.scale_factor, latent.quant_bits, latent.preview_filter,
        latent.color_space, latent.original_bit_depth, w, h, enc.finish(),
    )


def base_encode(image: RasterImage, cfg: SurrogateConfig) -> BaseBitstream:
    if not isinstance(cfg, SurrogateConfig):
        raise BaseCodecError("cfg must be a SurrogateConfig")
    return encode_latent(quantize_latent(image, cfg))


def base_decode(bs: BaseBitstream) -> BaseLatent:
    s = bs.scale_factor
    lh, lw = -(-bs.height // s), -(-bs.width // s)
    planes = np.zeros((3, lh, lw), dtype=np.int32)
    dec = rangecoder.Decoder(bs.payload, _N_CTX)
    try:
        _code_planes(dec, planes, bs.quant_bits)
        crc = dec.decode_bypass(32)
        dec.finish()
    except rangecoder.CorruptStreamError as exc:
        raise BaseCodecError(f"corrupt base payload: {exc}") from exc
    if crc != _latent_crc(planes):
        raise BaseCodecError("corrupt base payload: latent checksum mismatch")
    return BaseLatent(
        planes, s, bs.quant_bits, (bs.width, bs.height), bs.bit_depth,
        bs.color_space, bs.preview_filter,
    )


def dequantize_latent(latent: BaseLatent) -> np.ndarray:
    """Map each level to the midpoint of its interval in the original depth."""
    shift = latent.original_bit_depth - latent.quant_bits
    levels = latent.latent_planes.astype(np.int32)
    if shift == 0:
        return levels
    return (levels << shift) + (1 << (shift - 1))


def synthesize_preview(latent: BaseLatent) -> RasterImage:
    small = RasterImage(dequantize_latent(latent), latent.original_bit_depth, latent.color_space)
    w, h = latent.original_dims
    return resample(small, w, h, latent.preview_filter)


def base_rate_bpp(bs: BaseBitstream, include_header: bool = True) -> float:
    bits = bs.bit_count + (bs.header_bits if include_header else 0)
    return bits / (bs.width * bs.height)


class SurrogateCodec:
    """:class:`BaseCodec` adapter around the surrogate functions."""

    def __init__(self, cfg: SurrogateConfig):
        self.cfg = cfg

    def encode(self, image: RasterImage) -> BaseBitstream:
        return base_encode(image, self.cfg)

    def decode(self, bitstream: BaseBitstream) -> BaseLatent:
        return base_decode(bitstream)

    def synthesize_preview(self, latent: BaseLatent) -> RasterImage:
        return synthesize_preview(latent)
