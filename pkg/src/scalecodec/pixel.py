"""Planar 4:4:4 pixel buffers, color conversion, resampling, PSNR and file I/O.

All rounding in this module is round-half-away-from-zero. Images are stored
as ``(3, height, width)`` int32 arrays and are treated as immutable.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass

import numpy as np

PSNR_IDENTICAL = 999.0

# BT.709 full range
KR = 0.2126
KG = 0.7152
KB = 0.0722
CB_DIV = 1.8556
CR_DIV = 1.5748


class PixelError(ValueError):
    """Malformed pixel data or a violated buffer precondition."""


class ColorSpace(str, enum.Enum):
    RGB = "RGB"
    YUV444 = "YUV444"


@dataclass(frozen=True, eq=False)
class RasterImage:
    planes: np.ndarray
    bit_depth: int = 8
    color_space: ColorSpace = ColorSpace.RGB

    def __post_init__(self):
        planes = np.asarray(self.planes)
        if planes.ndim != 3 or planes.shape[0] != 3:
            raise PixelError(f"expected (3, h, w) planes, got shape {planes.shape}")
        if self.bit_depth not in (8, 10):
            raise PixelError(f"unsupported bit depth {self.bit_depth}")
        if planes.shape[1] == 0 or planes.shape[2] == 0:
            raise PixelError("empty image")
        if not np.issubdtype(planes.dtype, np.integer):
            raise PixelError("samples must be integers")
        planes = planes.astype(np.int32)
        if planes.min() < 0 or planes.max() > self.max_value:
            raise PixelError(f"samples out of range for {self.bit_depth}-bit")
        planes.setflags(write=False)
        object.__setattr__(self, "planes", planes)
        object.__setattr__(self, "color_space", ColorSpace(self.color_space))

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def max_value(self) -> int:
        return (1 << self.bit_depth) - 1

    def same_format(self, other: "RasterImage") -> bool:
        return (
            self.planes.shape == other.planes.shape
            and self.bit_depth == other.bit_depth
            and self.color_space == other.color_space
        )

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.same_format(other) and np.array_equal(self.planes, other.planes)

    def __repr__(self):
        return (
            f"RasterImage({self.width}x{self.height}, {self.bit_depth}-bit, "
            f"{self.color_space.value})"
        )


def Yuv444Frame(planes, bit_depth: int = 8) -> RasterImage:
    """A RasterImage tagged as YUV 4:4:4."""
    return RasterImage(planes, bit_depth, ColorSpace.YUV444)


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


def _clamp(x, bit_depth):
    return np.clip(x, 0, (1 << bit_depth) - 1).astype(np.int32)


def rgb_to_yuv444(image: RasterImage) -> RasterImage:
    if image.color_space != ColorSpace.RGB:
        raise PixelError("rgb_to_yuv444 needs an RGB image")
    r, g, b = image.planes.astype(np.float64)
    mid = 1 << (image.bit_depth - 1)
    y = KR * r + KG * g + KB * b
    cb = (b - y) / CB_DIV + mid
    cr = (r - y) / CR_DIV + mid
    out = _clamp(round_half_away(np.stack([y, cb, cr])), image.bit_depth)
    return Yuv444Frame(out, image.bit_depth)


def yuv444_to_rgb(frame: RasterImage) -> RasterImage:
    if frame.color_space != ColorSpace.YUV444:
        raise PixelError("yuv444_to_rgb needs a YUV444 frame")
    y, cb, cr = frame.planes.astype(np.float64)
    mid = 1 << (frame.bit_depth - 1)
    r = y + CR_DIV * (cr - mid)
    b = y + CB_DIV * (cb - mid)
    g = (y - KR * r - KB * b) / KG
    out = _clamp(round_half_away(np.stack([r, g, b])), frame.bit_depth)
    return RasterImage(out, frame.bit_depth, ColorSpace.RGB)


@dataclass(frozen=True)
class QualityReport:
    mse_per_plane: tuple
    psnr_per_plane: tuple
    psnr_combined: float

    def to_dict(self) -> dict:
        return {
            "mse_per_plane": list(self.mse_per_plane),
            "psnr_per_plane": list(self.psnr_per_plane),
            "psnr_combined": self.psnr_combined,
        }


def mse_to_psnr(mse: float, max_value: int) -> float:
    if mse == 0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(max_value * max_value / mse)


def psnr(a: RasterImage, b: RasterImage) -> QualityReport:
    if not a.same_format(b):
        raise PixelError(f"cannot compare {a!r} with {b!r}")
    diff = a.planes.astype(np.float64) - b.planes.astype(np.float64)
    mse = tuple(float(v) for v in np.mean(diff * diff, axis=(1, 2)))
    per_plane = tuple(mse_to_psnr(m, a.max_value) for m in mse)
    combined = mse_to_psnr(sum(mse) / 3.0, a.max_value)
    return QualityReport(mse, per_plane, combined)


# -- resampling --------------------------------------------------------------

FILTERS = ("bilinear", "bicubic", "nearest")
_WEIGHT_BITS = 14
_WEIGHT_ONE = 1 << _WEIGHT_BITS


def _kernel(name, t):
    t = abs(t)
    if name == "bilinear":
        return max(0.0, 1.0 - t)
    # Keys cubic, a = -0.5
    a = -0.5
    if t <= 1.0:
        return (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0
    if t < 2.0:
        return a * t**3 - 5.0 * a * t**2 + 8.0 * a * t - 4.0 * a
    return 0.0


def _weight_table(src_len, dst_len, name):
    """Integer taps for one axis: (indices, weights), each row summing to 2^14."""
    scale = src_len / dst_len
    if name == "nearest":
        idx = np.minimum(((np.arange(dst_len) * 2 + 1) * src_len) // (2 * dst_len), src_len - 1)
        return idx[:, None], np.full((dst_len, 1), _WEIGHT_ONE, dtype=np.int64)
    support = 1 if name == "bilinear" else 2
    taps = 2 * support
    indices = np.zeros((dst_len, taps), dtype=np.int64)
    weights = np.zeros((dst_len, taps), dtype=np.int64)
    for x in range(dst_len):
        center = (x + 0.5) * scale - 0.5
        first = math.floor(center) - support + 1
        raw = [_kernel(name, center - (first + k)) for k in range(taps)]
        total = sum(raw)
        w = [int(round_half_away(v / total * _WEIGHT_ONE)) for v in raw]
        # push the rounding residue onto the dominant tap
        w[max(range(taps), key=lambda k: (raw[k], -k))] += _WEIGHT_ONE - sum(w)
        indices[x] = np.clip(np.arange(first, first + taps), 0, src_len - 1)
        weights[x] = w
    return indices, weights


def _shift_round(x, bits):
    half = 1 << (bits - 1)
    return np.where(x >= 0, (x + half) >> bits, -((-x + half) >> bits))


def resample(image: RasterImage, target_w: int, target_h: int, filter: str = "bilinear") -> RasterImage:
    """Separable resampling with half-pixel-centre alignment.

    Taps are fixed-point integers, so the result is bit-exact everywhere and
    constant images stay constant.
    """
    if target_w <= 0 or target_h <= 0:
        raise PixelError("target dimensions must be positive")
    if filter not in FILTERS:
        raise PixelError(f"unknown filter {filter!r}")
    if (target_w, target_h) == (image.width, image.height):
        return image
    xi, xw = _weight_table(image.width, target_w, filter)
    yi, yw = _weight_table(image.height, target_h, filter)
    planes = image.planes.astype(np.int64)
    horiz = (planes[:, :, xi] * xw).sum(axis=3)
    vert = (horiz[:, yi, :] * yw[None, :, :, None]).sum(axis=2)
    out = _shift_round(vert, 2 * _WEIGHT_BITS)
    return RasterImage(_clamp(out, image.bit_depth), image.bit_depth, image.color_space)


# -- PPM ---------------------------------------------------------------------

def _ppm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PixelError("malformed PPM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PixelError("malformed PPM header")
    return tokens, pos + 1


def load_ppm(path) -> RasterImage:
    with open(path, "rb") as f:
        data = f.read()
    tokens, offset = _ppm_tokens(data, 4)
    if tokens[0] != b"P6":
        raise PixelError(f"{path}: not a binary PPM (P6)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PixelError(f"{path}: malformed PPM header") from None
    if width <= 0 or height <= 0:
        raise PixelError(f"{path}: bad dimensions {width}x{height}")
    if maxval == 255:
        bit_depth, dtype = 8, np.uint8
    elif maxval == 1023:
        bit_depth, dtype = 10, np.dtype(">u2")
    else:
        raise PixelError(f"{path}: unsupported max value {maxval}")
    n = width * height * 3
    payload = data[offset:]
    if len(payload) < n * np.dtype(dtype).itemsize:
        raise PixelError(f"{path}: truncated PPM payload")
    samples = np.frombuffer(payload, dtype=dtype, count=n).astype(np.int32)
    planes = samples.reshape(height, width, 3).transpose(2, 0, 1)
    return RasterImage(planes, bit_depth, ColorSpace.RGB)


def encode_ppm(image: RasterImage) -> bytes:
    if image.color_space != ColorSpace.RGB:
        raise PixelError("PPM output needs an RGB image")
    header = f"P6\n{image.width} {image.height}\n{image.max_value}\n".encode("ascii")
    dtype = np.uint8 if image.bit_depth == 8 else np.dtype(">u2")
    return header + image.planes.transpose(1, 2, 0).astype(dtype).tobytes()


def save_ppm(image: RasterImage, path) -> None:
    data = encode_ppm(image)
    with open(path, "wb") as f:
        f.write(data)


# -- raw planar YUV ----------------------------------------------------------

def _raw_dtype(bit_depth):
    if bit_depth == 8:
        return np.dtype(np.uint8)
    if bit_depth == 10:
        return np.dtype("<u2")
    raise PixelError(f"unsupported bit depth {bit_depth}")


def raw_frame_size(width: int, height: int, bit_depth: int) -> int:
    return 3 * width * height * _raw_dtype(bit_depth).itemsize


def encode_yuv444_raw(frame: RasterImage) -> bytes:
    if frame.color_space != ColorSpace.YUV444:
        raise PixelError("raw YUV output needs a YUV444 frame")
    return frame.planes.astype(_raw_dtype(frame.bit_depth)).tobytes()


def write_yuv444_raw(frame: RasterImage, path, append: bool = False) -> None:
    data = encode_yuv444_raw(frame)
    with open(path, "ab" if append else "wb") as f:
        f.write(data)


def count_raw_frames(path, width: int, height: int, bit_depth: int) -> int:
    size = os.path.getsize(path)
    frame = raw_frame_size(width, height, bit_depth)
    if size == 0 or size % frame:
        raise PixelError(
            f"{path}: length {size} is not a whole number of {width}x{height} "
            f"{bit_depth}-bit 4:4:4 frames ({frame} bytes each)"
        )
    return size // frame


def read_yuv444_raw(path, width: int, height: int, bit_depth: int, frame_index: int = 0) -> RasterImage:
    n_frames = count_raw_frames(path, width, height, bit_depth)
    if not 0 <= frame_index < n_frames:
        raise PixelError(f"{path}: frame {frame_index} out of range (file has {n_frames})")
    frame = raw_frame_size(width, height, bit_depth)
    with open(path, "rb") as f:
        f.seek(frame * frame_index)
        data = f.read(frame)
    samples = np.frombuffer(data, dtype=_raw_dtype(bit_depth)).astype(np.int32)
    return Yuv444Frame(samples.reshape(3, height, width), bit_depth)
