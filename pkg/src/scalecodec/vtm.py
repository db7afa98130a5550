"""Drive the VVC reference encoder (VTM 12.3) as the enhancement engine.

The preview cannot be pushed straight into VTM's decoded picture buffer, so
preview and original are written as a two-frame 10-bit 4:4:4 sequence. The
preview is coded as an intra frame at effective QP 0 (``IntraQPOffset =
-QP``) and the original as a low-delay P frame predicted from it. Only the
second frame's bits count as enhancement rate.

The encoder configuration is the stored low-delay-P template with four keys
substituted: ``QP``, ``IntraQPOffset``, ``BitstreamFile`` and ``ReconFile``.
The template carries no input-format keys, so the input file, picture size,
frame rate, frame count and 4:4:4 / 10-bit input format are passed on the
command line (an assumption; the exact invocation is not fixed anywhere).
"""

from __future__ import annotations

import os
import re
import subprocess
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .pixel import ColorSpace, PixelError, RasterImage, Yuv444Frame, read_yuv444_raw, write_yuv444_raw

SUPPORTED_VERSIONS = ("12.3",)
VTM_BIT_DEPTH = 10
ENCODER_ENV = "SCALECODEC_VTM_ENCODER"
DECODER_ENV = "SCALECODEC_VTM_DECODER"

_VERSION_RE = re.compile(r"VTM Encoder Version\s+([0-9][0-9.]*)")
_POC_RE = re.compile(
    r"^POC\s+(?P<poc>\d+)\s+LId:\s*\d+\s+TId:\s*\d+\s+"
    r"\(\s*(?P<nal>[A-Z_]+),\s*(?P<slice>[A-Z])-SLICE,\s*QP\s+(?P<qp>-?\d+)\s*\)\s+"
    r"(?P<bits>\d+)\s+bits\s+"
    r"\[Y\s+(?P<y>\S+)\s+dB\s+U\s+(?P<u>\S+)\s+dB\s+V\s+(?P<v>\S+)\s+dB\]"
)
_CFG_KEY_RE = r"^({key}\s*:\s*)(\S+)"


class VtmError(RuntimeError):
    pass


class VtmUnavailableError(VtmError):
    """The encoder/decoder binary is missing: the VTM engine is unavailable."""

    def __init__(self, path):
        super().__init__(f"VTM binary not found or not executable: {path}")
        self.path = str(path)


class VtmRunError(VtmError):
    def __init__(self, message, returncode=None, log_text=""):
        super().__init__(message)
        self.returncode = returncode
        self.log_text = log_text


class VtmLogError(VtmError):
    pass


# -- configuration -------------------------------------------------------------

def load_template() -> str:
    return resources.files("scalecodec").joinpath("data/lowdelay_p_template.cfg").read_text(
        encoding="utf-8"
    )


def _substitute(text, key, value):
    pattern = re.compile(_CFG_KEY_RE.format(key=re.escape(key)), re.M)
    new, count = pattern.subn(lambda m: m.group(1) + value, text, count=1)
    if count != 1:
        raise VtmError(f"template has no {key} key")
    return new


def write_vtm_config(qp: int, bitstream_file="str.bin", recon_file="rec.yuv") -> str:
    """Config text for one enhancement run at ``qp``."""
    if not 0 <= qp <= 51:
        raise ValueError(f"qp must be in [0, 51], got {qp}")
    text = load_template()
    text = _substitute(text, "BitstreamFile", str(bitstream_file))
    text = _substitute(text, "ReconFile", str(recon_file))
    text = _substitute(text, "IntraQPOffset", str(-qp))
    text = _substitute(text, "QP", str(qp))
    return text


# -- sequence assembly -----------------------------------------------------------

def to_vtm_depth(frame: RasterImage) -> RasterImage:
    if frame.color_space != ColorSpace.YUV444:
        raise PixelError("VTM input frames must be YUV444")
    shift = VTM_BIT_DEPTH - frame.bit_depth
    if shift == 0:
        return frame
    return Yuv444Frame(frame.planes << shift, VTM_BIT_DEPTH)


def assemble_two_frame_sequence(preview: RasterImage, original: RasterImage, path) -> None:
    """Write preview (frame 0) then original (frame 1), 10-bit planar 4:4:4."""
    if not preview.same_format(original):
        raise PixelError(f"preview {preview!r} and original {original!r} differ in format")
    write_yuv444_raw(to_vtm_depth(preview), path)
    write_yuv444_raw(to_vtm_depth(original), path, append=True)


# -- log parsing ---------------------------------------------------------------

@dataclass(frozen=True)
class FrameRecord:
    poc: int
    slice_type: str
    qp: int
    bits: int
    psnr_yuv: tuple


def _psnr_value(token):
    try:
        return float(token)
    except ValueError:
        raise VtmLogError(f"malformed PSNR field {token!r}") from None


def parse_frame_bits(log_text: str) -> list:
    """Per-picture records for POC 0 and POC 1 of a VTM 12.3 encoder log."""
    version = _VERSION_RE.search(log_text)
    if version is None:
        raise VtmLogError("no VTM version banner in log")
    if version.group(1) not in SUPPORTED_VERSIONS:
        raise VtmLogError(
            f"log is from VTM {version.group(1)}; parser is pinned to {SUPPORTED_VERSIONS}"
        )
    records = []
    for line in log_text.splitlines():
        if not line.startswith("POC"):
            continue
        m = _POC_RE.match(line)
        if m is None:
            raise VtmLogError(f"malformed picture summary line: {line.strip()!r}")
        records.append(
            FrameRecord(
                int(m["poc"]), m["slice"], int(m["qp"]), int(m["bits"]),
                tuple(_psnr_value(m[k]) for k in "yuv"),
            )
        )
    if len(records) != 2:
        raise VtmLogError(f"expected 2 picture records, found {len(records)}")
    records.sort(key=lambda r: r.poc)
    if [r.poc for r in records] != [0, 1]:
        raise VtmLogError(f"expected POC 0 and 1, found {[r.poc for r in records]}")
    return records


def combined_psnr(psnr_yuv) -> float:
    """Equal-weight PSNR over three planes, via their mean MSE."""
    mean = sum(10.0 ** (-p / 10.0) for p in psnr_yuv) / len(psnr_yuv)
    return -10.0 * np.log10(mean)


# -- running -------------------------------------------------------------------

@dataclass
class VtmJobSpec:
    encoder_binary: Path
    qp: int
    preview: RasterImage
    original: RasterImage
    workdir: Path
    decoder_binary: Path | None = None
    frame_rate: int = 2

    def __post_init__(self):
        if not 0 <= self.qp <= 51:
            raise ValueError(f"qp must be in [0, 51], got {self.qp}")
        if not self.preview.same_format(self.original):
            raise PixelError("preview and original differ in format")
        self.encoder_binary = Path(self.encoder_binary)
        self.workdir = Path(self.workdir)
        if self.decoder_binary is not None:
            self.decoder_binary = Path(self.decoder_binary)


@dataclass
class VtmRunResult:
    width: int
    height: int
    frame1_bits: int
    frame1_psnr_yuv: tuple
    frame0_bits: int
    frame0_psnr_yuv: tuple
    log_text: str = field(repr=False)
    bitstream_path: Path
    recon_path: Path

    @property
    def frame1_bpp(self) -> float:
        return self.frame1_bits / (self.width * self.height)

    @property
    def frame1_psnr(self) -> float:
        return combined_psnr(self.frame1_psnr_yuv)

    def read_recon(self, frame_index: int = 1) -> RasterImage:
        return read_yuv444_raw(self.recon_path, self.width, self.height, VTM_BIT_DEPTH, frame_index)


def check_binary(path) -> Path:
    if path is None:
        raise VtmUnavailableError("<unset>")
    p = Path(path)
    if not p.is_file() or not os.access(p, os.X_OK):
        raise VtmUnavailableError(p)
    return p


def encoder_command(job: VtmJobSpec, cfg_path, seq_path, bin_path, rec_path) -> list:
    w, h = job.original.width, job.original.height
    return [
        str(job.encoder_binary), "-c", str(cfg_path),
        "-i", str(seq_path), "-b", str(bin_path), "-o", str(rec_path),
        "-wdt", str(w), "-hgt", str(h), "-fr", str(job.frame_rate), "-f", "2",
        f"--InputBitDepth={VTM_BIT_DEPTH}", f"--OutputBitDepth={VTM_BIT_DEPTH}",
        "--InputChromaFormat=444", "--ChromaFormatIDC=444",
    ]


def _run(cmd, cwd, log_path):
    proc = subprocess.run(cmd, cwd=cwd, stdout=subprocess.PIPE, stderr=subprocess.STDOUT)
    text = proc.stdout.decode("utf-8", errors="replace")
    Path(log_path).write_text(text, encoding="utf-8")
    if proc.returncode != 0:
        tail = " | ".join(text.strip().splitlines()[-3:])
        raise VtmRunError(f"{cmd[0]} exited with {proc.returncode}: {tail}", proc.returncode, text)
    return text


def run_vtm(job: VtmJobSpec) -> VtmRunResult:
    """Encode (and optionally decode) one preview/original pair.

    All intermediate files stay in ``job.workdir`` for inspection.
    """
    check_binary(job.encoder_binary)
    if job.decoder_binary is not None:
        check_binary(job.decoder_binary)
    wd = job.workdir
    wd.mkdir(parents=True, exist_ok=True)
    seq = wd / "sequence.yuv"
    cfg = wd / "encoder.cfg"
    bit = wd / "str.bin"
    rec = wd / "rec.yuv"
    assemble_two_frame_sequence(job.preview, job.original, seq)
    cfg.write_text(write_vtm_config(job.qp, bit.name, rec.name), encoding="utf-8")
    log = _run(encoder_command(job, cfg.name, seq.name, bit.name, rec.name), wd, wd / "encoder.log")
    frames = parse_frame_bits(log)
    recon = rec
    if job.decoder_binary is not None:
        recon = wd / "decoded.yuv"
        _run(
            [str(job.decoder_binary), "-b", bit.name, "-o", recon.name, "-d", str(VTM_BIT_DEPTH)],
            wd, wd / "decoder.log",
        )
    return VtmRunResult(
        job.original.width, job.original.height,
        frames[1].bits, frames[1].psnr_yuv, frames[0].bits, frames[0].psnr_yuv,
        log, bit, recon,
    )
