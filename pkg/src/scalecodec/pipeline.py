"""End-to-end sweep: base layer, preview, enhancement layer, one row per QP.

A run manifest is a flat ``key = value`` file; lists are comma separated::

    images = kodim01.ppm, kodim02.ppm
    configs = s2b6, s4b4
    qps = 22, 27, 32, 37
    engine = inhouse
    output_dir = results

Relative paths resolve against the manifest's directory. Nothing is random,
so re-running a manifest rewrites byte-identical results.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .base import SurrogateConfig, base_encode, base_decode, base_rate_bpp, synthesize_preview
from .enh.codec import EnhConfig, enh_decode, enh_rate_bpp, encode_frame, prepare_motion
from .pixel import FILTERS, RasterImage, load_ppm, psnr, rgb_to_yuv444
from . import vtm

RESULTS_SCHEMA_VERSION = 1
RESULT_COLUMNS = (
    "image", "cfg", "scale_factor", "quant_bits", "qp", "engine", "width", "height",
    "base_bits", "base_bpp", "preview_psnr", "enh_bits", "enh_bpp", "total_bpp",
    "recon_psnr", "recon_psnr_y", "recon_psnr_u", "recon_psnr_v",
)
ENGINES = ("inhouse", "vtm")
_CFG_RE = re.compile(r"^s(\d+)b(\d+)$")
_KNOWN_KEYS = {
    "images", "configs", "qps", "engine", "output_dir", "search_range",
    "preview_filter", "intra_only", "workers", "vtm_encoder", "vtm_decoder",
}


class PipelineError(RuntimeError):
    def __init__(self, message, context=None):
        super().__init__(message)
        self.context = dict(context or {})


def parse_cfg_label(label: str, preview_filter: str = "bilinear") -> SurrogateConfig:
    """``"s2b6"`` -> scale factor 2, 6 quantization bits."""
    m = _CFG_RE.match(label.strip())
    if m is None:
        raise PipelineError(f"bad surrogate config {label!r}; expected e.g. s2b6")
    return SurrogateConfig(int(m[1]), int(m[2]), preview_filter)


@dataclass(frozen=True)
class RunManifest:
    images: tuple
    configs: tuple
    qps: tuple
    engine: str = "inhouse"
    output_dir: Path = Path("results")
    search_range: int = 32
    intra_only: bool = False
    workers: int = 1
    vtm_encoder: Path | None = None
    vtm_decoder: Path | None = None

    def __post_init__(self):
        if not (self.images and self.configs and self.qps):
            raise PipelineError("manifest needs nonempty images, configs and qps")
        if self.engine not in ENGINES:
            raise PipelineError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        for qp in self.qps:
            if not 0 <= qp <= 51:
                raise PipelineError(f"qp {qp} outside [0, 51]")
        if self.workers < 1:
            raise PipelineError("workers must be >= 1")


def _split(value):
    return [v.strip() for v in value.split(",") if v.strip()]


def _as_bool(value):
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise PipelineError(f"not a boolean: {value!r}")


def parse_manifest(text: str, base_dir=".") -> RunManifest:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string("[manifest]\n" + text)
    except configparser.Error as exc:
        raise PipelineError(f"manifest syntax: {exc}") from None
    kv = dict(parser["manifest"])
    unknown = set(kv) - _KNOWN_KEYS
    if unknown:
        raise PipelineError(f"unknown manifest keys: {sorted(unknown)}")
    base_dir = Path(base_dir)

    def path(p):
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    try:
        preview_filter = kv.get("preview_filter", "bilinear").strip()
        if preview_filter not in FILTERS:
            raise PipelineError(f"preview_filter must be one of {FILTERS}")
        return RunManifest(
            images=tuple(path(p) for p in _split(kv.get("images", ""))),
            configs=tuple(parse_cfg_label(c, preview_filter) for c in _split(kv.get("configs", ""))),
            qps=tuple(int(q) for q in _split(kv.get("qps", ""))),
            engine=kv.get("engine", "inhouse").strip(),
            output_dir=path(kv.get("output_dir", "results").strip()),
            search_range=int(kv.get("search_range", "32")),
            intra_only=_as_bool(kv.get("intra_only", "false")),
            workers=int(kv.get("workers", "1")),
            vtm_encoder=path(kv["vtm_encoder"].strip()) if "vtm_encoder" in kv else None,
            vtm_decoder=path(kv["vtm_decoder"].strip()) if "vtm_decoder" in kv else None,
        )
    except ValueError as exc:
        raise PipelineError(f"manifest value: {exc}") from None


def load_manifest(path) -> RunManifest:
    path = Path(path)
    return parse_manifest(path.read_text(encoding="utf-8"), path.parent)


def load_yuv_image(path) -> RasterImage:
    return rgb_to_yuv444(load_ppm(path))


# -- jobs ------------------------------------------------------------------------

@dataclass(frozen=True)
class _Job:
    image: Path
    cfg: SurrogateConfig
    qps: tuple
    engine: str
    search_range: int
    intra_only: bool
    output_dir: Path
    vtm_encoder: Path | None = None
    vtm_decoder: Path | None = None


@dataclass
class RunResults:
    rows: list = field(default_factory=list)


def _fmt(v):
    return format(v, ".9g") if isinstance(v, float) else v


def run_image_config(job: _Job) -> list:
    """All QP rows for one (image, surrogate config) pair.

    Grouped this way so the motion table is computed once per pair.
    """
    ctx = {"image": str(job.image), "cfg": job.cfg.label}
    try:
        original = load_yuv_image(job.image)
        bs = base_encode(original, job.cfg)
        preview = synthesize_preview(base_decode(bs))
        base_bpp = base_rate_bpp(bs)
        preview_q = psnr(original, preview).psnr_combined
        table = None
        if job.engine == "inhouse" and not job.intra_only:
            table = prepare_motion(original, preview, job.search_range)
    except Exception as exc:
        raise PipelineError(f"{type(exc).__name__}: {exc}", ctx) from exc
    rows = []
    for qp in job.qps:
        try:
            if job.engine == "inhouse":
                cfg = EnhConfig(qp=qp, search_range=job.search_range, intra_only=job.intra_only)
                res = encode_frame(original, preview, cfg, table)
                recon = enh_decode(res.bitstream, preview)
                if recon != res.recon:
                    raise PipelineError("decoder output differs from encoder reconstruction")
                q = psnr(original, recon)
                enh_bits, enh_bpp = res.bitstream.bit_count, enh_rate_bpp(res.bitstream)
                planes, combined = q.psnr_per_plane, q.psnr_combined
            else:
                workdir = job.output_dir / "vtm" / f"{job.image.stem}_{job.cfg.label}_qp{qp}"
                run = vtm.run_vtm(vtm.VtmJobSpec(
                    job.vtm_encoder, qp, preview, original, workdir, job.vtm_decoder,
                ))
                enh_bits, enh_bpp = run.frame1_bits, run.frame1_bpp
                planes, combined = run.frame1_psnr_yuv, run.frame1_psnr
        except Exception as exc:
            raise PipelineError(f"{type(exc).__name__}: {exc}", {**ctx, "qp": qp}) from exc
        rows.append({
            "image": job.image.name, "cfg": job.cfg.label,
            "scale_factor": job.cfg.scale_factor, "quant_bits": job.cfg.quant_bits,
            "qp": qp, "engine": job.engine + ("-intra" if job.intra_only else ""),
            "width": original.width, "height": original.height,
            "base_bits": bs.bit_count + bs.header_bits, "base_bpp": base_bpp,
            "preview_psnr": preview_q, "enh_bits": enh_bits, "enh_bpp": enh_bpp,
            "total_bpp": base_bpp + enh_bpp, "recon_psnr": float(combined),
            "recon_psnr_y": float(planes[0]), "recon_psnr_u": float(planes[1]),
            "recon_psnr_v": float(planes[2]),
        })
    return rows


def run_manifest(manifest: RunManifest) -> list:
    """Compute every result row, in manifest order."""
    if manifest.engine == "vtm":
        enc = manifest.vtm_encoder or os.environ.get(vtm.ENCODER_ENV)
        vtm.check_binary(enc)
        dec = manifest.vtm_decoder or os.environ.get(vtm.DECODER_ENV)
        if dec is not None:
            vtm.check_binary(dec)
        enc, dec = Path(enc), (Path(dec) if dec else None)
    else:
        enc = dec = None
    for img in manifest.images:
        if not Path(img).is_file():
            raise PipelineError(f"input image not found: {img}", {"image": str(img)})
    jobs = [
        _Job(Path(img), cfg, manifest.qps, manifest.engine, manifest.search_range,
             manifest.intra_only, Path(manifest.output_dir), enc, dec)
        for img in manifest.images for cfg in manifest.configs
    ]
    if manifest.workers == 1 or len(jobs) == 1:
        groups = [run_image_config(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=manifest.workers) as pool:
            groups = list(pool.map(run_image_config, jobs))  # map keeps input order
    return [row for g in groups for row in g]


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=RESULT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r[k]) for k in RESULT_COLUMNS})
    return buf.getvalue()


def rows_to_json(rows) -> str:
    doc = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "columns": list(RESULT_COLUMNS),
        "rows": [{k: r[k] for k in RESULT_COLUMNS} for r in rows],
    }
    return json.dumps(doc, indent=2) + "\n"


def write_results(rows, output_dir) -> tuple:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / "results.csv", out / "results.json"
    csv_path.write_text(rows_to_csv(rows), encoding="utf-8")
    json_path.write_text(rows_to_json(rows), encoding="utf-8")
    return csv_path, json_path


def read_results_csv(path) -> list:
    """Rows of a results file as dicts of strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PipelineError(f"{path}: empty results file")
        return list(reader), list(reader.fieldnames)
