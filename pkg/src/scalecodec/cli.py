"""Command-line front end.

Every subcommand exits 0 on success. On failure it writes exactly one JSON
line to stderr, ``{"error": ..., "message": ..., "context": {...}}``, and
exits nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
from pathlib import Path

from . import analysis, vtm
from .base import BaseBitstream, SurrogateConfig, base_decode, base_encode, base_rate_bpp, synthesize_preview
from .enh.codec import EnhBitstream, EnhConfig, enh_decode, enh_rate_bpp, encode_frame
from .pixel import FILTERS, ColorSpace, RasterImage, psnr, save_ppm, write_yuv444_raw, yuv444_to_rgb
from .pipeline import PipelineError, load_manifest, load_yuv_image, read_results_csv, run_manifest, write_results

EXIT_FAILURE = 1
EXIT_USAGE = 2


class CliError(RuntimeError):
    def __init__(self, message, context=None):
        super().__init__(message)
        self.context = dict(context or {})


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("UsageError", message, {"prog": self.prog})
        sys.exit(EXIT_USAGE)


def _emit_error(kind, message, context=None):
    line = json.dumps({"error": kind, "message": str(message), "context": context or {}}, sort_keys=True)
    print(line, file=sys.stderr)


def _print_json(obj):
    print(json.dumps(obj, sort_keys=True, indent=2))


def _write_text(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


def _to_rgb(frame: RasterImage) -> RasterImage:
    return yuv444_to_rgb(frame) if frame.color_space == ColorSpace.YUV444 else frame


def _read_base(path) -> BaseBitstream:
    return BaseBitstream.from_bytes(Path(path).read_bytes())


def _preview_of(base_path) -> RasterImage:
    return synthesize_preview(base_decode(_read_base(base_path)))


# -- codec subcommands ----------------------------------------------------------

def cmd_pipeline(args):
    manifest = load_manifest(args.manifest)
    if args.workers is not None:
        from dataclasses import replace
        manifest = replace(manifest, workers=args.workers)
    rows = run_manifest(manifest)
    csv_path, json_path = write_results(rows, manifest.output_dir)
    _print_json({"rows": len(rows), "csv": str(csv_path), "json": str(json_path)})


def cmd_base(args):
    image = load_yuv_image(args.input)
    bs = base_encode(image, SurrogateConfig(args.scale_factor, args.quant_bits, args.filter))
    Path(args.output).write_bytes(bs.to_bytes())
    _print_json({"bits": bs.bit_count + bs.header_bits, "bpp": base_rate_bpp(bs), "output": args.output})


def cmd_preview(args):
    preview = _preview_of(args.base)
    save_ppm(_to_rgb(preview), args.output)
    info = {"output": args.output, "width": preview.width, "height": preview.height}
    if args.yuv:
        write_yuv444_raw(preview, args.yuv)
        info["yuv"] = args.yuv
    _print_json(info)


def cmd_enh(args):
    original = load_yuv_image(args.input)
    preview = _preview_of(args.base)
    cfg = EnhConfig(qp=args.qp, search_range=args.search_range, intra_only=args.intra_only)
    res = encode_frame(original, preview, cfg)
    Path(args.output).write_bytes(res.bitstream.to_bytes())
    if args.recon:
        save_ppm(_to_rgb(res.recon), args.recon)
    _print_json({
        "bits": res.bitstream.bit_count, "bpp": enh_rate_bpp(res.bitstream),
        "psnr": psnr(original, res.recon).psnr_combined,
        "modes": res.mode_counts(), "output": args.output,
    })


def cmd_decode(args):
    preview = _preview_of(args.base)
    if args.enh:
        frame = enh_decode(EnhBitstream.from_bytes(Path(args.enh).read_bytes()), preview)
    else:
        frame = preview
    save_ppm(_to_rgb(frame), args.output)
    if args.yuv:
        write_yuv444_raw(frame, args.yuv)
    _print_json({"output": args.output, "layers": 2 if args.enh else 1})


def cmd_vtm_run(args):
    encoder = args.encoder or os.environ.get(vtm.ENCODER_ENV)
    decoder = args.decoder or os.environ.get(vtm.DECODER_ENV)
    vtm.check_binary(encoder)
    original = load_yuv_image(args.input)
    preview = _preview_of(args.base)
    result = vtm.run_vtm(vtm.VtmJobSpec(encoder, args.qp, preview, original, args.workdir, decoder))
    _print_json({
        "frame1_bits": result.frame1_bits, "frame1_bpp": result.frame1_bpp,
        "frame1_psnr_yuv": list(result.frame1_psnr_yuv), "frame1_psnr": result.frame1_psnr,
        "frame0_bits": result.frame0_bits, "frame0_psnr_yuv": list(result.frame0_psnr_yuv),
        "bitstream": str(result.bitstream_path), "recon": str(result.recon_path),
    })


# -- analysis subcommands -------------------------------------------------------

def _check_kind(curve, kind):
    if kind is not None and curve.quality_kind != analysis.QualityKind(kind):
        raise analysis.AnalysisError(
            f"curve {curve.label!r} is {curve.quality_kind.value}, expected {kind}"
        )


def cmd_bd(args):
    cand = analysis.load_rd_csv(args.candidate)
    anchor = analysis.load_rd_csv(args.anchor)
    _check_kind(cand, args.kind)
    _check_kind(anchor, args.kind)
    report = analysis.bd_metrics(cand, anchor, args.method)
    if args.output:
        _write_text(args.output, analysis.report_json(report) + "\n")
    q = "n/a" if report.bd_quality_delta is None else f"{report.bd_quality_delta:+.4f}"
    print(f"BD-rate {report.bd_rate_percent:+.3f} %  BD-{report.quality_kind.value} {q}  "
          f"({report.method.value}, overlap {report.overlap_interval[0]:.4g}..{report.overlap_interval[1]:.4g})")
    print(analysis.report_json(report))


def _curves(records, label):
    base = analysis.RdCurve.from_arrays(
        f"{label}-base", [r.base_rate for r in records], [r.base_quality for r in records])
    total = analysis.RdCurve.from_arrays(
        f"{label}-total", [r.total_rate for r in records], [r.enh_quality for r in records])
    return base, total


def _mean(xs):
    return sum(xs) / len(xs)


def breakeven_report(cand_records, anchor_records, convention, method):
    """Closed-form break-even from BD-rates, checked against the bisection oracle.

    The oracle sees an equivalent pair of single records: the anchor's mean
    layer rates, and a candidate scaled by the measured BD-rates.
    """
    convention = analysis.RhoConvention(convention)
    cb, ct = _curves(cand_records, "candidate")
    ab, at = _curves(anchor_records, "anchor")
    bdr_base = analysis.bd_metrics(cb, ab, method).bd_rate_percent / 100.0
    bdr_total = analysis.bd_metrics(ct, at, method).bd_rate_percent / 100.0
    rho = analysis.estimate_rho(anchor_records, convention)
    out = {"rho_convention": convention.value, "bd_method": analysis.BdMethod(method).value,
           "bdr_base": bdr_base, "bdr_total": bdr_total, "rho": rho}

    a_base = _mean([r.base_rate for r in anchor_records])
    a_enh = _mean([r.enh_rate for r in anchor_records])
    c_base = a_base * (1 + bdr_base)
    c_enh = (a_base + a_enh) * (1 + bdr_total) - c_base
    oracle = None
    if c_base > 0 and c_enh > 0:
        oracle = analysis.break_even_numeric(
            analysis.ScalableRdRecord(c_base, c_enh), analysis.ScalableRdRecord(a_base, a_enh))
        out["oracle"] = {"f_star": None if oracle.flag == "always_equal" else oracle.f_star,
                         "flag": oracle.flag}
    else:
        out["oracle"] = {"f_star": None, "flag": "not_applicable"}

    try:
        closed = analysis.break_even_closed_form(bdr_base, bdr_total, rho, convention)
        out.update(f_star=closed.f_star, in_range=closed.in_range, flag="crossing")
    except analysis.AnalysisError:
        closed = None
        out.update(f_star=None, in_range=False, flag="always_equal")
    if oracle is None:
        agree = None
    elif closed is None:
        agree = oracle.flag == "always_equal"
    elif oracle.flag == "crossing":
        agree = abs(closed.f_star - oracle.f_star) <= 1e-6
    else:
        # no crossing in [0, 1]: the closed form must also fall outside
        agree = not (0.0 < closed.f_star < 1.0)
    out["oracle_agrees"] = agree
    return out


def cmd_breakeven(args):
    report = breakeven_report(
        analysis.load_records_csv(args.candidate), analysis.load_records_csv(args.anchor),
        args.rho_convention, args.method,
    )
    text = json.dumps(report, sort_keys=True, indent=2)
    if args.output:
        _write_text(args.output, text + "\n")
    print(text)


_WHERE_RE = re.compile(r"^([^=]+)=(.*)$")


def cmd_plot_data(args):
    rows, columns = read_results_csv(args.results)
    for col in (args.x, args.y, args.group):
        if col not in columns:
            raise CliError(f"unknown column {col!r}", {"columns": columns})
    for cond in args.where or []:
        m = _WHERE_RE.match(cond)
        if m is None or m[1] not in columns:
            raise CliError(f"bad filter {cond!r}; expected column=value", {"columns": columns})
        rows = [r for r in rows if r[m[1]] == m[2]]
    if not rows:
        raise CliError("no rows match; nothing to write", {"results": args.results})
    groups = {}
    for r in rows:
        groups.setdefault(r[args.group], []).append(r)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for key in sorted(groups):
        series = sorted(groups[key], key=lambda r: float(r[args.x]))
        safe = re.sub(r"[^A-Za-z0-9._-]+", "_", key)
        path = out_dir / f"{args.group}_{safe}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow((args.x, args.y))
            for r in series:
                w.writerow((r[args.x], r[args.y]))
        written.append(str(path))
    _print_json({"files": written})


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scalecodec", description="Scalable base/enhancement image codec toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("pipeline", help="run a manifest sweep")
    s.add_argument("--manifest", required=True)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("base", help="encode the base layer of a PPM image")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--scale-factor", type=int, default=2)
    s.add_argument("--quant-bits", type=int, default=6)
    s.add_argument("--filter", choices=FILTERS, default="bilinear")
    s.set_defaults(func=cmd_base)

    s = sub.add_parser("preview", help="synthesize the preview from a base stream")
    s.add_argument("--base", required=True)
    s.add_argument("--output", required=True, help="PPM output")
    s.add_argument("--yuv", help="also write raw planar YUV444")
    s.set_defaults(func=cmd_preview)

    s = sub.add_parser("enh", help="encode the enhancement layer")
    s.add_argument("--input", required=True)
    s.add_argument("--base", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--qp", type=int, default=27)
    s.add_argument("--search-range", type=int, default=32)
    s.add_argument("--intra-only", action="store_true")
    s.add_argument("--recon", help="write the reconstruction as PPM")
    s.set_defaults(func=cmd_enh)

    s = sub.add_parser("decode", help="decode base (and optionally enhancement) to PPM")
    s.add_argument("--base", required=True)
    s.add_argument("--enh")
    s.add_argument("--output", required=True)
    s.add_argument("--yuv")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("bd", help="Bjontegaard metrics of two RD curves")
    s.add_argument("--candidate", required=True)
    s.add_argument("--anchor", required=True)
    s.add_argument("--method", choices=[m.value for m in analysis.BdMethod],
                   default=analysis.BdMethod.PIECEWISE_CUBIC.value)
    s.add_argument("--kind", choices=[k.value for k in analysis.QualityKind])
    s.add_argument("--output")
    s.set_defaults(func=cmd_bd)

    s = sub.add_parser("breakeven", help="break-even enhancement frequency of two scalable codecs")
    s.add_argument("--candidate", required=True)
    s.add_argument("--anchor", required=True)
    s.add_argument("--rho-convention", choices=[c.value for c in analysis.RhoConvention],
                   default=analysis.RhoConvention.TOTAL_OVER_BASE.value)
    s.add_argument("--method", choices=[m.value for m in analysis.BdMethod],
                   default=analysis.BdMethod.PIECEWISE_CUBIC.value)
    s.add_argument("--output")
    s.set_defaults(func=cmd_breakeven)

    s = sub.add_parser("vtm-run", help="enhancement layer through the VTM encoder")
    s.add_argument("--input", required=True)
    s.add_argument("--base", required=True)
    s.add_argument("--qp", type=int, default=28)
    s.add_argument("--workdir", required=True)
    s.add_argument("--encoder", help=f"default: ${vtm.ENCODER_ENV}")
    s.add_argument("--decoder", help=f"default: ${vtm.DECODER_ENV}")
    s.set_defaults(func=cmd_vtm_run)

    s = sub.add_parser("plot-data", help="split a results CSV into per-group series")
    s.add_argument("--results", required=True)
    s.add_argument("--x", default="enh_bpp")
    s.add_argument("--y", default="recon_psnr")
    s.add_argument("--group", default="cfg")
    s.add_argument("--where", action="append", help="column=value row filter (repeatable)")
    s.add_argument("--output-dir", required=True)
    s.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (CliError, PipelineError) as exc:
        _emit_error(type(exc).__name__, exc, exc.context)
        return EXIT_FAILURE
    except vtm.VtmUnavailableError as exc:
        _emit_error("VtmUnavailableError", exc, {"path": exc.path})
        return EXIT_FAILURE
    except (ValueError, OSError, RuntimeError) as exc:
        _emit_error(type(exc).__name__, exc)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
