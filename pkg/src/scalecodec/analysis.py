"""Rate-distortion analytics for scalable codecs.

Bjontegaard-delta metrics over PSNR or mAP curves, the expected relative rate
of a scalable codec as a function of how often the enhancement layer is
needed, and the break-even frequency at which two scalable codecs cost the
same.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

MIN_POINTS = 4
BISECTION_TOL = 1e-12


class AnalysisError(ValueError):
    pass


class QualityKind(str, Enum):
    PSNR = "PSNR"
    MAP = "mAP"
    MAP50 = "mAP@50"


class BdMethod(str, Enum):
    PIECEWISE_CUBIC = "piecewise_cubic"
    CUBIC_FIT = "cubic_fit"


class RhoConvention(str, Enum):
    TOTAL_OVER_BASE = "total_over_base"
    ENH_OVER_BASE = "enh_over_base"


@dataclass(frozen=True)
class RdPoint:
    rate: float
    quality: float
    quality_kind: QualityKind = QualityKind.PSNR

    def __post_init__(self):
        object.__setattr__(self, "quality_kind", QualityKind(self.quality_kind))
        if not (math.isfinite(self.rate) and self.rate > 0):
            raise AnalysisError(f"rate must be positive and finite, got {self.rate}")
        if not math.isfinite(self.quality):
            raise AnalysisError(f"quality must be finite, got {self.quality}")


@dataclass(frozen=True)
class RdCurve:
    label: str
    points: tuple
    quality_kind: QualityKind = QualityKind.PSNR

    def __post_init__(self):
        kind = QualityKind(self.quality_kind)
        object.__setattr__(self, "quality_kind", kind)
        pts = tuple(self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < MIN_POINTS:
            raise AnalysisError(f"curve {self.label!r} needs >= {MIN_POINTS} points, has {len(pts)}")
        for i, p in enumerate(pts):
            if p.quality_kind != kind:
                raise AnalysisError(f"point {i} of {self.label!r} is {p.quality_kind.value}, curve is {kind.value}")
        for i in range(1, len(pts)):
            if not pts[i].rate > pts[i - 1].rate:
                raise AnalysisError(f"curve {self.label!r}: rate not strictly increasing at point {i}")
            if pts[i].quality < pts[i - 1].quality:
                raise AnalysisError(f"curve {self.label!r}: quality decreases at point {i}")

    @classmethod
    def from_arrays(cls, label, rates, qualities, quality_kind=QualityKind.PSNR):
        kind = QualityKind(quality_kind)
        return cls(label, tuple(RdPoint(float(r), float(q), kind) for r, q in zip(rates, qualities)), kind)

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate for p in self.points])

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points])


@dataclass(frozen=True)
class ScalableRdRecord:
    base_rate: float
    enh_rate: float
    base_quality: float = float("nan")
    enh_quality: float = float("nan")

    def __post_init__(self):
        if not (self.base_rate > 0 and self.enh_rate > 0):
            raise AnalysisError(f"layer rates must be positive, got {self.base_rate}, {self.enh_rate}")

    @property
    def total_rate(self) -> float:
        return self.base_rate + self.enh_rate


@dataclass(frozen=True)
class BdReport:
    bd_rate_percent: float
    bd_quality_delta: float | None
    overlap_interval: tuple
    method: BdMethod
    quality_kind: QualityKind

    def to_dict(self):
        d = asdict(self)
        d["method"] = self.method.value
        d["quality_kind"] = self.quality_kind.value
        d["overlap_interval"] = list(self.overlap_interval)
        return d


@dataclass(frozen=True)
class BreakEvenReport:
    f_star: float
    in_range: bool
    rho: float
    rho_convention: RhoConvention
    bdr_base: float
    bdr_total: float

    def to_dict(self):
        d = asdict(self)
        d["rho_convention"] = self.rho_convention.value
        return d


# -- Bjontegaard delta ---------------------------------------------------------

def _mean_over(x, y, lo, hi, method):
    """Mean of the curve y(x) over [lo, hi]; x strictly increasing."""
    if method == BdMethod.PIECEWISE_CUBIC:
        return PchipInterpolator(x, y).integrate(lo, hi) / (hi - lo)
    poly = np.polyint(np.polyfit(x, y, 3))
    return (np.polyval(poly, hi) - np.polyval(poly, lo)) / (hi - lo)


def _strict(x, y):
    """Drop repeated abscissae (keeping the first) so x is strictly increasing."""
    keep = np.concatenate([[True], np.diff(x) > 0])
    return x[keep], y[keep]


def bd_metrics(candidate: RdCurve, anchor: RdCurve, method=BdMethod.PIECEWISE_CUBIC) -> BdReport:
    """BD-rate (percent) and BD-quality of ``candidate`` relative to ``anchor``.

    Log10 rate is interpolated against quality over the overlapping quality
    range; the mean log-rate gap becomes a percentage. BD-quality swaps the
    axes and is ``None`` when the rate ranges do not overlap.
    """
    method = BdMethod(method)
    if candidate.quality_kind != anchor.quality_kind:
        raise AnalysisError(
            f"quality kind mismatch: {candidate.quality_kind.value} vs {anchor.quality_kind.value}"
        )
    qc, qa = candidate.qualities, anchor.qualities
    lc, la = np.log10(candidate.rates), np.log10(anchor.rates)

    lo, hi = max(qc.min(), qa.min()), min(qc.max(), qa.max())
    if not hi > lo:
        raise AnalysisError(f"quality ranges of {candidate.label!r} and {anchor.label!r} do not overlap")
    xc, yc = _strict(qc, lc)
    xa, ya = _strict(qa, la)
    if min(len(xc), len(xa)) < 2 or (method == BdMethod.CUBIC_FIT and min(len(xc), len(xa)) < MIN_POINTS):
        raise AnalysisError("too few distinct quality values to interpolate")
    delta = _mean_over(xc, yc, lo, hi, method) - _mean_over(xa, ya, lo, hi, method)
    bd_rate = 100.0 * (10.0 ** delta - 1.0)

    rlo, rhi = max(lc.min(), la.min()), min(lc.max(), la.max())
    bd_quality = None
    if rhi > rlo:
        bd_quality = float(_mean_over(lc, qc, rlo, rhi, method) - _mean_over(la, qa, rlo, rhi, method))
    return BdReport(float(bd_rate), bd_quality, (float(lo), float(hi)), method, candidate.quality_kind)


# -- relative rate and break-even ---------------------------------------------

def _check_fraction(f):
    if not 0.0 <= f <= 1.0:
        raise AnalysisError(f"enhancement frequency must be in [0, 1], got {f}")


def relative_rate(f_h: float, record: ScalableRdRecord, reference_rate: float):
    """Expected rate of a scalable codec over a single-layer reference.

    Returns ``(value, scalable_preferable)``; the scalable codec wins when
    the value is below 1.
    """
    _check_fraction(f_h)
    if not reference_rate > 0:
        raise AnalysisError(f"reference rate must be positive, got {reference_rate}")
    value = (1 - f_h) * record.base_rate / reference_rate + f_h * record.total_rate / reference_rate
    return value, value < 1.0


def expected_rate(f_h: float, record: ScalableRdRecord) -> float:
    return (1 - f_h) * record.base_rate + f_h * record.total_rate


def relative_rate_scalable(f_h: float, candidate: ScalableRdRecord, anchor: ScalableRdRecord) -> float:
    """Expected rate of ``candidate`` over expected rate of ``anchor``."""
    _check_fraction(f_h)
    den = expected_rate(f_h, anchor)
    if den == 0:
        raise AnalysisError("anchor expected rate is zero")
    return expected_rate(f_h, candidate) / den


def estimate_rho(anchor_records, convention=RhoConvention.TOTAL_OVER_BASE) -> float:
    """Layer-rate ratio of the anchor from its average measured rates."""
    records = list(anchor_records)
    if not records:
        raise AnalysisError("cannot estimate rho from an empty record list")
    convention = RhoConvention(convention)
    base = sum(r.base_rate for r in records) / len(records)
    enh = sum(r.enh_rate for r in records) / len(records)
    if convention == RhoConvention.TOTAL_OVER_BASE:
        return (base + enh) / base
    return enh / base


def break_even_closed_form(bdr_base: float, bdr_total: float, rho: float,
                           convention=RhoConvention.TOTAL_OVER_BASE) -> BreakEvenReport:
    """``f* = bdr_base / (bdr_base - rho * bdr_total)``.

    BD-rates are fractions (-0.3 for -30 %). A value outside [0, 1] means
    one codec is cheaper at every frequency; it is returned with
    ``in_range`` false rather than raised.
    """
    den = bdr_base - rho * bdr_total
    if den == 0:
        raise AnalysisError("break-even undefined: bdr_base equals rho * bdr_total")
    f = bdr_base / den
    return BreakEvenReport(f, 0.0 <= f <= 1.0, rho, RhoConvention(convention), bdr_base, bdr_total)


@dataclass(frozen=True)
class NumericBreakEven:
    f_star: float
    flag: str  # "crossing", "always_equal", "candidate_dominates", "anchor_dominates"


def break_even_numeric(candidate: ScalableRdRecord, anchor: ScalableRdRecord) -> NumericBreakEven:
    """Solve ``relative_rate_scalable(f) = 1`` on [0, 1] by bisection.

    Independent of the closed form: it only evaluates the rate ratio.
    """
    def g(f):
        return relative_rate_scalable(f, candidate, anchor) - 1.0

    g0, g1 = g(0.0), g(1.0)
    if g0 == 0 and g1 == 0:
        return NumericBreakEven(float("nan"), "always_equal")
    if g0 == 0:
        return NumericBreakEven(0.0, "crossing")
    if g1 == 0:
        return NumericBreakEven(1.0, "crossing")
    if g0 < 0 and g1 < 0:
        return NumericBreakEven(1.0, "candidate_dominates")
    if g0 > 0 and g1 > 0:
        return NumericBreakEven(0.0, "anchor_dominates")
    lo, hi = 0.0, 1.0
    while hi - lo > BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        if (g(mid) < 0) == (g0 < 0):
            lo = mid
        else:
            hi = mid
    return NumericBreakEven(0.5 * (lo + hi), "crossing")


# -- CSV / JSON ----------------------------------------------------------------

RD_CSV_HEADER = ("rate_bpp", "quality", "kind")
RECORD_CSV_HEADER = ("base_rate", "enh_rate", "base_quality", "enh_quality")


def _fmt(x: float) -> str:
    return format(x, ".9g")


def save_rd_csv(curve: RdCurve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RD_CSV_HEADER)
        for p in curve.points:
            w.writerow((_fmt(p.rate), _fmt(p.quality), p.quality_kind.value))


def _read_rows(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(c.strip() for c in rows[0]) != header:
        raise AnalysisError(f"{path}: expected header {','.join(header)}")
    return [(i, r) for i, r in enumerate(rows[1:], start=2) if any(c.strip() for c in r)]


def load_rd_csv(path, label=None) -> RdCurve:
    """Read a ``rate_bpp,quality,kind`` file; rows are sorted by rate.

    Errors name the offending row (1-based, header is row 1).
    """
    parsed = []
    kinds = set()
    for row_no, row in _read_rows(path, RD_CSV_HEADER):
        if len(row) != 3:
            raise AnalysisError(f"{path}: row {row_no}: expected 3 fields, got {len(row)}")
        try:
            kind = QualityKind(row[2].strip())
            point = RdPoint(float(row[0]), float(row[1]), kind)
        except (ValueError, AnalysisError) as exc:
            raise AnalysisError(f"{path}: row {row_no}: {exc}") from None
        kinds.add(kind)
        parsed.append((row_no, point))
    if len(kinds) > 1:
        raise AnalysisError(f"{path}: mixed quality kinds {sorted(k.value for k in kinds)}")
    parsed.sort(key=lambda t: t[1].rate)
    for (_, prev), (row_no, p) in zip(parsed, parsed[1:]):
        if p.rate == prev.rate:
            raise AnalysisError(f"{path}: row {row_no}: duplicate rate {p.rate}")
        if p.quality < prev.quality:
            raise AnalysisError(f"{path}: row {row_no}: quality decreases as rate increases")
    if len(parsed) < MIN_POINTS:
        raise AnalysisError(f"{path}: need >= {MIN_POINTS} points, found {len(parsed)}")
    kind = kinds.pop()
    return RdCurve(label or Path(path).stem, tuple(p for _, p in parsed), kind)


def save_records_csv(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_CSV_HEADER)
        for r in records:
            w.writerow(tuple(_fmt(v) for v in (r.base_rate, r.enh_rate, r.base_quality, r.enh_quality)))


def load_records_csv(path) -> list:
    """Read ``base_rate,enh_rate,base_quality,enh_quality`` rows."""
    out = []
    for row_no, row in _read_rows(path, RECORD_CSV_HEADER):
        if len(row) != 4:
            raise AnalysisError(f"{path}: row {row_no}: expected 4 fields, got {len(row)}")
        try:
            out.append(ScalableRdRecord(*(float(c) for c in row)))
        except (ValueError, AnalysisError) as exc:
            raise AnalysisError(f"{path}: row {row_no}: {exc}") from None
    if not out:
        raise AnalysisError(f"{path}: no records")
    return out


def report_json(report) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2)
