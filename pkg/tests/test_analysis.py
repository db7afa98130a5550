import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from scalecodec import analysis as an
from scalecodec.analysis import (
    AnalysisError, BdMethod, QualityKind, RdCurve, RhoConvention, ScalableRdRecord,
)

METHODS = list(BdMethod)


def curve(rates, quals, kind=QualityKind.PSNR, label="c"):
    return RdCurve.from_arrays(label, rates, quals, kind)


ANCHOR = curve([0.1, 0.2, 0.4, 0.8, 1.6], [28.0, 31.0, 34.0, 37.0, 40.0])


@st.composite
def rd_curves(draw, n=None):
    n = draw(st.integers(4, 8)) if n is None else n
    steps = draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n))
    gains = draw(st.lists(st.floats(0.3, 4.0), min_size=n, max_size=n))
    r0 = draw(st.floats(0.01, 1.0))
    q0 = draw(st.floats(20.0, 40.0))
    log_r = math.log10(r0) + np.cumsum(steps)
    q = q0 + np.cumsum(gains)
    return curve(10 ** log_r, q)


# -- types ---------------------------------------------------------------------

def test_curve_validation():
    with pytest.raises(AnalysisError, match="points"):
        curve([0.1, 0.2, 0.3], [1, 2, 3])
    with pytest.raises(AnalysisError, match="strictly increasing"):
        curve([0.1, 0.2, 0.2, 0.3], [1, 2, 3, 4])
    with pytest.raises(AnalysisError, match="quality decreases"):
        curve([0.1, 0.2, 0.3, 0.4], [1, 3, 2, 4])
    with pytest.raises(AnalysisError):
        an.RdPoint(0.0, 30.0)
    with pytest.raises(AnalysisError):
        ScalableRdRecord(0.1, 0.0)


# -- BD metrics ----------------------------------------------------------------

@pytest.mark.parametrize("method", METHODS)
def test_identical_curves_give_exact_zero(method):
    r = an.bd_metrics(ANCHOR, ANCHOR, method)
    assert r.bd_rate_percent == 0.0 and r.bd_quality_delta == 0.0
    assert r.overlap_interval == (28.0, 40.0)


@pytest.mark.parametrize("method", METHODS)
def test_doubled_rate_is_plus_100(method):
    doubled = curve(ANCHOR.rates * 2, ANCHOR.qualities)
    r = an.bd_metrics(doubled, ANCHOR, method)
    assert r.bd_rate_percent == pytest.approx(100.0, abs=0.1)
    assert r.bd_quality_delta < 0


@pytest.mark.parametrize("method", METHODS)
def test_one_db_shift(method):
    up = curve(ANCHOR.rates, ANCHOR.qualities + 1.0)
    r = an.bd_metrics(up, ANCHOR, method)
    assert r.bd_quality_delta == pytest.approx(1.0, abs=0.01)
    assert r.bd_rate_percent < 0


def cubic_lsq(x, y):
    """Cubic least squares through the normal equations (no polyfit)."""
    v = np.vander(np.asarray(x, float), 4)
    coef = np.linalg.solve(v.T @ v, v.T @ np.asarray(y, float))
    return lambda t: np.vander(np.atleast_1d(t), 4) @ coef


def pchip(x, y):
    """Fritsch-Carlson monotone cubic with the usual three-point end rule."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    h = np.diff(x)
    delta = np.diff(y) / h
    d = np.zeros_like(x)
    for k in range(1, len(x) - 1):
        if delta[k - 1] * delta[k] > 0:
            w1, w2 = 2 * h[k] + h[k - 1], h[k] + 2 * h[k - 1]
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k])

    def end(h0, h1, m0, m1):
        e = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1)
        if np.sign(e) != np.sign(m0):
            return 0.0
        if np.sign(m0) != np.sign(m1) and abs(e) > abs(3 * m0):
            return 3 * m0
        return e

    d[0] = end(h[0], h[1], delta[0], delta[1])
    d[-1] = end(h[-1], h[-2], delta[-1], delta[-2])

    def f(t):
        k = np.clip(np.searchsorted(x, t, side="right") - 1, 0, len(x) - 2)
        s = (t - x[k]) / h[k]
        h00, h10 = 2 * s**3 - 3 * s**2 + 1, s**3 - 2 * s**2 + s
        h01, h11 = -2 * s**3 + 3 * s**2, s**3 - s**2
        return h00 * y[k] + h10 * h[k] * d[k] + h01 * y[k + 1] + h11 * h[k] * d[k + 1]
    return f


def dense_bd_rate(cand, anch, interp):
    lo = max(cand.qualities.min(), anch.qualities.min())
    hi = min(cand.qualities.max(), anch.qualities.max())
    q = np.linspace(lo, hi, 400001)
    diff = (interp(cand.qualities, np.log10(cand.rates))(q)
            - interp(anch.qualities, np.log10(anch.rates))(q))
    mean = ((diff[1:] + diff[:-1]) / 2 * np.diff(q)).sum() / (hi - lo)
    return 100 * (10 ** mean - 1)


CAND = curve([0.12, 0.22, 0.45, 0.9, 1.5], [28.5, 31.2, 34.6, 37.1, 39.0])


def test_cubic_fit_matches_independent_least_squares():
    want = dense_bd_rate(CAND, ANCHOR, cubic_lsq)
    assert an.bd_metrics(CAND, ANCHOR, BdMethod.CUBIC_FIT).bd_rate_percent == pytest.approx(want, abs=1e-6)


def test_piecewise_cubic_matches_hand_pchip():
    want = dense_bd_rate(CAND, ANCHOR, pchip)
    assert an.bd_metrics(CAND, ANCHOR).bd_rate_percent == pytest.approx(want, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(rd_curves(), rd_curves())
def test_piecewise_cubic_matches_hand_pchip_on_random_curves(c, a):
    assume(min(c.qualities.max(), a.qualities.max()) - max(c.qualities.min(), a.qualities.min()) > 0.5)
    want = dense_bd_rate(c, a, pchip)
    assert an.bd_metrics(c, a).bd_rate_percent == pytest.approx(want, rel=1e-6, abs=1e-6)


def test_bd_errors():
    far = curve([0.1, 0.2, 0.4, 0.8], [50, 51, 52, 53])
    with pytest.raises(AnalysisError, match="overlap"):
        an.bd_metrics(far, ANCHOR)
    mAP = curve(ANCHOR.rates, ANCHOR.qualities, QualityKind.MAP)
    with pytest.raises(AnalysisError, match="mismatch"):
        an.bd_metrics(mAP, ANCHOR)


def test_map_curves_supported():
    a = curve([0.05, 0.1, 0.2, 0.4], [40.0, 48.0, 54.0, 58.0], QualityKind.MAP50)
    c = curve([0.04, 0.08, 0.16, 0.32], [40.0, 48.0, 54.0, 58.0], QualityKind.MAP50)
    assert an.bd_metrics(c, a).bd_rate_percent == pytest.approx(-20.0, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(rd_curves(), st.sampled_from(METHODS))
def test_self_comparison_is_zero(c, method):
    r = an.bd_metrics(c, c, method)
    assert r.bd_rate_percent == 0.0 and r.bd_quality_delta == 0.0


@settings(max_examples=100, deadline=None)
@given(rd_curves(), rd_curves(), st.floats(0.2, 5.0), st.sampled_from(METHODS))
def test_rate_scaling_law(c, a, k, method):
    assume(min(c.qualities.max(), a.qualities.max()) - max(c.qualities.min(), a.qualities.min()) > 0.5)
    bd0 = an.bd_metrics(c, a, method).bd_rate_percent
    scaled = curve(c.rates * k, c.qualities)
    bd1 = an.bd_metrics(scaled, a, method).bd_rate_percent
    assert bd1 == pytest.approx(100 * (k * (1 + bd0 / 100) - 1), rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(rd_curves(), rd_curves())
def test_log_domain_antisymmetry(c, a):
    assume(min(c.qualities.max(), a.qualities.max()) - max(c.qualities.min(), a.qualities.min()) > 0.5)
    ab = an.bd_metrics(c, a).bd_rate_percent
    ba = an.bd_metrics(a, c).bd_rate_percent
    assert math.log10(1 + ab / 100) == pytest.approx(-math.log10(1 + ba / 100), abs=1e-12)


# -- relative rate ----------------------------------------------------------------

def test_relative_rate_values():
    rec = ScalableRdRecord(0.2, 0.6)
    assert an.relative_rate(0.0, rec, 0.5) == (pytest.approx(0.4), True)
    assert an.relative_rate(1.0, rec, 0.5)[0] == pytest.approx(1.6)
    value, better = an.relative_rate(0.5, rec, 0.5)
    assert value == pytest.approx(1.0) and not better
    with pytest.raises(AnalysisError):
        an.relative_rate(1.5, rec, 0.5)
    with pytest.raises(AnalysisError):
        an.relative_rate(0.5, rec, 0.0)


def test_relative_rate_scalable_values():
    a, c = ScalableRdRecord(1.0, 1.0), ScalableRdRecord(0.7, 1.7)
    for f in (0.0, 0.3, 1.0):
        assert an.relative_rate_scalable(f, a, a) == 1.0
    assert an.relative_rate_scalable(0.0, c, a) == pytest.approx(0.7)
    assert an.relative_rate_scalable(3 / 7, c, a) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(AnalysisError):
        an.relative_rate_scalable(-0.1, c, a)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.01, 100), st.floats(0, 1))
def test_single_layer_relative_rate_is_affine(rb, re, r, f):
    rec = ScalableRdRecord(rb, re)
    v0 = an.relative_rate(0.0, rec, r)[0]
    v1 = an.relative_rate(1.0, rec, r)[0]
    assert an.relative_rate(f, rec, r)[0] == pytest.approx((1 - f) * v0 + f * v1, rel=1e-12, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.01, 10),
       st.floats(0, 1))
def test_scalable_relative_rate_is_ratio_of_affine_rates(cb, ce, ab, ae, f):
    c, a = ScalableRdRecord(cb, ce), ScalableRdRecord(ab, ae)
    num = (1 - f) * cb + f * (cb + ce)
    den = (1 - f) * ab + f * (ab + ae)
    assert an.relative_rate_scalable(f, c, a) == pytest.approx(num / den, rel=1e-12)
    assert an.expected_rate(f, c) == pytest.approx((1 - f) * an.expected_rate(0, c) + f * an.expected_rate(1, c))


# -- rho and break-even -----------------------------------------------------------

def test_estimate_rho():
    one = [ScalableRdRecord(1.0, 1.0)]
    assert an.estimate_rho(one, RhoConvention.TOTAL_OVER_BASE) == 2.0
    assert an.estimate_rho(one, RhoConvention.ENH_OVER_BASE) == 1.0
    assert an.estimate_rho([ScalableRdRecord(1, 1), ScalableRdRecord(3, 3)]) == 2.0
    with pytest.raises(AnalysisError):
        an.estimate_rho([])


def test_closed_form_values():
    assert an.break_even_closed_form(-0.2, 0.0, 2.0).f_star == 1.0
    assert an.break_even_closed_form(0.0, 0.3, 2.0).f_star == 0.0
    r = an.break_even_closed_form(-0.30, 0.20, 2.0)
    assert r.f_star == pytest.approx(3 / 7) and r.in_range
    out = an.break_even_closed_form(-0.3, -0.1, 2.0)
    assert not out.in_range
    with pytest.raises(AnalysisError):
        an.break_even_closed_form(0.4, 0.2, 2.0)


def test_convention_is_carried_into_report():
    r = an.break_even_closed_form(-0.3, 0.2, 1.0, RhoConvention.ENH_OVER_BASE)
    assert r.rho_convention == RhoConvention.ENH_OVER_BASE
    assert r.to_dict()["rho_convention"] == "enh_over_base"


def test_numeric_oracle_cases():
    a = ScalableRdRecord(1.0, 1.0)
    r = an.break_even_numeric(ScalableRdRecord(0.7, 1.7), a)
    assert r.flag == "crossing" and r.f_star == pytest.approx(3 / 7, abs=1e-9)
    assert an.break_even_numeric(a, a).flag == "always_equal"
    cheap = an.break_even_numeric(ScalableRdRecord(0.5, 0.5), a)
    assert (cheap.flag, cheap.f_star) == ("candidate_dominates", 1.0)
    dear = an.break_even_numeric(ScalableRdRecord(1.5, 1.5), a)
    assert (dear.flag, dear.f_star) == ("anchor_dominates", 0.0)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.05, 5), st.floats(0.05, 5), st.floats(0.05, 0.95), st.floats(0.01, 3))
def test_f_star_inside_unit_interval_when_signs_differ(a_base, a_enh, cut, rise):
    c = ScalableRdRecord(a_base * (1 - cut), a_base * cut + a_enh * (1 + rise) + a_base * cut)
    bdr_base = c.base_rate / a_base - 1
    bdr_total = c.total_rate / (a_base + a_enh) - 1
    assume(bdr_base < 0 < bdr_total)
    rho = an.estimate_rho([ScalableRdRecord(a_base, a_enh)])
    r = an.break_even_closed_form(bdr_base, bdr_total, rho)
    assert 0 < r.f_star < 1 and r.in_range
    num = an.break_even_numeric(c, ScalableRdRecord(a_base, a_enh))
    assert num.f_star == pytest.approx(r.f_star, abs=1e-6)


def test_enh_over_base_convention_disagrees_with_oracle():
    # only total/base makes the closed form solve the rate-ratio equation
    a, c = ScalableRdRecord(1.0, 1.0), ScalableRdRecord(0.7, 1.7)
    rho = an.estimate_rho([a], RhoConvention.ENH_OVER_BASE)
    f = an.break_even_closed_form(-0.3, 0.2, rho).f_star
    assert abs(f - an.break_even_numeric(c, a).f_star) > 0.1


# -- files ---------------------------------------------------------------------

def test_rd_csv_round_trip_is_exact(tmp_path):
    c = curve([0.123456789, 0.2, 0.41, 0.9876543210], [28.123456789, 30, 33.5, 36.25], QualityKind.MAP)
    p = tmp_path / "c.csv"
    an.save_rd_csv(c, p)
    assert p.read_text().splitlines()[0] == "rate_bpp,quality,kind"
    back = an.load_rd_csv(p)
    an.save_rd_csv(back, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_text() == p.read_text()
    assert back.quality_kind == QualityKind.MAP
    assert [float(format(r, ".9g")) for r in c.rates] == back.rates.tolist()


def test_rd_csv_errors_name_rows(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("rate_bpp,quality,kind\n0.4,33,PSNR\n0.1,28,PSNR\n0.2,30,PSNR\n0.8,36,PSNR\n")
    assert len(an.load_rd_csv(p).points) == 4
    p.write_text("rate_bpp,quality,kind\n0.1,28,PSNR\n0.2,30,PSNR\n0.2,31,PSNR\n0.8,36,PSNR\n")
    with pytest.raises(AnalysisError, match="row 4: duplicate rate"):
        an.load_rd_csv(p)
    p.write_text("rate_bpp,quality,kind\n0.1,28,PSNR\n0.2,x,PSNR\n")
    with pytest.raises(AnalysisError, match="row 3"):
        an.load_rd_csv(p)
    p.write_text("rate_bpp,quality,kind\n0.1,28,PSNR\n0.2,26,PSNR\n0.3,31,PSNR\n0.8,36,PSNR\n")
    with pytest.raises(AnalysisError, match="row 3: quality decreases"):
        an.load_rd_csv(p)
    p.write_text("rate,quality\n0.1,28\n")
    with pytest.raises(AnalysisError, match="header"):
        an.load_rd_csv(p)


def test_records_csv_round_trip(tmp_path):
    recs = [ScalableRdRecord(0.1 * i, 0.3 * i, 30 + i, 31 + i) for i in range(1, 5)]
    p = tmp_path / "r.csv"
    an.save_records_csv(recs, p)
    back = an.load_records_csv(p)
    for got, want in zip(back, recs, strict=True):
        assert got.base_rate == pytest.approx(want.base_rate, rel=1e-8)
        assert got.enh_rate == pytest.approx(want.enh_rate, rel=1e-8)
        assert (got.base_quality, got.enh_quality) == (want.base_quality, want.enh_quality)


def test_reports_serialize_with_tags():
    r = an.bd_metrics(ANCHOR, ANCHOR, BdMethod.CUBIC_FIT)
    d = json.loads(an.report_json(r))
    assert d["method"] == "cubic_fit" and d["quality_kind"] == "PSNR"
    assert set(d) == {"bd_rate_percent", "bd_quality_delta", "overlap_interval", "method", "quality_kind"}
