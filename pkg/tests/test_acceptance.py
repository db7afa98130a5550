"""Acceptance checks, one marker per criterion.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary prints one
PASS/FAIL line per criterion.
"""

import difflib
import os
import time

import numpy as np
import pytest

import corpus
from scalecodec import analysis as an, vtm
from scalecodec.analysis import BdMethod, RdCurve, RhoConvention, ScalableRdRecord
from scalecodec.base import SurrogateConfig, base_decode, base_encode, synthesize_preview
from scalecodec.enh.codec import EnhConfig, enh_decode, enh_rate_bpp, encode_frame, prepare_motion
from scalecodec.enh.config import lambda_q16
from scalecodec.enh.motion import mv_bits
from scalecodec.pixel import ColorSpace, RasterImage, Yuv444Frame, psnr, rgb_to_yuv444, yuv444_to_rgb

from pathlib import Path

FIXTURES = Path(__file__).parent / "fixtures"
SWEEP_CONFIGS = ((2, 6), (4, 4))
SWEEP_QPS = (22, 27, 32, 37)
METHODS = list(BdMethod)


def random_curve(rng, label="c"):
    n = int(rng.integers(4, 9))
    rates = 10 ** (np.log10(rng.uniform(0.005, 0.5)) + np.cumsum(rng.uniform(0.05, 0.5, n)))
    quals = rng.uniform(20, 35) + np.cumsum(rng.uniform(0.2, 4.0, n))
    return RdCurve.from_arrays(label, rates, quals)


def preview_of(img, s, b):
    return synthesize_preview(base_decode(base_encode(img, SurrogateConfig(s, b))))


# -- 1 -------------------------------------------------------------------------

@pytest.mark.criterion(1, "BD-metric exactness")
def test_bd_metric_exactness():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    for _ in range(100):
        c = random_curve(rng)
        doubled = RdCurve.from_arrays("d", c.rates * 2, c.qualities)
        shifted = RdCurve.from_arrays("s", c.rates, c.qualities + 1.0)
        for method in METHODS:
            same = an.bd_metrics(c, c, method)
            assert (same.bd_rate_percent, same.bd_quality_delta) == (0.0, 0.0)
            assert an.bd_metrics(doubled, c, method).bd_rate_percent == pytest.approx(100.0, abs=0.1)
            assert an.bd_metrics(shifted, c, method).bd_quality_delta == pytest.approx(1.0, abs=0.01)
    assert time.perf_counter() - start < 5.0


# -- 2 -------------------------------------------------------------------------

@pytest.mark.criterion(2, "break-even consistency")
def test_break_even_closed_form_matches_oracle():
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    checked = 0
    while checked < 1000:
        anchor = ScalableRdRecord(rng.uniform(0.01, 2.0), rng.uniform(0.01, 4.0))
        cand = ScalableRdRecord(rng.uniform(0.01, 2.0), rng.uniform(0.01, 4.0))
        bdr_base = cand.base_rate / anchor.base_rate - 1
        bdr_total = cand.total_rate / anchor.total_rate - 1
        if not bdr_base < 0 < bdr_total:
            continue
        rho = an.estimate_rho([anchor], RhoConvention.TOTAL_OVER_BASE)
        closed = an.break_even_closed_form(bdr_base, bdr_total, rho)
        oracle = an.break_even_numeric(cand, anchor)
        assert oracle.flag == "crossing"
        assert abs(closed.f_star - oracle.f_star) <= 1e-6
        checked += 1
    assert time.perf_counter() - start < 5.0


@pytest.mark.criterion(2, "break-even consistency")
def test_break_even_worked_value():
    r = an.break_even_closed_form(-0.30, 0.20, 2.0)
    assert round(r.f_star, 6) == 0.428571
    oracle = an.break_even_numeric(ScalableRdRecord(0.7, 1.7), ScalableRdRecord(1.0, 1.0))
    assert round(oracle.f_star, 6) == 0.428571


# -- 3 -------------------------------------------------------------------------

@pytest.mark.criterion(3, "codec closure")
def test_codec_closure_over_sweep():
    assert len(corpus.NAMES) == 8 and corpus.rgb("astronaut").width == 512
    start = time.perf_counter()
    for name in corpus.NAMES:
        img = corpus.yuv(name)
        for s, b in SWEEP_CONFIGS:
            first = preview_of(img, s, b)
            second = preview_of(img, s, b)
            assert first == second
            tables = (prepare_motion(img, first), prepare_motion(img, second))
            for qp in SWEEP_QPS:
                cfg = EnhConfig(qp=qp)
                a = encode_frame(img, first, cfg, tables[0])
                again = encode_frame(img, second, cfg, tables[1])
                assert a.bitstream.to_bytes() == again.bitstream.to_bytes(), (name, s, b, qp)
                assert enh_decode(a.bitstream, first) == a.recon, (name, s, b, qp)
    assert time.perf_counter() - start < 120.0


# -- 4 -------------------------------------------------------------------------

@pytest.mark.criterion(4, "perfect-reference degeneracy")
@pytest.mark.parametrize("name", corpus.NAMES)
def test_perfect_reference(name):
    img = corpus.yuv(name)
    res = encode_frame(img, img, EnhConfig(qp=27))
    assert res.mode_counts()["SKIP"] == res.bitstream.block_count
    assert enh_rate_bpp(res.bitstream) < 0.01
    assert res.recon == img and enh_decode(res.bitstream, img) == img


# -- 5 -------------------------------------------------------------------------

def corpus_mean_curve(names, s, b, intra_only):
    rates, quals = [], []
    for qp in SWEEP_QPS:
        bpp, q = [], []
        for name in names:
            img = corpus.yuv(name)
            res = encode_frame(img, preview_of(img, s, b), EnhConfig(qp=qp, intra_only=intra_only))
            bpp.append(enh_rate_bpp(res.bitstream))
            q.append(psnr(img, res.recon).psnr_combined)
        rates.append(np.mean(bpp))
        quals.append(np.mean(q))
    order = np.argsort(rates)
    return RdCurve.from_arrays("intra" if intra_only else "inter",
                               np.array(rates)[order], np.array(quals)[order])


@pytest.mark.criterion(5, "enhancement pays for itself")
@pytest.mark.parametrize("s, b", SWEEP_CONFIGS)
def test_inter_beats_intra_only(s, b):
    eligible = [n for n in corpus.NAMES
                if psnr(corpus.yuv(n), preview_of(corpus.yuv(n), s, b)).psnr_combined >= 25.0]
    assert len(eligible) >= 4
    inter = corpus_mean_curve(eligible, s, b, intra_only=False)
    intra = corpus_mean_curve(eligible, s, b, intra_only=True)
    for method in METHODS:
        assert an.bd_metrics(inter, intra, method).bd_rate_percent < 0


# -- 6 -------------------------------------------------------------------------

@pytest.mark.criterion(6, "relative-rate endpoints and affinity")
def test_single_layer_relative_rate_endpoints_exact():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        rec = ScalableRdRecord(rng.uniform(0.01, 5), rng.uniform(0.01, 5))
        ref = rng.uniform(0.01, 10)
        assert an.relative_rate(0.0, rec, ref)[0] == rec.base_rate / ref
        assert an.relative_rate(1.0, rec, ref)[0] == (rec.base_rate + rec.enh_rate) / ref


@pytest.mark.criterion(6, "relative-rate endpoints and affinity")
def test_scalable_relative_rate_is_linear_in_f():
    # literal check: values between the endpoints equal the straight line
    # joining them. Holds only when both codecs share the same total/base
    # ratio, so a generic pair exposes the curvature of the rate ratio.
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        cand = ScalableRdRecord(rng.uniform(0.01, 5), rng.uniform(0.01, 5))
        anchor = ScalableRdRecord(rng.uniform(0.01, 5), rng.uniform(0.01, 5))
        r0 = an.relative_rate_scalable(0.0, cand, anchor)
        r1 = an.relative_rate_scalable(1.0, cand, anchor)
        for f in (0.25, 0.5, 0.75):
            line = (1 - f) * r0 + f * r1
            worst = max(worst, abs(an.relative_rate_scalable(f, cand, anchor) - line) / max(abs(line), 1.0))
    assert worst <= 1e-12, f"largest relative deviation from the endpoint line: {worst:.3g}"


# -- 7 -------------------------------------------------------------------------

@pytest.mark.criterion(7, "VTM bridge fidelity")
def test_vtm_config_for_qp28():
    text = vtm.write_vtm_config(28)
    squeezed = {" ".join(line.split("#")[0].split()) for line in text.splitlines()}
    assert "QP : 28" in squeezed and "IntraQPOffset : -28" in squeezed
    ref = (FIXTURES / "lowdelay_p_qp28.cfg").read_text()
    for qp in (22, 37):
        diff = [ln for ln in difflib.unified_diff(ref.splitlines(), vtm.write_vtm_config(qp, "b.bin", "r.yuv").splitlines(),
                                                   lineterm="", n=0)
                if ln[:1] in "+-" and not ln.startswith(("---", "+++"))]
        assert diff and {ln[1:].split(":")[0].strip() for ln in diff} <= {"QP", "IntraQPOffset", "BitstreamFile", "ReconFile"}


@pytest.mark.criterion(7, "VTM bridge fidelity")
def test_vtm_log_planted_bits():
    recs = vtm.parse_frame_bits((FIXTURES / "vtm12.3_encoder.log").read_text())
    assert [(r.poc, r.bits) for r in recs] == [(0, 298120), (1, 123456)]


@pytest.mark.criterion(7, "VTM bridge fidelity")
def test_vtm_frame1_only_accounting(tmp_path):
    img = corpus.yuv("blobs")
    orig = Yuv444Frame(img.planes[:, :64, :64])
    prev = preview_of(orig, 2, 6)
    res = vtm.run_vtm(vtm.VtmJobSpec(FIXTURES / "stub_vtm_encoder.py", 28, prev, orig, tmp_path))
    assert res.frame1_bits == 123456
    assert res.frame1_bpp == 123456 / 4096 != (123456 + 298120) / 4096


@pytest.mark.criterion(7, "VTM bridge fidelity")
@pytest.mark.skipif(not os.environ.get(vtm.ENCODER_ENV), reason=f"{vtm.ENCODER_ENV} not set")
def test_vtm_real_run(tmp_path):
    img = corpus.yuv("astronaut")
    orig = Yuv444Frame(img.planes[:, 224:288, 224:288])
    res = vtm.run_vtm(vtm.VtmJobSpec(os.environ[vtm.ENCODER_ENV], 32, preview_of(orig, 2, 6), orig,
                                     tmp_path, os.environ.get(vtm.DECODER_ENV)))
    assert res.frame1_bits > 0


# -- 8 -------------------------------------------------------------------------

@pytest.mark.criterion(8, "color and metric numerics")
def test_color_lattice_round_trip():
    levels = np.minimum(np.arange(17) * 16, 255)
    r, g, b = np.meshgrid(levels, levels, levels, indexing="ij")
    img = RasterImage(np.stack([r, g, b]).reshape(3, 17, 289), 8, ColorSpace.RGB)
    back = yuv444_to_rgb(rgb_to_yuv444(img))
    assert np.abs(back.planes - img.planes).max() <= 1


@pytest.mark.criterion(8, "color and metric numerics")
def test_constant_offset_psnr():
    a = Yuv444Frame(np.full((3, 32, 32), 100))
    b = Yuv444Frame(np.full((3, 32, 32), 116))
    assert psnr(a, b).psnr_combined == pytest.approx(24.0483, abs=1e-3)


def translated(name, dx, dy, margin=16):
    src = corpus.yuv(name).planes
    h = (src.shape[1] - 2 * margin) // 16 * 16
    w = (src.shape[2] - 2 * margin) // 16 * 16
    ref = src[:, margin:margin + h, margin:margin + w]
    cur = src[:, margin + dy:margin + dy + h, margin + dx:margin + dx + w]
    return Yuv444Frame(cur), Yuv444Frame(ref)


def interior_blocks(w, h, dx, dy):
    for by in range(h // 16):
        for bx in range(w // 16):
            if 0 <= bx * 16 + dx <= w - 16 and 0 <= by * 16 + dy <= h - 16:
                yield by, bx


SHIFTS = ((3, -2), (-7, 5), (12, 9), (0, -11))
TEXTURED = ("uniform_noise", "gradient_noise", "blobs", "sinusoid", "radial_gradient")


@pytest.mark.criterion(8, "color and metric numerics")
@pytest.mark.parametrize("name", TEXTURED)
def test_motion_recovers_planted_translation(name):
    for dx, dy in SHIFTS:
        cur, ref = translated(name, dx, dy)
        mvs, _ = prepare_motion(cur, ref, 16).select(22)
        blocks = list(interior_blocks(cur.width, cur.height, dx, dy))
        assert blocks
        missed = [(by, bx) for by, bx in blocks if tuple(mvs[by, bx]) != (dx, dy)]
        assert not missed, (name, dx, dy, missed)


@pytest.mark.criterion(8, "color and metric numerics")
@pytest.mark.parametrize("name", corpus.NAMES)
def test_chosen_vector_never_costs_more_than_planted(name):
    lam = lambda_q16(22)
    dx, dy = 5, -3
    cur, ref = translated(name, dx, dy)
    mvs, sad = prepare_motion(cur, ref, 16).select(22)
    for by, bx in interior_blocks(cur.width, cur.height, dx, dy):
        y, x = by * 16, bx * 16
        planted = np.abs(ref.planes[0, y + dy:y + dy + 16, x + dx:x + dx + 16]
                         - cur.planes[0, y:y + 16, x:x + 16]).sum()
        chosen = (int(sad[by, bx]) << 16) + lam * mv_bits(*mvs[by, bx].tolist())
        assert chosen <= (int(planted) << 16) + lam * mv_bits(dx, dy)
