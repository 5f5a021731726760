"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line
with the measured values (run with `pytest tests/test_acceptance.py -s` to
see every line; failures always show theirs).

Criteria whose stated tolerance is not attainable for the pinned algorithms
are asserted as stated anyway; the printed lines carry the measured values.
"""

import json
import os
import time

import numpy as np
import pytest

from sketchforge.canvas import Canvas, save_ppm
from sketchforge.cli import main as cli_main
from sketchforge.encoder import forward as encoder_forward
from sketchforge.encoder import load_skw1, random_encoder
from sketchforge.losses import LossSpec, feature_targets, loss_feature, loss_mse
from sketchforge.optimizer import OptimConfig, init_model, optimise
from sketchforge.primitives import ParamVector, pack, unpack
from sketchforge.rasterizer import RasterConfig, rasterize, rasterize_backward
from sketchforge.rng import Xoshiro256PP

from helpers import (
    held_karp_optimum,
    mixed_model,
    random_canvas,
    random_strokes_toolpath,
    reconstruction_setup,
    structured_target,
)

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "fixtures", "encoder_conformance")


def report(name: str, passed: bool, detail: str) -> None:
    print(f"ACCEPTANCE {name}: {'PASS' if passed else 'FAIL'} ({detail})")


def _fd_gradient_ok_fraction(cases, canvas_px, h_px=1e-3, tol=1e-3):
    """Fraction of parameter coordinates where the analytic gradient matches
    central finite differences. The step is h_px pixels for geometry
    (converted to normalised units) and h_px for colours, matching the
    rasterizer module's pinned FD convention. Each case is
    (model, loss_of(values, layout, model), grad_of(values, layout, model))."""
    ok = total = 0
    for model, loss_of, grad_of in cases:
        pv = pack(model)
        g = grad_of(pv.values, pv.layout, model)
        for entry in pv.layout:
            h = h_px / canvas_px if entry.field_name == "geometry" else h_px
            for off in range(entry.length):
                i = entry.offset + off
                vp = pv.values.copy()
                vp[i] += h
                vm = pv.values.copy()
                vm[i] -= h
                fd = (loss_of(vp, pv.layout, model)
                      - loss_of(vm, pv.layout, model)) / (2 * h)
                total += 1
                if abs(g[i] - fd) / max(1e-6, abs(fd)) < tol:
                    ok += 1
    return ok / total, total


def _mse_case(model, target, cfg):
    def loss_of(values, layout, m):
        m2 = unpack(ParamVector(values, layout), m)
        render, _ = rasterize(m2, cfg)
        return loss_mse(render, target)[0]

    def grad_of(values, layout, m):
        m2 = unpack(ParamVector(values, layout), m)
        render, tape = rasterize(m2, cfg)
        _, dimg = loss_mse(render, target)
        return rasterize_backward(tape, dimg)

    return model, loss_of, grad_of


def test_gradient_correctness_mse():
    """20 seeded 32x32 models (4 points / 4 segments / 2 splines): analytic
    dMSE/dParamVector vs central FD (h=1e-3), rel err < 1e-3 on >= 95%."""
    t0 = time.perf_counter()
    cfg = RasterConfig(sigma_px=2.0)
    cases = [_mse_case(mixed_model(seed), random_canvas(1000 + seed, 32, 32, 1), cfg)
             for seed in range(20)]
    frac, total = _fd_gradient_ok_fraction(cases, canvas_px=32)
    dt = time.perf_counter() - t0
    passed = frac >= 0.95 and dt < 60.0
    report("gradient-correctness-mse", passed,
           f"{frac * 100:.2f}% of {total} coords within 1e-3, {dt:.1f}s")
    assert frac >= 0.95
    assert dt < 60.0


def _feature_case(model, target, spec, cfg):
    cache = feature_targets(spec, target)

    def loss_of(values, layout, m):
        m2 = unpack(ParamVector(values, layout), m)
        render, _ = rasterize(m2, cfg)
        return loss_feature(render, target, spec, cache)[0]

    def grad_of(values, layout, m):
        m2 = unpack(ParamVector(values, layout), m)
        render, tape = rasterize(m2, cfg)
        _, dimg = loss_feature(render, target, spec, cache)
        return rasterize_backward(tape, dimg)

    return model, loss_of, grad_of


def test_gradient_correctness_feature_loss():
    """Same check through a seeded random 2-layer encoder on 16x16."""
    t0 = time.perf_counter()
    net = random_encoder(99, widths=(6, 8), in_channels=1, strides=(1, 2))
    spec = LossSpec(kind="feature", feature_encoder=net, lpips_normalise=True)
    # sigma 1.5: at 16x16 a 2 px kernel's truncation ring covers half the
    # canvas and its exp(-8) jumps dominate the FD noise floor
    cfg = RasterConfig(sigma_px=1.5)
    cases = [_feature_case(mixed_model(seed, w=16, h=16),
                           random_canvas(2000 + seed, 16, 16, 1), spec, cfg)
             for seed in range(20)]
    frac, total = _fd_gradient_ok_fraction(cases, canvas_px=16)
    dt = time.perf_counter() - t0
    passed = frac >= 0.95 and dt < 60.0
    report("gradient-correctness-feature", passed,
           f"{frac * 100:.2f}% of {total} coords within 1e-3, {dt:.1f}s")
    assert frac >= 0.95
    assert dt < 60.0


def test_self_reconstruction():
    """Perturbed 3-segment model recovers its own render: final MSE below
    max(1e-3, initial/100) within 500 iterations. Sigma is held at the
    target render's value: with annealing from 8 px the sigma mismatch
    leaves a loss floor of ~2e-2 and the threshold cannot be met."""
    t0 = time.perf_counter()
    target, start = reconstruction_setup(seed=11, noise_seed=12, sigma=1.0)
    cfg = OptimConfig(iterations=500, lr=0.01, seed=0, learn_colour=False,
                      sigma_start_px=1.0, sigma_end_px=1.0)
    rep = optimise(target, start, LossSpec(kind="mse"), cfg)
    losses = [v for _, v in rep.loss_history]
    threshold = max(1e-3, losses[0] / 100.0)
    dt = time.perf_counter() - t0
    passed = losses[-1] < threshold and dt < 30.0
    report("self-reconstruction", passed,
           f"initial {losses[0]:.3e} final {losses[-1]:.3e} threshold {threshold:.3e}, {dt:.1f}s")
    assert losses[-1] < threshold
    assert dt < 30.0


def test_paper_preset_smoke_run():
    """64x64 grayscale target, 200 lines, 300 iterations, MSE: loss halves
    and the 25-iteration moving average is non-increasing after iteration 50.
    The MA clause is asserted as stated; fixed-rate Adam orbiting the
    annealed objective leaves ~1e-5..1e-4 chatter that survives the
    averaging, so the measured rises are printed when it fails."""
    t0 = time.perf_counter()
    target = structured_target(64, 64)
    cfg = OptimConfig(iterations=300, lr=0.01, seed=0, learn_colour=True)
    model = init_model(target, 0, 200, 0, cfg)
    rep = optimise(target, model, LossSpec(kind="mse"), cfg)
    losses = np.array([v for _, v in rep.loss_history])
    dt = time.perf_counter() - t0

    halved = losses[-1] < 0.5 * losses[0]
    ma = np.convolve(losses, np.ones(25) / 25.0, mode="valid")
    # ma[k] covers iterations [k, k+24]; "after iteration 50" = windows
    # ending at iteration >= 50
    start = max(50 - 24, 1)
    rises = [ma[i] - ma[i - 1] for i in range(start, len(ma)) if ma[i] > ma[i - 1]]
    monotone = not rises
    passed = halved and monotone and dt < 120.0
    report("paper-preset-smoke", passed,
           f"final/initial {losses[-1] / losses[0]:.3f} (<0.5: {halved}); "
           f"MA rises {len(rises)} max {max(rises) if rises else 0:.2e} "
           f"(monotone: {monotone}); {dt:.1f}s")
    assert dt < 120.0
    assert halved
    assert monotone, f"{len(rises)} moving-average increases, max {max(rises):.2e}"


def _invariant_models():
    return [mixed_model(seed) for seed in range(10)]


def test_rasterizer_invariant_value_range():
    worst_lo, worst_hi = 1.0, 0.0
    for m in _invariant_models():
        canvas, _ = rasterize(m, RasterConfig(sigma_px=2.0))
        worst_lo = min(worst_lo, float(canvas.data.min()))
        worst_hi = max(worst_hi, float(canvas.data.max()))
    passed = worst_lo >= 0.0 and worst_hi <= 1.0
    report("rasterizer-invariants/value-range", passed,
           f"values in [{worst_lo:.3f}, {worst_hi:.3f}]")
    assert passed


def test_rasterizer_invariant_translation():
    worst = 0.0
    w = h = 32
    for m in _invariant_models():
        cfg = RasterConfig(sigma_px=1.5)
        base, _ = rasterize(m, cfg)
        shifted = m.copy()
        for p in shifted.primitives:
            p.points = p.points + np.array([1.0 / w, 0.0])
        out, _ = rasterize(shifted, cfg)
        r = int(np.ceil(cfg.aa_truncate_px)) + 1
        a = base.data[r:-r, r : w - r - 1]
        b = out.data[r:-r, r + 1 : w - r]
        worst = max(worst, float(np.abs(a - b).max()))
    passed = worst < 1e-6
    report("rasterizer-invariants/translation", passed, f"max interior diff {worst:.2e}")
    assert passed


def test_rasterizer_invariant_order_invariance():
    identical = True
    for seed, m in enumerate(_invariant_models()):
        cfg = RasterConfig(sigma_px=2.0)
        base, _ = rasterize(m, cfg)
        prims = list(m.primitives)
        Xoshiro256PP(seed + 500).shuffle(prims)
        from sketchforge.primitives import SketchModel

        permuted, _ = rasterize(SketchModel(prims, m.canvas_w, m.canvas_h,
                                            background=m.background), cfg)
        identical = identical and np.array_equal(base.data, permuted.data)
    report("rasterizer-invariants/order-invariance", identical,
           "bit-identical under permutation" if identical else "differs")
    assert identical


def test_rasterizer_invariant_truncation_soundness():
    worst = 0.0
    for m in _invariant_models():
        c4, _ = rasterize(m, RasterConfig(sigma_px=2.0, aa_truncate_px=8.0))
        c8, _ = rasterize(m, RasterConfig(sigma_px=2.0, aa_truncate_px=16.0))
        worst = max(worst, float(np.abs(c4.data - c8.data).max()))
    passed = worst < 1e-5
    report("rasterizer-invariants/truncation-soundness", passed,
           f"max abs change 4s->8s = {worst:.3e} vs spec 1e-5 "
           f"(kernel tail exp(-8) = {np.exp(-8):.3e})")
    assert passed, f"measured {worst:.3e}, the exp(-8) kernel tail"


def test_toolpath_ordering_quality():
    """50 seeded 8-stroke instances: 2opt <= nn <= identity on every one,
    and 2opt matches the exhaustive optimum on >= 80%."""
    from sketchforge.export import order_strokes, pen_up_travel

    t0 = time.perf_counter()
    chain_ok = 0
    matches = 0
    for seed in range(50):
        tp = random_strokes_toolpath(seed)
        ident = pen_up_travel(order_strokes(tp, "identity"))
        nn = pen_up_travel(order_strokes(tp, "greedy_nn"))
        two = pen_up_travel(order_strokes(tp, "greedy_2opt"))
        if two <= nn + 1e-9 and nn <= ident + 1e-9:
            chain_ok += 1
        if two <= held_karp_optimum(tp) + 1e-6:
            matches += 1
    dt = time.perf_counter() - t0
    passed = chain_ok == 50 and matches >= 40 and dt < 120.0
    report("toolpath-ordering", passed,
           f"chain {chain_ok}/50, optimal {matches}/50 (need >=40), {dt:.1f}s")
    assert chain_ok == 50
    assert matches >= 40
    assert dt < 120.0


def test_gcode_roundtrip():
    """20 seeded models through toolpath -> ordering -> G-code -> simulate:
    polylines reproduced within 0.001 mm, all coordinates inside the bed."""
    from sketchforge.export import (
        model_to_toolpath,
        order_strokes,
        simulate_gcode,
        toolpath_to_gcode,
    )

    worst = 0.0
    in_bed = True
    for seed in range(20):
        model = mixed_model(seed, w=64, h=64)
        tp = order_strokes(model_to_toolpath(model, 200.0, 200.0, 10.0), "greedy_nn")
        prog = toolpath_to_gcode(tp)
        back = simulate_gcode(prog)
        assert len(back.strokes) == len(tp.strokes)
        for got, want in zip(back.strokes, tp.strokes):
            assert got.polyline.shape == want.path().shape
            worst = max(worst, float(np.abs(got.polyline - want.path()).max()))
            in_bed = in_bed and bool(
                (got.polyline >= -1e-9).all()
                and (got.polyline[:, 0] <= 200.0 + 1e-9).all()
                and (got.polyline[:, 1] <= 200.0 + 1e-9).all()
            )
    passed = worst <= 1e-3 and in_bed
    report("gcode-roundtrip", passed, f"max deviation {worst * 1000:.3f} um, in-bed {in_bed}")
    assert worst <= 1e-3
    assert in_bed


def test_fit_determinism(tmp_path):
    """Two deterministic fit runs produce byte-identical model JSON and
    loss CSV."""
    target = structured_target(32, 32)
    img = tmp_path / "target.ppm"
    save_ppm(target.canvas, str(img))
    args = ["fit", "--image", str(img), "--lines", "10", "--iters", "8",
            "--resolution", "32x32", "--seed", "4", "--deterministic"]
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    assert cli_main(args + ["--out-dir", str(out1)]) == 0
    assert cli_main(args + ["--out-dir", str(out2)]) == 0
    same_model = (out1 / "model.json").read_bytes() == (out2 / "model.json").read_bytes()
    same_csv = (out1 / "loss.csv").read_bytes() == (out2 / "loss.csv").read_bytes()
    m1 = json.loads((out1 / "manifest.json").read_text())
    m2 = json.loads((out2 / "manifest.json").read_text())
    same_manifest_args = m1["args"] == m2["args"]
    passed = same_model and same_csv and same_manifest_args
    report("fit-determinism", passed,
           f"model.json identical {same_model}, loss.csv identical {same_csv}")
    assert passed


def test_encoder_conformance_fixture():
    """[SECONDARY] SKW1 + fixture produced by the weight exporter load here
    and the forward activations match the recorded references within 1e-4."""
    skw1 = os.path.join(FIXTURE_DIR, "vgg_prefix.skw1")
    fixture = os.path.join(FIXTURE_DIR, "fixture.json")
    if not (os.path.exists(skw1) and os.path.exists(fixture)):
        pytest.skip("exporter conformance fixtures not generated")
    net = load_skw1(skw1)
    with open(fixture) as fh:
        doc = json.load(fh)
    data = np.array(doc["input"]["data"], dtype=np.float64).reshape(doc["input"]["shape"])
    feats, _ = encoder_forward(net, Canvas(data))
    worst = 0.0
    assert [i for i, _ in feats] == [rec["tap"] for rec in doc["activations"]]
    for (idx, act), rec in zip(feats, doc["activations"]):
        ref = np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
        assert act.shape == ref.shape
        worst = max(worst, float(np.abs(act - ref).max()))
    passed = worst < 1e-4
    report("encoder-conformance", passed, f"max abs activation diff {worst:.2e}")
    assert passed
