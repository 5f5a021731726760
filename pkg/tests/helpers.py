"""Shared generators for seeded test models and targets."""

from __future__ import annotations

import math

import numpy as np

from sketchforge.canvas import Canvas, TargetImage
from sketchforge.export import Stroke, Toolpath
from sketchforge.primitives import Primitive, SketchModel
from sketchforge.rng import Xoshiro256PP


def mixed_model(seed: int, w: int = 32, h: int = 32, n_points: int = 4,
                n_segments: int = 4, n_splines: int = 2, channels: int = 1,
                learn_colour_segments: bool = True) -> SketchModel:
    """The acceptance-style random model: points, short segments, splines.
    Segment colours are learnable so colour gradients get exercised."""
    rng = Xoshiro256PP(seed)
    prims = []
    for _ in range(n_points):
        pos = np.array([[rng.uniform(), rng.uniform()]])
        prims.append(Primitive("point", pos, colour=np.full(channels, 0.4 * rng.uniform())))
    for _ in range(n_segments):
        a = np.array([rng.uniform(), rng.uniform()])
        b = np.clip(a + 0.25 * (np.array([rng.uniform(), rng.uniform()]) - 0.5), 0.0, 1.0)
        prims.append(Primitive("segment", np.stack([a, b]),
                               colour=np.full(channels, 0.4 * rng.uniform()),
                               learn_colour=learn_colour_segments))
    for _ in range(n_splines):
        ctrl = np.array([[rng.uniform(), rng.uniform()] for _ in range(4)])
        prims.append(Primitive("catmullrom", ctrl, colour=np.zeros(channels)))
    return SketchModel(primitives=prims, canvas_w=w, canvas_h=h,
                       background=np.ones(channels))


def random_canvas(seed: int, w: int, h: int, channels: int = 1) -> Canvas:
    rng = Xoshiro256PP(seed)
    data = rng.uniforms(w * h * channels).reshape(h, w, channels)
    return Canvas(data)


def random_target(seed: int, w: int, h: int, channels: int = 1) -> TargetImage:
    mode = "grayscale" if channels == 1 else "rgb"
    return TargetImage(canvas=random_canvas(seed, w, h, channels), colour_mode=mode)


def structured_target(w: int = 64, h: int = 64) -> TargetImage:
    """Deterministic synthetic scene: dark blobs and a diagonal stripe."""
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.ones((h, w))
    img -= 0.8 * np.exp(-(((xx - w * 0.3) ** 2 + (yy - h * 0.4) ** 2) / 120.0))
    img -= 0.6 * np.exp(-(((xx - w * 0.7) ** 2 + (yy - h * 0.6) ** 2) / 260.0))
    img -= 0.5 * np.exp(-(((xx - yy) ** 2) / 80.0))
    return TargetImage(canvas=Canvas(np.clip(img, 0.0, 1.0)[:, :, None]),
                       colour_mode="grayscale")


def reconstruction_setup(seed: int = 11, noise_seed: int = 12, w: int = 32,
                         h: int = 32, sigma: float = 1.0):
    """Seeded 3-segment truth model, its render as the target, and a start
    model perturbed by N(0, 0.02) parameter noise."""
    from sketchforge.primitives import ParamVector, pack, unpack
    from sketchforge.rasterizer import RasterConfig, rasterize

    rng = Xoshiro256PP(seed)
    prims = []
    for _ in range(3):
        a = np.array([0.2 + 0.6 * rng.uniform(), 0.2 + 0.6 * rng.uniform()])
        b = np.clip(a + 0.25 * (np.array([rng.uniform(), rng.uniform()]) - 0.5), 0, 1)
        prims.append(Primitive("segment", np.stack([a, b]), colour=np.zeros(1)))
    truth = SketchModel(prims, w, h)
    render, _ = rasterize(truth, RasterConfig(sigma_px=sigma))
    target = TargetImage(canvas=render, colour_mode="grayscale")
    pv = pack(truth)
    noise = Xoshiro256PP(noise_seed).normals(len(pv)) * 0.02
    start = unpack(ParamVector(pv.values + noise, pv.layout), truth)
    return target, start


def random_strokes_toolpath(seed: int, n: int = 8, bed: float = 200.0,
                            margin: float = 10.0) -> Toolpath:
    """Short pipeline-like strokes (length capped at 20% of the drawable area)."""
    rng = Xoshiro256PP(seed)
    lo, hi = margin, bed - margin
    span = hi - lo
    strokes = []
    for _ in range(n):
        a = np.array([lo + rng.uniform() * span, lo + rng.uniform() * span])
        length = 0.2 * span * rng.uniform_open()
        theta = 2.0 * math.pi * rng.uniform()
        b = np.clip(a + length * np.array([math.cos(theta), math.sin(theta)]), lo, hi)
        strokes.append(Stroke(polyline=np.stack([a, b])))
    return Toolpath(strokes=strokes, bed_w_mm=bed, bed_h_mm=bed, margin_mm=margin)


def held_karp_optimum(tp: Toolpath) -> float:
    """Exact minimum pen-up travel over every stroke order and orientation,
    via dynamic programming on (visited subset, last stroke, orientation).
    Explores the same configuration space as enumerating all n! * 2^n tours."""
    n = len(tp.strokes)
    ends = [(s.polyline[0], s.polyline[-1]) for s in tp.strokes]

    def entry(i, o):
        return ends[i][1] if o else ends[i][0]

    def exit_(i, o):
        return ends[i][0] if o else ends[i][1]

    dp: dict = {}
    for i in range(n):
        for o in (0, 1):
            e = entry(i, o)
            dp[(1 << i, i, o)] = math.hypot(e[0], e[1])
    for mask in range(1, 1 << n):
        for i in range(n):
            if not mask & (1 << i):
                continue
            for o in (0, 1):
                cur = dp.get((mask, i, o))
                if cur is None:
                    continue
                x = exit_(i, o)
                for j in range(n):
                    if mask & (1 << j):
                        continue
                    for oj in (0, 1):
                        e = entry(j, oj)
                        c = cur + math.hypot(e[0] - x[0], e[1] - x[1])
                        key = (mask | (1 << j), j, oj)
                        if c < dp.get(key, math.inf):
                            dp[key] = c
    full = (1 << n) - 1
    return min(dp[(full, i, o)] for i in range(n) for o in (0, 1))


def brute_force_optimum(tp: Toolpath) -> float:
    """Literal enumeration of every order x orientation; for small n only."""
    import itertools

    n = len(tp.strokes)
    ends = [(s.polyline[0], s.polyline[-1]) for s in tp.strokes]
    best = math.inf
    for perm in itertools.permutations(range(n)):
        for bits in range(1 << n):
            pos = (0.0, 0.0)
            total = 0.0
            for k, i in enumerate(perm):
                o = (bits >> k) & 1
                e = ends[i][1] if o else ends[i][0]
                x = ends[i][0] if o else ends[i][1]
                total += math.hypot(e[0] - pos[0], e[1] - pos[1])
                pos = x
            best = min(best, total)
    return best
