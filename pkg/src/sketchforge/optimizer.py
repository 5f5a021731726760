"""Gradient-descent loop: initialise a stroke budget, anneal softness, and
fit the parameters with Adam against a pixel or feature loss."""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np
from numpy.typing import NDArray

from . import losses as losses_mod
from .canvas import Canvas, TargetImage, save_ppm
from .errors import NumericAbort, ValidationError
from .primitives import (
    ParamVector,
    Primitive,
    SketchModel,
    clamp_params,
    model_to_json,
    pack,
    unpack,
)
from .rasterizer import RasterConfig, rasterize, rasterize_backward
from .rng import Xoshiro256PP

INIT_MODES = ("random_uniform", "grid", "saliency")

# Longest initial stroke, normalised units.
MAX_INIT_LEN = 0.2


@dataclass
class OptimConfig:
    iterations: int = 2000
    lr: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    sigma_start_px: float = 8.0
    sigma_end_px: float = 1.0
    seed: int = 0
    snapshot_every: int = 0
    init: str = "random_uniform"
    compose: str = "darken_min"
    learn_colour: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if self.lr <= 0:
            raise ValidationError("lr must be positive")
        if not (0 < self.sigma_end_px <= self.sigma_start_px):
            raise ValidationError("need 0 < sigma_end_px <= sigma_start_px")
        if self.init not in INIT_MODES:
            raise ValidationError(f"init must be one of {INIT_MODES}")


@dataclass
class AdamState:
    m: NDArray[np.float64]
    v: NDArray[np.float64]
    t: int = 0

    @classmethod
    def for_params(cls, n: int) -> AdamState:
        return cls(m=np.zeros(n), v=np.zeros(n), t=0)


@dataclass
class RunReport:
    loss_history: list[tuple[int, float]]
    final_model: SketchModel
    wall_time_s: float
    config: OptimConfig


def sigma_at(cfg: OptimConfig, iteration: int) -> float:
    """Exponential decay from sigma_start to sigma_end across the run."""
    denom = max(cfg.iterations - 1, 1)
    frac = min(max(iteration, 0), denom) / denom
    return cfg.sigma_start_px * (cfg.sigma_end_px / cfg.sigma_start_px) ** frac


def _sample_colour(target: Canvas, xy: NDArray[np.float64]) -> NDArray[np.float64]:
    px = min(int(xy[0] * target.width), target.width - 1)
    py = min(int(xy[1] * target.height), target.height - 1)
    return target.data[py, px].copy()


def _gradient_magnitude(img: NDArray[np.float64]) -> NDArray[np.float64]:
    """Central-difference gradient magnitude of the channel mean."""
    g = img.mean(axis=2)
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    gx[:, 1:-1] = (g[:, 2:] - g[:, :-2]) * 0.5
    gy[1:-1, :] = (g[2:, :] - g[:-2, :]) * 0.5
    return np.sqrt(gx * gx + gy * gy)


def _draw_position(rng: Xoshiro256PP, mode: str, grid_state: dict,
                   sal: NDArray[np.float64] | None) -> NDArray[np.float64]:
    if mode == "grid":
        side, idx, jitter = grid_state["side"], grid_state["idx"], grid_state["jitter"]
        gi, gj = divmod(idx, side)
        grid_state["idx"] += 1
        base = np.array([(gj + 0.5) / side, (gi + 0.5) / side])
        off = np.array([rng.uniform() - 0.5, rng.uniform() - 0.5]) * 2.0 * jitter
        return np.clip(base + off, 0.0, 1.0)
    if mode == "saliency" and sal is not None:
        gmax = sal.max()
        if gmax > 0:
            h, w = sal.shape
            while True:
                u, v = rng.uniform(), rng.uniform()
                px = min(int(u * w), w - 1)
                py = min(int(v * h), h - 1)
                if rng.uniform() * gmax <= sal[py, px]:
                    return np.array([u, v])
        # flat image: fall through to uniform
    return np.array([rng.uniform(), rng.uniform()])


def _segment_endpoints(rng: Xoshiro256PP, a: NDArray[np.float64]) -> NDArray[np.float64]:
    """Second endpoint at most MAX_INIT_LEN away; direction resampled until
    the segment stays on-canvas (then clamped as a last resort)."""
    length = MAX_INIT_LEN * rng.uniform_open()
    for _ in range(64):
        theta = 2.0 * math.pi * rng.uniform()
        b = a + length * np.array([math.cos(theta), math.sin(theta)])
        if 0.0 <= b[0] <= 1.0 and 0.0 <= b[1] <= 1.0:
            return b
    return np.clip(b, 0.0, 1.0)


def init_model(target: TargetImage, n_points: int, n_lines: int, n_splines: int,
               cfg: OptimConfig) -> SketchModel:
    """Seeded model initialisation. Primitive order: points, lines, splines.

    random_uniform scatters positions i.i.d.; grid centres primitives on a
    sqrt(N) lattice with jitter 0.5/sqrt(N); saliency rejection-samples
    positions proportional to the target's gradient magnitude. Colours start
    at the target value under each primitive's first control point.
    """
    if n_points < 0 or n_lines < 0 or n_splines < 0:
        raise ValidationError("primitive counts must be non-negative")
    total = n_points + n_lines + n_splines
    if total == 0:
        raise ValidationError("at least one primitive count must be positive")
    canvas = target.canvas
    rng = Xoshiro256PP(cfg.seed)
    sal = _gradient_magnitude(canvas.data) if cfg.init == "saliency" else None
    side = max(int(math.ceil(math.sqrt(total))), 1)
    grid_state = {"side": side, "idx": 0, "jitter": 0.5 / side}

    prims: list[Primitive] = []
    sigma0 = cfg.sigma_start_px
    for _ in range(n_points):
        pos = _draw_position(rng, cfg.init, grid_state, sal)
        prims.append(Primitive("point", pos[None, :], sigma=sigma0,
                               colour=_sample_colour(canvas, pos),
                               learn_colour=cfg.learn_colour))
    for _ in range(n_lines):
        a = _draw_position(rng, cfg.init, grid_state, sal)
        b = _segment_endpoints(rng, a)
        prims.append(Primitive("segment", np.stack([a, b]), sigma=sigma0,
                               colour=_sample_colour(canvas, a),
                               learn_colour=cfg.learn_colour))
    for _ in range(n_splines):
        a = _draw_position(rng, cfg.init, grid_state, sal)
        length = MAX_INIT_LEN * rng.uniform_open()
        theta = 2.0 * math.pi * rng.uniform()
        direction = np.array([math.cos(theta), math.sin(theta)])
        jitter = length / 6.0
        ctrl = []
        for k in range(4):
            off = np.array([rng.uniform() - 0.5, rng.uniform() - 0.5]) * 2.0 * jitter
            ctrl.append(np.clip(a + (k / 3.0) * length * direction + off, 0.0, 1.0))
        prims.append(Primitive("catmullrom", np.stack(ctrl), sigma=sigma0,
                               colour=_sample_colour(canvas, ctrl[0]),
                               learn_colour=cfg.learn_colour))
    background = np.ones(canvas.channels)
    return SketchModel(primitives=prims, canvas_w=canvas.width, canvas_h=canvas.height,
                       background=background)


def adam_step(pv: ParamVector, grad: NDArray[np.float64], state: AdamState,
              cfg: OptimConfig) -> tuple[ParamVector, AdamState]:
    """Textbook Adam with bias correction, then box projection (coordinates
    to [-0.25, 1.25], colours to [0, 1])."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != pv.values.shape:
        raise ValidationError(f"gradient shape {grad.shape} != parameters {pv.values.shape}")
    bad = np.nonzero(np.isnan(grad))[0]
    if bad.size:
        raise NumericAbort(f"NaN gradient at parameter index {int(bad[0])}")
    t = state.t + 1
    m = cfg.adam_beta1 * state.m + (1.0 - cfg.adam_beta1) * grad
    v = cfg.adam_beta2 * state.v + (1.0 - cfg.adam_beta2) * grad * grad
    m_hat = m / (1.0 - cfg.adam_beta1**t)
    v_hat = v / (1.0 - cfg.adam_beta2**t)
    theta = pv.values - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    theta = clamp_params(theta, pv.layout)
    return ParamVector(values=theta, layout=pv.layout), AdamState(m=m, v=v, t=t)


def optimise(target: TargetImage, model: SketchModel, loss: losses_mod.LossSpec,
             cfg: OptimConfig, out_dir: str | None = None) -> RunReport:
    """Run the fit loop: anneal sigma, rasterise, evaluate the loss, pull the
    gradient back to the parameters, and step Adam. Loss is recorded every
    iteration; snapshots (model JSON + PPM render) land in out_dir every
    snapshot_every iterations when both are set."""
    canvas = target.canvas
    if (canvas.width, canvas.height) != (model.canvas_w, model.canvas_h):
        raise ValidationError(
            f"target {canvas.width}x{canvas.height} does not match model canvas "
            f"{model.canvas_w}x{model.canvas_h}"
        )
    if canvas.channels != model.channels:
        raise ValidationError("target channels do not match model colours")

    t0 = time.perf_counter()
    pv = pack(model)
    state = AdamState.for_params(len(pv))
    current = model.copy()
    target_cache = None
    if loss.kind == "feature":
        target_cache = losses_mod.feature_targets(loss, canvas)

    history: list[tuple[int, float]] = []
    for it in range(cfg.iterations):
        rcfg = RasterConfig(sigma_px=sigma_at(cfg, it), compose=cfg.compose,
                            threads=cfg.threads)
        render, tape = rasterize(current, rcfg)
        value, dimg = losses_mod.evaluate(loss, render, canvas, target_cache)
        if not math.isfinite(value):
            raise NumericAbort(f"non-finite loss at iteration {it}")
        history.append((it, value))
        if out_dir and cfg.snapshot_every > 0 and it % cfg.snapshot_every == 0:
            stem = os.path.join(out_dir, f"snap_{it:06d}")
            with open(stem + ".json", "w") as fh:
                fh.write(model_to_json(current))
            save_ppm(render, stem + ".ppm")
        grad = rasterize_backward(tape, dimg)
        pv, state = adam_step(pv, grad, state, cfg)
        current = unpack(pv, current)

    for prim in current.primitives:
        prim.sigma = cfg.sigma_end_px
    return RunReport(loss_history=history, final_model=current,
                     wall_time_s=time.perf_counter() - t0, config=cfg)
