"""Scalar objectives between a rendered and a target canvas, with gradients
with respect to the render."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from . import encoder as enc
from .canvas import Canvas, avg2_adjoint, downsample_avg2
from .errors import ValidationError

LOSS_KINDS = ("mse", "pyramid_mse", "feature")

_NORM_EPS = 1e-10


@dataclass
class LossSpec:
    kind: str = "mse"
    pyramid_levels: int = 3
    feature_encoder: enc.EncoderNet | None = None
    feature_weights: NDArray[np.float64] | None = None  # None -> uniform 1.0
    lpips_normalise: bool = True
    mse_weight: float = 0.0  # optional extra MSE term mixed into a feature loss

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValidationError(f"loss kind must be one of {LOSS_KINDS}")
        if self.kind == "pyramid_mse" and self.pyramid_levels < 1:
            raise ValidationError("pyramid_levels must be >= 1")
        if self.kind == "feature":
            if self.feature_encoder is None:
                raise ValidationError("feature loss requires an encoder")
            taps = self.feature_encoder.taps
            if self.feature_weights is not None:
                self.feature_weights = np.asarray(self.feature_weights, dtype=np.float64)
                if self.feature_weights.shape != (len(taps),):
                    raise ValidationError(
                        f"need one weight per tap ({len(taps)}), got {self.feature_weights.shape}"
                    )
                if (self.feature_weights <= 0).any():
                    raise ValidationError("feature weights must be positive")


def _check_shapes(render: Canvas, target: Canvas) -> None:
    if render.data.shape != target.data.shape:
        raise ValidationError(
            f"render {render.data.shape} and target {target.data.shape} shapes differ"
        )


def loss_mse(render: Canvas, target: Canvas) -> tuple[float, NDArray[np.float64]]:
    """Mean squared error over all scalars; grad = 2 (render - target) / N."""
    _check_shapes(render, target)
    diff = render.data - target.data
    n = diff.size
    return float((diff * diff).sum() / n), 2.0 * diff / n


def loss_pyramid(render: Canvas, target: Canvas, levels: int
                 ) -> tuple[float, NDArray[np.float64]]:
    """Mean of per-level MSE over an avg-2x2 downsampling pyramid
    (level 0 = full resolution)."""
    _check_shapes(render, target)
    if levels < 1:
        raise ValidationError("levels must be >= 1")
    min_dim = min(render.width, render.height)
    if min_dim < 2 ** (levels - 1):
        raise ValidationError(
            f"{levels} pyramid levels need min dimension >= {2 ** (levels - 1)}, got {min_dim}"
        )
    r, t = render, target
    shapes = []
    total = 0.0
    grads = []
    for _ in range(levels):
        l, g = loss_mse(r, t)
        total += l
        grads.append(g)
        shapes.append((r.height, r.width))
        r, t = downsample_avg2(r), downsample_avg2(t)
    # push each level's gradient back to full resolution through the block means
    acc = grads[-1]
    for lvl in range(levels - 2, -1, -1):
        acc = avg2_adjoint(acc, shapes[lvl][0], shapes[lvl][1])
        acc = acc + grads[lvl]
    return total / levels, acc / levels


def _normalise_features(f: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Unit-normalise each pixel's channel vector: v = f / (|f| + eps)."""
    s = np.sqrt(np.einsum("hwc,hwc->hw", f, f))
    n = s + _NORM_EPS
    return f / n[:, :, None], s, n


def _normalise_backward(f, s, n, gv) -> NDArray[np.float64]:
    # d v_i / d f_j = delta_ij / n - f_i f_j / (s n^2); the second term has a
    # removable singularity at f = 0 (f_j / s -> 0), guarded explicitly.
    dot = np.einsum("hwc,hwc->hw", gv, f)
    safe_s = np.where(s > 0.0, s, 1.0)
    second = f * (dot / (safe_s * n * n))[:, :, None]
    second[s == 0.0] = 0.0
    return gv / n[:, :, None] - second


def feature_targets(spec: LossSpec, target: Canvas) -> FeatureCache:
    """Precompute (and optionally normalise) the fixed target's features."""
    feats, _ = enc.forward(spec.feature_encoder, target)
    out = []
    for idx, f in feats:
        if spec.lpips_normalise:
            v, _, _ = _normalise_features(f)
        else:
            v = f
        out.append((idx, v))
    return FeatureCache(features=out)


@dataclass
class FeatureCache:
    features: enc.FeatureSet


def loss_feature(render: Canvas, target: Canvas, spec: LossSpec,
                 target_cache: FeatureCache | None = None
                 ) -> tuple[float, NDArray[np.float64]]:
    """LPIPS-style feature distance: per tap, the MSE between (optionally
    per-pixel unit-normalised) activations, combined with per-tap weights.
    The target branch is constant; gradients flow through the render only.
    """
    _check_shapes(render, target)
    net = spec.feature_encoder
    weights = spec.feature_weights
    if weights is None:
        weights = np.ones(len(net.taps))
    if target_cache is None:
        target_cache = feature_targets(spec, target)
    feats_r, tape = enc.forward(net, render)

    total = 0.0
    upstream: enc.FeatureSet = []
    for (idx, fr), (idx_t, vt), w in zip(feats_r, target_cache.features, weights):
        if idx != idx_t:
            raise ValidationError("target feature cache does not match the encoder taps")
        if spec.lpips_normalise:
            vr, s, nrm = _normalise_features(fr)
        else:
            vr = fr
        diff = vr - vt
        n = diff.size
        total += w * float((diff * diff).sum() / n)
        g = w * 2.0 * diff / n
        if spec.lpips_normalise:
            g = _normalise_backward(fr, s, nrm, g)
        upstream.append((idx, g))

    drender = enc.backward(tape, upstream)
    if spec.mse_weight > 0.0:
        l2, g2 = loss_mse(render, target)
        total += spec.mse_weight * l2
        drender = drender + spec.mse_weight * g2
    return total, drender


def evaluate(spec: LossSpec, render: Canvas, target: Canvas,
             target_cache: FeatureCache | None = None
             ) -> tuple[float, NDArray[np.float64]]:
    """Dispatch on spec.kind."""
    if spec.kind == "mse":
        return loss_mse(render, target)
    if spec.kind == "pyramid_mse":
        return loss_pyramid(render, target, spec.pyramid_levels)
    return loss_feature(render, target, spec, target_cache)
