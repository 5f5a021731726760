"""Scikit-learn style front door: fit a stroke budget to one image and
render or export the result. Composes with sklearn tooling (get_params /
set_params / clone)."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import encoder as enc
from . import losses as losses_mod
from .canvas import Canvas, TargetImage, rgb_to_gray
from .errors import ValidationError
from .export import Toolpath, model_to_svg, model_to_toolpath, order_strokes
from .optimizer import OptimConfig, init_model, optimise
from .rasterizer import RasterConfig, rasterize


def check_image(X, colour_mode: str = "grayscale") -> TargetImage:
    """Validate/convert an input image to a TargetImage.

    Accepts a TargetImage, a Canvas, or a numeric array shaped (h, w),
    (h, w, 1) or (h, w, 3) with values in [0, 1] (or 0..255 integers).
    """
    if isinstance(X, TargetImage):
        return X
    if isinstance(X, Canvas):
        canvas = X
    else:
        arr = np.asarray(X)
        if arr.ndim not in (2, 3):
            raise ValidationError(f"image must be 2-D or 3-D, got shape {arr.shape}")
        if np.issubdtype(arr.dtype, np.integer):
            arr = arr.astype(np.float64) / 255.0
        else:
            arr = arr.astype(np.float64)
        if arr.size == 0:
            raise ValidationError("image is empty")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError("float images must have values in [0, 1]")
        canvas = Canvas(arr)
    if colour_mode == "grayscale" and canvas.channels == 3:
        canvas = Canvas(rgb_to_gray(canvas.data))
    elif colour_mode == "rgb" and canvas.channels == 1:
        canvas = Canvas(np.repeat(canvas.data, 3, axis=2))
    return TargetImage(canvas=canvas, source_path="", colour_mode=colour_mode)


class SketchApproximator(BaseEstimator):
    """Approximate an image with a fixed budget of soft stroke primitives.

    Parameters mirror the CLI: primitive counts, loss selection, optimiser
    settings, and the softness annealing schedule. After fit(), the learned
    stroke set is available as `model_` and the loss trace as `history_`.
    """

    def __init__(self, n_points=0, n_lines=100, n_splines=0, loss="mse",
                 iterations=300, lr=0.01, sigma_start=8.0, sigma_end=1.0,
                 seed=0, init="random_uniform", colour_mode="grayscale",
                 pyramid_levels=3, encoder_spec="random:0", taps=None,
                 lpips_normalise=True, learn_colour=True, threads=1):
        self.n_points = n_points
        self.n_lines = n_lines
        self.n_splines = n_splines
        self.loss = loss
        self.iterations = iterations
        self.lr = lr
        self.sigma_start = sigma_start
        self.sigma_end = sigma_end
        self.seed = seed
        self.init = init
        self.colour_mode = colour_mode
        self.pyramid_levels = pyramid_levels
        self.encoder_spec = encoder_spec
        self.taps = taps
        self.lpips_normalise = lpips_normalise
        self.learn_colour = learn_colour
        self.threads = threads

    def _loss_spec(self, channels: int) -> losses_mod.LossSpec:
        if self.loss == "mse":
            return losses_mod.LossSpec(kind="mse")
        if self.loss == "pyramid":
            return losses_mod.LossSpec(kind="pyramid_mse", pyramid_levels=self.pyramid_levels)
        if self.loss == "feature":
            net = resolve_encoder(self.encoder_spec, channels)
            if self.taps is not None:
                net = net.with_taps(tuple(self.taps))
            return losses_mod.LossSpec(kind="feature", feature_encoder=net,
                                       lpips_normalise=self.lpips_normalise)
        raise ValidationError(f"unknown loss {self.loss!r}")

    def fit(self, X, y=None):
        target = check_image(X, self.colour_mode)
        cfg = OptimConfig(
            iterations=self.iterations, lr=self.lr,
            sigma_start_px=self.sigma_start, sigma_end_px=self.sigma_end,
            seed=self.seed, init=self.init, learn_colour=self.learn_colour,
            compose="darken_min" if target.canvas.channels == 1 else "soft_over",
            threads=self.threads,
        )
        model = init_model(target, self.n_points, self.n_lines, self.n_splines, cfg)
        spec = self._loss_spec(target.canvas.channels)
        report = optimise(target, model, spec, cfg)
        self.model_ = report.final_model
        self.history_ = report.loss_history
        self.report_ = report
        self.n_iter_ = len(report.loss_history)
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise ValidationError("estimator is not fitted; call fit() first")

    def predict(self, X=None) -> np.ndarray:
        """Render the fitted strokes at the fitted resolution."""
        self._require_fitted()
        cfg = RasterConfig(sigma_px=self.sigma_end,
                           compose="darken_min" if self.model_.channels == 1 else "soft_over")
        canvas, _ = rasterize(self.model_, cfg)
        return canvas.data

    def transform(self, X=None) -> np.ndarray:
        return self.predict(X)

    def score(self, X, y=None) -> float:
        """Negative MSE between the render and an image (higher is better)."""
        self._require_fitted()
        target = check_image(X, self.colour_mode)
        render = self.predict()
        diff = render - target.canvas.data
        return -float((diff * diff).mean())

    def to_svg(self, width_mm: float = 200.0, height_mm: float = 200.0) -> str:
        self._require_fitted()
        return model_to_svg(self.model_, width_mm, height_mm)

    def to_toolpath(self, bed_w_mm: float = 200.0, bed_h_mm: float = 200.0,
                    margin_mm: float = 10.0, order: str = "greedy_nn") -> Toolpath:
        self._require_fitted()
        tp = model_to_toolpath(self.model_, bed_w_mm, bed_h_mm, margin_mm)
        return order_strokes(tp, order)


def resolve_encoder(spec: str | enc.EncoderNet, channels: int) -> enc.EncoderNet:
    """Encoder handle: an EncoderNet, "random:SEED", or an SKW1 file path."""
    if isinstance(spec, enc.EncoderNet):
        return spec
    if isinstance(spec, str) and spec.startswith("random:"):
        try:
            seed = int(spec.split(":", 1)[1])
        except ValueError as exc:
            raise ValidationError(f"bad random encoder spec {spec!r}") from exc
        return enc.random_encoder(seed, in_channels=channels)
    return enc.load_skw1(str(spec))
