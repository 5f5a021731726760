"""The sklearn-facing estimator surface."""

import numpy as np
import pytest
from sklearn.base import clone

from sketchforge.errors import ValidationError
from sketchforge.estimator import SketchApproximator, check_image

from helpers import structured_target


def small_image():
    return structured_target(24, 24).canvas.data[:, :, 0]


def test_get_set_params_roundtrip():
    est = SketchApproximator(n_lines=7, iterations=5, seed=3)
    params = est.get_params()
    assert params["n_lines"] == 7
    est2 = SketchApproximator().set_params(**params)
    assert est2.get_params() == params


def test_clone_compatible():
    est = SketchApproximator(n_lines=4, iterations=3)
    est2 = clone(est)
    assert est2.get_params() == est.get_params()


def test_fit_predict_shapes_and_improvement():
    img = small_image()
    est = SketchApproximator(n_lines=30, iterations=40, sigma_start=2.0, seed=1)
    est.fit(img)
    assert est.n_iter_ == 40
    losses = [v for _, v in est.history_]
    assert losses[-1] < losses[0]
    out = est.predict()
    assert out.shape == (24, 24, 1)
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert est.score(img) == pytest.approx(-losses[-1], rel=0.5)


def test_fit_is_seeded_deterministic():
    img = small_image()
    a = SketchApproximator(n_lines=5, iterations=5, seed=7).fit(img)
    b = SketchApproximator(n_lines=5, iterations=5, seed=7).fit(img)
    assert a.history_ == b.history_


def test_predict_before_fit_raises():
    with pytest.raises(ValidationError):
        SketchApproximator().predict()


def test_exports_available_after_fit(tmp_path):
    est = SketchApproximator(n_lines=6, iterations=3, seed=2).fit(small_image())
    svg = est.to_svg(100, 100)
    assert svg.startswith("<?xml")
    tp = est.to_toolpath(150, 150, 5)
    tp.validate()


def test_check_image_accepts_uint8_and_float():
    arr8 = (small_image() * 255).astype(np.uint8)
    t = check_image(arr8)
    assert t.canvas.channels == 1
    assert t.canvas.data.max() <= 1.0
    rgb = np.stack([small_image()] * 3, axis=2)
    t2 = check_image(rgb, "grayscale")
    assert t2.canvas.channels == 1
    t3 = check_image(small_image(), "rgb")
    assert t3.canvas.channels == 3


def test_check_image_rejects_bad_input():
    with pytest.raises(ValidationError):
        check_image(np.ones((4, 4)) * 2.0)
    with pytest.raises(ValidationError):
        check_image(np.ones(5))


def test_rgb_fit_uses_soft_over():
    rgb = np.stack([small_image()] * 3, axis=2)
    est = SketchApproximator(n_lines=5, iterations=3, seed=0, colour_mode="rgb")
    est.fit(rgb)
    assert est.model_.channels == 3
