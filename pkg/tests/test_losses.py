"""Loss values and gradients: MSE, pyramid MSE, and feature distance."""

import numpy as np
import pytest

from sketchforge.canvas import Canvas, downsample_avg2
from sketchforge.encoder import random_encoder
from sketchforge.errors import ValidationError
from sketchforge.losses import (
    LossSpec,
    feature_targets,
    loss_feature,
    loss_mse,
    loss_pyramid,
)
from sketchforge.rng import Xoshiro256PP

from helpers import random_canvas


def test_mse_identical_is_zero():
    c = random_canvas(1, 6, 6)
    value, grad = loss_mse(c, Canvas(c.data.copy()))
    assert value == 0.0
    assert np.allclose(grad, 0.0)


def test_mse_ones_vs_zeros():
    ones = Canvas(np.ones((4, 4, 1)))
    zeros = Canvas(np.zeros((4, 4, 1)))
    value, grad = loss_mse(ones, zeros)
    assert value == pytest.approx(1.0)
    assert np.allclose(grad, 2.0 / 16.0)


def test_mse_gradient_matches_fd():
    r = random_canvas(2, 5, 4)
    t = random_canvas(3, 5, 4)
    value, grad = loss_mse(r, t)
    h = 1e-7
    rng = Xoshiro256PP(4)
    for _ in range(20):
        y = rng.randint(4)
        x = rng.randint(5)
        up = r.data.copy()
        up[y, x, 0] += h
        dn = r.data.copy()
        dn[y, x, 0] -= h
        fd = (loss_mse(Canvas(np.clip(up, 0, 1)), t)[0]
              - loss_mse(Canvas(np.clip(dn, 0, 1)), t)[0]) / (up[y, x, 0] - dn[y, x, 0])
        assert abs(grad[y, x, 0] - fd) / max(1e-8, abs(fd)) < 1e-5


def test_mse_shape_mismatch():
    with pytest.raises(ValidationError):
        loss_mse(random_canvas(1, 4, 4), random_canvas(1, 5, 4))


def test_mse_invariant_under_shared_permutation():
    r = random_canvas(5, 6, 6)
    t = random_canvas(6, 6, 6)
    base, _ = loss_mse(r, t)
    perm = np.argsort(Xoshiro256PP(7).uniforms(36))
    rp = r.data.reshape(-1, 1)[perm].reshape(6, 6, 1)
    tp = t.data.reshape(-1, 1)[perm].reshape(6, 6, 1)
    shuffled, _ = loss_mse(Canvas(rp), Canvas(tp))
    assert shuffled == pytest.approx(base, rel=1e-12)


def test_pyramid_level_one_equals_mse():
    r = random_canvas(8, 8, 8)
    t = random_canvas(9, 8, 8)
    assert loss_pyramid(r, t, 1)[0] == pytest.approx(loss_mse(r, t)[0])
    assert np.allclose(loss_pyramid(r, t, 1)[1], loss_mse(r, t)[1])


def test_pyramid_identical_is_zero():
    c = random_canvas(10, 8, 8)
    assert loss_pyramid(c, Canvas(c.data.copy()), 3)[0] == 0.0


def test_pyramid_matches_brute_force_three_levels():
    r = random_canvas(11, 8, 8)
    t = random_canvas(12, 8, 8)
    value, _ = loss_pyramid(r, t, 3)
    # independent pyramid construction
    levels = []
    rr, tt = r, t
    for _ in range(3):
        levels.append(loss_mse(rr, tt)[0])
        rr, tt = downsample_avg2(rr), downsample_avg2(tt)
    assert value == pytest.approx(sum(levels) / 3.0, rel=1e-12)


def test_pyramid_gradient_matches_fd():
    r = random_canvas(13, 8, 6)
    t = random_canvas(14, 8, 6)
    _, grad = loss_pyramid(r, t, 3)
    h = 1e-6
    rng = Xoshiro256PP(15)
    for _ in range(25):
        y = rng.randint(6)
        x = rng.randint(8)
        up = r.data.copy()
        up[y, x, 0] += h
        dn = r.data.copy()
        dn[y, x, 0] -= h
        fd = (loss_pyramid(Canvas(np.clip(up, 0, 1)), t, 3)[0]
              - loss_pyramid(Canvas(np.clip(dn, 0, 1)), t, 3)[0]) / (up[y, x, 0] - dn[y, x, 0])
        assert abs(grad[y, x, 0] - fd) / max(1e-8, abs(fd)) < 1e-5


def test_pyramid_too_many_levels():
    with pytest.raises(ValidationError):
        loss_pyramid(random_canvas(1, 4, 4), random_canvas(2, 4, 4), 4)


def test_feature_identical_is_zero():
    net = random_encoder(1, widths=(4, 4), in_channels=1, strides=(1, 2))
    spec = LossSpec(kind="feature", feature_encoder=net)
    c = random_canvas(3, 8, 8)
    value, _ = loss_feature(c, Canvas(c.data.copy()), spec)
    assert value == pytest.approx(0.0, abs=1e-18)


def test_feature_identity_encoder_equals_mse():
    from sketchforge.encoder import ConvLayer, EncoderNet

    w = np.zeros((1, 1, 3, 3), np.float32)
    w[0, 0, 1, 1] = 1.0
    net = EncoderNet(layers=[ConvLayer(weight=w, bias=np.zeros(1, np.float32), stride=1)],
                     taps=(0,))
    spec = LossSpec(kind="feature", feature_encoder=net, lpips_normalise=False)
    r = random_canvas(4, 6, 6)
    t = random_canvas(5, 6, 6)
    value, grad = loss_feature(r, t, spec)
    mse_value, mse_grad = loss_mse(r, t)
    assert value == pytest.approx(mse_value, rel=1e-12)
    assert np.allclose(grad, mse_grad, atol=1e-12)


@pytest.mark.parametrize("normalise", [False, True])
def test_feature_gradient_matches_fd(normalise):
    net = random_encoder(6, widths=(4, 5), in_channels=1, strides=(1, 2))
    spec = LossSpec(kind="feature", feature_encoder=net, lpips_normalise=normalise)
    r = random_canvas(7, 8, 8)
    t = random_canvas(8, 8, 8)
    cache = feature_targets(spec, t)
    _, grad = loss_feature(r, t, spec, cache)
    h = 1e-6
    ok = total = 0
    for y in range(8):
        for x in range(0, 8, 2):
            up = r.data.copy()
            up[y, x, 0] += h
            dn = r.data.copy()
            dn[y, x, 0] -= h
            fd = (loss_feature(Canvas(up), t, spec, cache)[0]
                  - loss_feature(Canvas(dn), t, spec, cache)[0]) / (2 * h)
            total += 1
            if abs(grad[y, x, 0] - fd) / max(1e-6, abs(fd)) < 1e-3:
                ok += 1
    assert ok / total >= 0.95


def test_feature_weights_scale_taps():
    net = random_encoder(9, widths=(4, 4), in_channels=1, strides=(1, 1))
    r = random_canvas(10, 8, 8)
    t = random_canvas(11, 8, 8)
    uniform = LossSpec(kind="feature", feature_encoder=net, lpips_normalise=False)
    doubled = LossSpec(kind="feature", feature_encoder=net, lpips_normalise=False,
                       feature_weights=np.array([2.0, 2.0]))
    assert loss_feature(r, t, doubled)[0] == pytest.approx(2 * loss_feature(r, t, uniform)[0])


def test_feature_requires_encoder():
    with pytest.raises(ValidationError):
        LossSpec(kind="feature")


def test_feature_weight_length_checked():
    net = random_encoder(1, widths=(4, 4), in_channels=1)
    with pytest.raises(ValidationError):
        LossSpec(kind="feature", feature_encoder=net, feature_weights=np.array([1.0]))


def test_losses_nonnegative():
    for seed in range(5):
        r = random_canvas(seed, 8, 8)
        t = random_canvas(seed + 50, 8, 8)
        assert loss_mse(r, t)[0] >= 0.0
        assert loss_pyramid(r, t, 2)[0] >= 0.0
