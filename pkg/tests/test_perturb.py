import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optagg import InvalidInput, Rng, Shape
from optagg.perturb import (BaselineSpec, NoiseSpec, RegionMaskSpec, apply_h, gaussian_blur,
                            make_baseline, sample_mask, sample_masks, sample_noise)

S16 = Shape(16, 16)


def test_noise_bounds_and_reproducibility():
    spec = NoiseSpec(0.1)
    v = sample_noise(spec, S16, Rng(1))
    assert np.all(v >= -0.1) and np.all(v < 0.1)
    assert np.array_equal(v, sample_noise(spec, S16, Rng(1)))


def test_noise_variance():
    v = sample_noise(NoiseSpec(0.1), Shape(100, 1000), Rng(2))
    assert abs(v.var() / (0.1**2 / 3) - 1) < 0.05


def test_scattered_mask_selects_exact_count():
    for seed in range(20):
        assert sample_mask(RegionMaskSpec("scattered", 0.2), S16, Rng(seed)).sum() == 51


def test_square_mask_is_a_seven_by_seven_square():
    for seed in range(20):
        m = sample_mask(RegionMaskSpec("square", 0.2), S16, Rng(seed)).reshape(16, 16)
        rows, cols = np.nonzero(m)
        assert m.sum() == 49
        assert rows.max() - rows.min() == 6 and cols.max() - cols.min() == 6


def test_square_placement_covers_all_positions():
    masks = sample_masks(RegionMaskSpec("square", 0.2), S16, Rng(0), 2000).reshape(-1, 16, 16)
    corners = {(int(np.argmax(m.any(axis=1))), int(np.argmax(m.any(axis=0)))) for m in masks}
    assert corners == {(r, c) for r in range(10) for c in range(10)}


def test_masks_broadcast_over_channels():
    m = sample_mask(RegionMaskSpec("scattered", 0.25), Shape(4, 4, 3), Rng(0)).reshape(4, 4, 3)
    assert np.all(m[..., 0] == m[..., 1]) and m[..., 0].sum() == 4


def test_mask_fraction_must_lie_in_open_interval():
    with pytest.raises(InvalidInput):
        RegionMaskSpec("square", 1.0)
    with pytest.raises(InvalidInput):
        sample_mask(RegionMaskSpec("square", 0.01), Shape(4, 4), Rng(0))


def test_baselines():
    x = Rng(0).random(S16.d)
    assert not make_baseline(BaselineSpec("zeros"), x, S16).any()
    c = np.full(S16.d, 0.37)
    np.testing.assert_allclose(make_baseline(BaselineSpec("mean"), c, S16), c, atol=1e-15)
    np.testing.assert_allclose(make_baseline(BaselineSpec("blur"), c, S16), c, atol=1e-15)
    rgb = Shape(4, 4, 3)
    xr = Rng(1).random(rgb.d)
    mean = make_baseline(BaselineSpec("mean"), xr, rgb).reshape(4, 4, 3)
    np.testing.assert_allclose(mean[0, 0], xr.reshape(4, 4, 3).mean(axis=(0, 1)))


def blur_oracle(img, sigma):
    radius = int(np.ceil(3 * sigma))
    t = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()
    H, W = img.shape

    def reflect(i, n):
        while i < 0 or i >= n:
            i = -i - 1 if i < 0 else 2 * n - i - 1
        return i

    tmp = np.array([[sum(k[j] * img[reflect(r + t[j], H), c] for j in range(len(t)))
                     for c in range(W)] for r in range(H)])
    return np.array([[sum(k[j] * tmp[r, reflect(c + t[j], W)] for j in range(len(t)))
                      for c in range(W)] for r in range(H)])


def test_blur_matches_loop_oracle():
    img = Rng(4).random(9 * 7).reshape(9, 7)
    got = gaussian_blur(img.ravel(), Shape(9, 7), 1.3).reshape(9, 7)
    np.testing.assert_allclose(got, blur_oracle(img, 1.3), atol=1e-13)


@given(st.integers(0, 2**32), st.floats(0.3, 3.0))
@settings(max_examples=30, deadline=None)
def test_blur_preserves_channel_means(seed, sigma):
    shape = Shape(8, 12, 2)
    x = Rng(seed).random(shape.d)
    b = make_baseline(BaselineSpec("blur", sigma), x, shape).reshape(8, 12, 2)
    np.testing.assert_allclose(b.mean(axis=(0, 1)), x.reshape(8, 12, 2).mean(axis=(0, 1)),
                               atol=1e-10)


def test_apply_h():
    r = Rng(5)
    x, xb = r.random(20), r.random(20)
    assert np.array_equal(apply_h(x, xb, np.zeros(20)), x)
    assert np.array_equal(apply_h(x, xb, np.ones(20)), xb)
    mask = (r.random(20) < 0.5).astype(float)
    expected = [xb[i] if mask[i] == 1 else x[i] for i in range(20)]
    assert apply_h(x, xb, mask).tolist() == expected
    assert np.array_equal(apply_h(x, x, mask), x)
    with pytest.raises(InvalidInput):
        apply_h(x, xb[:5], mask)
