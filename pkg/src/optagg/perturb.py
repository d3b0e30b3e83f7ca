"""Input noise, region masks, baselines and the replacement map ``h``."""
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput


@dataclass(frozen=True)
class NoiseSpec:
    bound: float = 0.1

    def __post_init__(self):
        if not self.bound > 0:
            raise InvalidInput("noise bound must be positive")


@dataclass(frozen=True)
class RegionMaskSpec:
    mode: str = "square"
    fraction: float = 0.2

    def __post_init__(self):
        if self.mode not in ("square", "scattered"):
            raise InvalidInput(f"unknown mask mode {self.mode!r}")
        if not 0 < self.fraction < 1:
            raise InvalidInput("mask fraction must lie in (0, 1)")


@dataclass(frozen=True)
class BaselineSpec:
    kind: str = "blur"
    sigma: float = 2.0

    def __post_init__(self):
        if self.kind not in ("blur", "zeros", "mean"):
            raise InvalidInput(f"unknown baseline kind {self.kind!r}")
        if self.kind == "blur" and not self.sigma > 0:
            raise InvalidInput("blur sigma must be positive")


def _round_half_up(v):
    return int(math.floor(v + 0.5))


def sample_noise(spec, shape, rng):
    """i.i.d. uniform noise on ``[-bound, bound)`` for every feature."""
    return rng.uniform(-spec.bound, spec.bound, shape.d)


def mask_pixel_count(spec, shape):
    return _round_half_up(spec.fraction * shape.pixels)


def square_side(spec, shape):
    side = _round_half_up(math.sqrt(spec.fraction * shape.pixels))
    return max(1, min(side, shape.height, shape.width))


def pixels_to_features(pixel_mask, shape):
    """Broadcast an (H*W,) pixel mask over channels into a length-d vector."""
    return np.repeat(np.asarray(pixel_mask, dtype=np.float64).ravel(), shape.channels)


def sample_mask(spec, shape, rng):
    """A 0/1 feature vector selecting a random region of pixels.

    ``square`` places a ``side x side`` square uniformly among all valid
    positions; ``scattered`` selects exactly ``round(fraction * H * W)``
    pixels without replacement.
    """
    if spec.fraction * shape.pixels < 1:
        raise InvalidInput("mask would select less than one pixel")
    pix = np.zeros((shape.height, shape.width))
    if spec.mode == "square":
        side = square_side(spec, shape)
        r = int(rng.integers(shape.height - side + 1, 1)[0])
        c = int(rng.integers(shape.width - side + 1, 1)[0])
        pix[r:r + side, c:c + side] = 1.0
    else:
        chosen = rng.choice(shape.pixels, mask_pixel_count(spec, shape))
        pix.ravel()[chosen] = 1.0
    return pixels_to_features(pix, shape)


def sample_masks(spec, shape, rng, m):
    return np.stack([sample_mask(spec, shape, rng) for _ in range(m)])


def gaussian_kernel(sigma):
    radius = int(math.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _blur_axis(img, kernel, axis):
    radius = (kernel.shape[0] - 1) // 2
    pad = [(0, 0)] * img.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(img, pad, mode="symmetric")
    n = img.shape[axis]
    out = np.zeros_like(img)
    for j, kj in enumerate(kernel):
        out += kj * np.take(padded, np.arange(j, j + n), axis=axis)
    return out


def gaussian_blur(x, shape, sigma):
    """Separable Gaussian blur per channel; radius ceil(3 sigma), reflect padding."""
    img = shape.image(x).astype(np.float64)
    k = gaussian_kernel(sigma)
    out = _blur_axis(_blur_axis(img, k, 0), k, 1)
    return out.ravel()


def make_baseline(spec, x, shape):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != shape.d:
        raise InvalidInput("input length does not match shape")
    if spec.kind == "zeros":
        return np.zeros(shape.d)
    if spec.kind == "mean":
        img = shape.image(x)
        return np.broadcast_to(img.mean(axis=(0, 1)), img.shape).ravel().copy()
    return gaussian_blur(x, shape, spec.sigma)


def apply_h(x, x_b, mask):
    """Replace masked features of ``x`` with ``x_b``: ``h(x, x_b, I)``."""
    x = np.asarray(x, dtype=np.float64)
    x_b = np.asarray(x_b, dtype=np.float64)
    mask = np.asarray(mask)
    if not (x.shape == x_b.shape and x.shape[-1] == mask.shape[-1]):
        raise InvalidInput(f"apply_h shape mismatch: {x.shape}, {x_b.shape}, {mask.shape}")
    return np.where(mask == 1, x_b, x)
