"""Synthetic blob images with known object regions."""
import numpy as np

from ..core import Shape
from ..errors import InvalidInput

BACKGROUND = 0.2
OBJECT = 0.9
MAX_ASPECT = 2.0


def _rectangle_dims(area, height, width, rng):
    best, err = [], None
    for h in range(1, height + 1):
        w = min(width, max(1, int(np.floor(area / h + 0.5))))
        if max(h, w) / min(h, w) > MAX_ASPECT:
            continue
        e = abs(h * w - area)
        if err is None or e < err:
            best, err = [(h, w)], e
        elif e == err:
            best.append((h, w))
    if not best:
        raise InvalidInput(f"no rectangle of area {area} fits in {height}x{width}")
    return best[int(rng.integers(len(best), 1)[0])] if len(best) > 1 else best[0]


def gen_blob_dataset(n, shape, fraction_range, noise_level, rng):
    """``n`` grayscale images, each holding one bright rectangle.

    Returns ``(images, masks)`` as ``(n, d)`` arrays; ``masks`` marks the
    rectangle pixels.  Only single-channel shapes are supported.
    """
    if not isinstance(shape, Shape):
        shape = Shape(*shape)
    if shape.channels != 1:
        raise InvalidInput("blob images are grayscale")
    lo, hi = (float(v) for v in fraction_range)
    if not (0 < lo <= hi < 1):
        raise InvalidInput("fraction range must lie inside (0, 1)")
    if noise_level < 0:
        raise InvalidInput("noise level must be non-negative")
    H, W = shape.height, shape.width
    images = np.empty((n, shape.d))
    masks = np.zeros((n, shape.d), dtype=bool)
    for i in range(n):
        r = rng.child(i)
        frac = lo if lo == hi else float(r.uniform(lo, hi, 1)[0])
        area = max(1, int(np.floor(frac * H * W + 0.5)))
        h, w = _rectangle_dims(area, H, W, r)
        top = int(r.integers(H - h + 1, 1)[0])
        left = int(r.integers(W - w + 1, 1)[0])
        img = BACKGROUND + (r.normal(H * W, noise_level) if noise_level > 0 else np.zeros(H * W))
        img = img.reshape(H, W)
        img[top:top + h, left:left + w] = OBJECT
        region = np.zeros((H, W), dtype=bool)
        region[top:top + h, left:left + w] = True
        images[i] = img.ravel()
        masks[i] = region.ravel()
    return images, masks
