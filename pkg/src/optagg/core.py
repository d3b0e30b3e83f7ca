"""Attribution maps, stacks of maps and simplex weights."""
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput

WEIGHT_CLAMP = 1e-12


def _frozen(values):
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Shape:
    height: int
    width: int
    channels: int = 1

    def __post_init__(self):
        for name in ("height", "width", "channels"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidInput(f"Shape.{name} must be a positive integer, got {v}")

    @property
    def d(self):
        return self.height * self.width * self.channels

    @property
    def pixels(self):
        return self.height * self.width

    def as_tuple(self):
        return (self.height, self.width, self.channels)

    def image(self, values):
        """View a flat length-d vector as an (H, W, C) array."""
        return np.asarray(values).reshape(self.height, self.width, self.channels)


@dataclass(frozen=True, eq=False)
class AttributionMap:
    """One importance score per input feature, flattened row-major over (H, W, C)."""

    shape: Shape
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        vals = _frozen(self.values).ravel()
        if vals.shape[0] != self.shape.d:
            raise InvalidInput(f"map has {vals.shape[0]} values, shape needs {self.shape.d}")
        if not np.all(np.isfinite(vals)):
            raise InvalidInput("attribution values must be finite")
        if self.normalized:
            if vals.min() < 0 or vals.max() > 1:
                raise InvalidInput("normalized map outside [0, 1]")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.shape.d

    def scaled(self, c):
        return AttributionMap(self.shape, c * self.values, normalized=False)


def normalize(raw, shape):
    """Absolute value rescaled by its maximum; the zero map is a fixed point."""
    raw = np.asarray(raw, dtype=np.float64).ravel()
    if not np.all(np.isfinite(raw)):
        raise InvalidInput("cannot normalize non-finite attribution values")
    a = np.abs(raw)
    peak = a.max() if a.size else 0.0
    if peak > 0:
        a = a / peak
    return AttributionMap(shape, a, normalized=True)


@dataclass(frozen=True, eq=False)
class AttributionStack:
    """k attribution maps over a shared shape, stored as a d x k matrix."""

    shape: Shape
    method_names: tuple
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        names = tuple(self.method_names)
        mat = _frozen(self.matrix)
        if mat.ndim != 2 or mat.shape[0] != self.shape.d:
            raise InvalidInput(f"stack matrix must be d x k with d={self.shape.d}")
        if mat.shape[1] < 1 or mat.shape[1] != len(names):
            raise InvalidInput("stack needs k >= 1 columns, one name per column")
        if len(set(names)) != len(names):
            raise InvalidInput(f"method names must be unique: {names}")
        if not np.all(np.isfinite(mat)):
            raise InvalidInput("stack values must be finite")
        object.__setattr__(self, "method_names", names)
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def from_maps(cls, names, maps):
        maps = list(maps)
        if not maps:
            raise InvalidInput("stack needs at least one map")
        shape = maps[0].shape
        if any(m.shape != shape for m in maps):
            raise InvalidInput("all maps in a stack must share one shape")
        return cls(shape, tuple(names), np.column_stack([m.values for m in maps]))

    @property
    def k(self):
        return self.matrix.shape[1]

    @property
    def normalized(self):
        m = self.matrix
        return bool(m.min() >= 0 and m.max() <= 1)

    def column(self, i):
        return AttributionMap(self.shape, self.matrix[:, i], normalized=self.normalized)

    def columns(self):
        return [self.column(i) for i in range(self.k)]

    def select(self, indices):
        indices = list(indices)
        return AttributionStack(
            self.shape, tuple(self.method_names[i] for i in indices), self.matrix[:, indices]
        )


@dataclass(frozen=True, eq=False)
class SimplexWeights:
    """Nonnegative weights summing to one.

    Entries below 1e-12 in magnitude are clamped to zero on construction.
    """

    omega: np.ndarray

    def __post_init__(self):
        w = np.array(self.omega, dtype=np.float64).ravel()
        if w.size < 1 or not np.all(np.isfinite(w)):
            raise InvalidInput("weights must be a non-empty finite vector")
        w[np.abs(w) < WEIGHT_CLAMP] = 0.0
        if w.min() < 0:
            raise InvalidInput(f"negative simplex weight {w.min()}")
        if abs(w.sum() - 1.0) > 1e-9:
            raise InvalidInput(f"simplex weights sum to {w.sum()}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "omega", w)

    @classmethod
    def uniform(cls, k):
        return cls(np.full(k, 1.0 / k))

    @property
    def k(self):
        return self.omega.shape[0]

    def __iter__(self):
        return iter(self.omega)

    def __array__(self, dtype=None, copy=None):
        return self.omega if dtype is None else self.omega.astype(dtype)


def aggregate_linear(stack, w):
    """The convex combination ``sum_i w_i * column_i``; not re-normalized."""
    omega = np.asarray(w.omega if isinstance(w, SimplexWeights) else w, dtype=np.float64)
    if omega.shape != (stack.k,):
        raise InvalidInput(f"{omega.shape[0]} weights for a stack of {stack.k} methods")
    return AttributionMap(stack.shape, stack.matrix @ omega, normalized=False)
