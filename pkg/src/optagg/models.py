"""Scalar-output models: analytic toys and a parameter-randomization wrapper.

Every model exposes ``input_dim``, ``name``, ``has_gradient``,
``predict_batch(inputs)`` and, when ``has_gradient`` is true,
``gradient(x)``.  External models speaking the line-JSON protocol live in
:mod:`optagg.msp`.
"""
import numpy as np

from .errors import InvalidInput, Unsupported
from .rng import Rng


class Model:
    """Base class for the model contract."""

    name = "model"
    input_dim = 0
    has_gradient = False

    def _check_batch(self, inputs):
        X = np.asarray(inputs, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise InvalidInput(f"{self.name} expects inputs of length {self.input_dim}, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise InvalidInput("model inputs must be finite")
        return X

    def predict_batch(self, inputs):
        raise NotImplementedError

    def predict(self, x):
        return float(self.predict_batch(np.asarray(x, dtype=np.float64)[None, :])[0])

    def gradient(self, x):
        if not self.has_gradient:
            raise Unsupported(f"{self.name} has no gradient capability")
        return self.gradient_batch(np.asarray(x, dtype=np.float64)[None, :])[0]

    def gradient_batch(self, inputs):
        if not self.has_gradient:
            raise Unsupported(f"{self.name} has no gradient capability")
        X = self._check_batch(inputs)
        return np.stack([self.gradient(x) for x in X])


class ToyLinear(Model):
    """``f(x) = w @ x + b`` with gradient ``w`` everywhere."""

    has_gradient = True

    def __init__(self, w, b=0.0, name="toy_linear"):
        self.w = np.array(w, dtype=np.float64).ravel()
        self.w.setflags(write=False)
        self.b = float(b)
        self.input_dim = self.w.shape[0]
        self.name = name

    def predict_batch(self, inputs):
        return np.einsum("ij,j->i", self._check_batch(inputs), self.w) + self.b

    def gradient_batch(self, inputs):
        X = self._check_batch(inputs)
        return np.tile(self.w, (X.shape[0], 1))


_ACTIVATIONS = ("tanh", "relu")


def _rowwise_matmul(A, B):
    # einsum reduces each output row the same way whatever the batch size,
    # so predict_batch([x, x]) == [predict(x)] * 2 bit for bit (BLAS does not guarantee this)
    return np.einsum("ij,jk->ik", A, B)


class ToyMlp(Model):
    """Fully connected network ``[d, h1, ..., 1]`` with a linear output unit.

    Parameters
    ----------
    weights : list of arrays
        ``weights[l]`` has shape ``(fan_out, fan_in)``.
    biases : list of arrays
    activation : {"tanh", "relu"}
        Applied after every hidden layer.
    """

    has_gradient = True

    def __init__(self, weights, biases, activation="tanh", name=None):
        if activation not in _ACTIVATIONS:
            raise InvalidInput(f"unknown activation {activation!r}")
        if len(weights) != len(biases) or not weights:
            raise InvalidInput("need one bias vector per weight matrix")
        self.weights = [np.array(W, dtype=np.float64) for W in weights]
        self.biases = [np.array(b, dtype=np.float64).ravel() for b in biases]
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or W.shape[0] != b.shape[0]:
                raise InvalidInput(f"layer {l}: weight/bias shapes disagree")
            if l and W.shape[1] != self.weights[l - 1].shape[0]:
                raise InvalidInput(f"layer {l}: fan_in does not match previous layer")
            W.setflags(write=False)
            b.setflags(write=False)
        if self.weights[-1].shape[0] != 1:
            raise InvalidInput("last layer must have a single output")
        self.activation = activation
        self.input_dim = self.weights[0].shape[1]
        self.name = name or f"toy_mlp_{activation}"

    @property
    def layer_sizes(self):
        return [self.input_dim] + [W.shape[0] for W in self.weights]

    @classmethod
    def random(cls, sizes, seed, activation="tanh", name=None, output_scale=1.0):
        """Weights ~ N(0, 1/fan_in), zero biases, drawn from ``Rng(seed)``.

        ``output_scale`` multiplies the last layer, which sets the size of
        prediction drops relative to mask-projected attribution scores.
        """
        sizes = list(sizes)
        if len(sizes) < 2 or sizes[-1] != 1:
            raise InvalidInput("layer sizes must look like [d, h1, ..., 1]")
        rng = Rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            W = rng.normal(fan_out * fan_in, scale=1.0 / np.sqrt(fan_in))
            weights.append(W.reshape(fan_out, fan_in))
            biases.append(np.zeros(fan_out))
        weights[-1] = weights[-1] * output_scale
        return cls(weights, biases, activation, name=name)

    @classmethod
    def contrast_detector(cls, d, n_filters=32, bias=0.5, gain=4000.0, seed=1,
                          name="contrast_detector"):
        """A tanh network whose output grows with local contrast energy.

        Hidden units come in pairs ``tanh(+-f'x - bias)`` over zero-mean,
        unit-norm random filters ``f``.  Each pair is even in ``f'x`` and
        increasing in ``|f'x|``, so smoothing an input lowers the score and a
        blur baseline produces positive prediction drops.  Output weights are
        ``gain / n_filters``.
        """
        if n_filters < 1 or bias < 0:
            raise InvalidInput("need n_filters >= 1 and bias >= 0")
        F = Rng(seed).normal(n_filters * d).reshape(n_filters, d)
        F -= F.mean(axis=1, keepdims=True)
        F /= np.linalg.norm(F, axis=1, keepdims=True)
        W1 = np.vstack([F, -F])
        b1 = np.full(2 * n_filters, -float(bias))
        W2 = np.full((1, 2 * n_filters), gain / n_filters)
        return cls([W1, W2], [b1, np.zeros(1)], activation="tanh", name=name)

    @classmethod
    def blob_detector(cls, height, width, window=3, stride=2, threshold=0.45,
                      gain=8.0, jitter=0.0, seed=0, name="blob_detector"):
        """A relu network that responds to bright square windows.

        Each hidden unit averages one ``window x window`` patch (stride
        ``stride``) and fires above ``threshold``; the output sums all units
        times ``gain``.  Windows overlap patch boundaries, so the response is
        not additive over patches.  ``jitter`` > 0 multiplies the first-layer
        weights by ``1 + jitter * N(0, 1)`` drawn from ``Rng(seed)``.
        """
        rows = range(0, height - window + 1, stride)
        cols = range(0, width - window + 1, stride)
        units = []
        for r in rows:
            for c in cols:
                img = np.zeros((height, width))
                img[r:r + window, c:c + window] = 1.0 / window**2
                units.append(img.ravel())
        W1 = np.array(units)
        if jitter > 0:
            W1 = W1 * (1.0 + jitter * Rng(seed).normal(W1.size).reshape(W1.shape))
        b1 = np.full(W1.shape[0], -threshold)
        W2 = np.full((1, W1.shape[0]), gain)
        return cls([W1, W2], [b1, np.zeros(1)], activation="relu", name=name)

    def _act(self, z):
        return np.tanh(z) if self.activation == "tanh" else np.maximum(z, 0.0)

    def _act_grad(self, z, a):
        if self.activation == "tanh":
            return 1.0 - a * a
        # subgradient 0 at exactly 0
        return (z > 0).astype(np.float64)

    def _forward(self, X):
        acts, pres = [X], []
        h = X
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = _rowwise_matmul(h, W.T) + b
            pres.append(z)
            h = z if l == last else self._act(z)
            acts.append(h)
        return acts, pres

    def predict_batch(self, inputs):
        X = self._check_batch(inputs)
        acts, _ = self._forward(X)
        return acts[-1][:, 0]

    def gradient_batch(self, inputs):
        X = self._check_batch(inputs)
        acts, pres = self._forward(X)
        delta = np.ones((X.shape[0], 1))
        for l in range(len(self.weights) - 1, -1, -1):
            if l != len(self.weights) - 1:
                delta = delta * self._act_grad(pres[l], acts[l + 1])
            delta = _rowwise_matmul(delta, self.weights[l])
        return delta


class RandomizedModel(ToyMlp):
    """A copy of ``base`` whose selected layers were resampled."""

    def __init__(self, base, weights, biases, seed, layers_randomized):
        super().__init__(weights, biases, base.activation, name=f"{base.name}_randomized")
        self.base = base
        self.seed = seed
        self.layers_randomized = frozenset(layers_randomized)


def randomize_parameters(model, layers, seed):
    """Resample ``layers`` of ``model`` i.i.d. Gaussian with each tensor's own std.

    Layers not listed keep the base model's exact arrays.
    """
    layers = sorted(set(int(l) for l in layers))
    if not layers:
        raise InvalidInput("randomize_parameters needs a non-empty layer subset")
    n_layers = len(model.weights)
    if layers[0] < 0 or layers[-1] >= n_layers:
        raise InvalidInput(f"layer index out of range for {n_layers} layers")
    rng = Rng(seed)
    weights, biases = list(model.weights), list(model.biases)
    for l in layers:
        W, b = model.weights[l], model.biases[l]
        sub = rng.child(l)
        weights[l] = sub.normal(W.size, scale=W.std()).reshape(W.shape)
        biases[l] = sub.normal(b.size, scale=b.std())
    return RandomizedModel(model, weights, biases, seed, layers)


def predict_batch(model, inputs):
    return model.predict_batch(inputs)


def gradient(model, x):
    if not model.has_gradient:
        raise Unsupported(f"{model.name} has no gradient capability")
    return model.gradient(x)
