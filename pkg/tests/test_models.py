import numpy as np
import pytest

from optagg import InvalidInput, Rng, Unsupported
from optagg.models import (Model, ToyLinear, ToyMlp, gradient, predict_batch,
                           randomize_parameters)

# independent scripted forward pass of ToyMlp.random([4, 5, 3, 1], seed=7, tanh)
GOLDEN_X = [0.1, -0.2, 0.3, 0.4]
GOLDEN_Y = -0.3552457404765757


def central_difference(model, x, h=1e-5):
    E = np.eye(x.shape[0]) * h
    return (model.predict_batch(x + E) - model.predict_batch(x - E)) / (2 * h)


def test_toy_linear():
    m = ToyLinear([1, 2], 0)
    assert m.predict([3, 4]) == 11
    assert gradient(m, np.array([3.0, 4.0])).tolist() == [1, 2]


def test_mlp_batching_law():
    m = ToyMlp.random([6, 4, 1], 3)
    x = Rng(1).random(6)
    a = predict_batch(m, [x, x])
    assert a[0] == a[1] == m.predict(x)


def test_mlp_golden_value():
    m = ToyMlp.random([4, 5, 3, 1], 7, "tanh")
    assert m.predict(GOLDEN_X) == pytest.approx(GOLDEN_Y, rel=1e-14)


def test_tanh_gradients_match_finite_differences():
    worst = 0.0
    for c in range(20):
        m = ToyMlp.random([10, 7, 5, 1], c, "tanh")
        x = Rng(100 + c).random(10)
        fd = central_difference(m, x)
        worst = max(worst, np.linalg.norm(m.gradient(x) - fd) / np.linalg.norm(fd))
    assert worst <= 1e-5


def test_relu_gradient_away_from_kinks():
    m = ToyMlp.random([10, 7, 1], 2, "relu")
    x = Rng(5).random(10)
    z = m.weights[0] @ x + m.biases[0]
    assert np.min(np.abs(z)) > 1e-3
    fd = central_difference(m, x)
    assert np.linalg.norm(m.gradient(x) - fd) / np.linalg.norm(fd) <= 1e-4


def test_contrast_detector_gradient_and_blur_response():
    m = ToyMlp.contrast_detector(64, n_filters=6, gain=10.0)
    x = Rng(3).random(64)
    fd = central_difference(m, x)
    assert np.linalg.norm(m.gradient(x) - fd) / np.linalg.norm(fd) <= 1e-5
    # pairs are even in the filter response
    assert m.predict(x - x.mean()) == pytest.approx(m.predict(-(x - x.mean())), rel=1e-12)


def test_dimension_and_capability_errors():
    m = ToyLinear([1, 2])
    with pytest.raises(InvalidInput):
        m.predict_batch([[1, 2, 3]])
    with pytest.raises(InvalidInput):
        m.predict([1, np.inf])

    class Opaque(Model):
        input_dim = 2

        def predict_batch(self, inputs):
            return self._check_batch(inputs).sum(axis=1)

    with pytest.raises(Unsupported):
        Opaque().gradient(np.zeros(2))


def test_randomize_parameters():
    base = ToyMlp.random([6, 5, 4, 1], 1)
    x = Rng(2).random(6)
    r_all = randomize_parameters(base, [0, 1, 2], seed=9)
    assert r_all.predict(x) != base.predict(x)
    assert r_all.predict(x) == randomize_parameters(base, [0, 1, 2], seed=9).predict(x)
    assert r_all.predict(x) != randomize_parameters(base, [0, 1, 2], seed=10).predict(x)
    with pytest.raises(InvalidInput):
        randomize_parameters(base, [], seed=1)
    partial = randomize_parameters(base, [1], seed=3)
    assert np.array_equal(partial.weights[0], base.weights[0])
    assert np.array_equal(partial.weights[2], base.weights[2])
    assert not np.array_equal(partial.weights[1], base.weights[1])
    assert partial.weights[1].std() == pytest.approx(base.weights[1].std(), rel=0.5)
