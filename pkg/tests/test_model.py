import json

import numpy as np
import pytest

from xkep.dataset import Dataset, drop_features
from xkep.model import (MlpConfig, TrainedModel, TrainingError, accuracy, init_params, logistic_model,
                        loss_and_grads, train_mlp)

from conftest import toy_dataset


class Const:
    def __init__(self, p):
        self.p = p

    def predict_proba(self, X):
        return np.full(len(X), self.p)


def numeric_grad(weights, biases, X, y, act, l2, h=1e-5):
    """Central differences over every parameter."""
    def loss():
        return loss_and_grads(weights, biases, X, y, act, l2, len(y))[0]

    out_w, out_b = [], []
    for group, out in ((weights, out_w), (biases, out_b)):
        for P in group:
            G = np.zeros_like(P)
            it = np.nditer(P, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = P[idx]
                P[idx] = old + h
                up = loss()
                P[idx] = old - h
                down = loss()
                P[idx] = old
                G[idx] = (up - down) / (2 * h)
            out.append(G)
    return out_w, out_b


@pytest.mark.parametrize("act", ["relu", "tanh"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_check(act, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(25, 4))
    y = rng.integers(0, 2, 25)
    weights, biases = init_params([4, 6, 5, 1], rng)
    biases = [b + rng.normal(scale=0.1, size=b.shape) for b in biases]
    _, gw, gb = loss_and_grads(weights, biases, X, y, act, 0.3, 25)
    nw, nb = numeric_grad(weights, biases, X, y, act, 0.3)
    a = np.concatenate([g.ravel() for g in gw + gb])
    n = np.concatenate([g.ravel() for g in nw + nb])
    assert np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12) <= 1e-4


def test_separable_toy_set():
    ds = toy_dataset(200, 2, seed=3)
    model = train_mlp(ds, MlpConfig(l2_penalty=1e-4))
    assert accuracy(model, ds) >= 0.99


def test_seed_determinism():
    ds = toy_dataset(60, 3)
    cfg = MlpConfig(hidden_layers=(8,), epochs=20)
    a, b = train_mlp(ds, cfg), train_mlp(ds, cfg)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)


def test_predict_proba_properties():
    ds = toy_dataset(50, 3)
    model = train_mlp(ds, MlpConfig(hidden_layers=(7,), epochs=5))
    X = np.random.default_rng(0).normal(scale=50, size=(40, 3))
    p = model.predict_proba(X)
    assert np.all((p >= 0) & (p <= 1))
    X[5] = X[4]
    p = model.predict_proba(X)
    assert p[4] == p[5]
    single = np.array([model.predict_proba(X[i:i + 1])[0] for i in range(len(X))])
    assert np.array_equal(single, p)
    with pytest.raises(ValueError):
        model.predict_proba(np.zeros((2, 4)))


def test_logistic_closed_form():
    rng = np.random.default_rng(1)
    w, b = rng.normal(size=4), 0.3
    X = rng.normal(size=(30, 4))
    np.testing.assert_allclose(logistic_model(w, b).predict_proba(X), 1 / (1 + np.exp(-(X @ w + b))), atol=1e-12)


def test_accuracy_trivial():
    ds = Dataset(np.zeros((4, 1)), ("a",), [1, 1, 1, 1])
    assert accuracy(Const(0.9), ds) == 1.0
    ds = Dataset(np.zeros((4, 1)), ("a",), [1, 0, 1, 0])
    assert accuracy(Const(0.9), ds) == 0.5


def test_serialization_roundtrip(tmp_path):
    ds = toy_dataset(40, 3)
    model = train_mlp(ds, MlpConfig(hidden_layers=(5, 4), epochs=3))
    model.save(tmp_path / "m.json")
    back = TrainedModel.load(tmp_path / "m.json")
    assert np.array_equal(back.predict_proba(ds.features), model.predict_proba(ds.features))
    payload = json.loads((tmp_path / "m.json").read_text())
    assert payload["layer_sizes"] == [3, 5, 4, 1]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    ds = toy_dataset(40, 2)
    with pytest.raises(TrainingError, match="learning rate"):
        train_mlp(ds, MlpConfig(hidden_layers=(4,), learning_rate=1e300, epochs=3))


def test_config_validation():
    with pytest.raises(ValueError):
        MlpConfig(activation="swish")
    with pytest.raises(ValueError):
        MlpConfig(learning_rate=0)


@pytest.mark.slow
def test_saheart_accuracy(saheart_std):
    acc = accuracy(train_mlp(saheart_std), saheart_std)
    assert abs(acc - 0.766) <= 0.03
    sub = drop_features(saheart_std, ["typea"])
    assert abs(accuracy(train_mlp(sub), sub) - 0.768) <= 0.03
