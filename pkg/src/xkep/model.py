"""Multilayer perceptron binary classifier trained with Adam on log-loss.

Training runs on numpy; inference goes through a numba kernel that evaluates
each row with a fixed accumulation order, so a batched ``predict_proba`` call
is bit-for-bit equal to the concatenation of single-row calls.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy.special import expit

from .dataset import Dataset

ACTIVATIONS = ("relu", "tanh")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpConfig:
    hidden_layers: tuple = (100,)
    activation: str = "relu"
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    l2_penalty: float = 8.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if any(h < 1 for h in self.hidden_layers):
            raise ValueError("hidden layer sizes must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be nonnegative")


@numba.njit(cache=True)
def _forward_logits(X, flat, sizes, act):
    # sizes = [d, h1, ..., 1]; flat holds W0 (row-major, d x h1), b0, W1, b1, ...
    k = X.shape[0]
    n_layers = sizes.shape[0] - 1
    width = 0
    for s in sizes:
        width = max(width, s)
    out = np.empty(k)
    cur = np.empty(width)
    nxt = np.empty(width)
    for r in range(k):
        fan_in = sizes[0]
        for j in range(fan_in):
            cur[j] = X[r, j]
        off = 0
        for l in range(n_layers):
            fan_out = sizes[l + 1]
            boff = off + fan_in * fan_out
            for u in range(fan_out):
                nxt[u] = flat[boff + u]
            for j in range(fan_in):
                cj = cur[j]
                row = off + j * fan_out
                for u in range(fan_out):
                    nxt[u] += cj * flat[row + u]
            if l < n_layers - 1:
                for u in range(fan_out):
                    v = nxt[u]
                    if act == 0:
                        cur[u] = v if v > 0.0 else 0.0
                    else:
                        cur[u] = np.tanh(v)
            else:
                for u in range(fan_out):
                    cur[u] = nxt[u]
            off = boff + fan_out
            fan_in = fan_out
        out[r] = cur[0]
    return out


@numba.njit(cache=True)
def _sigmoid_inplace(z):
    for i in range(z.shape[0]):
        v = z[i]
        if v >= 0.0:
            z[i] = 1.0 / (1.0 + np.exp(-v))
        else:
            e = np.exp(v)
            z[i] = e / (1.0 + e)
    return z


def _activate(Z, activation):
    return np.maximum(Z, 0.0) if activation == "relu" else np.tanh(Z)


def _activation_grad(Z, A, activation):
    return (Z > 0).astype(float) if activation == "relu" else 1.0 - A * A


@dataclass(frozen=True)
class TrainedModel:
    weights: tuple
    biases: tuple
    activation: str = "relu"
    loss_trace: tuple = ()
    initial_loss: float = float("nan")
    config: MlpConfig = field(default_factory=MlpConfig)

    def __post_init__(self):
        W = tuple(np.array(w, dtype=float) for w in self.weights)
        b = tuple(np.array(v, dtype=float).reshape(-1) for v in self.biases)
        if len(W) != len(b) or not W:
            raise ValueError("need one bias vector per weight matrix")
        for prev, nxt in zip(W, W[1:]):
            if prev.shape[1] != nxt.shape[0]:
                raise ValueError("weight shapes do not chain")
        if W[-1].shape[1] != 1:
            raise ValueError("output layer must have a single unit")
        for w, v in zip(W, b):
            w.flags.writeable = False
            v.flags.writeable = False
        flat = np.concatenate([np.concatenate([w.ravel(), v]) for w, v in zip(W, b)])
        sizes = np.array([W[0].shape[0]] + [w.shape[1] for w in W], dtype=np.int64)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "loss_trace", tuple(float(v) for v in self.loss_trace))
        object.__setattr__(self, "_flat", flat)
        object.__setattr__(self, "_sizes", sizes)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def decision_function(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
        if X.shape[1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} columns, got {X.shape[1]}")
        return _forward_logits(X, self._flat, self._sizes, 0 if self.activation == "relu" else 1)

    def predict_proba(self, X) -> np.ndarray:
        """Positive-class probability for each row of ``X``."""
        return _sigmoid_inplace(self.decision_function(X))

    __call__ = predict_proba

    def to_dict(self) -> dict:
        return {
            "format": "xkep-mlp/1",
            "layer_sizes": [int(s) for s in self._sizes],
            "activation": self.activation,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "config": asdict(self.config),
            "seed": self.config.seed,
            "initial_loss": self.initial_loss,
            "loss_trace": list(self.loss_trace),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainedModel":
        sizes = payload["layer_sizes"]
        weights = [np.array(w, dtype=float).reshape(sizes[i], sizes[i + 1]) for i, w in enumerate(payload["weights"])]
        cfg = dict(payload["config"])
        return cls(weights, payload["biases"], payload["activation"], payload.get("loss_trace", ()),
                   payload.get("initial_loss", float("nan")), MlpConfig(**cfg))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TrainedModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def logistic_model(w, b) -> TrainedModel:
    """Zero-hidden-layer network, i.e. logistic regression sigma(w.x + b)."""
    w = np.asarray(w, dtype=float).reshape(-1, 1)
    return TrainedModel((w,), (np.array([float(b)]),))


def init_params(layer_sizes, rng):
    # Glorot-uniform weights and biases
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return weights, biases


def loss_and_grads(weights, biases, X, y, activation, l2, n_total):
    """Mean log-loss plus ``l2 / (2 n_total) * sum ||W||^2`` and its gradients."""
    acts = [X]
    pre = []
    A = X
    for i, (W, b) in enumerate(zip(weights, biases)):
        Z = A @ W + b
        pre.append(Z)
        A = Z if i == len(weights) - 1 else _activate(Z, activation)
        acts.append(A)
    z = pre[-1][:, 0]
    k = X.shape[0]
    loss = np.mean(np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z))))
    loss += 0.5 * l2 / n_total * sum(np.sum(W * W) for W in weights)
    delta = ((expit(z) - y) / k)[:, None]
    gW = [None] * len(weights)
    gb = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        gW[i] = acts[i].T @ delta + (l2 / n_total) * weights[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * _activation_grad(pre[i - 1], acts[i], activation)
    return loss, gW, gb


def train_mlp(ds: Dataset, cfg: MlpConfig = MlpConfig()) -> TrainedModel:
    X, y = ds.features, ds.labels.astype(float)
    n = X.shape[0]
    batch = min(cfg.batch_size, n)
    init_seq, shuffle_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    weights, biases = init_params([ds.d, *cfg.hidden_layers, 1], np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    params = weights + biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    initial_loss = loss_and_grads(weights, biases, X, y, cfg.activation, cfg.l2_penalty, n)[0]
    trace = []
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            _, gW, gb = loss_and_grads(weights, biases, X[idx], y[idx], cfg.activation, cfg.l2_penalty, n)
            step += 1
            lr_t = cfg.learning_rate * np.sqrt(1 - beta2 ** step) / (1 - beta1 ** step)
            for i, (p, g) in enumerate(zip(params, gW + gb)):
                m[i] = beta1 * m[i] + (1 - beta1) * g
                v[i] = beta2 * v[i] + (1 - beta2) * g * g
                p -= lr_t * m[i] / (np.sqrt(v[i]) + eps)
        loss = loss_and_grads(weights, biases, X, y, cfg.activation, cfg.l2_penalty, n)[0]
        if not np.isfinite(loss):
            raise TrainingError(f"training diverged at epoch {epoch + 1} (loss={loss}); try a smaller learning rate")
        trace.append(float(loss))
    return TrainedModel(weights, biases, cfg.activation, trace, float(initial_loss), cfg)


def accuracy(model, ds: Dataset) -> float:
    """Resubstitution accuracy at threshold 0.5; ``model`` is anything with predict_proba."""
    proba = model.predict_proba(ds.features)
    return float(np.mean((proba >= 0.5).astype(int) == ds.labels))
