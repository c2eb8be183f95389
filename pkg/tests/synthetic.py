"""Synthetic problems shared by the tests: planted blobs, random networks and a desk-scale pipeline config."""
import json

import numpy as np

from xkep.explain import ExplanationSet
from xkep.model import MlpConfig, TrainedModel, init_params

SCHEMA = """[columns]
x1 = numeric
x2 = numeric
x3 = numeric
noise = numeric
y = label

[label]
positive = 1
"""


def write_three_blobs(directory, n_per=30, seed=0):
    """Blob k sits at +6 on feature x(k+1) and 0 elsewhere; blobs 0 and 1 are positive."""
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(3):
        X = rng.normal(scale=0.3, size=(n_per, 4))
        X[:, k] += 6.0
        X[:, 3] = rng.normal(size=n_per)
        for x in X:
            rows.append([*x, int(k < 2)])
    data = directory / "blobs.csv"
    data.write_text("x1,x2,x3,noise,y\n" + "".join(",".join(repr(float(v)) for v in r[:4]) + f",{r[4]}\n" for r in rows))
    schema = directory / "blobs.schema"
    schema.write_text(SCHEMA)
    return data, schema


def blob_config(directory, **overrides):
    data, schema = write_three_blobs(directory)
    cfg = {
        "data": str(data),
        "schema": str(schema),
        "feature_selection": {"method": "cmim", "n_seeds": 1, "drop": ["noise"]},
        "subset_explainer": {"algorithm": "SHAP", "nsamples": 14, "l1_reg": "none", "summarize": "kmeans(5)"},
        "mlp": {"hidden_layers": [12], "epochs": 40, "l2_penalty": 0.01},
        "search": {"nsamples": [6, 14], "l1_reg": ["none", "num_features(2)"], "summarize": ["kmeans(5)"],
                   "lime_num_samples": [200], "sample_size": 5, "robustness": {"n_perturb": 2},
                   "infidelity": {"n_perturb": 20}},
        "selection": {"min_active_features": None, "algorithms": ["SHAP"]},
        "rules": {"n_trees": 15},
        "seed": 7,
    }
    cfg.update(overrides)
    path = directory / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def blobs(seed, k=3, per=10, d=4, spread=0.05, sep=5.0, sizes=None):
    """Gaussian blobs whose closest centres are ``sep`` apart; returns (points, blob index)."""
    rng = np.random.default_rng(seed)
    sizes = sizes or [per] * k
    centers = rng.normal(size=(k, d))
    centers *= sep / np.min([np.linalg.norm(a - b) for i, a in enumerate(centers) for b in centers[i + 1:]])
    X = np.vstack([c + rng.normal(scale=spread, size=(m, d)) for c, m in zip(centers, sizes)])
    return X, np.repeat(np.arange(k), sizes)


def as_explanations(X):
    return ExplanationSet(X, np.zeros(len(X)), X.sum(axis=1), tuple(f"f{j}" for j in range(X.shape[1])))


def random_mlp(d, seed, hidden=(8, 6)):
    rng = np.random.default_rng(seed)
    weights, biases = init_params([d, *hidden, 1], rng)
    biases = [b + rng.normal(scale=0.3, size=b.shape) for b in biases]
    return TrainedModel(weights, biases, "relu", (), float("nan"), MlpConfig(hidden_layers=hidden))
