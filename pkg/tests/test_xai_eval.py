import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xkep.dataset import Dataset
from xkep.explain import ShapConfig
from xkep.model import logistic_model
from xkep.xai_eval import (InfidelityConfig, RobustnessConfig, dataset_metric, infidelity, per_instance_metrics,
                           robustness_lipschitz, sample_ball)


def spectral_norm_power(A, iters=500):
    """Largest singular value by power iteration on A^T A (independent of numpy's SVD)."""
    v = np.ones(A.shape[1])
    for _ in range(iters):
        v = A.T @ (A @ v)
        v /= np.linalg.norm(v)
    return float(np.linalg.norm(A @ v))


def test_sample_ball_radius():
    rng = np.random.default_rng(0)
    c = np.array([1.0, -2.0, 0.5])
    pts = np.array([sample_ball(c, 0.1, rng) for _ in range(2000)])
    r = np.linalg.norm(pts - c, axis=1)
    assert r.max() <= 0.1
    # uniform in the ball: P(r <= eps/2) = 1/8 in 3-d
    assert abs(np.mean(r <= 0.05) - 0.125) < 0.03


def test_robustness_constant_identity_linear():
    x = np.array([0.3, -1.0, 2.0])
    assert robustness_lipschitz(lambda z: np.ones(3), x) == 0.0
    assert robustness_lipschitz(lambda z: z, x) == pytest.approx(1.0, abs=1e-9)
    A = np.random.default_rng(1).normal(size=(3, 3))
    est = robustness_lipschitz(lambda z: A @ z, x, RobustnessConfig(n_perturb=200))
    assert est <= spectral_norm_power(A) + 1e-9
    assert est > 0


def test_infidelity_examples():
    w = np.array([1.5, -0.5, 2.0])
    f = lambda X: np.atleast_2d(X) @ w + 0.7
    x = np.array([0.1, 0.2, 0.3])
    assert infidelity(w, 0.0, f, x) <= 1e-12
    assert infidelity(np.zeros(3), 0.0, f, x) > 0


def test_infidelity_quadratic_fourth_moment():
    f = lambda X: np.atleast_2d(X)[:, 0] ** 2
    x = np.array([0.8])
    val = infidelity(np.array([2 * x[0]]), 0.0, f, x, InfidelityConfig(noise_std=1.0, n_perturb=10000, seed=3))
    assert abs(val - 3.0) <= 0.5


def test_noisy_explainer_is_less_faithful():
    rng = np.random.default_rng(2)
    w = np.array([1.0, -2.0, 0.5, 0.0])
    f = lambda X: np.atleast_2d(X) @ w
    worse = 0
    for i in range(20):
        x = rng.normal(size=4)
        cfg = InfidelityConfig(seed=i)
        worse += infidelity(w + rng.normal(scale=0.3, size=4), 0.0, f, x, cfg) > infidelity(w, 0.0, f, x, cfg)
    assert worse == 20


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=5), st.integers(0, 1000))
def test_metrics_nonnegative(xs, seed):
    x = np.array(xs)
    f = lambda X: np.sin(np.atleast_2d(X).sum(axis=1))
    assert infidelity(np.cos(x), 0.0, f, x, InfidelityConfig(seed=seed, n_perturb=20)) >= 0
    assert robustness_lipschitz(np.tanh, x, RobustnessConfig(seed=seed, n_perturb=5)) >= 0


def small_problem():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 3))
    ds = Dataset(X, ("a", "b", "c"), (X[:, 0] > 0).astype(int))
    return ds, logistic_model([1.0, -0.5, 0.2], 0.1)


def test_dataset_metric_sample_of_one_and_determinism():
    ds, model = small_problem()
    cfg = ShapConfig(10, summarize="kmeans(5)")
    a = dataset_metric(cfg, model, ds, "infidelity", sample_size=1, seed=4)
    idx = np.sort(np.random.default_rng(4).choice(ds.n, size=1, replace=False))
    single, _ = per_instance_metrics(cfg, model, ds.features, idx, RobustnessConfig(), InfidelityConfig(),
                                     metrics=("infidelity",))
    assert a == single["infidelity"][0]
    assert dataset_metric(cfg, model, ds, "robustness", 5, 1) == dataset_metric(cfg, model, ds, "robustness", 5, 1)
    with pytest.raises(ValueError):
        dataset_metric(cfg, model, ds, "stability")


def test_config_validation():
    with pytest.raises(ValueError):
        RobustnessConfig(epsilon=0)
    with pytest.raises(ValueError):
        InfidelityConfig(n_perturb=0)
