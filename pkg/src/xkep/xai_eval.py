"""Explanation quality metrics: local Lipschitz robustness and infidelity."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .explain import Background, background_for, explain_one


@dataclass(frozen=True)
class RobustnessConfig:
    epsilon: float = 0.1
    n_perturb: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.n_perturb < 1:
            raise ValueError("n_perturb must be positive")


@dataclass(frozen=True)
class InfidelityConfig:
    noise_std: float = 0.3
    n_perturb: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.noise_std > 0:
            raise ValueError("noise_std must be positive")
        if self.n_perturb < 1:
            raise ValueError("n_perturb must be positive")


def sample_ball(center, epsilon, rng):
    """Uniform draw from the l2 ball of radius ``epsilon`` around ``center``."""
    d = len(center)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    radius = epsilon * rng.random() ** (1.0 / d)
    return center + radius * direction


def robustness_lipschitz(explain_fn, x, cfg: RobustnessConfig = RobustnessConfig()) -> float:
    """max ||E(x) - E(x')|| / ||x - x'|| over uniform draws x' in B(x, epsilon). Lower is better."""
    x = np.asarray(x, dtype=float).ravel()
    rng = np.random.default_rng(cfg.seed)
    base = np.asarray(explain_fn(x), dtype=float)
    best = 0.0
    for _ in range(cfg.n_perturb):
        for _retry in range(11):
            xp = sample_ball(x, cfg.epsilon, rng)
            dist = np.linalg.norm(x - xp)
            if dist > 0:
                break
        else:
            continue
        ratio = np.linalg.norm(base - np.asarray(explain_fn(xp), dtype=float)) / dist
        best = max(best, float(ratio))
    return best


def infidelity(phi, phi0, f, x, cfg: InfidelityConfig = InfidelityConfig()) -> float:
    """Mean of (I.phi - (f(x) - f(x - I)))^2 over I ~ N(0, noise_std^2 Id). Lower is better.

    ``phi0`` is accepted for interface symmetry; the perturbation difference cancels it.
    """
    x = np.asarray(x, dtype=float).ravel()
    phi = np.asarray(phi, dtype=float).ravel()
    rng = np.random.default_rng(cfg.seed)
    noise = rng.standard_normal((cfg.n_perturb, len(x))) * cfg.noise_std
    fx = np.asarray(f(x[None, :]), dtype=float)[0]
    fpert = np.asarray(f(x[None, :] - noise), dtype=float)
    return float(np.mean((noise @ phi - (fx - fpert)) ** 2))


def sample_instances(n: int, sample_size: int, seed: int) -> np.ndarray:
    if sample_size > n:
        raise ValueError(f"sample_size {sample_size} exceeds {n} instances")
    return np.sort(np.random.default_rng(seed).choice(n, size=sample_size, replace=False))


def frozen_explainer(model, background: Background, cfg, seed: int, cache=None):
    """Explainer as a deterministic function of the instance (its sampling seed pinned)."""
    def explain_fn(x):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return explain_one(model, x, background, cfg, seed=seed, cache=cache).phi
    return explain_fn


def per_instance_metrics(cfg, model, X, idx, robustness_cfg, infidelity_cfg, background=None,
                         metrics=("robustness", "infidelity"), cache=None):
    """Per-instance scores and the attribution vectors used for the infidelity term."""
    bg = background if background is not None else background_for(X, cfg)
    out = {m: [] for m in metrics}
    phis = []
    for i in idx:
        x = X[i]
        explain_fn = frozen_explainer(model, bg, cfg, cfg.seed + int(i), cache)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            e = explain_one(model, x, bg, cfg, seed=cfg.seed + int(i), cache=cache)
        phis.append(e.phi)
        if "robustness" in out:
            out["robustness"].append(robustness_lipschitz(explain_fn, x, _reseed(robustness_cfg, robustness_cfg.seed + int(i))))
        if "infidelity" in out:
            out["infidelity"].append(infidelity(e.phi, e.phi0, model, x, _reseed(infidelity_cfg, infidelity_cfg.seed + int(i))))
    return {m: np.array(v) for m, v in out.items()}, np.array(phis)


def _reseed(cfg, seed):
    from dataclasses import replace

    return replace(cfg, seed=seed)


def dataset_metric(explainer_cfg, model, ds, metric: str, sample_size: int = 50, seed: int = 0,
                   robustness_cfg: RobustnessConfig = RobustnessConfig(),
                   infidelity_cfg: InfidelityConfig = InfidelityConfig()) -> float:
    """Mean per-instance ``metric`` ('robustness' or 'infidelity') over a seeded instance sample.

    The sample depends only on (n, sample_size, seed), so every explainer
    configuration is scored on the same instances.
    """
    if metric not in ("robustness", "infidelity"):
        raise ValueError(f"unknown metric {metric!r}")
    idx = sample_instances(ds.n, sample_size, seed)
    scores, _ = per_instance_metrics(explainer_cfg, model, ds.features, idx, robustness_cfg, infidelity_cfg,
                                     metrics=(metric,))
    return float(np.mean(scores[metric]))
