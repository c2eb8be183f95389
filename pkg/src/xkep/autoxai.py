"""Grid search over explainer configurations ranked by standardized quality scores.

Each configuration is scored on a shared instance sample with the robustness
and infidelity metrics. Both are oriented so that higher is better, z-scored
across configurations, and combined linearly. With weights (0.5, 1.0) this
reproduces the aggregated column of the published ranking table.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .explain import LimeConfig, ShapConfig, ValueCache, background_for, config_from_dict
from .xai_eval import InfidelityConfig, RobustnessConfig, per_instance_metrics, sample_instances

log = logging.getLogger(__name__)

DEFAULT_WEIGHTS = (0.5, 1.0)
SUPPORT_TOL = 1e-9


@dataclass(frozen=True)
class SearchSpace:
    nsamples: tuple
    l1_reg: tuple = ("none", "bic", "num_features(2)", "num_features(4)")
    summarize: tuple = ("full", "kmeans(10)")
    lime_num_samples: tuple = (10, 69, 500, 5000)

    def configs(self, seed: int = 0) -> list:
        out = [ShapConfig(int(n), l1, summ, seed) for n in self.nsamples for l1 in self.l1_reg for summ in self.summarize]
        out += [LimeConfig(int(n), seed=seed) for n in self.lime_num_samples]
        if len(out) < 2:
            raise ValueError("search space must hold at least 2 configurations")
        return out

    def to_dict(self) -> dict:
        return {"nsamples": list(self.nsamples), "l1_reg": list(self.l1_reg), "summarize": list(self.summarize),
                "lime_num_samples": list(self.lime_num_samples)}


def default_search_space(d: int) -> SearchSpace:
    grid = {2 * d + 2, 10 * d, 100 * d, 581}
    if d <= 10:
        grid.add(2 ** d - 2)
    return SearchSpace(tuple(sorted(grid)))


@dataclass
class RankingEntry:
    config: object
    raw_robustness: float
    raw_infidelity: float
    support_size: int
    order: int
    robustness_std: float = 0.0
    fidelity_std: float = 0.0
    aggregated: float = 0.0
    rank: int = 0

    @property
    def algorithm(self) -> str:
        return self.config.algorithm

    @property
    def hyperparameters(self) -> str:
        return self.config.label()

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "aggregated": self.aggregated,
            "robustness_std": self.robustness_std,
            "fidelity_std": self.fidelity_std,
            "algorithm": self.algorithm,
            "hyperparameters": self.hyperparameters,
            "config": self.config.to_dict(),
            "raw_robustness": self.raw_robustness,
            "raw_infidelity": self.raw_infidelity,
            "support_size": self.support_size,
        }


@dataclass
class RankingTable:
    entries: list
    skipped: list = field(default_factory=list)
    weights: tuple = DEFAULT_WEIGHTS

    def to_dict(self) -> dict:
        return {"weights": list(self.weights), "entries": [e.to_dict() for e in self.entries],
                "skipped": self.skipped}

    @classmethod
    def from_dict(cls, payload: dict) -> "RankingTable":
        entries = []
        for i, e in enumerate(payload["entries"]):
            entries.append(RankingEntry(config_from_dict(e["config"]), e["raw_robustness"], e["raw_infidelity"],
                                        e["support_size"], i, e["robustness_std"], e["fidelity_std"],
                                        e["aggregated"], e["rank"]))
        return cls(entries, payload.get("skipped", []), tuple(payload.get("weights", DEFAULT_WEIGHTS)))

    def to_markdown(self) -> str:
        lines = [
            "| Rank | Aggregated score | Standardized robustness | Standardized fidelity | Explainer | Hyperparameters | Raw robustness | Raw infidelity |",
            "|---:|---:|---:|---:|---|---|---:|---:|",
        ]
        for e in self.entries:
            lines.append(f"| {e.rank} | {e.aggregated:.3f} | {e.robustness_std:.3f} | {e.fidelity_std:.3f} | "
                         f"{e.algorithm} | {e.hyperparameters} | {e.raw_robustness:.4g} | {e.raw_infidelity:.4g} |")
        for s in self.skipped:
            lines.append(f"| - | skipped | | | {s['algorithm']} | {s['hyperparameters']} | {s['reason']} | |")
        return "\n".join(lines)


def zscore(values) -> np.ndarray:
    """Population z-scores; a zero-variance column maps to zeros (with a warning)."""
    v = np.asarray(values, dtype=float)
    sd = v.std()
    if not sd > 0:
        warnings.warn("metric has zero variance across configurations; standardized to 0", stacklevel=2)
        return np.zeros_like(v)
    return (v - v.mean()) / sd


def standardize_scores(raw_robustness, raw_infidelity) -> tuple[np.ndarray, np.ndarray]:
    """Negate both lower-is-better metrics, then z-score each across configurations."""
    if len(raw_robustness) < 2:
        raise ValueError("need at least 2 configurations to standardize")
    return zscore(-np.asarray(raw_robustness, dtype=float)), zscore(-np.asarray(raw_infidelity, dtype=float))


def aggregate(z_robustness, z_fidelity, weights=DEFAULT_WEIGHTS):
    w_r, w_f = weights
    return w_r * np.asarray(z_robustness, dtype=float) + w_f * np.asarray(z_fidelity, dtype=float)


def rank_configs(entries) -> list:
    """Sort by aggregated score, best first; ties keep search-space order. Ranks are positions from 1."""
    ordered = sorted(entries, key=lambda e: (-e.aggregated, e.order))
    for pos, e in enumerate(ordered, start=1):
        e.rank = pos
    return ordered


def select_config(table: RankingTable, min_active_features: int | None = None, algorithms=None) -> RankingEntry:
    for e in table.entries:
        if algorithms is not None and e.algorithm not in algorithms:
            continue
        if min_active_features is not None and e.support_size < min_active_features:
            continue
        return e
    raise LookupError(f"no ranked configuration satisfies min_active_features={min_active_features}, algorithms={algorithms}")


@dataclass(frozen=True)
class EvalSettings:
    sample_size: int = 50
    robustness: RobustnessConfig = RobustnessConfig()
    infidelity: InfidelityConfig = InfidelityConfig()

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)


def _effective_key(cfg, d):
    # Exhaustive enumeration ignores nsamples, so such configs share coalition values.
    if isinstance(cfg, ShapConfig):
        n = 2 ** d - 2 if 2 ** d - 2 <= cfg.nsamples else cfg.nsamples
        return (n, cfg.summarize)
    return None


def evaluate_config(cfg, model, ds, settings: EvalSettings = EvalSettings(), seed: int = 0,
                    background=None, cache=None) -> tuple[float, float, int]:
    """Mean robustness and infidelity on the shared instance sample, plus the explanation support size."""
    idx = sample_instances(ds.n, settings.sample_size, seed)
    scores, phis = per_instance_metrics(cfg, model, ds.features, idx, settings.robustness, settings.infidelity,
                                        background=background, cache=cache)
    support = int(np.sum(np.mean(np.abs(phis), axis=0) > SUPPORT_TOL))
    return float(np.mean(scores["robustness"])), float(np.mean(scores["infidelity"])), support


def run_search(model, ds, space: SearchSpace | None = None, settings: EvalSettings = EvalSettings(),
               weights=DEFAULT_WEIGHTS, seed: int = 0) -> RankingTable:
    space = space or default_search_space(ds.d)
    configs = space.configs(seed)
    backgrounds, caches = {}, {}
    entries, skipped = [], []
    for order, cfg in enumerate(configs):
        bg = cache = None
        key = _effective_key(cfg, ds.d)
        if key is not None:
            if cfg.summarize not in backgrounds:
                backgrounds[cfg.summarize] = background_for(ds.features, cfg)
            bg = backgrounds[cfg.summarize]
            cache = caches.setdefault(key, ValueCache(model, bg))
        try:
            rob, infd, support = evaluate_config(cfg, model, ds, settings, seed, background=bg, cache=cache)
        except Exception as exc:  # recorded, not fatal
            skipped.append({"algorithm": cfg.algorithm, "hyperparameters": cfg.label(), "reason": str(exc)})
            continue
        log.info("%s %s: robustness=%.4g infidelity=%.4g", cfg.algorithm, cfg.label(), rob, infd)
        entries.append(RankingEntry(cfg, rob, infd, support, order))
    if len(entries) >= 2:
        z_r, z_f = standardize_scores([e.raw_robustness for e in entries], [e.raw_infidelity for e in entries])
        agg = aggregate(z_r, z_f, weights)
        for e, zr, zf, a in zip(entries, z_r, z_f, agg):
            e.robustness_std, e.fidelity_std, e.aggregated = float(zr), float(zf), float(a)
    return RankingTable(rank_configs(entries), skipped, tuple(weights))
