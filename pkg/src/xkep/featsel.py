"""Information-theoretic feature ranking (CMIM, JMI, univariate MI) and subset evaluation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, select_columns
from .model import MlpConfig, accuracy, train_mlp

DEFAULT_BINS = 10
DEFAULT_DELTA = 0.005
DEFAULT_SEEDS = 5


@dataclass(frozen=True)
class DiscretizedColumn:
    bins: np.ndarray
    edges: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1


@dataclass(frozen=True)
class FeatureRanking:
    names: tuple
    scores: tuple

    def to_dict(self) -> dict:
        return {"names": list(self.names), "scores": [float(s) for s in self.scores]}


@dataclass(frozen=True)
class SubsetReport:
    subset: tuple
    accuracy: float
    kendall_tau_vs_full: float
    influence_change: float

    def to_dict(self) -> dict:
        return {
            "subset": list(self.subset),
            "accuracy": self.accuracy,
            "kendall_tau_vs_full": self.kendall_tau_vs_full,
            "influence_change": self.influence_change,
        }


def discretize(col, n_bins: int = DEFAULT_BINS) -> DiscretizedColumn:
    """Equal-frequency binning; equal values always land in the same bin.

    A value's bin is ``floor(r * B / n)`` where ``r`` is the position of its
    first occurrence in sorted order. Columns with at most ``B`` distinct
    values get one bin per distinct value. Empty bins are compacted away, so
    the result may hold fewer than ``B`` bins.
    """
    if n_bins < 2:
        raise ValueError("need at least 2 bins")
    col = np.asarray(col, dtype=float)
    n = len(col)
    distinct, inverse = np.unique(col, return_inverse=True)
    if len(distinct) <= n_bins:
        raw = np.arange(len(distinct))
    else:
        counts = np.bincount(inverse)
        first_rank = np.concatenate([[0], np.cumsum(counts)[:-1]])
        raw = (first_rank * n_bins) // n
    _, per_value_bin = np.unique(raw, return_inverse=True)
    bins = per_value_bin[inverse]
    n_out = per_value_bin.max() + 1
    if n_out == 1:
        edges = np.array([distinct[0] - 0.5, distinct[-1] + 0.5])
    else:
        hi = np.array([distinct[per_value_bin == b].max() for b in range(n_out)])
        lo = np.array([distinct[per_value_bin == b].min() for b in range(n_out)])
        edges = np.concatenate([[lo[0]], (hi[:-1] + lo[1:]) / 2, [hi[-1]]])
    return DiscretizedColumn(bins.astype(np.int64), edges)


def _codes(v) -> np.ndarray:
    return np.unique(np.asarray(v), return_inverse=True)[1].ravel()


def _pair(a, b) -> np.ndarray:
    a, b = _codes(a), _codes(b)
    return a * (b.max() + 1) + b


def mutual_information(x, y) -> float:
    """Plug-in I(X;Y) in bits from the empirical joint distribution."""
    x, y = np.asarray(x), np.asarray(y)
    if len(x) == 0:
        raise ValueError("empty input")
    if len(x) != len(y):
        raise ValueError("x and y must have equal length")
    xc, yc = _codes(x), _codes(y)
    n = len(xc)
    ny = yc.max() + 1
    joint = np.bincount(xc * ny + yc, minlength=(xc.max() + 1) * ny).reshape(-1, ny)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    i, j = np.nonzero(joint)
    c = joint[i, j]
    mi = np.sum(c / n * np.log2(c * n / (px[i] * py[j])))
    return max(float(mi), 0.0)


def conditional_mutual_information(x, y, z) -> float:
    """I(X;Y|Z) = sum_z p(z) I(X;Y | Z=z), plug-in, in bits."""
    x, y, z = np.asarray(x), np.asarray(y), np.asarray(z)
    if len(x) == 0:
        raise ValueError("empty input")
    if not len(x) == len(y) == len(z):
        raise ValueError("x, y and z must have equal length")
    zc = _codes(z)
    n = len(zc)
    total = 0.0
    for value in range(zc.max() + 1):
        mask = zc == value
        total += mask.sum() / n * mutual_information(x[mask], y[mask])
    return max(total, 0.0)


def discretize_dataset(ds: Dataset, n_bins: int = DEFAULT_BINS) -> np.ndarray:
    return np.column_stack([discretize(ds.features[:, j], n_bins).bins for j in range(ds.d)])


def _greedy(columns, y, names, objective) -> FeatureRanking:
    d = columns.shape[1]
    relevance = np.array([mutual_information(columns[:, k], y) for k in range(d)])
    first = int(np.argmax(relevance))
    chosen, scores = [first], [relevance[first]]
    while len(chosen) < d:
        rest = [k for k in range(d) if k not in chosen]
        vals = [objective(k, chosen) for k in rest]
        pick = int(np.argmax(vals))  # first maximum = lowest feature index
        chosen.append(rest[pick])
        scores.append(vals[pick])
    return FeatureRanking(tuple(names[k] for k in chosen), tuple(float(s) for s in scores))


def rank_cmim_discrete(columns, y, names) -> FeatureRanking:
    columns = np.asarray(columns)
    cache = {}

    def cmi(k, j):
        if (k, j) not in cache:
            cache[k, j] = conditional_mutual_information(columns[:, k], y, columns[:, j])
        return cache[k, j]

    return _greedy(columns, y, names, lambda k, chosen: min(cmi(k, j) for j in chosen))


def rank_jmi_discrete(columns, y, names) -> FeatureRanking:
    columns = np.asarray(columns)
    cache = {}

    def joint(k, j):
        if (k, j) not in cache:
            cache[k, j] = mutual_information(_pair(columns[:, k], columns[:, j]), y)
        return cache[k, j]

    return _greedy(columns, y, names, lambda k, chosen: sum(joint(k, j) for j in chosen))


def rank_mi_discrete(columns, y, names) -> FeatureRanking:
    columns = np.asarray(columns)
    relevance = [mutual_information(columns[:, k], y) for k in range(columns.shape[1])]
    order = sorted(range(len(relevance)), key=lambda k: (-relevance[k], k))
    return FeatureRanking(tuple(names[k] for k in order), tuple(float(relevance[k]) for k in order))


def rank_cmim(ds: Dataset, n_bins: int = DEFAULT_BINS) -> FeatureRanking:
    return rank_cmim_discrete(discretize_dataset(ds, n_bins), ds.labels, ds.feature_names)


def rank_jmi(ds: Dataset, n_bins: int = DEFAULT_BINS) -> FeatureRanking:
    return rank_jmi_discrete(discretize_dataset(ds, n_bins), ds.labels, ds.feature_names)


def rank_mi(ds: Dataset, n_bins: int = DEFAULT_BINS) -> FeatureRanking:
    return rank_mi_discrete(discretize_dataset(ds, n_bins), ds.labels, ds.feature_names)


RANKERS = {"cmim": rank_cmim, "jmi": rank_jmi, "mi": rank_mi}


def kendall_tau(rank_a, rank_b) -> float:
    """Kendall tau-a between two strict orderings of the same names."""
    rank_a, rank_b = list(rank_a), list(rank_b)
    if sorted(rank_a) != sorted(rank_b) or len(set(rank_a)) != len(rank_a):
        raise ValueError("rankings must be permutations of the same names")
    m = len(rank_a)
    if m < 2:
        return 1.0
    pos_b = {name: i for i, name in enumerate(rank_b)}
    b = [pos_b[name] for name in rank_a]
    concordant = discordant = 0
    for i in range(m):
        for j in range(i + 1, m):
            if b[i] < b[j]:
                concordant += 1
            else:
                discordant += 1
    return (concordant - discordant) / (m * (m - 1) / 2)


def influence(phi) -> np.ndarray:
    """Mean absolute attribution per feature."""
    return np.mean(np.abs(np.asarray(phi)), axis=0)


def influence_ranking(names, infl) -> list:
    order = sorted(range(len(names)), key=lambda j: (-infl[j], j))
    return [names[j] for j in order]


def evaluate_subset(ds: Dataset, subset, full_model, full_explanations, mlp_cfg: MlpConfig, explainer_cfg) -> SubsetReport:
    """Retrain on ``subset`` and compare its explanations with the all-features baseline."""
    from .explain import explain_all

    subset = [n for n in ds.feature_names if n in set(subset)]
    if not subset:
        raise ValueError("subset is empty")
    sub = select_columns(ds, subset)
    model = train_mlp(sub, mlp_cfg)
    acc = accuracy(model, sub)
    sub_expl = explain_all(model, sub, explainer_cfg)
    full_infl = dict(zip(full_explanations.feature_names, influence(full_explanations.phi)))
    sub_infl = dict(zip(sub.feature_names, influence(sub_expl.phi)))
    shared = list(sub.feature_names)
    tau = kendall_tau(
        influence_ranking(shared, [sub_infl[n] for n in shared]),
        influence_ranking(shared, [full_infl[n] for n in shared]),
    )
    change = float(np.mean([abs(sub_infl[n] - full_infl[n]) for n in shared]))
    return SubsetReport(tuple(subset), acc, tau, change)


def mean_accuracy(ds: Dataset, names, mlp_cfg: MlpConfig, n_seeds: int = DEFAULT_SEEDS) -> float:
    sub = select_columns(ds, names)
    accs = [accuracy(train_mlp(sub, _reseed(mlp_cfg, mlp_cfg.seed + s)), sub) for s in range(n_seeds)]
    return float(np.mean(accs))


def _reseed(cfg: MlpConfig, seed: int) -> MlpConfig:
    from dataclasses import replace

    return replace(cfg, seed=seed)


def select_features(ds: Dataset, method: str = "cmim", delta: float = DEFAULT_DELTA, mlp_cfg: MlpConfig = MlpConfig(),
                    n_bins: int = DEFAULT_BINS, n_seeds: int = DEFAULT_SEEDS, ranking: FeatureRanking | None = None):
    """Drop lowest-ranked features while seed-averaged accuracy stays within ``delta`` of the full set.

    Returns ``(subset, ranking, trace)``; ``trace`` lists ``(subset, mean accuracy)`` for every subset tried.
    """
    if method not in RANKERS:
        raise ValueError(f"unknown selection method {method!r}; expected one of {sorted(RANKERS)}")
    ranking = ranking or RANKERS[method](ds, n_bins)
    order = list(ranking.names)
    base = mean_accuracy(ds, order, mlp_cfg, n_seeds)
    trace = [(tuple(order), base)]
    kept = order
    while len(kept) > 1:
        candidate = kept[:-1]
        acc = mean_accuracy(ds, candidate, mlp_cfg, n_seeds)
        trace.append((tuple(candidate), acc))
        if acc < base - delta:
            break
        kept = candidate
    subset = [n for n in ds.feature_names if n in set(kept)]
    return subset, ranking, trace
