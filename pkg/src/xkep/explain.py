"""Additive feature attributions: Kernel SHAP, a LIME-style local surrogate, and exact Shapley values."""
from __future__ import annotations

import csv
import io
import itertools
import json
import re
import warnings
from dataclasses import dataclass, field
from math import comb, factorial

import numpy as np

MAX_EXACT_FEATURES = 12
_CHUNK_ROWS = 1 << 18


class ExplainError(RuntimeError):
    pass


@dataclass(frozen=True)
class Explanation:
    phi: np.ndarray
    phi0: float
    fx: float


@dataclass(frozen=True)
class Background:
    data: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.data, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if data.shape[0] < 1 or w.shape[0] != data.shape[0]:
            raise ValueError("background needs >= 1 row and one weight per row")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "weights", w / w.sum())

    @classmethod
    def uniform(cls, data) -> "Background":
        data = np.atleast_2d(np.asarray(data, dtype=float))
        return cls(data, np.full(data.shape[0], 1.0 / data.shape[0]))


_L1 = re.compile(r"^num_features\((\d+)\)$")
_KMEANS = re.compile(r"^kmeans\((\d+)\)$")


@dataclass(frozen=True)
class ShapConfig:
    nsamples: int = 581
    l1_reg: str = "none"
    summarize: str = "full"
    seed: int = 0

    algorithm = "SHAP"

    def __post_init__(self):
        if self.nsamples < 1:
            raise ValueError("nsamples must be positive")
        if self.l1_reg not in ("none", "bic") and not _L1.match(self.l1_reg):
            raise ValueError(f"l1_reg must be none, bic or num_features(k), got {self.l1_reg!r}")
        if self.summarize == "KernelExplainer":
            object.__setattr__(self, "summarize", "full")
        if self.summarize != "full" and not _KMEANS.match(self.summarize):
            raise ValueError(f"summarize must be full or kmeans(K), got {self.summarize!r}")

    @property
    def num_features(self) -> int | None:
        m = _L1.match(self.l1_reg)
        return int(m.group(1)) if m else None

    def label(self) -> str:
        summ = "KernelExplainer" if self.summarize == "full" else self.summarize
        return f"{self.nsamples} ; {self.l1_reg} ; {summ}"

    def to_dict(self) -> dict:
        return {"algorithm": "SHAP", "nsamples": self.nsamples, "l1_reg": self.l1_reg,
                "summarize": self.summarize, "seed": self.seed}


@dataclass(frozen=True)
class LimeConfig:
    num_samples: int = 5000
    kernel_width: float | None = None  # None -> 0.75 * sqrt(d)
    ridge_alpha: float = 1.0
    seed: int = 0

    algorithm = "LIME"

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be positive")
        if self.kernel_width is not None and not self.kernel_width > 0:
            raise ValueError("kernel_width must be positive")

    def label(self) -> str:
        return str(self.num_samples)

    def to_dict(self) -> dict:
        return {"algorithm": "LIME", "num_samples": self.num_samples, "kernel_width": self.kernel_width,
                "ridge_alpha": self.ridge_alpha, "seed": self.seed}


def config_from_dict(payload: dict):
    payload = dict(payload)
    algorithm = payload.pop("algorithm")
    if algorithm == "SHAP":
        return ShapConfig(**payload)
    if algorithm == "LIME":
        return LimeConfig(**payload)
    raise ValueError(f"unknown explainer {algorithm!r}")


def shapley_kernel_weight(d: int, s: int) -> float:
    """Shapley kernel weight (d-1) / (C(d,s) s (d-s)) of a coalition of size ``s``."""
    if s <= 0 or s >= d:
        raise ValueError(f"infinite weight for coalition size {s} of {d}; enforce it as a constraint")
    return (d - 1) / (comb(d, s) * s * (d - s))


def summarize_background(X, mode: str = "full", seed: int = 0) -> Background:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if mode in ("full", "KernelExplainer"):
        return Background.uniform(X)
    m = _KMEANS.match(mode)
    if not m:
        raise ValueError(f"unknown summarize mode {mode!r}")
    k = int(m.group(1))
    if k > X.shape[0]:
        raise ValueError(f"kmeans({k}) needs at least {k} rows, got {X.shape[0]}")
    from sklearn.cluster import KMeans

    km = KMeans(n_clusters=k, n_init=10, random_state=seed % (2**32), algorithm="lloyd").fit(X)
    counts = np.bincount(km.labels_, minlength=k).astype(float)
    keep = counts > 0
    return Background(km.cluster_centers_[keep], counts[keep] / counts.sum())


def coalition_values(f, x, bg: Background, masks) -> np.ndarray:
    """Interventional value of each coalition: E_bg f(x on the mask, background elsewhere)."""
    x = np.asarray(x, dtype=float)
    masks = np.asarray(masks, dtype=bool)
    m, d = bg.data.shape
    per_chunk = max(1, _CHUNK_ROWS // m)
    out = np.empty(len(masks))
    for start in range(0, len(masks), per_chunk):
        block = masks[start:start + per_chunk]
        rows = np.where(block[:, None, :], x[None, None, :], bg.data[None, :, :]).reshape(-1, d)
        preds = np.asarray(f(rows), dtype=float).reshape(len(block), m)
        out[start:start + per_chunk] = preds @ bg.weights
    return out


def _all_coalitions(d):
    masks = [m for s in range(1, d) for m in itertools.combinations(range(d), s)]
    Z = np.zeros((len(masks), d), dtype=bool)
    for i, idx in enumerate(masks):
        Z[i, list(idx)] = True
    return Z


def _sample_coalitions(d, nsamples, rng):
    sizes = np.arange(1, d)
    size_p = (d - 1) / (sizes * (d - sizes))
    size_p = size_p / size_p.sum()
    counts: dict = {}
    draws = 0
    max_draws = 50 * nsamples
    while len(counts) < nsamples and draws < max_draws:
        s = rng.choice(sizes, p=size_p)
        mask = np.zeros(d, dtype=bool)
        mask[rng.choice(d, size=s, replace=False)] = True
        key = mask.tobytes()
        counts[key] = counts.get(key, 0) + 1
        draws += 1
    Z = np.array([np.frombuffer(k, dtype=bool) for k in counts])
    w = np.array(list(counts.values()), dtype=float)
    return Z, w


def _constrained_wls(Z, w, y, delta, support):
    """Minimise sum w (y - Z phi)^2 over phi on ``support`` with sum(phi) = delta."""
    d = Z.shape[1]
    phi = np.zeros(d)
    support = list(support)
    if len(support) == 1:
        phi[support[0]] = delta
        return phi
    last, free = support[-1], support[:-1]
    A = Z[:, free].astype(float) - Z[:, [last]].astype(float)
    target = y - Z[:, last] * delta
    sw = np.sqrt(w)
    coef, _, rank, _ = np.linalg.lstsq(A * sw[:, None], target * sw, rcond=None)
    if rank < len(free):
        raise ExplainError(
            f"singular Kernel SHAP system ({len(Z)} distinct coalitions for {len(support)} features); increase nsamples")
    phi[free] = coef
    phi[last] = delta - coef.sum()
    return phi


def lasso_path(X, y, w, n_lambdas=50, eps=1e-3):
    """Coordinate-descent path for 0.5 * sum w (y - X b)^2 + lam * |b|_1 with weights normalised to 1.

    Returns ``(coefs, lambdas)`` with one coefficient row per lambda, largest lambda first.
    """
    from sklearn.linear_model import lasso_path as _sk_lasso_path

    w = np.asarray(w, dtype=float)
    scale = np.sqrt(w / w.sum() * len(w))
    Xs, ys = X * scale[:, None], y * scale
    if not np.any(Xs.T @ ys):
        return np.zeros((1, X.shape[1])), np.array([0.0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lambdas, coefs, _ = _sk_lasso_path(Xs, ys, eps=eps, n_alphas=n_lambdas)
    return coefs.T, lambdas


def _bic_support(Z, w, y, delta):
    n = len(y)
    X = Z.astype(float)
    coefs, _ = lasso_path(X, y, w)
    wn = w * n / w.sum()
    best, best_bic = None, np.inf
    for beta in coefs:
        k = int(np.count_nonzero(beta))
        if k == 0:
            continue
        rss = max(float(np.sum(wn * (y - X @ beta) ** 2)), np.finfo(float).tiny)
        bic = n * np.log(rss / n) + k * np.log(n)
        if bic < best_bic:
            best, best_bic = np.flatnonzero(beta), bic
    if best is None:
        best = np.arange(Z.shape[1])
    return best


class ValueCache:
    """Memo of coalition values for one (model, background) pair.

    Configurations that differ only in ``l1_reg`` evaluate the same coalitions,
    so sharing a cache between them skips every repeated model call.
    """

    def __init__(self, f, bg: Background):
        self.f = f
        self.bg = bg
        self._store: dict = {}
        self.hits = 0

    def values(self, x, masks) -> np.ndarray:
        key = (x.tobytes(), np.packbits(masks).tobytes(), masks.shape)
        if key in self._store:
            self.hits += 1
        else:
            self._store[key] = coalition_values(self.f, x, self.bg, masks)
        return self._store[key]


def kernel_shap_explain(f, x, bg: Background, cfg: ShapConfig = ShapConfig(), cache: ValueCache | None = None) -> Explanation:
    x = np.asarray(x, dtype=float).ravel()
    d = x.shape[0]
    if bg.data.shape[1] != d:
        raise ValueError(f"background has {bg.data.shape[1]} columns, instance has {d}")
    fx = float(np.asarray(f(x[None, :]))[0])
    phi0 = float(np.asarray(f(bg.data), dtype=float) @ bg.weights)
    delta = fx - phi0
    if d == 1:
        return Explanation(np.array([delta]), phi0, fx)
    low = low_sample_message(cfg, d)
    if low:
        warnings.warn(low, stacklevel=2)
    if 2 ** d - 2 <= cfg.nsamples:
        Z = _all_coalitions(d)
        sizes = Z.sum(axis=1)
        w = np.array([shapley_kernel_weight(d, int(s)) for s in sizes])
    else:
        Z, w = _sample_coalitions(d, cfg.nsamples, np.random.default_rng(cfg.seed))
    if cache is not None and cache.f is f and cache.bg is bg:
        y = cache.values(x, Z) - phi0
    else:
        y = coalition_values(f, x, bg, Z) - phi0
    if cfg.l1_reg == "bic":
        support = _bic_support(Z, w, y, delta)
    elif cfg.num_features is not None and cfg.num_features < d:
        full = _constrained_wls(Z, w, y, delta, range(d))
        support = np.sort(np.argsort(-np.abs(full), kind="stable")[:cfg.num_features])
    else:
        support = range(d)
    return Explanation(_constrained_wls(Z, w, y, delta, support), phi0, fx)


def exact_shapley(f, x, bg: Background) -> Explanation:
    """Shapley values by full subset enumeration (reference implementation)."""
    x = np.asarray(x, dtype=float).ravel()
    d = x.shape[0]
    if d > MAX_EXACT_FEATURES:
        raise ValueError(f"exact Shapley values limited to d <= {MAX_EXACT_FEATURES}")
    codes = np.arange(2 ** d)
    masks = ((codes[:, None] >> np.arange(d)) & 1).astype(bool)
    v = coalition_values(f, x, bg, masks)
    phi = np.zeros(d)
    for i in range(d):
        bit = 1 << i
        for code in range(2 ** d):
            if code & bit:
                continue
            s = bin(code).count("1")
            phi[i] += factorial(s) * factorial(d - s - 1) / factorial(d) * (v[code | bit] - v[code])
    return Explanation(phi, float(v[0]), float(v[-1]))


def lime_explain(f, x, bg: Background, cfg: LimeConfig = LimeConfig()) -> Explanation:
    x = np.asarray(x, dtype=float).ravel()
    d = x.shape[0]
    if cfg.num_samples < d + 2:
        raise ValueError(f"num_samples must be at least d+2={d + 2}")
    low = low_sample_message(cfg, d)
    if low:
        warnings.warn(low, stacklevel=2)
    mean = bg.weights @ bg.data
    scale = np.sqrt(bg.weights @ (bg.data - mean) ** 2)
    if not np.any(scale > 0):
        raise ExplainError("degenerate perturbations: background has zero spread in every feature")
    scale = np.where(scale > 0, scale, 1.0)
    rng = np.random.default_rng(cfg.seed)
    Xp = x + rng.standard_normal((cfg.num_samples, d)) * scale
    width = cfg.kernel_width if cfg.kernel_width is not None else 0.75 * np.sqrt(d)
    dist2 = np.sum(((Xp - x) / scale) ** 2, axis=1)
    sw = np.exp(-dist2 / width ** 2)
    yp = np.asarray(f(Xp), dtype=float)
    D = Xp - x
    wsum = sw.sum()
    d_mean = sw @ D / wsum
    y_mean = sw @ yp / wsum
    Dc, yc = D - d_mean, yp - y_mean
    A = (Dc * sw[:, None]).T @ Dc + cfg.ridge_alpha * np.eye(d)
    phi = np.linalg.solve(A, (Dc * sw[:, None]).T @ yc)
    intercept = y_mean - d_mean @ phi
    fx = float(np.asarray(f(x[None, :]))[0])
    return Explanation(phi, float(intercept), fx)


@dataclass(frozen=True)
class ExplanationSet:
    phi: np.ndarray
    phi0: np.ndarray
    fx: np.ndarray
    feature_names: tuple
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        ids = np.arange(phi.shape[0]) if self.ids is None else np.asarray(self.ids, dtype=int)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "phi0", np.asarray(self.phi0, dtype=float))
        object.__setattr__(self, "fx", np.asarray(self.fx, dtype=float))
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if phi.shape[1] != len(self.feature_names) or not len(ids) == len(self.phi0) == len(self.fx) == phi.shape[0]:
            raise ValueError("explanation set dimensions disagree")

    def __len__(self):
        return self.phi.shape[0]

    def row(self, i) -> Explanation:
        return Explanation(self.phi[i], float(self.phi0[i]), float(self.fx[i]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["instance_id", "phi0", "fx", *self.feature_names])
        for i in range(len(self)):
            writer.writerow([int(self.ids[i]), repr(float(self.phi0[i])), repr(float(self.fx[i])),
                             *(repr(float(v)) for v in self.phi[i])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ExplanationSet":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
        return cls(data[:, 3:], data[:, 1], data[:, 2], header[3:], data[:, 0].astype(int))

    def to_dict(self) -> dict:
        return {"feature_names": list(self.feature_names), "ids": self.ids.tolist(), "phi0": self.phi0.tolist(),
                "fx": self.fx.tolist(), "phi": self.phi.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def low_sample_message(cfg, d: int) -> str | None:
    if isinstance(cfg, ShapConfig) and cfg.nsamples < 2 * d + 2:
        return f"nsamples={cfg.nsamples} is below 2d+2={2 * d + 2}; estimates will be noisy"
    if isinstance(cfg, LimeConfig) and cfg.num_samples < 2 * (d + 1):
        return f"LIME with num_samples={cfg.num_samples} for {d} features: low-sample fit"
    return None


def background_for(X, cfg) -> Background:
    if isinstance(cfg, ShapConfig):
        return summarize_background(X, cfg.summarize, cfg.seed)
    return Background.uniform(X)


def explain_one(f, x, bg: Background, cfg, seed=None, cache: ValueCache | None = None) -> Explanation:
    from dataclasses import replace

    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if isinstance(cfg, ShapConfig):
        return kernel_shap_explain(f, x, bg, cfg, cache)
    if isinstance(cfg, LimeConfig):
        return lime_explain(f, x, bg, cfg)
    raise TypeError(f"unsupported explainer config {type(cfg).__name__}")


def explain_all(f, ds, cfg, background: Background | None = None) -> ExplanationSet:
    """Explain every row of ``ds`` (a Dataset); row ``i`` uses seed ``cfg.seed + i``."""
    X = ds.features
    bg = background if background is not None else background_for(X, cfg)
    low = low_sample_message(cfg, ds.d)
    if low:
        warnings.warn(low, stacklevel=2)
    phi = np.empty(X.shape)
    phi0 = np.empty(X.shape[0])
    fx = np.empty(X.shape[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for i, x in enumerate(X):
            try:
                e = explain_one(f, x, bg, cfg, seed=cfg.seed + i)
            except Exception as exc:
                raise ExplainError(f"row {i}: {exc}") from exc
            phi[i], phi0[i], fx[i] = e.phi, e.phi0, e.fx
    return ExplanationSet(phi, phi0, fx, ds.feature_names)
