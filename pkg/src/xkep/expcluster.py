"""Ward agglomerative clustering of explanation vectors, with L-method cluster-count selection."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

DEFAULT_C_MAX = 20


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    """Merge list in scipy's id convention: leaves are 0..n-1, merge k creates id n+k."""

    merges: tuple
    n_leaves: int

    @property
    def heights(self) -> np.ndarray:
        return np.array([m.height for m in self.merges])

    def to_linkage(self) -> np.ndarray:
        return np.array([[m.left, m.right, m.height, m.size] for m in self.merges], dtype=float)

    def to_dict(self) -> dict:
        return {"n_leaves": self.n_leaves,
                "merges": [{"left": m.left, "right": m.right, "height": m.height, "size": m.size} for m in self.merges]}

    @classmethod
    def from_dict(cls, payload: dict) -> "Dendrogram":
        return cls(tuple(Merge(m["left"], m["right"], m["height"], m["size"]) for m in payload["merges"]),
                   payload["n_leaves"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    c: int

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster_id)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.c)


def ward_linkage(points) -> Dendrogram:
    """Ward linkage via the Lance-Williams update on squared Euclidean distances.

    Heights are square roots of the Ward distance, so two points ``r`` apart
    merge at height ``r``. Ties go to the smallest (i, j) pair, where each
    cluster is indexed by its smallest original row.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("ward_linkage needs an n x d matrix with n >= 2")
    if not np.isfinite(X).all():
        raise ValueError("points contain non-finite coordinates")
    n = X.shape[0]
    # squared distances from explicit differences (the Gram-matrix shortcut loses precision)
    D = np.zeros((n, n))
    for i in range(n):
        diff = X[i + 1:] - X[i]
        D[i, i + 1:] = np.einsum("ij,ij->i", diff, diff)
        D[i + 1:, i] = D[i, i + 1:]
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    ident = np.arange(n)
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    masked = np.where(upper, D, np.inf)
    merges = []
    for step in range(n - 1):
        flat = int(np.argmin(masked))
        i, j = divmod(flat, n)
        d2 = masked[i, j]
        merges.append(Merge(int(ident[i]), int(ident[j]), float(np.sqrt(d2)), int(size[i] + size[j])))
        others = active.copy()
        others[[i, j]] = False
        k = np.flatnonzero(others)
        nk = size[k]
        total = size[i] + size[j] + nk
        new = ((size[i] + nk) * D[i, k] + (size[j] + nk) * D[j, k] - nk * d2) / total
        D[i, k] = D[k, i] = new
        size[i] += size[j]
        active[j] = False
        ident[i] = n + step
        masked[j, :] = np.inf
        masked[:, j] = np.inf
        lo, hi = k[k < i], k[k > i]
        masked[lo, i] = D[lo, i]
        masked[i, hi] = D[i, hi]
    return Dendrogram(tuple(merges), n)


def evaluation_graph(dg: Dendrogram) -> tuple[np.ndarray, np.ndarray]:
    """(k, height of the merge taking k+1 clusters to k) for k = 1..n-1."""
    heights = dg.heights[::-1]
    return np.arange(1, dg.n_leaves), heights


def _line_rmse(x, y) -> float:
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(np.sqrt(np.mean((y - A @ coef) ** 2)))


def _l_method_once(x, y) -> tuple[int, bool]:
    b = len(x)
    candidates = list(range(3, b - 1)) if b >= 5 else []
    if not candidates:
        return 2, False
    errors = []
    for xc in candidates:
        left = x <= xc
        right = x >= xc
        w_left = (xc - 1) / (b - 1)
        w_right = (b - xc) / (b - 1)
        errors.append(w_left * _line_rmse(x[left], y[left]) + w_right * _line_rmse(x[right], y[right]))
    errors = np.array(errors)
    scale = max(np.max(np.abs(y)), np.finfo(float).tiny)
    if np.all(errors <= 1e-12 * scale):
        return candidates[0], True
    return candidates[int(np.argmin(errors))], False


def l_method_knee(series, c_max: int = DEFAULT_C_MAX) -> int:
    """Knee of an evaluation graph by the L-method with iterative cutoff refinement.

    ``series`` is ``(x, y)`` as returned by :func:`evaluation_graph`. Points
    with ``x <= c_max`` are fitted with two lines at every split; the split
    minimising the size-weighted RMSE is the knee. The cutoff is then reset to
    twice the knee until the knee stops decreasing.
    """
    x, y = (np.asarray(v, dtype=float) for v in series)
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    keep = x <= c_max
    if keep.sum() < 4:
        raise ValueError("L-method needs at least 4 points in the evaluation graph")
    cutoff = c_max
    last = np.inf
    while True:
        keep = x <= cutoff
        knee, flat = _l_method_once(x[keep], y[keep])
        if flat:
            warnings.warn("evaluation graph is linear: no knee, returning the smallest candidate", stacklevel=2)
        if knee >= last or keep.sum() < 4:
            break
        last = knee
        cutoff = 2 * knee
        if (x <= cutoff).sum() < 4:
            break
    return max(int(knee), 2)


def cut(dg: Dendrogram, c: int) -> ClusterAssignment:
    """Undo the last c-1 merges; clusters are numbered by their smallest leaf index."""
    n = dg.n_leaves
    if not 1 <= c <= n:
        raise ValueError(f"cluster count {c} outside [1, {n}]")
    parent = list(range(2 * n - 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for step, m in enumerate(dg.merges[: n - c]):
        new = n + step
        parent[find(m.left)] = new
        parent[find(m.right)] = new
    roots = [find(i) for i in range(n)]
    relabel: dict = {}
    labels = np.empty(n, dtype=int)
    for i, r in enumerate(roots):  # ascending leaf index -> ascending minimum leaf
        labels[i] = relabel.setdefault(r, len(relabel))
    return ClusterAssignment(labels, c)


def cluster_explanations(xs, c_max: int = DEFAULT_C_MAX, standardize: bool = False):
    """Ward + L-method on the attribution rows (base value excluded).

    Returns ``(dendrogram, assignment, c)``.
    """
    phi = np.asarray(xs.phi, dtype=float)
    if phi.shape[0] < 4:
        raise ValueError("need at least 4 explanations to cluster")
    if standardize:
        sd = phi.std(axis=0)
        phi = (phi - phi.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    dg = ward_linkage(phi)
    c = l_method_knee(evaluation_graph(dg), min(c_max, phi.shape[0] - 1))
    return dg, cut(dg, c), c
