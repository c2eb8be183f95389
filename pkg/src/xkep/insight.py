"""Per-cluster summaries: statistics, tree-ensemble rules and medoid recommendations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.tree import DecisionTreeClassifier

LE, GT = "<=", ">"


@dataclass(frozen=True)
class RuleConfig:
    max_terms: int = 3
    n_trees: int = 30
    max_depth: int = 3
    min_precision: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.max_terms < 1 or self.n_trees < 1 or self.max_depth < 1:
            raise ValueError("max_terms, n_trees and max_depth must be positive")
        if not 0.0 <= self.min_precision <= 1.0:
            raise ValueError("min_precision must lie in [0, 1]")


@dataclass(frozen=True)
class Condition:
    feature: str
    op: str
    threshold: float

    def holds(self, column) -> np.ndarray:
        return column <= self.threshold if self.op == LE else column > self.threshold

    def __str__(self):
        return f"{self.feature} {self.op} {self.threshold:.6g}"


@dataclass(frozen=True)
class Rule:
    """Conjunction of conditions with its precision / recall on the full dataset."""

    conditions: tuple
    precision: float
    recall: float
    f1: float
    low_precision: bool = False
    oob_precision: float = float("nan")
    oob_recall: float = float("nan")

    def covers(self, X, feature_names) -> np.ndarray:
        return conjunction_mask(self.conditions, X, feature_names)

    def text(self) -> str:
        return " and ".join(str(c) for c in self.conditions) or "(all instances)"

    def to_dict(self) -> dict:
        return {
            "conditions": [{"feature": c.feature, "op": c.op, "threshold": c.threshold} for c in self.conditions],
            "text": self.text(),
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "low_precision": self.low_precision,
            "oob_precision": _json_float(self.oob_precision),
            "oob_recall": _json_float(self.oob_recall),
        }


@dataclass(frozen=True)
class ClusterStats:
    cluster_id: int
    size: int
    accuracy: float
    mean_prediction: float
    positive_rate: float

    def to_dict(self) -> dict:
        return {"cluster_id": self.cluster_id, "size": self.size, "accuracy": self.accuracy,
                "mean_prediction": self.mean_prediction, "positive_rate": self.positive_rate}


@dataclass(frozen=True)
class Recommendation:
    cluster_id: int
    instance_id: int
    feature_values: dict
    attributions: tuple  # (feature, phi) sorted by |phi| descending
    phi0: float
    fx: float
    rule: Rule
    stats: ClusterStats

    def to_dict(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "instance_id": self.instance_id,
            "feature_values": self.feature_values,
            "attributions": [{"feature": f, "phi": p} for f, p in self.attributions],
            "phi0": self.phi0,
            "fx": self.fx,
            "rule": self.rule.text(),
            "stats": self.stats.to_dict(),
        }


def _json_float(v):
    return None if v is None or math.isnan(v) else float(v)


def conjunction_mask(conditions, X, feature_names) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    pos = {n: j for j, n in enumerate(feature_names)}
    mask = np.ones(X.shape[0], dtype=bool)
    for c in conditions:
        mask &= c.holds(X[:, pos[c.feature]])
    return mask


def precision_recall(covered, target) -> tuple[float, float, float]:
    covered, target = np.asarray(covered, dtype=bool), np.asarray(target, dtype=bool)
    tp = int(np.sum(covered & target))
    n_cov, n_pos = int(covered.sum()), int(target.sum())
    precision = tp / n_cov if n_cov else 0.0
    recall = tp / n_pos if n_pos else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def cluster_stats(assign, model, ds) -> list:
    """Per-cluster accuracy (threshold 0.5), mean predicted probability and true positive rate."""
    proba = np.asarray(model.predict_proba(ds.features), dtype=float)
    correct = (proba >= 0.5).astype(int) == ds.labels
    out = []
    for c in range(assign.c):
        m = assign.labels == c
        out.append(ClusterStats(c, int(m.sum()), float(correct[m].mean()), float(proba[m].mean()),
                                float(ds.labels[m].mean())))
    return out


def simplify(conditions, max_terms: int, X=None, target=None, feature_names=None) -> tuple:
    """Merge conditions on one feature into an interval, then keep at most ``max_terms`` terms.

    When pruning, the term whose removal costs the least precision on
    ``(X, target)`` goes first.
    """
    upper, lower, order = {}, {}, []
    for c in conditions:
        if c.feature not in order:
            order.append(c.feature)
        if c.op == LE:
            upper[c.feature] = min(upper.get(c.feature, np.inf), c.threshold)
        else:
            lower[c.feature] = max(lower.get(c.feature, -np.inf), c.threshold)
    merged = []
    for f in order:
        if f in lower:
            merged.append(Condition(f, GT, float(lower[f])))
        if f in upper:
            merged.append(Condition(f, LE, float(upper[f])))
    while len(merged) > max_terms:
        if X is None:
            merged.pop()
            continue
        drops = []
        for k in range(len(merged)):
            rest = merged[:k] + merged[k + 1:]
            drops.append(precision_recall(conjunction_mask(rest, X, feature_names), target)[0])
        merged.pop(int(np.argmax(drops)))  # first maximum: earliest term among equals
    return tuple(merged)


def _leaf_paths(tree, features, names):
    """Root-to-leaf condition lists for leaves whose majority class is 1."""
    t = tree.tree_
    classes = list(tree.classes_)
    if 1 not in classes:
        return []
    pos = classes.index(1)
    paths = []
    stack = [(0, ())]
    while stack:
        node, conds = stack.pop()
        left, right = t.children_left[node], t.children_right[node]
        if left == right:
            value = t.value[node][0]
            if value[pos] > value.sum() / 2:
                paths.append(conds)
            continue
        name = names[features[t.feature[node]]]
        thr = float(t.threshold[node])
        stack.append((right, conds + (Condition(name, GT, thr),)))
        stack.append((left, conds + (Condition(name, LE, thr),)))
    return paths


def rule_candidates(X, target, feature_names, cfg: RuleConfig = RuleConfig()) -> list:
    """Deduplicated candidate rules with out-of-bag scores averaged over the trees that produced them.

    Returns a list of dicts in first-seen order.
    """
    X = np.asarray(X, dtype=float)
    target = np.asarray(target, dtype=bool)
    n, d = X.shape
    k = math.ceil(math.sqrt(d))
    rng = np.random.default_rng(cfg.seed)
    seen = {}
    for _ in range(cfg.n_trees):
        boot = rng.integers(0, n, size=n)
        feats = np.sort(rng.choice(d, size=k, replace=False))
        tree_seed = int(rng.integers(0, 2 ** 31 - 1))
        yb = target[boot].astype(int)
        if yb.min() == yb.max():
            continue
        tree = DecisionTreeClassifier(criterion="gini", max_depth=cfg.max_depth, random_state=tree_seed)
        tree.fit(X[np.ix_(boot, feats)], yb)
        oob = np.setdiff1d(np.arange(n), boot)
        inbag = np.unique(boot)
        for path in _leaf_paths(tree, feats, feature_names):
            conds = simplify(path, cfg.max_terms, X[inbag], target[inbag], feature_names)
            key = tuple(sorted((c.feature, c.op, c.threshold) for c in conds))
            entry = seen.setdefault(key, {"conditions": conds, "precision": [], "recall": [], "inbag": []})
            p, r = _defined_scores(conjunction_mask(conds, X[oob], feature_names), target[oob])
            if p is not None:
                entry["precision"].append(p)
            if r is not None:
                entry["recall"].append(r)
            entry["inbag"].append(precision_recall(conjunction_mask(conds, X[inbag], feature_names), target[inbag]))
    out = []
    for entry in seen.values():
        # a rule never evaluable out of bag (e.g. it isolates an in-bag point) falls back to in-bag scores
        inbag = np.mean(entry["inbag"], axis=0)
        p = float(np.mean(entry["precision"])) if entry["precision"] else float(inbag[0])
        r = float(np.mean(entry["recall"])) if entry["recall"] else float(inbag[1])
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        out.append({"conditions": entry["conditions"], "oob_precision": p, "oob_recall": r, "oob_f1": f1})
    return out


def _defined_scores(covered, target):
    """(precision, recall) with None where the denominator is empty."""
    tp = int(np.sum(covered & target))
    n_cov, n_pos = int(covered.sum()), int(target.sum())
    return (tp / n_cov if n_cov else None), (tp / n_pos if n_pos else None)


def _pick(cands, min_precision):
    ok = [c for c in cands if c["oob_precision"] >= min_precision]
    pool = ok or cands
    best = min(range(len(pool)), key=lambda i: (-pool[i]["oob_f1"], len(pool[i]["conditions"]),
                                                -pool[i]["oob_precision"], i))
    return pool[best], not ok


def induce_rules(ds, assign, cluster_id: int, cfg: RuleConfig = RuleConfig(), return_candidates: bool = False):
    """Best rule for "in cluster ``cluster_id`` vs rest" on ``ds`` (original feature units).

    Candidates are chosen by out-of-bag F1 among those meeting
    ``min_precision``; the stored precision and recall are recomputed on the
    full dataset.
    """
    target = np.asarray(assign.labels) == cluster_id
    if not target.any():
        raise ValueError(f"cluster {cluster_id} is empty")
    cands = rule_candidates(ds.features, target, ds.feature_names, cfg)
    if cands:
        chosen, low = _pick(cands, cfg.min_precision)
        conds, oob_p, oob_r = chosen["conditions"], chosen["oob_precision"], chosen["oob_recall"]
    else:
        conds, low, oob_p, oob_r = (), True, float("nan"), float("nan")
    p, r, f1 = precision_recall(conjunction_mask(conds, ds.features, ds.feature_names), target)
    rule = Rule(conds, p, r, f1, bool(low or p < cfg.min_precision), oob_p, oob_r)
    if return_candidates:
        return rule, cands
    return rule


def medoid(xs, assign, cluster_id: int) -> int:
    """Member minimising the summed Euclidean distance to the other members (explanation space)."""
    members = np.flatnonzero(np.asarray(assign.labels) == cluster_id)
    if len(members) == 0:
        raise ValueError(f"cluster {cluster_id} is empty")
    P = xs.phi[members]
    diff = P[:, None, :] - P[None, :, :]
    totals = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)).sum(axis=1)
    ids = np.asarray(xs.ids)[members]
    best = min(range(len(members)), key=lambda i: (totals[i], ids[i]))
    return int(ids[best])


def recommend(xs, assign, ds, rules, stats) -> list:
    """One recommendation per cluster: its medoid in original units with the sorted explanation."""
    if tuple(xs.feature_names) != tuple(ds.feature_names):
        raise ValueError("explanations and dataset name different features")
    pos = {int(i): k for k, i in enumerate(xs.ids)}
    out = []
    for c in range(assign.c):
        iid = medoid(xs, assign, c)
        k = pos[iid]
        phi = xs.phi[k]
        order = sorted(range(len(phi)), key=lambda j: (-abs(phi[j]), j))
        values = {name: float(v) for name, v in zip(ds.feature_names, ds.features[k])}
        out.append(Recommendation(c, iid, values, tuple((xs.feature_names[j], float(phi[j])) for j in order),
                                  float(xs.phi0[k]), float(xs.fx[k]), rules[c], stats[c]))
    return out


@dataclass
class InsightReport:
    stats: list
    rules: list
    recommendations: list
    candidates: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "clusters": [
                {**s.to_dict(), "rule": r.to_dict(),
                 "candidates": [_candidate_dict(c) for c in cands]}
                for s, r, cands in zip(self.stats, self.rules, self.candidates or [[]] * len(self.stats))
            ],
            "recommendations": [r.to_dict() for r in self.recommendations],
        }

    def to_markdown(self) -> str:
        lines = ["| Cluster | Rules | Size | Accuracy | Mean prediction | Positive rate |",
                 "|---:|---|---:|---:|---:|---:|"]
        for s, r in zip(self.stats, self.rules):
            text = "<br>".join(str(c) for c in r.conditions) or "(all instances)"
            if r.low_precision:
                text += " (low precision)"
            lines.append(f"| {s.cluster_id + 1} | {text} | {s.size} | {100 * s.accuracy:.1f}% | "
                         f"{100 * s.mean_prediction:.2f}% | {100 * s.positive_rate:.1f}% |")
        lines.append("")
        for rec in self.recommendations:
            lines.append(f"### Cluster {rec.cluster_id + 1}: instance {rec.instance_id}")
            lines.append("")
            lines.append(f"Prediction {rec.fx:.4f} (base value {rec.phi0:.4f}). Rule: {rec.rule.text()}")
            lines.append("")
            lines.append("| Feature | Value | Attribution |")
            lines.append("|---|---:|---:|")
            for f, p in rec.attributions:
                lines.append(f"| {f} | {rec.feature_values[f]:.6g} | {p:+.4f} |")
            lines.append("")
        return "\n".join(lines)


def _candidate_dict(c) -> dict:
    return {"text": " and ".join(str(x) for x in c["conditions"]), "oob_precision": c["oob_precision"],
            "oob_recall": c["oob_recall"], "oob_f1": c["oob_f1"]}


def summarize_clusters(xs, assign, model, model_ds, raw_ds, cfg: RuleConfig = RuleConfig()) -> InsightReport:
    """Stats on the model's inputs, rules and medoid values on the original units."""
    stats = cluster_stats(assign, model, model_ds)
    rules, cands = [], []
    for c in range(assign.c):
        rule, cand = induce_rules(raw_ds, assign, c, cfg, return_candidates=True)
        rules.append(rule)
        cands.append(cand)
    return InsightReport(stats, rules, recommend(xs, assign, raw_ds, rules, stats), cands)
