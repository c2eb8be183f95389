"""End-to-end pipeline: feature selection, training, explainer search, explanations, clustering, insight.

Every stage reads its inputs from, and writes its outputs to, a workspace
directory, so stages can be rerun one at a time and a chain of single-stage
runs reproduces a full run byte for byte.

Seeds: stage ``k`` (fs=1, train=2, autoxai=3, explain=4, cluster=5,
insight=6) uses the first 32-bit word of ``SeedSequence(master,
spawn_key=(k,))`` shifted right by one bit, so each stage seed is a
non-negative 31-bit integer determined by the master seed and the stage
counter alone.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import VERSION
from .autoxai import EvalSettings, RankingTable, SearchSpace, default_search_space, run_search, select_config
from .dataset import Dataset, ScalerParams, load_csv, load_schema, saheart_paths, select_columns, standardize
from .explain import ExplanationSet, config_from_dict, explain_all
from .expcluster import ClusterAssignment, cluster_explanations, evaluation_graph
from .featsel import RANKERS, evaluate_subset, mean_accuracy, select_features
from .insight import RuleConfig, summarize_clusters
from .model import MlpConfig, TrainedModel, accuracy, train_mlp
from .xai_eval import InfidelityConfig, RobustnessConfig

log = logging.getLogger(__name__)

STAGES = ("fs", "train", "autoxai", "explain", "cluster", "insight")
FORMATS = ("json", "md", "both")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage


def stage_seed(master: int, stage: str) -> int:
    k = STAGES.index(stage) + 1
    word = np.random.SeedSequence(int(master), spawn_key=(k,)).generate_state(1, np.uint32)[0]
    return int(word) >> 1


@dataclass(frozen=True)
class PipelineConfig:
    data: str | None = None  # None selects the bundled sa-heart data
    schema: str | None = None
    standardize: bool = True
    feature_selection: dict = field(default_factory=lambda: {
        "method": "cmim", "delta": 0.005, "n_bins": 10, "n_seeds": 5, "drop": None})
    subset_explainer: dict = field(default_factory=lambda: {
        "algorithm": "SHAP", "nsamples": 581, "l1_reg": "none", "summarize": "kmeans(10)"})
    mlp: dict = field(default_factory=dict)
    search: dict = field(default_factory=lambda: {
        "nsamples": None, "l1_reg": ["none", "bic", "num_features(2)", "num_features(4)"],
        "summarize": ["full", "kmeans(10)"], "lime_num_samples": [10, 69, 500, 5000],
        "sample_size": 20, "robustness": {"epsilon": 0.1, "n_perturb": 10},
        "infidelity": {"noise_std": 0.3, "n_perturb": 100}, "weights": [0.5, 1.0]})
    selection: dict = field(default_factory=lambda: {"min_active_features": "all", "algorithms": None})
    clustering: dict = field(default_factory=lambda: {"c_max": 20, "standardize": False})
    rules: dict = field(default_factory=lambda: {"max_terms": 3, "n_trees": 30, "max_depth": 3, "min_precision": 0.6})
    seed: int = 0

    def __post_init__(self):
        fs = self.feature_selection
        if fs.get("method", "cmim") not in RANKERS:
            raise ValueError(f"unknown feature selection method {fs.get('method')!r}")
        if float(fs.get("delta", 0.005)) < 0:
            raise ValueError("feature selection delta must be nonnegative")
        if int(self.seed) < 0:
            raise ValueError("seed must be nonnegative")
        # construct once so malformed sub-configs fail early
        self.mlp_config(0)
        self.rule_config(0)
        self.eval_settings()
        config_from_dict(self.subset_explainer)

    @classmethod
    def from_dict(cls, payload: dict) -> "PipelineConfig":
        base = cls.__dataclass_fields__
        unknown = set(payload) - set(base)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        defaults = cls()
        merged = {}
        for k, v in payload.items():
            default = getattr(defaults, k)
            merged[k] = {**default, **v} if isinstance(default, dict) and isinstance(v, dict) else v
        return cls(**merged)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ValueError(f"missing config file: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)

    def mlp_config(self, seed: int) -> MlpConfig:
        return MlpConfig(**{**self.mlp, "seed": seed})

    def rule_config(self, seed: int) -> RuleConfig:
        return RuleConfig(**{**self.rules, "seed": seed})

    def eval_settings(self) -> EvalSettings:
        s = self.search
        return EvalSettings(int(s.get("sample_size", 20)), RobustnessConfig(**s.get("robustness", {})),
                            InfidelityConfig(**s.get("infidelity", {})))

    def search_space(self, d: int) -> SearchSpace:
        s = self.search
        base = default_search_space(d)
        return SearchSpace(tuple(s["nsamples"]) if s.get("nsamples") else base.nsamples,
                           tuple(s.get("l1_reg", base.l1_reg)), tuple(s.get("summarize", base.summarize)),
                           tuple(s.get("lime_num_samples", base.lime_num_samples)))

    def with_seed(self, seed: int | None) -> "PipelineConfig":
        return self if seed is None else replace(self, seed=int(seed))


# -- workspace io ---------------------------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _write(ws: Path, name: str, text: str) -> None:
    ws.mkdir(parents=True, exist_ok=True)
    (ws / name).write_text(text, encoding="utf-8")


def _read(ws: Path, name: str, stage: str, upstream: str) -> str:
    path = ws / name
    if not path.is_file():
        raise StageError(stage, f"missing {name} in {ws}: run {upstream} first")
    return path.read_text(encoding="utf-8")


def _load_source(cfg: PipelineConfig) -> Dataset:
    if cfg.data is None:
        data, schema = saheart_paths()
    else:
        if not cfg.data:
            raise ValueError("missing data file: empty data path")
        if not cfg.schema:
            raise ValueError("a schema path is required with a custom data file")
        data, schema = Path(cfg.data), Path(cfg.schema)
    return load_csv(data, load_schema(schema))


def _snapshot(ws: Path, stage: str):
    """(raw dataset, model-input dataset) restricted to the selected features."""
    snap = json.loads(_read(ws, "dataset.json", stage, "fs"))
    raw = Dataset(np.array(snap["features"], dtype=float), snap["feature_names"], snap["labels"])
    if snap["scaler"] is None:
        return raw, raw
    scaler = ScalerParams(np.array(snap["scaler"]["mean"]), np.array(snap["scaler"]["std"]))
    return raw, raw.with_features(scaler.transform(raw.features))


def _model(ws: Path, stage: str) -> TrainedModel:
    return TrainedModel.from_dict(json.loads(_read(ws, "model.json", stage, "train")))


# -- stages ---------------------------------------------------------------------------------------

def stage_fs(cfg: PipelineConfig, ws: Path) -> dict:
    seed = stage_seed(cfg.seed, "fs")
    source = _load_source(cfg)
    if cfg.standardize:
        model_ds, scaler = standardize(source)
    else:
        model_ds, scaler = source, None
    fs = cfg.feature_selection
    mlp_cfg = cfg.mlp_config(seed)
    method, delta = fs.get("method", "cmim"), float(fs.get("delta", 0.005))
    n_bins, n_seeds = int(fs.get("n_bins", 10)), int(fs.get("n_seeds", 5))
    if fs.get("drop") is not None:
        drop = set(fs["drop"])
        subset = [n for n in model_ds.feature_names if n not in drop]
        if not drop <= set(model_ds.feature_names) or not subset:
            raise ValueError(f"drop list {sorted(drop)} names unknown features or leaves none")
        ranking = RANKERS[method](model_ds, n_bins)
        trace = [(model_ds.feature_names, mean_accuracy(model_ds, model_ds.feature_names, mlp_cfg, n_seeds)),
                 (tuple(subset), mean_accuracy(model_ds, subset, mlp_cfg, n_seeds))]
        policy = "fixed drop list"
    else:
        subset, ranking, trace = select_features(model_ds, method, delta, mlp_cfg, n_bins, n_seeds)
        policy = "drop-if-no-loss"
    full_model = train_mlp(model_ds, mlp_cfg)
    sub_cfg = config_from_dict({**cfg.subset_explainer, "seed": seed})
    full_expl = explain_all(full_model, model_ds, sub_cfg)
    report = evaluate_subset(model_ds, subset, full_model, full_expl, mlp_cfg, sub_cfg)
    cols = [model_ds.feature_names.index(n) for n in subset]
    raw = select_columns(source, subset)
    snap = {
        "feature_names": list(raw.feature_names),
        "features": raw.features.tolist(),
        "labels": raw.labels.tolist(),
        "scaler": None if scaler is None else {"mean": scaler.mean[cols].tolist(), "std": scaler.std[cols].tolist()},
    }
    out = {
        "seed": seed,
        "method": method,
        "policy": policy,
        "delta": delta,
        "ranking": ranking.to_dict(),
        "trace": [{"subset": list(s), "mean_accuracy": a} for s, a in trace],
        "all_features": list(source.feature_names),
        "selected": list(subset),
        "dropped": [n for n in source.feature_names if n not in subset],
        "full_accuracy": accuracy(full_model, model_ds),
        "subset_report": report.to_dict(),
    }
    _write(ws, "dataset.json", _dump(snap))
    _write(ws, "fs.json", _dump(out))
    return out


def stage_train(cfg: PipelineConfig, ws: Path) -> dict:
    seed = stage_seed(cfg.seed, "train")
    _, ds = _snapshot(ws, "train")
    model = train_mlp(ds, cfg.mlp_config(seed))
    out = {"seed": seed, "accuracy": accuracy(model, ds), "final_loss": model.loss_trace[-1],
           "initial_loss": model.initial_loss, "config": asdict(model.config)}
    _write(ws, "model.json", json.dumps(model.to_dict()) + "\n")
    _write(ws, "train.json", _dump(out))
    return out


def stage_autoxai(cfg: PipelineConfig, ws: Path) -> dict:
    seed = stage_seed(cfg.seed, "autoxai")
    _, ds = _snapshot(ws, "autoxai")
    model = _model(ws, "autoxai")
    space = cfg.search_space(ds.d)
    table = run_search(model, ds, space, cfg.eval_settings(), tuple(cfg.search.get("weights", (0.5, 1.0))), seed)
    sel = cfg.selection
    algorithms = sel.get("algorithms")
    min_active = sel.get("min_active_features")
    if min_active == "all":
        min_active = ds.d
    chosen = select_config(table, min_active, None if algorithms is None else tuple(algorithms))
    out = {"seed": seed, "space": space.to_dict(), "settings": cfg.eval_settings().to_dict(),
           "table": table.to_dict(), "chosen": chosen.to_dict()}
    _write(ws, "ranking.json", _dump(out))
    return out


def stage_explain(cfg: PipelineConfig, ws: Path) -> dict:
    seed = stage_seed(cfg.seed, "explain")
    _, ds = _snapshot(ws, "explain")
    model = _model(ws, "explain")
    ranking = json.loads(_read(ws, "ranking.json", "explain", "autoxai"))
    ecfg = config_from_dict({**ranking["chosen"]["config"], "seed": seed})
    xs = explain_all(model, ds, ecfg)
    _write(ws, "explanations.csv", xs.to_csv())
    out = {"seed": seed, "config": ecfg.to_dict(), "n": len(xs)}
    _write(ws, "explain.json", _dump(out))
    return out


def stage_cluster(cfg: PipelineConfig, ws: Path) -> dict:
    xs = ExplanationSet.from_csv(_read(ws, "explanations.csv", "cluster", "explain"))
    c_max = int(cfg.clustering.get("c_max", 20))
    dg, assign, c = cluster_explanations(xs, c_max, bool(cfg.clustering.get("standardize", False)))
    ks, heights = evaluation_graph(dg)
    _write(ws, "dendrogram.json", dg.to_json() + "\n")
    _write(ws, "evaluation_graph.csv", "k,height\n" + "".join(f"{k},{h!r}\n" for k, h in zip(ks, heights)))
    out = {"seed": stage_seed(cfg.seed, "cluster"), "c": c, "labels": assign.labels.tolist(),
           "sizes": assign.sizes().tolist(), "c_max": c_max,
           "evaluation_graph": [{"k": int(k), "height": float(h)} for k, h in zip(ks, heights) if k <= c_max]}
    _write(ws, "clusters.json", _dump(out))
    return out


def stage_insight(cfg: PipelineConfig, ws: Path, fmt: str = "both") -> dict:
    seed = stage_seed(cfg.seed, "insight")
    raw, ds = _snapshot(ws, "insight")
    model = _model(ws, "insight")
    xs = ExplanationSet.from_csv(_read(ws, "explanations.csv", "insight", "explain"))
    clusters = json.loads(_read(ws, "clusters.json", "insight", "cluster"))
    _read(ws, "dendrogram.json", "insight", "cluster")
    assign = ClusterAssignment(np.array(clusters["labels"]), clusters["c"])
    insight = summarize_clusters(xs, assign, model, ds, raw, cfg.rule_config(seed))
    _write(ws, "insight.json", _dump({"seed": seed, **insight.to_dict()}))
    report = assemble_report(cfg, ws)
    if fmt in ("json", "both"):
        _write(ws, "report.json", _dump(report))
    if fmt in ("md", "both"):
        _write(ws, "report.md", report_markdown(report, insight.to_markdown()))
    return report


STAGE_FUNCS = {"fs": stage_fs, "train": stage_train, "autoxai": stage_autoxai, "explain": stage_explain,
               "cluster": stage_cluster, "insight": stage_insight}


def run_stage(stage: str, cfg: PipelineConfig, ws, fmt: str = "both") -> dict:
    ws = Path(ws)
    log.info("stage %s", stage)
    try:
        if stage == "insight":
            return stage_insight(cfg, ws, fmt)
        return STAGE_FUNCS[stage](cfg, ws)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, exc) from exc


def run_pipeline(cfg: PipelineConfig, workspace, fmt: str = "both") -> dict:
    """Run every stage in order and return the assembled report."""
    report = None
    for stage in STAGES:
        report = run_stage(stage, cfg, workspace, fmt)
    return report


# -- report ---------------------------------------------------------------------------------------

def _versions() -> dict:
    import scipy
    import sklearn

    return {"xkep": VERSION, "numpy": np.__version__, "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


def assemble_report(cfg: PipelineConfig, ws: Path) -> dict:
    fs = json.loads(_read(ws, "fs.json", "insight", "fs"))
    train = json.loads(_read(ws, "train.json", "insight", "train"))
    ranking = json.loads(_read(ws, "ranking.json", "insight", "autoxai"))
    expl = json.loads(_read(ws, "explain.json", "insight", "explain"))
    clusters = json.loads(_read(ws, "clusters.json", "insight", "cluster"))
    insight = json.loads(_read(ws, "insight.json", "insight", "insight"))
    snap = json.loads(_read(ws, "dataset.json", "insight", "fs"))
    labels = snap["labels"]
    return {
        "versions": _versions(),
        "config": cfg.to_dict(),
        "seeds": {"master": cfg.seed, **{s: stage_seed(cfg.seed, s) for s in STAGES}},
        "dataset": {"n": len(labels), "positives": int(sum(labels)), "all_features": fs["all_features"],
                    "standardized": cfg.standardize},
        "feature_selection": fs,
        "model": train,
        "autoxai": {"space": ranking["space"], "settings": ranking["settings"], "table": ranking["table"],
                    "chosen": ranking["chosen"]},
        "explanations": expl,
        "clustering": {k: clusters[k] for k in ("c", "sizes", "c_max", "evaluation_graph")},
        "insight": {k: v for k, v in insight.items() if k != "seed"},
    }


def report_markdown(report: dict, insight_md: str) -> str:
    fs, model, ax = report["feature_selection"], report["model"], report["autoxai"]
    table = RankingTable.from_dict(ax["table"])
    chosen = ax["chosen"]
    sub = fs["subset_report"]
    lines = [
        "# Explanation report",
        "",
        f"Data: {report['dataset']['n']} instances, {report['dataset']['positives']} positive. Master seed {report['seeds']['master']}.",
        "",
        "## Feature selection",
        "",
        f"Ranking ({fs['method']}): {', '.join(fs['ranking']['names'])}.",
        f"Kept: {', '.join(fs['selected'])}. Dropped: {', '.join(fs['dropped']) or 'none'} ({fs['policy']}).",
        f"Subset accuracy {sub['accuracy']:.4f}, Kendall tau of influence ranks vs all features "
        f"{sub['kendall_tau_vs_full']:.3f}, mean influence change {sub['influence_change']:.4g}.",
        "",
        "## Model",
        "",
        f"Resubstitution accuracy {model['accuracy']:.4f}.",
        "",
        "## Explainer ranking",
        "",
        table.to_markdown(),
        "",
        f"Chosen: {chosen['algorithm']} {chosen['hyperparameters']} (rank {chosen['rank']}).",
        "",
        "## Clusters",
        "",
        f"{report['clustering']['c']} clusters, sizes {report['clustering']['sizes']}.",
        "",
        insight_md,
    ]
    return "\n".join(lines).rstrip() + "\n"
