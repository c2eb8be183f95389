"""Command line entry point: ``xkep run|fs|train|autoxai|explain|cluster|insight``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources

from .pipeline import FORMATS, STAGES, PipelineConfig, StageError, run_pipeline, run_stage


def default_config_text() -> str:
    return (resources.files("xkep") / "data" / "default_config.json").read_text(encoding="utf-8")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xkep", description="Explain, cluster and summarize a binary classifier.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", *STAGES):
        sp = sub.add_parser(name, help="full pipeline" if name == "run" else f"run the {name} stage only")
        sp.add_argument("--config", help="pipeline config (JSON); defaults to the bundled sa-heart config")
        sp.add_argument("--workspace", required=True, help="directory holding stage artifacts")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--format", choices=FORMATS, default="both", help="report format")
        sp.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("default-config", help="print the bundled default config")
    return p


def _summary(command: str, result: dict, fmt: str) -> str:
    if command in ("run", "insight"):
        c = result["clustering"]
        text = {"clusters": c["c"], "sizes": c["sizes"], "accuracy": result["model"]["accuracy"],
                "explainer": result["autoxai"]["chosen"]["hyperparameters"]}
    else:
        text = {k: v for k, v in result.items() if k not in ("labels", "table", "trace", "evaluation_graph")}
    if fmt == "md":
        return "\n".join(f"- {k}: {v}" for k, v in text.items())
    return json.dumps(text)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "default-config":
        sys.stdout.write(default_config_text())
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            cfg = PipelineConfig.load(args.config)
        else:
            cfg = PipelineConfig.from_dict(json.loads(default_config_text()))
        cfg = cfg.with_seed(args.seed)
    except (ValueError, TypeError) as exc:
        print(f"xkep: [config] {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "run":
            result = run_pipeline(cfg, args.workspace, args.format)
        else:
            result = run_stage(args.command, cfg, args.workspace, args.format)
    except StageError as exc:
        print(f"xkep: {exc}", file=sys.stderr)
        return 1
    print(_summary(args.command, result, args.format))
    return 0


if __name__ == "__main__":
    sys.exit(main())
