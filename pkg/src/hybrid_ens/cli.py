"""Command-line entry point: ``hybrid-ens <command> [options]``.

Successful commands print a JSON summary on stdout and exit 0. Failures
print ``{"error": ..., "message": ..., "command": ...}`` on stderr and exit
nonzero (2 for configuration problems, 3 for missing upstream artifacts,
1 otherwise). ``ENS_LOG`` sets the log level (default WARNING).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .blocks import ConfigurationError
from .config import SCHEMA, RunConfig
from .pipeline import Pipeline, PipelineError
from .unet import STAGE_IDS, CodeError, code_from_json

EXIT_CONFIG, EXIT_ARTIFACT, EXIT_OTHER = 2, 3, 1


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="run configuration (JSON)")
    p.add_argument("--seed", type=int, help="override the configuration seed")
    p.add_argument("--out", type=Path, help="output root; the run directory is <out>/run-<config hash>")
    p.add_argument("--workers", type=int, default=1, help="parallel workers for distillation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybrid-ens", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("gen-data", help="generate and cache the train/val/test datasets"))
    _common(sub.add_parser("train-teacher", help="train the all-transformer network"))

    p = sub.add_parser("distill", help="distil every surrogate stage from the teacher")
    _common(p)
    p.add_argument("--stages", nargs="+", choices=STAGE_IDS, help="restrict to these stages")
    p.add_argument("--no-equal-split", action="store_true", help="skip the half-stage surrogates")

    p = sub.add_parser("search", help="run the Pareto search over architecture codes")
    _common(p)
    p.add_argument("--budget", type=int, help="override the evaluation budget")

    p = sub.add_parser("finetune", help="fine-tune one hybrid end to end")
    _common(p)
    p.add_argument("--code", help="architecture code as a JSON array (default: the knee candidate)")
    p.add_argument("--knee-index", type=int, default=0, help="which knee candidate to use")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--no-distill", action="store_true", help="same code, surrogates at initialisation")
    mode.add_argument("--random-arch", action="store_true", help="a uniformly random code")
    mode.add_argument("--equal-split", action="store_true", help="half teacher, half surrogate in every stage")
    p.add_argument("--draw", type=int, default=0, help="index of the random code (with --random-arch)")
    p.add_argument("--label", help="name for the output files")

    p = sub.add_parser("evaluate", help="PSNR/SSIM of a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", default="teacher", help="'teacher' or a fine-tune label")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))

    p = sub.add_parser("erf", help="effective receptive field of a distilled stage and its twin")
    _common(p)
    p.add_argument("--stage", required=True, choices=STAGE_IDS)
    p.add_argument("--variant", type=int, default=1)

    p = sub.add_parser("report", help="consolidated JSON plus gnuplot data files")
    _common(p)
    p.add_argument("--run-dir", type=Path, help="existing run directory (overrides --config/--out)")

    sub.add_parser("schema", help="print the configuration JSON schema")
    return parser


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=args.seed)


def _pipeline(args) -> Pipeline:
    if getattr(args, "run_dir", None) is not None:
        cfg_path = args.run_dir / "config.json"
        if not cfg_path.exists():
            raise PipelineError(f"{cfg_path} not found")
        cfg = RunConfig.load(cfg_path)
        return Pipeline(cfg, args.run_dir.parent, workers=args.workers)
    cfg = _config(args)
    return Pipeline(cfg, args.out, workers=args.workers)


def run(args) -> dict:
    if args.command == "schema":
        return SCHEMA
    pipe = _pipeline(args)
    cmd = args.command
    if cmd == "gen-data":
        out = pipe.gen_data()
    elif cmd == "train-teacher":
        out = pipe.train_teacher()
    elif cmd == "distill":
        out = pipe.distill(args.stages, equal_split=not args.no_equal_split)
    elif cmd == "search":
        out = pipe.search(args.budget)
    elif cmd == "finetune":
        mode = ("no_distill" if args.no_distill else "random_arch" if args.random_arch
                else "equal_split" if args.equal_split else "hybrid")
        code = None
        if args.code is not None:
            code = code_from_json(args.code, pipe.cfg.specs)
        elif mode in ("hybrid", "no_distill"):
            knee = pipe.knee_codes()
            if not 0 <= args.knee_index < len(knee):
                raise ConfigurationError(f"knee index {args.knee_index} outside 0..{len(knee) - 1}")
            code = knee[args.knee_index]
        out = pipe.finetune(code, mode, draw=args.draw, label=args.label)
    elif cmd == "evaluate":
        out = pipe.evaluate(args.checkpoint, args.split)
    elif cmd == "erf":
        out = {k: v for k, v in pipe.erf(args.stage, args.variant).items() if not k.startswith("map_")}
    elif cmd == "report":
        rep = pipe.report()
        out = {"run": rep["run"], "plots": rep["plots"], "parts": sorted(rep["parts"])}
    else:  # pragma: no cover - argparse rejects unknown commands
        raise ConfigurationError(f"unknown command {cmd}")
    return {"command": cmd, "run_dir": str(pipe.dir), "config_hash": pipe.hash, "result": out}


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def main(argv=None) -> int:
    level = os.environ.get("ENS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        payload = run(args)
    except Exception as exc:  # surfaced as machine-readable JSON
        if isinstance(exc, (ConfigurationError, CodeError)):
            code = EXIT_CONFIG
        elif isinstance(exc, (PipelineError, FileNotFoundError)):
            code = EXIT_ARTIFACT
        else:
            logging.getLogger(__name__).debug("command failed", exc_info=True)
            code = EXIT_OTHER
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return code
    print(json.dumps(payload, indent=1, sort_keys=True, default=_default))
    return 0


if __name__ == "__main__":
    sys.exit(main())
