"""Command-line entry point: ``tnpar {simulate,train,eval,sweep}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .experiment import load_config, run_sweep, step_eval, step_simulate, step_train
from .training import MODES, TrainingDiverged

log = logging.getLogger("tnpar")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="experiment config JSON (defaults when omitted)")
    p.add_argument("--out", help="output directory (falls back to the config's 'out')")
    p.add_argument("--seed", type=int, help="override the config's seed list with a single seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tnpar", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    _common(p)

    p = sub.add_parser("train", help="fit the model and write the posterior graph")
    _common(p)
    p.add_argument("--events", help="events CSV (overrides config)")
    p.add_argument("--topology", help="topology CSV (overrides config)")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--threshold", type=float)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("eval", help="score a predicted graph against the truth")
    p.add_argument("--pred", required=True, help="predicted graph JSON")
    p.add_argument("--truth", help="ground-truth graph JSON (overrides config)")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--threshold", type=float, help="re-threshold the stored posterior")

    p = sub.add_parser("sweep", help="simulate, train and evaluate over a parameter grid and seeds")
    _common(p)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--threshold", type=float)
    return parser


def _resolve(args):
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "threshold", None) is not None:
        changes["threshold"] = args.threshold
    for name in ("events", "topology", "truth"):
        if getattr(args, name, None) is not None:
            changes[name] = str(Path(getattr(args, name)))
    train_changes = {}
    if getattr(args, "mode", None) is not None:
        train_changes["mode"] = args.mode
    if getattr(args, "epochs", None) is not None:
        train_changes["epochs"] = args.epochs
    if train_changes:
        changes["train"] = dataclasses.replace(cfg.train, **train_changes)
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = [args.seed]
    cfg = dataclasses.replace(cfg, **changes)
    out = args.out if args.out is not None else cfg.out
    if out is None:
        raise ValueError("no output directory: pass --out or set 'out' in the config")
    return cfg, Path(out)


def cmd_simulate(args) -> int:
    cfg, out = _resolve(args)
    summary = step_simulate(cfg.for_seed(cfg.seeds[0]), out)
    log.info("simulate: %s", json.dumps(summary, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    cfg, out = _resolve(args)
    cfg = cfg.for_seed(cfg.seeds[0])
    if cfg.events is None or cfg.topology is None:
        raise ValueError("train needs --events and --topology (or 'events'/'topology' in the config)")
    summary = step_train(cfg, cfg.events, cfg.topology, out)
    log.info("train: %s", json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    cfg, out = _resolve(args)
    if cfg.truth is None:
        raise ValueError("eval needs --truth (or 'truth' in the config)")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.dumps())
    rid, report = step_eval(args.pred, cfg.truth, out, args.threshold)
    log.info("eval %s: %s", rid, json.dumps(dataclasses.asdict(report), sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    cfg, out = _resolve(args)
    rows, _ = run_sweep(cfg, out)
    failed = [r for r in rows if r["status"] != "ok"]
    for r in failed:
        log.error("run value=%s seed=%s %s", r["value"], r["seed"], r["status"])
    log.info("sweep: %d runs, %d failed", len(rows), len(failed))
    return 1 if failed else 0


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)  # bound per call so redirected stderr is honoured
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.handlers[:] = [handler]
    log.propagate = False
    log.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    try:
        return COMMANDS[args.command](args)
    except TrainingDiverged as exc:
        log.error("training diverged (last finite epoch %d): %s", exc.last_finite_epoch, exc)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
    return 1


if __name__ == "__main__":
    sys.exit(main())
