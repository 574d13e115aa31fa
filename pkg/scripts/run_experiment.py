"""Run a sweep config and print the aggregate table next to trivial baselines.

    python scripts/run_experiment.py scripts/desk_modes.json [--out DIR]

Baseline F1 is computed on the same simulated truths: the empty graph predicts
nothing, the complete graph predicts every ordered pair of distinct types.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from tnpar.experiment import load_config, run_sweep
from tnpar.graph import CausalGraph, read_graph_json
from tnpar.metrics import prf


def baseline_f1(out: Path) -> dict[str, float]:
    scores = {"empty": [], "complete": []}
    for truth_file in sorted(out.glob("runs/*/data/truth_graph.json")):
        truth, _ = read_graph_json(truth_file)
        n = truth.type_count
        scores["empty"].append(prf(CausalGraph(n), truth)[2])
        scores["complete"].append(prf(CausalGraph.from_adjacency(1 - np.eye(n, dtype=int)), truth)[2])
    return {k: float(np.mean(v)) if v else float("nan") for k, v in scores.items()}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    cfg = load_config(args.config)
    out = Path(args.out or cfg.out or "runs/experiment")
    rows, agg = run_sweep(cfg, out)
    param = cfg.sweep.param if cfg.sweep else "-"
    print(f"{param:>24} {'ok':>4} {'f1':>13} {'shd':>13} {'sid':>13}")
    for a in agg:
        cells = " ".join(f"{a[f'{m}_mean']:6.3f}±{a[f'{m}_std']:<6.3f}" for m in ("f1", "shd", "sid"))
        print(f"{a['value']:>24} {a['ok']:>2}/{a['runs']:<1} {cells}")
    for name, f1 in baseline_f1(out).items():
        print(f"{name + ' baseline':>24} {'':>4} {f1:6.3f}")
    print(f"results in {out}")
    return 0 if all(r["status"] == "ok" for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
