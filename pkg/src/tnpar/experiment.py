"""Experiment configuration, single-run pipeline steps and sweep aggregation.

Config files are JSON::

    {
      "sim":   {SimConfig fields except delta and seed},
      "train": {TrainConfig fields except delta, omega, k_max and seed},
      "delta": 2.0, "omega": 3, "k_max": 1, "threshold": 0.5, "seeds": [0],
      "events": null, "topology": null, "truth": null, "out": null,
      "sweep": {"param": "sim.alpha_range", "values": [[0, 0], [0.02, 0.03]]}
    }

Every key is optional; unknown keys are rejected. ``delta``, ``omega`` and
``k_max`` live at the top level only and are copied into both sections.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import extract_graph, geodesic_masks, read_graph_json, read_topology_csv, write_graph_json
from .ingest import discretize, read_events_csv
from .metrics import REPORT_FIELDS, append_report_row, evaluate
from .nn import adam_to_dict, net_to_dict
from .simulator import SimConfig, simulate, write_simulation
from .training import TrainConfig, train

_SHARED = ("delta", "omega", "k_max")
_SIM_RESERVED = {"delta", "seed"}
_TRAIN_RESERVED = {"delta", "omega", "k_max", "seed"}
_PATHS = ("events", "topology", "truth", "out")
LOG_FIELDS = ("epoch", "reconstruction", "kl", "acyclicity", "sparsity", "total")


@dataclass
class SweepSpec:
    param: str | None = None  # "sim.<field>", "train.<field>", or None for seeds only
    values: list = field(default_factory=lambda: [None])


@dataclass
class ExperimentConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    delta: float = 2.0
    omega: int = 3
    k_max: int = 1
    threshold: float = 0.5
    seeds: list[int] = field(default_factory=lambda: [0])
    events: str | None = None
    topology: str | None = None
    truth: str | None = None
    out: str | None = None
    sweep: SweepSpec | None = None

    def __post_init__(self):
        errors = []
        if not self.seeds:
            errors.append("seeds: must be non-empty")
        if not 0 < self.threshold < 1:
            errors.append(f"threshold: must lie in (0, 1) (got {self.threshold})")
        if errors:
            raise ValueError("invalid experiment config: " + "; ".join(errors))
        self.sim = dataclasses.replace(self.sim, delta=float(self.delta))
        self.train = dataclasses.replace(self.train, delta=float(self.delta), omega=self.omega, k_max=self.k_max)

    def for_seed(self, seed: int) -> "ExperimentConfig":
        cfg = dataclasses.replace(self, seeds=[int(seed)])
        cfg.sim = dataclasses.replace(cfg.sim, seed=int(seed))
        cfg.train = dataclasses.replace(cfg.train, seed=int(seed))
        return cfg

    def to_dict(self) -> dict:
        sim = {k: v for k, v in dataclasses.asdict(self.sim).items() if k not in _SIM_RESERVED}
        tr = {k: v for k, v in dataclasses.asdict(self.train).items() if k not in _TRAIN_RESERVED}
        out = {"sim": _jsonable(sim), "train": _jsonable(tr)}
        for name in (*_SHARED, "threshold", "seeds", *_PATHS):
            out[name] = _jsonable(getattr(self, name))
        out["sweep"] = None if self.sweep is None else _jsonable(dataclasses.asdict(self.sweep))
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _check_keys(section: str, given: dict, allowed) -> list[str]:
    return [f"{section}{k}: unknown key" for k in sorted(set(given) - set(allowed))]


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object")
    sim_fields = {f.name for f in dataclasses.fields(SimConfig)} - _SIM_RESERVED
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)} - _TRAIN_RESERVED
    top = {"sim", "train", "threshold", "seeds", "sweep", *_SHARED, *_PATHS}
    errors = _check_keys("", doc, top)
    sim_doc, train_doc = doc.get("sim", {}) or {}, doc.get("train", {}) or {}
    errors += _check_keys("sim.", sim_doc, sim_fields)
    errors += _check_keys("train.", train_doc, train_fields)
    sweep = None
    if doc.get("sweep") is not None:
        errors += _check_keys("sweep.", doc["sweep"], {"param", "values"})
        sweep = SweepSpec(doc["sweep"].get("param"), list(doc["sweep"].get("values", [None])))
        if sweep.param is not None:
            section, _, name = sweep.param.partition(".")
            allowed = {"sim": sim_fields, "train": train_fields}.get(section, set())
            if name not in allowed:
                errors.append(f"sweep.param: {sweep.param!r} is not a sim.* or train.* field")
        if not sweep.values:
            errors.append("sweep.values: must be non-empty")
    if errors:
        raise ValueError("invalid experiment config: " + "; ".join(errors))
    shared = {k: doc[k] for k in _SHARED if k in doc}
    rest = {k: doc[k] for k in ("threshold", "seeds", *_PATHS) if k in doc}
    if "seeds" in rest:
        rest["seeds"] = [int(s) for s in rest["seeds"]]
    delta = float(shared.get("delta", 2.0))
    sim = SimConfig(**{**sim_doc, "delta": delta})
    tr = TrainConfig(**{**train_doc, "delta": delta, "omega": shared.get("omega", 3),
                        "k_max": shared.get("k_max", 1)})
    return ExperimentConfig(sim=sim, train=tr, sweep=sweep, **shared, **rest)


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
    return config_from_dict(doc)


def with_param(cfg: ExperimentConfig, param: str | None, value) -> ExperimentConfig:
    if param is None:
        return cfg
    section, _, name = param.partition(".")
    doc = cfg.to_dict()
    doc[section][name] = value
    doc["sweep"] = None
    return config_from_dict(doc)


def run_id(cfg: ExperimentConfig) -> str:
    """Content hash of the resolved config; the seed is part of it."""
    doc = cfg.to_dict()
    doc.pop("out")
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


# -- pipeline steps --------------------------------------------------------------------


def step_simulate(cfg: ExperimentConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.dumps())
    return write_simulation(simulate(cfg.sim), cfg.sim, out)


def _horizon(cfg: ExperimentConfig, events) -> float:
    last = max((e.timestamp for e in events), default=0.0)
    base = cfg.sim.horizon if cfg.sim.target_events is None else 0.0
    h = max(base, last, cfg.delta)
    return math.ceil(h / cfg.delta) * cfg.delta


def step_train(cfg: ExperimentConfig, events_path, topology_path, out: Path) -> dict:
    """Train on files and write graph.json, checkpoint.json, train_log.csv and config.json."""
    events = read_events_csv(events_path)
    topology = read_topology_csv(topology_path, cfg.sim.node_count)
    if topology.node_count != cfg.sim.node_count:
        raise ValueError(f"{topology_path}: {topology.node_count} nodes, config says {cfg.sim.node_count}")
    tensor = discretize(events, cfg.delta, _horizon(cfg, events), cfg.sim.type_count, cfg.sim.node_count)
    masks = geodesic_masks(topology, cfg.k_max)
    result = train(tensor, masks, cfg.train)
    graph, _ = extract_graph(result.posterior, cfg.threshold)
    rid = run_id(cfg)

    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.dumps())
    write_graph_json(out / "graph.json", graph, result.posterior, run_id=rid, mode=cfg.train.mode,
                     threshold=cfg.threshold)
    ckpt = {
        "run_id": rid,
        "encoder": net_to_dict(result.model.encoder),
        "decoder": net_to_dict(result.model.decoder),
        "encoder_optimizer": adam_to_dict(result.enc_opt),
        "decoder_optimizer": adam_to_dict(result.dec_opt),
        "hyperparameters": _jsonable(dataclasses.asdict(result.config)),
    }
    (out / "checkpoint.json").write_text(json.dumps(ckpt) + "\n")
    with open(out / "train_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
        for row in result.log:
            writer.writerow([row["epoch"]] + [repr(float(row[k])) for k in LOG_FIELDS[1:]])
    return {"run_id": rid, "edges": len(graph.edges), "epochs": len(result.log)}


def step_eval(pred_path, truth_path, out: Path, threshold: float | None = None):
    pred, posterior = read_graph_json(pred_path)
    truth, _ = read_graph_json(truth_path)
    if pred.type_count != truth.type_count:
        raise ValueError(f"type count mismatch: prediction has {pred.type_count}, truth has {truth.type_count}")
    if threshold is not None and posterior is not None:
        pred, _ = extract_graph(posterior, threshold)
    report = evaluate(pred, truth, None if posterior is None else posterior.values)
    doc = json.loads(Path(pred_path).read_text())
    rid = doc.get("run_id") or hashlib.sha256(Path(pred_path).read_bytes()).hexdigest()[:12]
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps({"run_id": rid, **dataclasses.asdict(report)}, indent=1) + "\n")
    append_report_row(out / "metrics.csv", rid, report)
    return rid, report


# -- sweeps ----------------------------------------------------------------------------

RUN_FIELDS = ("value", "seed", "run_id", "status", *REPORT_FIELDS[1:])
METRICS = ("precision", "recall", "f1", "shd", "sid")


def value_label(value) -> str:
    return "-" if value is None else json.dumps(value, separators=(",", ":"))


def aggregate(rows: list[dict], values: list) -> list[dict]:
    """Mean and sample standard deviation (ddof=1, 0 for a single run) per swept value."""
    out = []
    for value in values:
        label = value_label(value)
        ok = [r for r in rows if r["value"] == label and r["status"] == "ok"]
        agg = {"value": label, "runs": sum(r["value"] == label for r in rows), "ok": len(ok)}
        for m in METRICS:
            xs = np.array([float(r[m]) for r in ok])
            agg[f"{m}_mean"] = float(xs.mean()) if len(xs) else float("nan")
            agg[f"{m}_std"] = float(xs.std(ddof=1)) if len(xs) > 1 else 0.0 if len(xs) else float("nan")
        out.append(agg)
    return out


def run_sweep(cfg: ExperimentConfig, out: Path) -> tuple[list[dict], list[dict]]:
    spec = cfg.sweep or SweepSpec()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.dumps())
    rows = []
    for value in spec.values:
        for seed in cfg.seeds:
            row = {"value": value_label(value), "seed": seed, "run_id": "", "status": "ok"}
            row.update({k: "" for k in REPORT_FIELDS[1:]})
            try:
                run_cfg = with_param(cfg, spec.param, value).for_seed(seed)
                rid = run_id(run_cfg)
                row["run_id"] = rid
                rdir = out / "runs" / rid
                step_simulate(run_cfg, rdir / "data")
                step_train(run_cfg, rdir / "data" / "events.csv", rdir / "data" / "topology.csv", rdir / "model")
                _, report = step_eval(rdir / "model" / "graph.json", rdir / "data" / "truth_graph.json",
                                      rdir / "eval")
                row.update(dataclasses.asdict(report))
            except Exception as exc:  # a failed run is recorded, the sweep goes on
                row["status"] = f"failed: {type(exc).__name__}: {exc}"
            rows.append(row)
    with open(out / "runs.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, RUN_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    agg = aggregate(rows, spec.values)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, list(agg[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(agg)
    for m in METRICS:
        xlabel = spec.param or "seeds"
        means = [a[f"{m}_mean"] for a in agg]
        stds = [a[f"{m}_std"] for a in agg]
        (out / f"{m}.svg").write_text(svg_line_plot([a["value"] for a in agg], means, stds, xlabel, m))
    return rows, agg


# -- plotting --------------------------------------------------------------------------


def svg_line_plot(labels, means, stds, xlabel, ylabel, width=480, height=320) -> str:
    """Line plot with error bars over categorical x positions."""
    left, right, top, bottom = 60, 20, 30, 50
    pw, ph = width - left - right, height - top - bottom
    finite = [(m, s) for m, s in zip(means, stds) if np.isfinite(m)]
    lo = min((m - s for m, s in finite), default=0.0)
    hi = max((m + s for m, s in finite), default=1.0)
    lo, hi = min(lo, 0.0), hi if hi > lo else lo + 1.0
    n = len(labels)

    def x(i):
        return left + (pw * (i + 0.5) / n)

    def y(v):
        return top + ph * (1 - (v - lo) / (hi - lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        parts.append(f'<line x1="{left - 4}" y1="{y(v):.2f}" x2="{left}" y2="{y(v):.2f}" stroke="black"/>')
        parts.append(f'<text x="{left - 6}" y="{y(v) + 4:.2f}" text-anchor="end">{v:.3g}</text>')
    for i, lab in enumerate(labels):
        parts.append(f'<text x="{x(i):.2f}" y="{top + ph + 16}" text-anchor="middle">{_esc(lab)}</text>')
    pts = [(x(i), y(m)) for i, m in enumerate(means) if np.isfinite(m)]
    if pts:
        path = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
        parts.append(f'<polyline points="{path}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
    for i, (m, s) in enumerate(zip(means, stds)):
        if not np.isfinite(m):
            continue
        cx = x(i)
        parts.append(f'<line x1="{cx:.2f}" y1="{y(m - s):.2f}" x2="{cx:.2f}" y2="{y(m + s):.2f}" stroke="#1f77b4"/>')
        for v in (m - s, m + s):
            parts.append(f'<line x1="{cx - 4:.2f}" y1="{y(v):.2f}" x2="{cx + 4:.2f}" y2="{y(v):.2f}" '
                         f'stroke="#1f77b4"/>')
        parts.append(f'<circle cx="{cx:.2f}" cy="{y(m):.2f}" r="3" fill="#1f77b4"/>')
    parts += [
        f'<text x="{left + pw / 2:.2f}" y="{height - 10}" text-anchor="middle">{_esc(xlabel)}</text>',
        f'<text x="15" y="{top + ph / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 15 {top + ph / 2:.2f})">{_esc(ylabel)}</text>',
        f'<line x1="{left + pw - 90}" y1="{top - 12}" x2="{left + pw - 70}" y2="{top - 12}" '
        f'stroke="#1f77b4" stroke-width="2"/>',
        f'<text x="{left + pw - 65}" y="{top - 8}">mean ± sd</text>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
