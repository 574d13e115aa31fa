"""Bin-discrete cascade generator for topological event sequences.

Root events are homogeneous Poisson per (type, node). Every event of type i at
node n in bin t spawns, for each causal edge i -> j and every node within
``k_active`` hops of n, a Poisson(alpha_ij) number of type-j children, each
delayed by a truncated geometric number of bins.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graph import CausalGraph, TopologyNetwork, hop_distances, write_graph_json, write_topology_csv
from .ingest import EventRecord, write_events_csv


@dataclass
class SimConfig:
    node_count: int = 40
    type_count: int = 20
    mu_range: tuple[float, float] = (3e-5, 5e-5)
    alpha_range: tuple[float, float] = (0.02, 0.03)
    delta: float = 2.0
    horizon: float = 40000.0
    target_events: int | None = None
    k_active: int = 1
    causal_edge_density: float = 0.3
    topology_extra_edge_fraction: float = 0.5
    max_lag: int = 3
    seed: int = 0

    def __post_init__(self):
        self.mu_range = tuple(float(x) for x in self.mu_range)
        self.alpha_range = tuple(float(x) for x in self.alpha_range)
        self.validate()

    def validate(self) -> None:
        errors = []
        if self.node_count < 1:
            errors.append(f"node_count: must be >= 1 (got {self.node_count})")
        if self.type_count < 1:
            errors.append(f"type_count: must be >= 1 (got {self.type_count})")
        for name in ("mu_range", "alpha_range"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi):
                errors.append(f"{name}: need 0 <= lo <= hi (got [{lo}, {hi}])")
        if self.delta <= 0:
            errors.append(f"delta: must be > 0 (got {self.delta})")
        if self.horizon <= 0:
            errors.append(f"horizon: must be > 0 (got {self.horizon})")
        if self.target_events is not None and self.target_events < 0:
            errors.append(f"target_events: must be >= 0 (got {self.target_events})")
        if self.k_active < 0:
            errors.append(f"k_active: must be >= 0 (got {self.k_active})")
        for name in ("causal_edge_density", "topology_extra_edge_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                errors.append(f"{name}: must lie in [0, 1] (got {getattr(self, name)})")
        if self.max_lag < 1:
            errors.append(f"max_lag: must be >= 1 (got {self.max_lag})")
        if errors:
            raise ValueError("invalid simulation config: " + "; ".join(errors))


@dataclass
class SimResult:
    topology: TopologyNetwork
    dag: CausalGraph
    events: list[EventRecord]
    mu: np.ndarray           # (V,) base rates
    alpha: np.ndarray        # (V, V) excitation, zero off the DAG
    horizon: float
    parents: list[int] = field(default_factory=list)  # -1 for roots


def sample_topology(config: SimConfig, rng: np.random.Generator) -> TopologyNetwork:
    """Uniform random labelled spanning tree (Pruefer decoding) plus extra edges.

    ``topology_extra_edge_fraction`` is relative to the tree size: that many
    additional distinct non-tree edges are added uniformly at random.
    """
    n = config.node_count
    if n == 1:
        return TopologyNetwork(1)
    edges = set()
    if n == 2:
        edges.add((0, 1))
    else:
        seq = rng.integers(0, n, size=n - 2).tolist()
        degree = [1] * n
        for x in seq:
            degree[x] += 1
        for x in seq:
            leaf = next(i for i in range(n) if degree[i] == 1)
            edges.add((min(leaf, x), max(leaf, x)))
            degree[leaf] -= 1
            degree[x] -= 1
        u, w = (i for i in range(n) if degree[i] == 1)
        edges.add((u, w))
    absent = [(a, b) for a in range(n) for b in range(a + 1, n) if (a, b) not in edges]
    n_extra = min(round(config.topology_extra_edge_fraction * (n - 1)), len(absent))
    if n_extra:
        pick = rng.choice(len(absent), size=n_extra, replace=False)
        edges.update(absent[i] for i in sorted(pick.tolist()))
    return TopologyNetwork(n, frozenset(edges))


def sample_causal_dag(config: SimConfig, rng: np.random.Generator) -> CausalGraph:
    v = config.type_count
    order = rng.permutation(v)
    keep = rng.random((v, v)) < config.causal_edge_density
    edges = {(int(order[a]), int(order[b])) for a in range(v) for b in range(a + 1, v) if keep[a, b]}
    return CausalGraph(v, frozenset(edges))


def lag_distribution(max_lag: int, p: float = 0.5) -> np.ndarray:
    """Geometric(p) on {1, 2, ...} truncated to [1, max_lag] and renormalised."""
    d = np.arange(1, max_lag + 1)
    w = p * (1 - p) ** (d - 1)
    return w / w.sum()


def resolve_horizon(config: SimConfig, mu: np.ndarray) -> float:
    """Horizon from ``target_events`` (expected root count) when given, else ``horizon``.
    Rounded up to a whole number of bins."""
    if config.target_events is None:
        return float(config.horizon)
    rate = float(mu.sum()) * config.node_count
    if rate <= 0:
        return float(config.horizon)
    bins = max(math.ceil(config.target_events / rate / config.delta), 1)
    return bins * config.delta


def generate_events(topology: TopologyNetwork, dag: CausalGraph, config: SimConfig,
                    rng: np.random.Generator, *, mu=None, alpha=None, return_parents=False):
    """Run the root + cascade generator.

    ``mu`` (per type) and ``alpha`` (per edge) are drawn from the configured
    ranges unless given. Events carry bin-midpoint timestamps and are sorted
    by (timestamp, type, node, generation order).
    """
    V, N = dag.type_count, topology.node_count
    if mu is None:
        mu = rng.uniform(*config.mu_range, size=V)
    if alpha is None:
        draws = rng.uniform(*config.alpha_range, size=(V, V))
        alpha = draws * dag.adjacency()
    mu, alpha = np.asarray(mu, float), np.asarray(alpha, float)
    horizon = resolve_horizon(config, mu)
    delta = config.delta
    n_bins = max(math.ceil(horizon / delta), 1)

    dist = hop_distances(topology)
    reach = [np.flatnonzero((dist[n] >= 0) & (dist[n] <= config.k_active)).tolist() for n in range(N)]
    children_of = [[(j, alpha[i, j]) for j in range(V) if alpha[i, j] > 0] for i in range(V)]
    lag_p = lag_distribution(config.max_lag)

    # (type, node, bin) records plus parent index
    raw: list[tuple[int, int, int]] = []
    parent: list[int] = []
    for v in range(V):
        for n in range(N):
            k = rng.poisson(mu[v] * horizon)
            if k == 0:
                continue
            times = np.sort(rng.uniform(0.0, horizon, size=k))
            for ts in times:
                raw.append((v, n, max(math.ceil(ts / delta), 1)))
                parent.append(-1)

    queue = deque(range(len(raw)))
    while queue:
        idx = queue.popleft()
        v, n, b = raw[idx]
        for j, a in children_of[v]:
            for m in reach[n]:
                c = rng.poisson(a)
                if c == 0:
                    continue
                lags = rng.choice(len(lag_p), size=c, p=lag_p) + 1
                for lag in lags.tolist():
                    cb = b + lag
                    if cb > n_bins:
                        continue
                    raw.append((j, m, cb))
                    parent.append(idx)
                    queue.append(len(raw) - 1)

    order = sorted(range(len(raw)), key=lambda i: (raw[i][2], raw[i][0], raw[i][1], i))
    remap = {old: new for new, old in enumerate(order)}
    events = [EventRecord(raw[i][0], raw[i][1], min((raw[i][2] - 0.5) * delta, horizon)) for i in order]
    parents = [remap[parent[i]] if parent[i] >= 0 else -1 for i in order]
    if return_parents:
        return events, parents, mu, alpha, horizon
    return events


def simulate(config: SimConfig) -> SimResult:
    rng = np.random.default_rng(config.seed)
    topology = sample_topology(config, rng)
    dag = sample_causal_dag(config, rng)
    events, parents, mu, alpha, horizon = generate_events(topology, dag, config, rng, return_parents=True)
    return SimResult(topology, dag, events, mu, alpha, horizon, parents)


def write_simulation(result: SimResult, config: SimConfig, out_dir) -> dict:
    """Write events.csv, topology.csv, truth_graph.json and simconfig.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_events_csv(result.events, out / "events.csv")
    write_topology_csv(result.topology, out / "topology.csv")
    write_graph_json(out / "truth_graph.json", result.dag)
    echo = asdict(config)
    echo["resolved_horizon"] = result.horizon
    echo["mu"] = result.mu.tolist()
    echo["alpha"] = result.alpha.tolist()
    (out / "simconfig.json").write_text(json.dumps(echo, indent=1) + "\n")
    return {"events": len(result.events), "topology_edges": len(result.topology.edges),
            "causal_edges": len(result.dag.edges)}
