"""Graph data types: node topology, geodesic masks, causal tensors and the
smooth acyclicity function used to regularise them."""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class TopologyNetwork:
    """Undirected node graph. Edges are stored as sorted pairs ``(a, b)``, ``a < b``."""

    node_count: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError(f"node_count must be positive, got {self.node_count}")
        canon = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"self-loop edge ({a}, {b}) not allowed in a topology")
            if not (0 <= a < self.node_count and 0 <= b < self.node_count):
                raise ValueError(f"edge ({a}, {b}) out of range for {self.node_count} nodes")
            canon.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", frozenset(canon))

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.node_count, self.node_count), dtype=bool)
        for a, b in self.edges:
            adj[a, b] = adj[b, a] = True
        return adj

    def neighbors(self) -> list[list[int]]:
        nbrs = [[] for _ in range(self.node_count)]
        for a, b in sorted(self.edges):
            nbrs[a].append(b)
            nbrs[b].append(a)
        return nbrs


@dataclass(frozen=True)
class DistanceMasks:
    """Indicator matrices ``masks[k][i, j] = 1`` iff hop distance(i, j) == k."""

    masks: np.ndarray  # (K+1, N, N) float

    @property
    def k_max(self) -> int:
        return self.masks.shape[0] - 1

    @property
    def node_count(self) -> int:
        return self.masks.shape[1]

    def truncate(self, k_max: int) -> "DistanceMasks":
        return DistanceMasks(self.masks[: k_max + 1].copy())


@dataclass(frozen=True)
class CausalGraph:
    """Directed graph over event types; self-loops (self-excitation) allowed."""

    type_count: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.type_count < 1:
            raise ValueError(f"type_count must be positive, got {self.type_count}")
        canon = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if not (0 <= i < self.type_count and 0 <= j < self.type_count):
                raise ValueError(f"edge ({i}, {j}) out of range for {self.type_count} types")
            canon.add((i, j))
        object.__setattr__(self, "edges", frozenset(canon))

    @classmethod
    def from_adjacency(cls, adj) -> "CausalGraph":
        adj = np.asarray(adj)
        ii, jj = np.nonzero(adj)
        return cls(adj.shape[0], frozenset(zip(ii.tolist(), jj.tolist())))

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.type_count, self.type_count), dtype=int)
        for i, j in self.edges:
            adj[i, j] = 1
        return adj

    def without_self_loops(self) -> "CausalGraph":
        return CausalGraph(self.type_count, frozenset(e for e in self.edges if e[0] != e[1]))


@dataclass(frozen=True)
class CausalTensor:
    """``values[k, i, j]``: probability (or indicator) that type i drives type j
    at geodesic distance k."""

    values: np.ndarray  # (K+1, V, V)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1] != v.shape[2]:
            raise ValueError(f"causal tensor must have shape (K+1, V, V), got {v.shape}")
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("causal tensor entries must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def k_max(self) -> int:
        return self.values.shape[0] - 1

    @property
    def type_count(self) -> int:
        return self.values.shape[1]


def hop_distances(topology: TopologyNetwork) -> np.ndarray:
    """All-pairs shortest-path hop counts by BFS; -1 marks unreachable pairs."""
    n = topology.node_count
    nbrs = topology.neighbors()
    dist = np.full((n, n), -1, dtype=int)
    for src in range(n):
        dist[src, src] = 0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for w in nbrs[u]:
                if dist[src, w] < 0:
                    dist[src, w] = dist[src, u] + 1
                    queue.append(w)
    return dist


def geodesic_masks(topology: TopologyNetwork, k_max: int) -> DistanceMasks:
    if k_max < 0:
        raise ValueError(f"k_max must be >= 0, got {k_max}")
    dist = hop_distances(topology)
    masks = np.stack([(dist == k).astype(float) for k in range(k_max + 1)])
    return DistanceMasks(masks)


def acyclicity_h(g) -> float:
    """``tr((I + g/d)^d) - d``; zero exactly when ``g`` (nonnegative) is acyclic."""
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"acyclicity_h expects a square matrix, got shape {g.shape}")
    d = g.shape[0]
    m = np.linalg.matrix_power(np.eye(d) + g / d, d)
    return float(np.trace(m) - d)


def acyclicity_h_grad(g) -> tuple[float, np.ndarray]:
    """Value and gradient of :func:`acyclicity_h` with respect to ``g``."""
    g = np.asarray(g, dtype=float)
    d = g.shape[0]
    m = np.eye(d) + g / d
    m_pow = np.linalg.matrix_power(m, d - 1)
    value = float(np.sum(m_pow.T * m) - d)  # tr(m^{d-1} m)
    return value, m_pow.T.copy()


def aggregate_g(a) -> np.ndarray:
    """Sum a (K+1, V, V) tensor over distance slices and zero the diagonal."""
    values = a.values if isinstance(a, CausalTensor) else np.asarray(a, dtype=float)
    g = values.sum(axis=0)
    np.fill_diagonal(g, 0.0)
    return g


def extract_graph(posterior, threshold: float = 0.5) -> tuple[CausalGraph, np.ndarray]:
    """Read off the causal graph: ``i -> j`` iff some slice k has
    ``posterior[k, i, j] >= threshold``.

    Returns the graph and the per-slice hard tensor.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    values = posterior.values if isinstance(posterior, CausalTensor) else np.asarray(posterior)
    hard = (values >= threshold).astype(int)
    return CausalGraph.from_adjacency(hard.max(axis=0)), hard


def has_cycle(adj) -> bool:
    """Iterative DFS cycle detection; self-loops count as cycles."""
    return find_cycle(adj) is not None


def find_cycle(adj) -> list[tuple[int, int]] | None:
    """Return the edges of one directed cycle, or None. Deterministic order."""
    adj = np.asarray(adj)
    n = adj.shape[0]
    color = [0] * n  # 0 unvisited, 1 on stack, 2 done
    parent = [-1] * n
    for root in range(n):
        if color[root]:
            continue
        stack = [(root, iter(np.flatnonzero(adj[root]).tolist()))]
        color[root] = 1
        while stack:
            u, it = stack[-1]
            for w in it:
                if color[w] == 1:
                    cycle = [(u, w)]
                    x = u
                    while x != w:
                        cycle.append((parent[x], x))
                        x = parent[x]
                    return cycle[::-1]
                if color[w] == 0:
                    color[w] = 1
                    parent[w] = u
                    stack.append((w, iter(np.flatnonzero(adj[w]).tolist())))
                    break
            else:
                color[u] = 2
                stack.pop()
    return None


# -- file formats ---------------------------------------------------------------------


def write_topology_csv(topology: TopologyNetwork, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node_a", "node_b"])
        for a, b in sorted(topology.edges):
            writer.writerow([a, b])


def read_topology_csv(path, node_count: int | None = None) -> TopologyNetwork:
    """Parse a ``node_a,node_b`` edge list. Without ``node_count`` the node set is
    ``0..max id``."""
    edges = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["node_a", "node_b"]:
            raise ValueError(f"{path}: line 1: expected header 'node_a,node_b', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                a, b = (int(x) for x in row)
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: malformed edge row {row}") from None
            edges.append((a, b))
    if node_count is None:
        node_count = 1 + max((max(e) for e in edges), default=0)
    return TopologyNetwork(node_count, frozenset(edges))


def write_graph_json(path, graph: CausalGraph, posterior: CausalTensor | None = None, **extra) -> None:
    doc = {"type_count": graph.type_count, "edges": [list(e) for e in sorted(graph.edges)]}
    if posterior is not None:
        doc["posterior"] = posterior.values.tolist()
    doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_graph_json(path) -> tuple[CausalGraph, CausalTensor | None]:
    doc = json.loads(Path(path).read_text())
    try:
        graph = CausalGraph(int(doc["type_count"]), frozenset(tuple(e) for e in doc["edges"]))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed graph file ({exc})") from None
    posterior = CausalTensor(np.asarray(doc["posterior"], dtype=float)) if doc.get("posterior") is not None else None
    if posterior is not None and posterior.type_count != graph.type_count:
        raise ValueError(f"{path}: posterior type count {posterior.type_count} != {graph.type_count}")
    return graph, posterior
