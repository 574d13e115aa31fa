"""Structure-recovery scores: precision/recall/F1, SHD and SID."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graph import CausalGraph, CausalTensor, find_cycle, has_cycle


@dataclass
class MetricReport:
    precision: float
    recall: float
    f1: float
    shd: int
    sid: int
    dag_repair_applied: bool

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=1) + "\n")


def _offdiag(graph: CausalGraph) -> np.ndarray:
    adj = graph.adjacency().astype(bool)
    np.fill_diagonal(adj, False)
    return adj


def _check_sizes(pred: CausalGraph, truth: CausalGraph) -> None:
    if pred.type_count != truth.type_count:
        raise ValueError(f"type_count mismatch: predicted {pred.type_count}, truth {truth.type_count}")


def prf(pred: CausalGraph, truth: CausalGraph) -> tuple[float, float, float]:
    _check_sizes(pred, truth)
    p, t = _offdiag(pred), _offdiag(truth)
    tp = int((p & t).sum())
    precision = tp / p.sum() if p.sum() else 0.0
    recall = tp / t.sum() if t.sum() else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return float(precision), float(recall), float(f1)


def shd(pred: CausalGraph, truth: CausalGraph) -> int:
    """Insertions + deletions + flips; a reversed edge costs one."""
    _check_sizes(pred, truth)
    p, t = _offdiag(pred), _offdiag(truth)
    diff = int((p != t).sum())
    reversed_ = p & ~p.T & t.T & ~t
    return diff - int(reversed_.sum())


def _descendants(adj: np.ndarray) -> np.ndarray:
    """``desc[i, j]`` iff there is a directed path of length >= 1 from i to j."""
    n = adj.shape[0]
    reach = adj.astype(bool).copy()
    for k in range(n):
        reach |= reach[:, [k]] & reach[[k], :]
    return reach


def _d_separated(adj: np.ndarray, x: int, y: int, z: set[int]) -> bool:
    """Reachability ("Bayes ball") test of x _||_ y | z in the DAG ``adj``."""
    n = adj.shape[0]
    # ancestors of z (including z), needed for collider activation
    anc_z = set(z)
    frontier = list(z)
    while frontier:
        w = frontier.pop()
        for pa in np.flatnonzero(adj[:, w]).tolist():
            if pa not in anc_z:
                anc_z.add(pa)
                frontier.append(pa)
    # states: (node, arrived_from_child) ; start as if leaving x in both directions
    visited = set()
    stack = [(x, True)]
    while stack:
        node, up = stack.pop()
        if (node, up) in visited:
            continue
        visited.add((node, up))
        if node == y:
            return False
        if up and node not in z:
            stack.extend((pa, True) for pa in np.flatnonzero(adj[:, node]).tolist())
            stack.extend((ch, False) for ch in np.flatnonzero(adj[node]).tolist())
        elif not up:
            if node not in z:
                stack.extend((ch, False) for ch in np.flatnonzero(adj[node]).tolist())
            if node in anc_z:
                stack.extend((pa, True) for pa in np.flatnonzero(adj[:, node]).tolist())
    return True


def valid_adjustment(adj: np.ndarray, i: int, j: int, z: set[int], desc=None) -> bool:
    """Generalised back-door test: is ``z`` a valid adjustment set for the
    effect of ``i`` on ``j`` in the DAG ``adj``?"""
    if desc is None:
        desc = _descendants(adj)
    # nodes strictly after i on some directed path i -> ... -> j
    on_path = [w for w in range(adj.shape[0]) if w != i and desc[i, w] and (w == j or desc[w, j])]
    forbidden = set(on_path)
    for w in on_path:
        forbidden.update(np.flatnonzero(desc[w]).tolist())
    if z & forbidden:
        return False
    cut = adj.astype(bool).copy()
    for w in on_path:
        cut[i, w] = False
    return _d_separated(cut, i, j, z)


def sid(pred: CausalGraph, truth: CausalGraph) -> int:
    """Structural intervention distance of ``pred`` (a DAG) from ``truth``.

    For every ordered pair (i, j) the intervention effect of i on j is
    estimated by adjusting for the parents of i in ``pred``; the pair counts
    when that estimate would be wrong in ``truth``.
    """
    _check_sizes(pred, truth)
    t = _offdiag(truth)
    p = _offdiag(pred)
    if has_cycle(t):
        raise ValueError("sid needs an acyclic truth graph")
    if has_cycle(p):
        raise ValueError("sid needs an acyclic predicted graph; apply dag_repair first")
    n = t.shape[0]
    desc = _descendants(t)
    errors = 0
    for i in range(n):
        parents = set(np.flatnonzero(p[:, i]).tolist())
        for j in range(n):
            if j == i:
                continue
            if j in parents:
                errors += int(desc[i, j])
            elif not valid_adjustment(t, i, j, parents, desc):
                errors += 1
    return errors


def dag_repair(pred: CausalGraph, posterior: CausalTensor | np.ndarray | None = None) -> CausalGraph:
    """Break cycles by repeatedly dropping the weakest edge of a found cycle.

    Edge strength is the max-over-k posterior probability; ties go to the
    lexicographically smallest edge.
    """
    adj = _offdiag(pred).astype(int)
    if posterior is None:
        strength = np.zeros(adj.shape)
    else:
        values = posterior.values if isinstance(posterior, CausalTensor) else np.asarray(posterior)
        strength = values.max(axis=0)
    while (cycle := find_cycle(adj)) is not None:
        weakest = min(cycle, key=lambda e: (strength[e], e))
        adj[weakest] = 0
    self_loops = {e for e in pred.edges if e[0] == e[1]}
    return CausalGraph(pred.type_count, frozenset(CausalGraph.from_adjacency(adj).edges | self_loops))


def evaluate(pred: CausalGraph, truth: CausalGraph, posterior=None) -> MetricReport:
    precision, recall, f1 = prf(pred, truth)
    repaired = has_cycle(_offdiag(pred))
    dag = dag_repair(pred, posterior) if repaired else pred
    return MetricReport(precision, recall, f1, shd(pred, truth), sid(dag, truth), repaired)


REPORT_FIELDS = ["run_id", "precision", "recall", "f1", "shd", "sid", "dag_repair_applied"]


def append_report_row(path, run_id: str, report: MetricReport) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(REPORT_FIELDS)
        d = asdict(report)
        writer.writerow([run_id] + [d[k] for k in REPORT_FIELDS[1:]])
