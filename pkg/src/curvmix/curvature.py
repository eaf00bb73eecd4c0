"""Ollivier-Ricci curvature of graph edges and nodes.

Four solvers are available: the exact transport solver, log-domain
Sinkhorn, the Jost-Liu lower bound and a Jaccard neighbourhood-overlap
score. Only the first two estimate the transport cost itself; the other
two are cheap ranking signals.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graph import Graph, bfs_distances
from .transport import wasserstein_exact, wasserstein_sinkhorn

SOLVERS = ("exact", "sinkhorn", "jost_liu", "jaccard")


class DegenerateMeasureError(ValueError):
    pass


@dataclass(frozen=True)
class CurvatureConfig:
    solver: str = "exact"
    idleness: float = 0.0
    sinkhorn_epsilon: float = 0.05
    sinkhorn_iters: int = 200
    distance_horizon: int = 3

    def validate(self) -> None:
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; expected one of {SOLVERS}")
        if not 0.0 <= self.idleness <= 1.0:
            raise ValueError("idleness must lie in [0, 1]")
        if self.sinkhorn_epsilon <= 0:
            raise ValueError("sinkhorn_epsilon must be positive")
        if self.sinkhorn_iters < 1:
            raise ValueError("sinkhorn_iters must be >= 1")
        if self.distance_horizon < 2:
            raise ValueError("distance_horizon must be >= 2")


@dataclass(frozen=True)
class NeighborMeasure:
    center: int
    support: np.ndarray
    mass: np.ndarray
    idleness: float


def neighbor_measure(g: Graph, v: int, p: float) -> NeighborMeasure:
    """Mass ``p`` on ``v`` and ``(1 - p) / deg(v)`` on each neighbour."""
    if not 0 <= v < g.node_count:
        raise ValueError("node out of range")
    if not 0.0 <= p <= 1.0:
        raise ValueError("idleness must lie in [0, 1]")
    nb = g.neighbors(v)
    if len(nb) == 0 and p < 1.0:
        raise DegenerateMeasureError(f"degenerate measure: node {v} is isolated and p < 1")
    if p == 1.0:
        return NeighborMeasure(v, np.array([v]), np.array([1.0]), p)
    share = (1.0 - p) / len(nb)
    if p == 0.0:
        return NeighborMeasure(v, nb.copy(), np.full(len(nb), share), p)
    support = np.concatenate([[v], nb])
    mass = np.concatenate([[p], np.full(len(nb), share)])
    return NeighborMeasure(v, support, mass, p)


def ground_cost(g: Graph, mu: NeighborMeasure, nu: NeighborMeasure, horizon: int = 3) -> np.ndarray:
    """Hop-distance matrix between the supports; widens the BFS on a miss."""
    targets = [int(t) for t in nu.support]
    cost = np.empty((len(mu.support), len(targets)), dtype=np.int64)
    for i, s in enumerate(mu.support):
        h = horizon
        while True:
            d = bfs_distances(g, int(s), h)
            if all(t in d for t in targets):
                break
            if h >= g.node_count:
                raise ValueError(f"support node unreachable from {int(s)}")
            h = min(2 * h, g.node_count)
        cost[i] = [d[t] for t in targets]
    return cost


def edge_orc(g: Graph, u: int, v: int, config: CurvatureConfig = CurvatureConfig()) -> float:
    """Curvature of edge (u, v) with the configured solver."""
    if not g.has_edge(u, v):
        raise ValueError(f"({u}, {v}) is not an edge")
    if config.solver == "jost_liu":
        return jost_liu_bound(g, u, v)
    if config.solver == "jaccard":
        return jaccard_curvature(g, u, v)
    mu = neighbor_measure(g, u, config.idleness)
    nu = neighbor_measure(g, v, config.idleness)
    cost = ground_cost(g, mu, nu, config.distance_horizon)
    if config.solver == "exact":
        w = wasserstein_exact(mu.mass, nu.mass, cost).cost
    else:
        w = wasserstein_sinkhorn(mu.mass, nu.mass, cost, config.sinkhorn_epsilon, config.sinkhorn_iters)
    # adjacent nodes of a simple graph are at hop distance 1
    return 1.0 - w


def _common_count(a: np.ndarray, b: np.ndarray) -> int:
    i = j = n = 0
    while i < len(a) and j < len(b):
        if a[i] == b[j]:
            n += 1
            i += 1
            j += 1
        elif a[i] < b[j]:
            i += 1
        else:
            j += 1
    return n


def jost_liu_bound(g: Graph, u: int, v: int) -> float:
    """Jost-Liu lower bound on the p=0 curvature from degrees and triangles."""
    du, dv = g.degree(u), g.degree(v)
    tri = _common_count(g.neighbors(u), g.neighbors(v))
    lo, hi = min(du, dv), max(du, dv)
    base = 1.0 - 1.0 / du - 1.0 / dv
    return -max(base - tri / lo, 0.0) - max(base - tri / hi, 0.0) + tri / hi


def jaccard_curvature(g: Graph, u: int, v: int) -> float:
    """Neighbourhood-overlap score 3J - 1 clamped to [-1, 1]."""
    nu, nv = g.neighbors(u), g.neighbors(v)
    common = _common_count(nu, nv)
    # |N(u) U N(v) \ {u, v}|: v is in N(u) and u in N(v) for an edge
    union = len(nu) + len(nv) - common - int(v in nu) - int(u in nv)
    j = common / union if union > 0 else 0.0
    return float(min(1.0, max(-1.0, 2.0 * j - (1.0 - j))))


def node_orc(edge_curvature: dict, g: Graph) -> np.ndarray:
    """Mean curvature of each node's incident edges; isolated nodes get 0."""
    out = np.zeros(g.node_count)
    for v in range(g.node_count):
        nb = g.neighbors(v)
        if len(nb) == 0:
            continue
        vals = [edge_curvature[(min(v, int(w)), max(v, int(w)))] for w in nb]
        out[v] = math.fsum(vals) / len(vals)
    return out


@dataclass(frozen=True, eq=False)
class CurvatureMap:
    edge_curvature: dict
    node_curvature: np.ndarray
    config: CurvatureConfig = field(default_factory=CurvatureConfig)

    def to_csv(self, path) -> None:
        c = self.config
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                f"# solver={c.solver} idleness={c.idleness!r} sinkhorn_epsilon={c.sinkhorn_epsilon!r} "
                f"sinkhorn_iters={c.sinkhorn_iters} distance_horizon={c.distance_horizon}\n"
            )
            fh.write("u,v,kappa\n")
            for (u, v) in sorted(self.edge_curvature):
                fh.write(f"{u},{v},{self.edge_curvature[(u, v)]:.17g}\n")
            fh.write("node,kappa\n")
            for i, k in enumerate(self.node_curvature):
                fh.write(f"{i},{k:.17g}\n")

    @classmethod
    def from_csv(cls, path) -> "CurvatureMap":
        edges, nodes = {}, []
        cfg = {}
        section = None
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    cfg[key] = val
                continue
            if line == "u,v,kappa":
                section = "edge"
                continue
            if line == "node,kappa":
                section = "node"
                continue
            parts = line.split(",")
            if section == "edge":
                edges[(int(parts[0]), int(parts[1]))] = float(parts[2])
            elif section == "node":
                nodes.append(float(parts[1]))
            else:
                raise ValueError(f"unexpected line {line!r} in {path}")
        config = CurvatureConfig(
            solver=cfg.get("solver", "exact"),
            idleness=float(cfg.get("idleness", 0.0)),
            sinkhorn_epsilon=float(cfg.get("sinkhorn_epsilon", 0.05)),
            sinkhorn_iters=int(cfg.get("sinkhorn_iters", 200)),
            distance_horizon=int(cfg.get("distance_horizon", 3)),
        )
        return cls(edges, np.array(nodes), config)

    def edge_array(self) -> np.ndarray:
        return np.array([self.edge_curvature[k] for k in sorted(self.edge_curvature)])


def compute_all(g: Graph, config: CurvatureConfig = CurvatureConfig(), workers: int = 1) -> CurvatureMap:
    """Curvature of every edge and node; independent of evaluation order."""
    config.validate()
    edges = [(int(u), int(v)) for u, v in g.edges()]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            values = list(pool.map(lambda e: edge_orc(g, e[0], e[1], config), edges))
    else:
        values = [edge_orc(g, u, v, config) for u, v in edges]
    edge_curv = dict(zip(edges, values))
    return CurvatureMap(edge_curv, node_orc(edge_curv, g), config)
