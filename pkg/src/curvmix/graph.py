"""Undirected simple graphs in CSR form, file I/O, synthetic generators and
the symmetric GCN propagation operator."""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp


class GraphFormatError(ValueError):
    """Raised for malformed graph, feature, label or mask files."""


@dataclass(frozen=True)
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=bool))
        if not (len(self.train) == len(self.val) == len(self.test)):
            raise ValueError("mask lengths differ")
        if np.any(self.train & self.val) or np.any(self.train & self.test) or np.any(self.val & self.test):
            raise ValueError("train/val/test masks overlap")

    @classmethod
    def empty(cls, n: int) -> "SplitMasks":
        z = np.zeros(n, dtype=bool)
        return cls(z, z.copy(), z.copy())


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected simple graph.

    Neighbor lists are stored in CSR form with both directions present and
    each list sorted ascending.
    """

    node_count: int
    csr_offsets: np.ndarray
    csr_neighbors: np.ndarray
    features: np.ndarray
    labels: Optional[np.ndarray] = None
    masks: SplitMasks = None
    original_ids: Optional[np.ndarray] = None
    num_classes: int = field(default=0)

    def __post_init__(self):
        n = self.node_count
        if self.masks is None:
            object.__setattr__(self, "masks", SplitMasks.empty(n))
        if self.labels is not None and self.num_classes == 0:
            object.__setattr__(self, "num_classes", int(self.labels.max()) + 1 if n else 0)
        for arr in (self.csr_offsets, self.csr_neighbors, self.features):
            arr.setflags(write=False)
        if self.labels is not None:
            self.labels.setflags(write=False)

    @property
    def edge_count(self) -> int:
        return len(self.csr_neighbors) // 2

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def neighbors(self, v: int) -> np.ndarray:
        return self.csr_neighbors[self.csr_offsets[v]:self.csr_offsets[v + 1]]

    def degree(self, v: int) -> int:
        return int(self.csr_offsets[v + 1] - self.csr_offsets[v])

    def degrees(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    def edges(self) -> np.ndarray:
        """All edges as an (m, 2) array with u < v, sorted lexicographically."""
        src = np.repeat(np.arange(self.node_count), self.degrees())
        keep = src < self.csr_neighbors
        return np.stack([src[keep], self.csr_neighbors[keep]], axis=1)

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(u)
        i = np.searchsorted(nb, v)
        return bool(i < len(nb) and nb[i] == v)

    def validate(self) -> None:
        n = self.node_count
        off, nbr = self.csr_offsets, self.csr_neighbors
        if len(off) != n + 1 or off[0] != 0 or off[-1] != len(nbr) or np.any(np.diff(off) < 0):
            raise ValueError("invalid CSR offsets")
        for v in range(n):
            nb = self.neighbors(v)
            if np.any(np.diff(nb) <= 0):
                raise ValueError(f"neighbor list of {v} not strictly ascending")
            if np.any(nb == v):
                raise ValueError(f"self-loop at {v}")
            for u in nb:
                if not self.has_edge(int(u), v):
                    raise ValueError(f"asymmetric edge {v}-{u}")
        if self.features.shape[0] != n:
            raise ValueError("feature rows != node count")
        if self.labels is not None:
            if len(self.labels) != n or np.any(self.labels < 0) or np.any(self.labels >= self.num_classes):
                raise ValueError("labels out of range")

    def is_connected(self) -> bool:
        if self.node_count == 0:
            return True
        return len(bfs_distances(self, 0, max(self.node_count, 1))) == self.node_count


def from_edges(
    n: int,
    edges,
    features: Optional[np.ndarray] = None,
    labels: Optional[np.ndarray] = None,
    masks: Optional[SplitMasks] = None,
    original_ids: Optional[np.ndarray] = None,
    num_classes: int = 0,
) -> Graph:
    """Build a Graph from an iterable of (u, v) pairs on nodes [0, n).

    Self-loops are dropped, duplicates merged and edges symmetrized.
    """
    e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64).reshape(-1, 2)
    if len(e) and (e.min() < 0 or e.max() >= n):
        raise ValueError("edge endpoint out of range")
    e = e[e[:, 0] != e[:, 1]]
    both = np.concatenate([e, e[:, ::-1]], axis=0)
    both = np.unique(both, axis=0) if len(both) else both.reshape(0, 2)
    counts = np.bincount(both[:, 0], minlength=n) if len(both) else np.zeros(n, dtype=np.int64)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    neighbors = both[:, 1].astype(np.int64).copy()
    if features is None:
        features = np.eye(n)
    features = np.array(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != n:
        raise ValueError(f"feature matrix must have {n} rows")
    if labels is not None:
        labels = np.array(labels, dtype=np.int64)
    return Graph(n, offsets, neighbors, features, labels, masks, original_ids, num_classes)


def bfs_distances(g: Graph, source: int, horizon: int) -> dict[int, int]:
    """Hop distances from ``source`` to every node within ``horizon`` hops."""
    if not 0 <= source < g.node_count:
        raise ValueError("source out of range")
    dist = {source: 0}
    queue = deque([source])
    off, nbr = g.csr_offsets, g.csr_neighbors
    while queue:
        u = queue.popleft()
        du = dist[u]
        if du >= horizon:
            continue
        for w in nbr[off[u]:off[u + 1]]:
            w = int(w)
            if w not in dist:
                dist[w] = du + 1
                queue.append(w)
    return dist


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """D^-1/2 (A + I) D^-1/2 in CSR form, self-loops included."""

    offsets: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    matrix: sp.csr_matrix

    def __matmul__(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()


def normalize_adjacency(g: Graph) -> NormalizedAdjacency:
    n = g.node_count
    deg_hat = g.degrees().astype(np.float64) + 1.0
    rows = np.concatenate([np.repeat(np.arange(n), g.degrees()), np.arange(n)])
    cols = np.concatenate([g.csr_neighbors, np.arange(n)])
    vals = 1.0 / np.sqrt(deg_hat[rows] * deg_hat[cols])
    m = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    m.sort_indices()
    return NormalizedAdjacency(m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data, m)


# ---------------------------------------------------------------------------
# File I/O


def _read_csv_rows(path: Path) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]


def load_edge_list(
    path,
    feature_path=None,
    label_path=None,
    mask_path=None,
) -> Graph:
    """Load a whitespace-separated ``u v`` edge list plus optional sidecars.

    Node ids are compacted to ``[0, N)`` in ascending order of the original
    ids; the originals are kept on ``Graph.original_ids``. A line ``v v``
    registers node ``v`` without adding an edge.
    """
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 2:
                raise GraphFormatError(f"{path}:{lineno}: expected 'u v', got {s!r}")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-integer node id in {s!r}") from None
    raw = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    ids = np.unique(raw)
    n = len(ids)
    edges = np.searchsorted(ids, raw)

    features = None
    if feature_path is not None:
        rows = _read_csv_rows(Path(feature_path))
        if len(rows) != n:
            raise GraphFormatError(f"{feature_path}: {len(rows)} feature rows for {n} nodes")
        try:
            features = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
        except ValueError as exc:
            raise GraphFormatError(f"{feature_path}: {exc}") from None

    labels = None
    if label_path is not None:
        rows = _read_csv_rows(Path(label_path))
        if len(rows) != n:
            raise GraphFormatError(f"{label_path}: {len(rows)} labels for {n} nodes")
        try:
            labels = np.array([int(r[0]) for r in rows], dtype=np.int64)
        except ValueError as exc:
            raise GraphFormatError(f"{label_path}: {exc}") from None
        if np.any(labels < 0):
            raise GraphFormatError(f"{label_path}: negative label")

    masks = None
    if mask_path is not None:
        rows = _read_csv_rows(Path(mask_path))
        if len(rows) != n:
            raise GraphFormatError(f"{mask_path}: {len(rows)} mask rows for {n} nodes")
        try:
            arr = np.array([[int(c) for c in r] for r in rows], dtype=np.int64)
        except ValueError as exc:
            raise GraphFormatError(f"{mask_path}: {exc}") from None
        if arr.shape[1] != 3:
            raise GraphFormatError(f"{mask_path}: expected 3 columns train,val,test")
        try:
            masks = SplitMasks(arr[:, 0] == 1, arr[:, 1] == 1, arr[:, 2] == 1)
        except ValueError as exc:
            raise GraphFormatError(f"{mask_path}: {exc}") from None
    elif labels is not None:
        masks = stratified_split(labels, np.random.default_rng(0))

    return from_edges(n, edges, features, labels, masks, original_ids=ids)


def save_graph(g: Graph, out_dir, stem: str = "graph") -> dict[str, Path]:
    """Write edge list, features, labels and masks; return the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"edges": out / f"{stem}.edges"}
    deg = g.degrees()
    with open(paths["edges"], "w", encoding="utf-8") as fh:
        fh.write(f"# nodes {g.node_count} edges {g.edge_count}\n")
        for u, v in g.edges():
            fh.write(f"{u} {v}\n")
        for v in np.flatnonzero(deg == 0):
            fh.write(f"{v} {v}\n")
    paths["features"] = out / f"{stem}.features.csv"
    with open(paths["features"], "w", encoding="utf-8") as fh:
        for row in g.features:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    if g.labels is not None:
        paths["labels"] = out / f"{stem}.labels.csv"
        with open(paths["labels"], "w", encoding="utf-8") as fh:
            for y in g.labels:
                fh.write(f"{int(y)}\n")
    paths["masks"] = out / f"{stem}.masks.csv"
    with open(paths["masks"], "w", encoding="utf-8") as fh:
        m = g.masks
        for a, b, c in zip(m.train, m.val, m.test):
            fh.write(f"{int(a)},{int(b)},{int(c)}\n")
    return paths


def load_graph(out_dir, stem: str = "graph") -> Graph:
    d = Path(out_dir)
    labels = d / f"{stem}.labels.csv"
    return load_edge_list(
        d / f"{stem}.edges",
        d / f"{stem}.features.csv",
        labels if labels.exists() else None,
        d / f"{stem}.masks.csv",
    )


def graphs_equal(a: Graph, b: Graph) -> bool:
    if a.node_count != b.node_count:
        return False
    same = (
        np.array_equal(a.csr_offsets, b.csr_offsets)
        and np.array_equal(a.csr_neighbors, b.csr_neighbors)
        and np.array_equal(a.features, b.features)
        and np.array_equal(a.masks.train, b.masks.train)
        and np.array_equal(a.masks.val, b.masks.val)
        and np.array_equal(a.masks.test, b.masks.test)
    )
    if (a.labels is None) != (b.labels is None):
        return False
    return same and (a.labels is None or np.array_equal(a.labels, b.labels))


# ---------------------------------------------------------------------------
# Synthetic generators


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = "mixed"
    grid_rows: int = 10
    grid_cols: int = 10
    tree_branching: int = 2
    tree_depth: int = 6
    clique_size: int = 6
    clique_count: int = 12
    bridge_count: int = 6
    feature_noise_sigma: float = 0.5
    seed: int = 0
    # drives the random inter-block bridges of the mixed graph only
    topology_seed: int = 0

    def validate(self) -> None:
        if self.kind not in ("grid", "tree", "clique_ring", "mixed"):
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        for name in ("grid_rows", "grid_cols", "tree_branching", "tree_depth", "clique_size", "clique_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.bridge_count < 0:
            raise ValueError("bridge_count must be >= 0")
        if self.feature_noise_sigma < 0:
            raise ValueError("feature_noise_sigma must be >= 0")


def _grid(rows: int, cols: int):
    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.append((v, v + 1))
            if r + 1 < rows:
                edges.append((v, v + cols))
    half_r, half_c = rows / 2, cols / 2
    labels = [(2 if r >= half_r and rows > 1 else 0) + (1 if c >= half_c and cols > 1 else 0)
              for r in range(rows) for c in range(cols)]
    return rows * cols, edges, labels


def _tree(branching: int, depth: int):
    edges, labels = [], [0]
    level, n = [0], 1
    for _ in range(depth):
        nxt = []
        for parent in level:
            for _ in range(branching):
                edges.append((parent, n))
                # label = index of the root child whose subtree holds the node
                labels.append(labels[parent] if parent != 0 else len(nxt))
                nxt.append(n)
                n += 1
        level = nxt
    return n, edges, labels


def _clique_ring(size: int, count: int):
    edges, labels = [], []
    for k in range(count):
        base = k * size
        for i in range(size):
            labels.append(k)
            for j in range(i + 1, size):
                edges.append((base + i, base + j))
    if count > 1:
        for k in range(count):
            nxt = (k + 1) % count
            edges.append((k * size + size - 1, nxt * size))
    return size * count, edges, labels


def _block_topology(spec: SyntheticSpec):
    if spec.kind == "grid":
        return _grid(spec.grid_rows, spec.grid_cols)
    if spec.kind == "tree":
        return _tree(spec.tree_branching, spec.tree_depth)
    if spec.kind == "clique_ring":
        return _clique_ring(spec.clique_size, spec.clique_count)
    blocks = [
        _grid(spec.grid_rows, spec.grid_cols),
        _tree(spec.tree_branching, spec.tree_depth),
        _clique_ring(spec.clique_size, spec.clique_count),
    ]
    if spec.bridge_count < 2:
        raise ValueError("mixed graph needs bridge_count >= 2 to connect its three blocks")
    starts = np.cumsum([0] + [b[0] for b in blocks])
    edges, labels = [], []
    for k, (n_k, e_k, _) in enumerate(blocks):
        edges.extend((u + starts[k], v + starts[k]) for u, v in e_k)
        labels.extend([k] * n_k)
    rng = np.random.default_rng(spec.topology_seed)

    def pick(block):
        return int(starts[block] + rng.integers(blocks[block][0]))

    # chain grid-tree-cliques first so the union is connected, then random pairs
    for a, b in [(0, 1), (1, 2)]:
        edges.append((pick(a), pick(b)))
    for _ in range(spec.bridge_count - 2):
        a, b = rng.choice(3, size=2, replace=False)
        edges.append((pick(int(a)), pick(int(b))))
    return int(starts[-1]), edges, labels


def stratified_split(labels: np.ndarray, rng: np.random.Generator, fractions=(0.6, 0.2, 0.2)) -> SplitMasks:
    n = len(labels)
    train, val, test = (np.zeros(n, dtype=bool) for _ in range(3))
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_tr = int(round(fractions[0] * len(idx)))
        n_va = int(round(fractions[1] * len(idx)))
        train[idx[:n_tr]] = True
        val[idx[n_tr:n_tr + n_va]] = True
        test[idx[n_tr + n_va:]] = True
    return SplitMasks(train, val, test)


def generate_synthetic(spec: SyntheticSpec) -> Graph:
    """Build a grid, tree, ring-of-cliques or mixed graph.

    Topology depends only on the size parameters (and ``topology_seed`` for
    mixed bridges); ``seed`` drives feature noise and the split masks.
    """
    spec.validate()
    n, edges, labels = _block_topology(spec)
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = int(labels.max()) + 1
    rng = np.random.default_rng(spec.seed)
    features = np.eye(num_classes)[labels] + spec.feature_noise_sigma * rng.standard_normal((n, num_classes))
    masks = stratified_split(labels, rng)
    g = from_edges(n, edges, features, labels, masks, num_classes=num_classes)
    if not g.is_connected():
        raise ValueError(f"synthetic {spec.kind} graph with {spec} is disconnected")
    return g
