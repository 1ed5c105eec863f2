"""Sparse undirected graphs, normalizations, homophily metrics and sampling."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import EmptyEdgeSet, IsolatedNode, IsolatedTarget, UnreachableTarget

NORMALIZATIONS = ("row_stochastic", "row_stochastic_self_loop", "symmetric", "symmetric_self_loop")


def _readonly(a):
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SparseAdjacency:
    """Symmetric 0/1 adjacency without self-loops, stored as CSR.

    Neighbor lists are sorted ascending, so iteration order is deterministic.
    Build instances with :meth:`from_edges` or :meth:`from_matrix`.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray

    @classmethod
    def from_edges(cls, n: int, edges) -> "SparseAdjacency":
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise ValueError(f"edge endpoint outside [0, {n})")
        if np.any(e[:, 0] == e[:, 1]):
            raise ValueError("self-loops are not allowed in the base adjacency")
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        m = sp.coo_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n, n)).tocsr()
        m.sum_duplicates()
        return cls._from_csr(m)

    @classmethod
    def from_matrix(cls, m) -> "SparseAdjacency":
        m = sp.csr_matrix(m)
        if m.shape[0] != m.shape[1]:
            raise ValueError("adjacency must be square")
        m = m.copy()
        m.setdiag(0)
        m.eliminate_zeros()
        if (m != m.T).nnz:
            raise ValueError("adjacency must be symmetric")
        return cls._from_csr(m)

    @classmethod
    def _from_csr(cls, m):
        m = sp.csr_matrix(m)
        m.eliminate_zeros()
        m.sort_indices()
        return cls(
            n=int(m.shape[0]),
            indptr=_readonly(m.indptr.astype(np.int64)),
            indices=_readonly(m.indices.astype(np.int64)),
        )

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def num_edges(self) -> int:
        return int(self.indices.size // 2)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(u)
        i = np.searchsorted(nb, v)
        return bool(i < nb.size and nb[i] == v)

    def edge_array(self) -> np.ndarray:
        """Unordered edges as an (m, 2) array with u < v, sorted lexicographically."""
        rows = np.repeat(np.arange(self.n), self.degrees)
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    def edge_ids(self) -> np.ndarray:
        """For every CSR slot, the row index of its edge in :meth:`edge_array`."""
        rows = np.repeat(np.arange(self.n), self.degrees)
        lo = np.minimum(rows, self.indices)
        hi = np.maximum(rows, self.indices)
        edges = self.edge_array()
        keys = edges[:, 0] * self.n + edges[:, 1]
        return np.searchsorted(keys, lo * self.n + hi)

    def to_csr(self, dtype=np.float64) -> sp.csr_matrix:
        data = np.ones(self.indices.size, dtype=dtype)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))

    def to_dense(self) -> np.ndarray:
        return self.to_csr().toarray()

    def __eq__(self, other):
        if not isinstance(other, SparseAdjacency):
            return NotImplemented
        return (self.n == other.n and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    def __hash__(self):
        return hash((self.n, self.indices.tobytes()))


@dataclass(frozen=True, eq=False)
class LabeledGraph:
    adjacency: SparseAdjacency
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.adjacency.n
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(n, -1)
        if feats.shape[0] != n:
            raise ValueError(f"feature matrix has {feats.shape[0]} rows, graph has {n} nodes")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (n,):
            raise ValueError("labels must be a length-n vector")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "features", _readonly(feats.copy()))
        object.__setattr__(self, "labels", _readonly(labels.copy()))

    @property
    def n(self) -> int:
        return self.adjacency.n

    def with_adjacency(self, adjacency: SparseAdjacency) -> "LabeledGraph":
        return LabeledGraph(adjacency, self.features, self.labels, self.num_classes, dict(self.meta))

    def subgraph(self, nodes) -> "LabeledGraph":
        nodes = np.asarray(nodes, dtype=np.int64)
        m = self.adjacency.to_csr()[nodes][:, nodes]
        return LabeledGraph(SparseAdjacency.from_matrix(m), self.features[nodes], self.labels[nodes],
                            self.num_classes, {"parent_nodes": nodes.tolist()})


@dataclass(frozen=True)
class HomophilyReport:
    edge_homophily: float
    random_baseline: float
    target_homophily: Optional[float] = None


def normalize(A: SparseAdjacency, mode: str) -> sp.csr_matrix:
    """Degree-normalize ``A``; self-loop modes operate on ``A + I``.

    ``symmetric`` output is bit-exactly symmetric because each entry is the
    same product ``d_u^{-1/2} * d_v^{-1/2}``.
    """
    if mode not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {mode!r}; expected one of {NORMALIZATIONS}")
    m = A.to_csr()
    deg = A.degrees.astype(np.float64)
    if mode.endswith("self_loop"):
        m = (m + sp.identity(A.n, format="csr")).tocsr()
        m.sort_indices()
        deg = deg + 1.0
    elif np.any(deg == 0):
        raise IsolatedNode(int(np.flatnonzero(deg == 0)[0]))
    rows = np.repeat(np.arange(A.n), np.diff(m.indptr))
    if mode.startswith("row_stochastic"):
        m.data = 1.0 / deg[rows]
    else:
        s = 1.0 / np.sqrt(deg)
        m.data = s[rows] * s[m.indices]
    return m


def normalize_allow_isolated(A: SparseAdjacency, mode: str) -> sp.csr_matrix:
    """Like :func:`normalize` but zero rows/columns for degree-0 nodes.

    Only used where isolated nodes are expected (2-hop adjacency of small
    graphs, smoothing samples), never for the base models' inputs.
    """
    if mode.endswith("self_loop") or not np.any(A.degrees == 0):
        return normalize(A, mode)
    m = A.to_csr()
    deg = A.degrees.astype(np.float64)
    rows = np.repeat(np.arange(A.n), np.diff(m.indptr))
    with np.errstate(divide="ignore"):
        if mode == "row_stochastic":
            m.data = 1.0 / deg[rows]
        else:
            s = 1.0 / np.sqrt(deg)
            m.data = s[rows] * s[m.indices]
    return m


def two_hop_adjacency(A: SparseAdjacency) -> SparseAdjacency:
    """Pairs at shortest-path distance exactly 2."""
    m = A.to_csr()
    m2 = (m @ m).tocsr()
    m2.data[:] = 1.0
    m2 = m2 - m.multiply(m2)
    m2.setdiag(0)
    m2.eliminate_zeros()
    return SparseAdjacency._from_csr((m2 > 0).astype(np.int8))


def edge_homophily(g: LabeledGraph) -> HomophilyReport:
    e = g.adjacency.edge_array()
    if e.shape[0] == 0:
        raise EmptyEdgeSet("edge homophily is undefined on an edgeless graph")
    same = g.labels[e[:, 0]] == g.labels[e[:, 1]]
    return HomophilyReport(float(same.mean()), 1.0 / g.num_classes)


def local_homophily(g: LabeledGraph, v: int) -> float:
    nb = g.adjacency.neighbors(v)
    if nb.size == 0:
        raise IsolatedTarget(v)
    return float(np.mean(g.labels[nb] == g.labels[v]))


def target_homophily(g: LabeledGraph, targets: Iterable[int]) -> float:
    """Macro average of the targets' local homophily ratios."""
    targets = list(targets)
    if not targets:
        raise ValueError("target list is empty")
    return float(np.mean([local_homophily(g, int(t)) for t in targets]))


def largest_component(A: SparseAdjacency) -> np.ndarray:
    _, comp = connected_components(A.to_csr(), directed=False)
    sizes = np.bincount(comp)
    return np.flatnonzero(comp == np.argmax(sizes))


def snowball_sample(g: LabeledGraph, n_target: int, keep_ratio: float, seed=None) -> LabeledGraph:
    """Breadth-first snowball sample keeping a random fraction of each popped node's neighbors.

    The start node is drawn from the largest connected component. Each popped
    node draws ``max(1, floor(keep_ratio * deg))`` of its neighbors without
    replacement; drawn neighbors not yet sampled are appended and queued.
    """
    if not 0 < keep_ratio <= 1:
        raise ValueError("keep_ratio must be in (0, 1]")
    if not 1 <= n_target <= g.n:
        raise ValueError("n_target must be in [1, n]")
    rng = np.random.default_rng(seed)
    start = int(rng.choice(largest_component(g.adjacency)))
    sampled = [start]
    seen = {start}
    queue = deque([start])
    while len(sampled) < n_target:
        if not queue:
            raise UnreachableTarget(f"BFS exhausted after {len(sampled)} of {n_target} nodes")
        node = queue.popleft()
        nb = g.adjacency.neighbors(node)
        if nb.size == 0:
            continue
        k = max(1, int(np.floor(keep_ratio * nb.size)))
        for u in rng.choice(nb, size=k, replace=False):
            u = int(u)
            if u not in seen:
                seen.add(u)
                sampled.append(u)
                queue.append(u)
    return g.subgraph(np.sort(np.asarray(sampled)))
