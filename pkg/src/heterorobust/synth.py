"""Regular graphs with prescribed class mixing and one-hot signal features."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConstructionFailed, InfeasibleSpec
from .graph import LabeledGraph, SparseAdjacency

MAX_RETRIES = 1000
CLASS_MIX_MODES = ("exact", "total")


@dataclass(frozen=True)
class SynthSpec:
    """Stylized graph: ``d``-regular, balanced classes, homophily ``h``.

    ``class_mix="exact"`` gives every node ``round(h*d)`` same-class
    neighbors and the same number of neighbors in each other class.
    ``class_mix="total"`` only fixes the same-class count per node; the
    remaining neighbors are drawn from all other classes jointly, which
    admits specs such as ``d=10, h=0.8, |Y|=5`` where the cross-class
    degree does not divide evenly.
    """

    n: int
    d: int
    h: float
    num_classes: int
    p: float = 1.0
    seed: Optional[int] = 0
    class_mix: str = "exact"

    @property
    def intra_degree(self) -> int:
        return int(math.floor(self.h * self.d + 0.5))

    @property
    def cross_degree(self) -> float:
        return (self.d - self.intra_degree) / (self.num_classes - 1)

    def validate(self) -> None:
        n, d, k = self.n, self.d, self.num_classes
        if self.class_mix not in CLASS_MIX_MODES:
            raise InfeasibleSpec(f"class_mix must be one of {CLASS_MIX_MODES}")
        if k < 2:
            raise InfeasibleSpec("need at least 2 classes")
        if d < 1:
            raise InfeasibleSpec("degree must be positive")
        if not 0.0 <= self.h <= 1.0:
            raise InfeasibleSpec("h must lie in [0, 1]")
        if not 0.0 < self.p <= 1.0:
            raise InfeasibleSpec("p must lie in (0, 1]")
        if n % k:
            raise InfeasibleSpec(f"n={n} is not divisible by |Y|={k} (classes must be balanced)")
        m = n // k
        d_in = self.intra_degree
        d_out = d - d_in
        if d_in > m - 1:
            raise InfeasibleSpec(f"intra-class degree {d_in} exceeds class size - 1 = {m - 1}")
        if (m * d_in) % 2:
            raise InfeasibleSpec(f"class size {m} times intra-class degree {d_in} is odd; no pairing exists")
        if self.class_mix == "exact":
            if d_out % (k - 1):
                raise InfeasibleSpec(
                    f"d - round(h*d) = {d_out} is not divisible by |Y|-1 = {k - 1}; "
                    "no exact per-class neighbor split")
            if d_out // (k - 1) > m:
                raise InfeasibleSpec(f"cross-class degree {d_out // (k - 1)} exceeds class size {m}")
        else:
            if d_out > n - m:
                raise InfeasibleSpec(f"cross-class degree {d_out} exceeds the {n - m} nodes of other classes")
            if (n * d_out) % 2:
                raise InfeasibleSpec("n times cross-class degree is odd; no pairing exists")


def _has_suitable_pair(nodes, edges, allowed):
    nodes = sorted(nodes)
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            if (a, b) not in edges and allowed(a, b):
                return True
    return False


def _pair_within(stubs, rng, allowed, edges):
    """Random simple pairing of a stub multiset; None if it gets stuck.

    Unsuitable pairs (self-loops, multi-edges, disallowed) are returned to
    the pool and reshuffled until nothing suitable remains.
    """
    added = set()
    stubs = list(stubs)
    for _ in range(10 * len(stubs) + 10):
        if not stubs:
            return added
        rng.shuffle(stubs)
        left = []
        for a, b in zip(stubs[0::2], stubs[1::2]):
            if a > b:
                a, b = b, a
            if a != b and (a, b) not in edges and (a, b) not in added and allowed(a, b):
                added.add((a, b))
            else:
                left += [a, b]
        if left and not _has_suitable_pair(set(left), edges | added, allowed):
            return None
        stubs = left
    return None


def _pair_between(stubs_a, stubs_b, rng, edges):
    added = set()
    sa, sb = list(stubs_a), list(stubs_b)
    for _ in range(10 * len(sa) + 10):
        if not sa:
            return added
        rng.shuffle(sa)
        rng.shuffle(sb)
        la, lb = [], []
        for a, b in zip(sa, sb):
            key = (a, b) if a < b else (b, a)
            if key in edges or key in added:
                la.append(a)
                lb.append(b)
            else:
                added.add(key)
        if la and all(((a, b) if a < b else (b, a)) in (edges | added) for a in set(la) for b in set(lb)):
            return None
        sa, sb = la, lb
    return None


def _retry(build, what):
    for _ in range(MAX_RETRIES):
        out = build()
        if out is not None:
            return out
    raise ConstructionFailed(f"could not pair {what} after {MAX_RETRIES} attempts")


def regular_homophily_graph(spec: SynthSpec) -> LabeledGraph:
    """Generate the stylized graph; features are left empty (``n x 0``)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    k, n = spec.num_classes, spec.n
    m = n // k
    d_in = spec.intra_degree
    d_out = spec.d - d_in
    slot_class = np.repeat(np.arange(k), m)
    members = [list(range(c * m, (c + 1) * m)) for c in range(k)]
    edges = set()

    def same(a, b):
        return True

    for c in range(k):
        if d_in:
            edges |= _retry(lambda: _pair_within(members[c] * d_in, rng, same, edges), f"class {c}")
    if spec.class_mix == "exact":
        c_deg = d_out // (k - 1)
        if c_deg:
            for a in range(k):
                for b in range(a + 1, k):
                    edges |= _retry(lambda: _pair_between(members[a] * c_deg, members[b] * c_deg, rng, edges),
                                    f"classes {a}-{b}")
    elif d_out:
        def differ(a, b):
            return slot_class[a] != slot_class[b]
        edges |= _retry(lambda: _pair_within(list(range(n)) * d_out, rng, differ, edges), "cross-class stubs")

    perm = rng.permutation(n)
    labels = np.empty(n, dtype=np.int64)
    labels[perm] = slot_class
    e = np.asarray(sorted(edges), dtype=np.int64).reshape(-1, 2)
    adj = SparseAdjacency.from_edges(n, perm[e] if e.size else e)

    from scipy.sparse.csgraph import connected_components
    n_comp, _ = connected_components(adj.to_csr(), directed=False)
    meta = {
        "generator": "regular_homophily_graph",
        "n": n, "d": spec.d, "h_requested": spec.h, "num_classes": k, "seed": spec.seed,
        "class_mix": spec.class_mix, "intra_degree": d_in, "cross_degree_total": d_out,
        "realized_homophily": d_in / spec.d, "connected": bool(n_comp == 1), "components": int(n_comp),
    }
    return LabeledGraph(adj, np.zeros((n, 0)), labels, k, meta)


def signal_features(labels, num_classes: int, p: float) -> np.ndarray:
    """Rows ``p * onehot(y) + (1 - p) / |Y|``; each row sums to 1."""
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    labels = np.asarray(labels, dtype=np.int64)
    x = np.full((labels.size, num_classes), (1.0 - p) / num_classes)
    x[np.arange(labels.size), labels] += p
    return x


def stylized_graph(spec: SynthSpec) -> LabeledGraph:
    """Graph plus signal features, the full synthetic dataset."""
    g = regular_homophily_graph(spec)
    meta = dict(g.meta, p=spec.p)
    return LabeledGraph(g.adjacency, signal_features(g.labels, spec.num_classes, spec.p), g.labels,
                        spec.num_classes, meta)
