"""Gray-box structure attacks through the linear surrogate, and flip bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidFlip
from .graph import LabeledGraph, SparseAdjacency, edge_homophily, target_homophily
from .kernels import score_flips, surrogate_state
from .theory import LinearSurrogate, cm_margin_loss, fit_linear_surrogate, propagate

TERMINATIONS = ("budget_exhausted", "no_improving_flip", "not_run")
ATTACK_MODES = ("direct_only", "with_influencers")


@dataclass(frozen=True)
class Perturbation:
    """Ordered flips ``(u, v, sign)`` with ``u < v`` and ``sign`` +1 (add) or -1 (remove)."""
    flips: tuple = ()
    termination: str = "not_run"

    def __post_init__(self):
        norm, seen = [], set()
        for u, v, sign in self.flips:
            u, v, sign = int(u), int(v), int(sign)
            if u == v:
                raise InvalidFlip(u, v, "self-loop")
            if sign not in (-1, 1):
                raise InvalidFlip(u, v, "sign must be +1 or -1")
            u, v = min(u, v), max(u, v)
            if (u, v) in seen:
                raise InvalidFlip(u, v, "pair flipped twice")
            seen.add((u, v))
            norm.append((u, v, sign))
        object.__setattr__(self, "flips", tuple(norm))

    @property
    def budget_used(self) -> int:
        return len(self.flips)

    @property
    def additions(self):
        return [(u, v) for u, v, s in self.flips if s > 0]

    @property
    def deletions(self):
        return [(u, v) for u, v, s in self.flips if s < 0]


@dataclass(frozen=True)
class PerturbationStats:
    additions_total: int
    additions_hetero_fraction: Optional[float]
    deletions_total: int
    deletions_homo_fraction: Optional[float]
    h_before: float
    h_after: float
    h_t_before: Optional[float] = None
    h_t_after: Optional[float] = None

    @property
    def heterophily_increasing_fraction(self) -> Optional[float]:
        total = self.additions_total + self.deletions_total
        if not total:
            return None
        good = (self.additions_hetero_fraction or 0.0) * self.additions_total \
            + (self.deletions_homo_fraction or 0.0) * self.deletions_total
        return good / total


def apply_perturbation(g: LabeledGraph, P: Perturbation) -> LabeledGraph:
    """New graph with the flips applied in order; ``g`` is untouched."""
    if not P.flips:
        return g.with_adjacency(g.adjacency)
    edges = set(map(tuple, g.adjacency.edge_array().tolist()))
    for u, v, sign in P.flips:
        if not (0 <= u < g.n and 0 <= v < g.n):
            raise InvalidFlip(u, v, "node id out of range")
        if sign > 0:
            if (u, v) in edges:
                raise InvalidFlip(u, v, "addition of an existing edge")
            edges.add((u, v))
        else:
            if (u, v) not in edges:
                raise InvalidFlip(u, v, "removal of a non-edge")
            edges.discard((u, v))
    return g.with_adjacency(SparseAdjacency.from_edges(g.n, sorted(edges)))


def perturbation_stats(g: LabeledGraph, P: Perturbation, targets=None) -> PerturbationStats:
    g2 = apply_perturbation(g, P)
    same = lambda a, b: g.labels[a] == g.labels[b]
    adds, dels = P.additions, P.deletions
    add_het = float(np.mean([not same(u, v) for u, v in adds])) if adds else None
    del_hom = float(np.mean([same(u, v) for u, v in dels])) if dels else None
    kw = {}
    if targets is not None:
        targets = list(targets)
        kw = {"h_t_before": target_homophily(g, targets), "h_t_after": target_homophily(g2, targets)}
    return PerturbationStats(len(adds), add_het, len(dels), del_hom,
                             edge_homophily(g).edge_homophily, edge_homophily(g2).edge_homophily, **kw)


# --- targeted ------------------------------------------------------------


def _candidates(indptr, indices, v, n, mode):
    """Arrays ``a, u, s, in_old, in_new`` for every flip reachable in ``mode``."""
    nb_v = indices[indptr[v]:indptr[v + 1]]
    in_nv = np.zeros(n, dtype=bool)
    in_nv[nb_v] = True
    u = np.delete(np.arange(n), v)
    s = np.where(in_nv[u], -1, 1)
    parts = [(np.full(u.size, v), u, s, s < 0, s > 0)]
    if mode == "with_influencers":
        for w in nb_v:
            nb_w = np.zeros(n, dtype=bool)
            nb_w[indices[indptr[w]:indptr[w + 1]]] = True
            uu = np.setdiff1d(np.arange(n), [v, w])
            ss = np.where(nb_w[uu], -1, 1)
            parts.append((np.full(uu.size, w), uu, ss, in_nv[uu], in_nv[uu]))
    return [np.concatenate(p) for p in zip(*parts)]


def _best_flip(scores, lo, hi):
    """Index of the best candidate: score desc, then ``u`` asc, then ``v`` asc."""
    order = np.lexsort((hi, lo, -scores))
    return int(order[0])


def targeted_attack(g: LabeledGraph, target: int, budget: int, mode: str = "direct_only",
                    surrogate: Optional[LinearSurrogate] = None, train_nodes=None,
                    labels=None) -> Perturbation:
    """Greedy flips at or around ``target`` maximizing the surrogate CM loss.

    Each step scores every candidate by its exact surrogate loss change after
    renormalization, applies the best and repeats. Removals that would
    isolate an endpoint and pairs already flipped are excluded. A step whose
    best score is not positive stops the attack early.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if mode not in ATTACK_MODES:
        raise ValueError(f"mode must be one of {ATTACK_MODES}")
    if surrogate is None:
        if train_nodes is None:
            raise ValueError("need a surrogate or train_nodes to fit one")
        surrogate = fit_linear_surrogate(g, train_nodes)
    v = int(target)
    y = int(g.labels[v] if labels is None else labels[v])
    xw = np.ascontiguousarray(g.features @ surrogate.weights, dtype=np.float64)
    n = g.n
    edges = set(map(tuple, g.adjacency.edge_array().tolist()))
    flips, flipped = [], set()
    adj = g.adjacency
    termination = "budget_exhausted"
    prev_loss = None
    for _ in range(budget):
        indptr, indices = adj.indptr, adj.indices
        s1, z1, deg, t = surrogate_state(indptr, indices, xw, v)
        loss = cm_margin_loss(t / (deg[v] + 1.0), y)
        if prev_loss is not None:
            assert loss >= prev_loss - 1e-9, "surrogate loss decreased along the greedy path"
        a, u, s, in_old, in_new = _candidates(indptr, indices, v, n, mode)
        lo, hi = np.minimum(a, u), np.maximum(a, u)
        ok = ~((s < 0) & ((deg[a] <= 1) | (deg[u] <= 1)))
        if flipped:
            keys = lo * n + hi
            ok &= ~np.isin(keys, np.fromiter((p * n + q for p, q in flipped), dtype=np.int64))
        if not ok.any():
            termination = "no_improving_flip"
            break
        a, u, s, in_old, in_new, lo, hi = (x[ok] for x in (a, u, s, in_old, in_new, lo, hi))
        scores = score_flips(s1, z1, xw, deg, t, v, y, a, u, s, in_old, in_new)
        i = _best_flip(scores, lo, hi)
        if not scores[i] > 0:
            termination = "no_improving_flip"
            break
        pair = (int(lo[i]), int(hi[i]))
        flips.append((pair[0], pair[1], int(s[i])))
        flipped.add(pair)
        if s[i] > 0:
            edges.add(pair)
        else:
            edges.discard(pair)
        adj = SparseAdjacency.from_edges(n, sorted(edges))
        prev_loss = loss + scores[i]
    return Perturbation(tuple(flips), termination)


def surrogate_target_loss(g: LabeledGraph, surrogate: LinearSurrogate, target: int) -> float:
    z = surrogate.logits(g)[target]
    return cm_margin_loss(z, int(g.labels[target]))


# --- untargeted -----------------------------------------------------------


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def surrogate_loss_and_adj_grad(A, X, W, nodes, labels):
    """Mean CE of ``softmax(P^2 X W)`` on ``nodes`` and its gradient in a dense ``A``.

    ``P = D^-1 (A + I)`` with ``D`` the row sums; each entry of ``A`` is
    treated as an independent variable (the caller symmetrizes).
    """
    n = A.shape[0]
    At = A + np.eye(n)
    r = At.sum(axis=1)
    P = At / r[:, None]
    M = X @ W
    Q = P @ M
    Z = P @ Q
    prob = _softmax(Z[nodes])
    k = nodes.size
    loss = -np.mean(np.log(np.maximum(prob[np.arange(k), labels], 1e-300)))
    G = np.zeros_like(Z)
    d = prob
    d[np.arange(k), labels] -= 1.0
    G[nodes] = d / k
    GP = G @ Q.T + (P.T @ G) @ M.T
    GA = (GP - np.sum(GP * P, axis=1, keepdims=True)) / r[:, None]
    return float(loss), GA


def untargeted_attack(g: LabeledGraph, train_nodes, budget_fraction: float, refit_every: int = 10,
                      self_training: bool = True) -> Perturbation:
    """Greedy global flips by the gradient of the surrogate training loss.

    The budget is ``round(budget_fraction * |E|)``. Each step takes the
    gradient of the loss in a dense virtual adjacency, symmetrizes it, and
    applies the feasible flip with the largest ``grad * (1 - 2 A_ij)``. The
    loss covers training nodes with their labels and (``self_training``)
    the remaining nodes with the clean surrogate's predictions. The
    surrogate is refit on the perturbed graph every ``refit_every`` steps.
    """
    if not 0 < budget_fraction <= 1:
        raise ValueError("budget_fraction must lie in (0, 1]")
    train_nodes = np.asarray(train_nodes, dtype=np.int64)
    budget = int(np.floor(budget_fraction * g.adjacency.num_edges + 0.5))
    if budget == 0:
        return Perturbation((), "budget_exhausted")
    n = g.n
    sur = fit_linear_surrogate(g, train_nodes)
    labels = np.array(g.labels)
    if self_training:
        pseudo = np.argmax(sur.logits(g), axis=1)
        pseudo[train_nodes] = g.labels[train_nodes]
        nodes, labels = np.arange(n), pseudo
    else:
        nodes, labels = train_nodes, labels[train_nodes]
    A = g.adjacency.to_dense()
    X = g.features
    W = sur.weights
    iu = np.triu_indices(n, 1)
    blocked = np.zeros((n, n), dtype=bool)
    flips = []
    termination = "budget_exhausted"
    for step in range(budget):
        if step and step % refit_every == 0:
            cur = g.with_adjacency(SparseAdjacency.from_matrix(A))
            W = fit_linear_surrogate(cur, train_nodes).weights
        _, GA = surrogate_loss_and_adj_grad(A, X, W, nodes, labels)
        score = (GA + GA.T) * (1.0 - 2.0 * A)
        deg = A.sum(axis=1)
        bad = blocked | ((A > 0) & ((deg[:, None] <= 1) | (deg[None, :] <= 1)))
        cand = np.where(bad[iu], -np.inf, score[iu])
        i = int(np.argmax(cand))  # first maximum: smallest u, then v
        if not cand[i] > 0:
            termination = "no_improving_flip"
            break
        u, v = int(iu[0][i]), int(iu[1][i])
        sign = -1 if A[u, v] else 1
        A[u, v] = A[v, u] = 1.0 - A[u, v]
        blocked[u, v] = blocked[v, u] = True
        flips.append((u, v, sign))
    return Perturbation(tuple(flips), termination)
