"""Randomized smoothing over edge flips: votes, confidence bounds and radius certificates.

Threat model: for a certified node ``v`` the smoothing distribution deletes
every present edge with probability ``p_minus`` and adds every absent pair
``(v, u)`` with probability ``p_plus`` (the "ring" of ``v``). Certificates
are for ``r_a`` additions within that ring and ``r_d`` deletions anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import gammaln, xlogy
from scipy.stats import beta

from . import _accel
from ._accel import counter_uniform_np
from .graph import LabeledGraph, SparseAdjacency
from .kernels import ADD_STREAM, DELETE_STREAM, MODE_MEAN, MODE_SYM, local_votes_numba

FLIPPABLE_SETS = ("ring",)


@dataclass(frozen=True)
class SmoothingScheme:
    p_plus: float
    p_minus: float
    flippable: str = "ring"

    def __post_init__(self):
        for name in ("p_plus", "p_minus"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.flippable not in FLIPPABLE_SETS:
            raise ValueError(f"flippable must be one of {FLIPPABLE_SETS}")


@dataclass(frozen=True)
class VoteEstimate:
    counts: np.ndarray
    n_samples: int
    p_lower: Optional[float] = None

    @property
    def top(self) -> int:
        return int(np.argmax(self.counts))


# --- sampling ----------------------------------------------------------------


def _kernel_args(model, g):
    """First-layer products and split second-layer weights for the local kernel, or None."""
    cfg = model.config
    if cfg.defense is not None or cfg.num_layers != 2 or cfg.arch not in ("gcn", "sage_separate", "alpha_mix"):
        return None
    p = model.params
    X = g.features
    W1, W2 = p["W0"], p["W1"]
    if cfg.arch == "gcn":
        return MODE_SYM, X @ W1, np.zeros((g.n, W1.shape[1])), p["b0"], W2, np.zeros_like(W2), p["b1"]
    if cfg.arch == "alpha_mix":
        a = cfg.alpha
        xw = X @ W1
        return MODE_MEAN, (1 - a) * xw, a * xw, p["b0"], (1 - a) * W2, a * W2, p["b1"]
    f, hdim = X.shape[1], W2.shape[0] // 2
    return MODE_MEAN, X @ W1[:f], X @ W1[f:], p["b0"], W2[:hdim], W2[hdim:], p["b1"]


def sample_masks(A: SparseAdjacency, node: int, scheme: SmoothingScheme, seed: int, i: int):
    """Deleted-edge mask (over :meth:`SparseAdjacency.edge_array`) and added partners for sample ``i``."""
    n = A.n
    m = A.num_edges
    deleted = counter_uniform_np(seed, DELETE_STREAM, i, np.arange(m)) < scheme.p_minus
    cand = np.setdiff1d(np.arange(n), np.append(A.neighbors(node), node))
    if scheme.p_plus > 0:
        added = cand[counter_uniform_np(seed, ADD_STREAM, i, node * n + cand) < scheme.p_plus]
    else:
        added = cand[:0]
    return deleted, added


def sampled_graph(g: LabeledGraph, node: int, scheme: SmoothingScheme, seed: int, i: int) -> LabeledGraph:
    deleted, added = sample_masks(g.adjacency, node, scheme, seed, i)
    e = g.adjacency.edge_array()[~deleted]
    new = np.stack([np.full(added.size, node), added], axis=1)
    return g.with_adjacency(SparseAdjacency.from_edges(g.n, np.vstack([e, new])))


def _reference_votes(model, g, node, scheme, start, count, seed, batch=64):
    """Votes from the model's own forward pass on each sampled graph.

    Undefended models are evaluated on batches of samples at once as one
    block-diagonal graph; low-rank models do not decompose over blocks and
    run one sample at a time.
    """
    from .models import model_forward

    counts = np.zeros(g.num_classes, dtype=np.int64)
    if model.config.arch == "mlp" or scheme.p_plus == 0 and scheme.p_minus == 0:
        pred = int(np.argmax(model_forward(model, g, allow_isolated=True)[node]))
        counts[pred] = count
        return counts
    n = g.n
    step = 1 if model.config.defense is not None else batch
    base = g.adjacency.edge_array()
    for lo in range(start, start + count, step):
        idx = range(lo, min(lo + step, start + count))
        blocks = []
        for b, i in enumerate(idx):
            deleted, added = sample_masks(g.adjacency, node, scheme, seed, i)
            e = np.vstack([base[~deleted], np.stack([np.full(added.size, node), added], axis=1)])
            blocks.append(e + b * n)
        k = len(blocks)
        union = LabeledGraph(SparseAdjacency.from_edges(k * n, np.vstack(blocks)), np.tile(g.features, (k, 1)),
                             np.tile(g.labels, k), g.num_classes)
        probs = model_forward(model, union, allow_isolated=True)
        preds = np.argmax(probs[node + n * np.arange(k)], axis=1)
        counts += np.bincount(preds, minlength=g.num_classes)
    return counts


def sample_smoothed_votes(model, g: LabeledGraph, node: int, scheme: SmoothingScheme, n_samples: int,
                          seed: int = 0, start: int = 0, backend: Optional[str] = None) -> VoteEstimate:
    """Class counts of the base model over samples ``start .. start + n_samples - 1``.

    Sample ``i`` only depends on ``(seed, i, node)``, so any split of the
    index range gives the same total counts.
    """
    node = int(node)
    backend = backend or _accel.backend()
    args = _kernel_args(model, g) if backend == "numba" else None
    if model.config.arch == "mlp" or args is None:
        counts = _reference_votes(model, g, node, scheme, start, n_samples, seed)
    else:
        A = g.adjacency
        mode, p_nb, p_self, b1, w_nb, w_self, b2 = args
        counts = local_votes_numba(A.indptr, A.indices, A.edge_ids(), node, mode,
                                   np.ascontiguousarray(p_nb), np.ascontiguousarray(p_self), b1,
                                   np.ascontiguousarray(w_nb), np.ascontiguousarray(w_self), b2,
                                   int(seed), int(start), int(n_samples), float(scheme.p_plus),
                                   float(scheme.p_minus))
    return VoteEstimate(np.asarray(counts, dtype=np.int64), int(n_samples))


# --- bounds ------------------------------------------------------------------


def lower_confidence_bound(count: int, n: int, alpha_sig: float) -> float:
    """One-sided Clopper-Pearson lower bound at level ``1 - alpha_sig``."""
    if not 0 <= count <= n:
        raise ValueError("count must lie in [0, n]")
    if not 0 < alpha_sig < 1:
        raise ValueError("alpha_sig must lie in (0, 1)")
    if count == 0:
        return 0.0
    return float(beta.ppf(alpha_sig, count, n - count + 1))


def upper_confidence_bound(count: int, n: int, alpha_sig: float) -> float:
    if not 0 <= count <= n:
        raise ValueError("count must lie in [0, n]")
    if count == n:
        return 1.0
    return float(beta.ppf(1 - alpha_sig, count + 1, n - count))


def _log_binom_pmf(r, q, p):
    lc = gammaln(r + 1) - gammaln(q + 1) - gammaln(r - q + 1)
    return lc + xlogy(q, p) + xlogy(r - q, 1 - p)


def _region_masses(p_plus, p_minus, r_a, r_d):
    """Log masses of each ``(q_a, q_d)`` region under the clean and the perturbed input.

    ``q_a`` counts sampled ones among the ``r_a`` pairs the adversary adds,
    ``q_d`` among the ``r_d`` edges it deletes.
    """
    qa, qd = np.meshgrid(np.arange(r_a + 1), np.arange(r_d + 1), indexing="ij")
    qa, qd = qa.ravel().astype(float), qd.ravel().astype(float)
    log_x = _log_binom_pmf(r_a, qa, p_plus) + _log_binom_pmf(r_d, qd, 1 - p_minus)
    log_t = _log_binom_pmf(r_a, qa, 1 - p_minus) + _log_binom_pmf(r_d, qd, p_plus)
    return log_x, log_t


def _greedy_fill(mass_x, mass_t, target, ascending=True):
    """Mass under ``t`` of an ``x``-mass-``target`` set chosen by likelihood ratio.

    Ascending ratio order gives the smallest achievable ``t`` mass (worst case
    for the top class); descending the largest (best case for a runner-up),
    where regions without ``x`` mass come for free.
    """
    pos = mass_x > 0
    ratio = np.full(mass_x.shape, np.inf)
    ratio[pos] = mass_t[pos] / mass_x[pos]
    order = np.argsort(ratio if ascending else -ratio, kind="stable")
    got, filled = 0.0, 0.0
    for j in order:
        if not pos[j]:
            if not ascending:
                got += mass_t[j]
            continue
        if filled + mass_x[j] >= target:
            got += mass_t[j] * (target - filled) / mass_x[j]
            return min(got, 1.0)
        filled += mass_x[j]
        got += mass_t[j]
    return min(got, 1.0)


@lru_cache(maxsize=65536)
def worst_case_probability(p_lower: float, p_plus: float, p_minus: float, r_a: int, r_d: int) -> float:
    """Smallest top-class probability on any input ``r_a`` additions / ``r_d`` deletions away."""
    if not 0.0 <= p_lower <= 1.0:
        raise ValueError("p_lower must lie in [0, 1]")
    log_x, log_t = _region_masses(p_plus, p_minus, r_a, r_d)
    return float(_greedy_fill(np.exp(log_x), np.exp(log_t), p_lower, ascending=True))


@lru_cache(maxsize=65536)
def best_case_probability(p_upper: float, p_plus: float, p_minus: float, r_a: int, r_d: int) -> float:
    """Largest runner-up probability on any input at the given radius."""
    log_x, log_t = _region_masses(p_plus, p_minus, r_a, r_d)
    return float(_greedy_fill(np.exp(log_x), np.exp(log_t), p_upper, ascending=False))


def certify_radius(p_lower: float, scheme: SmoothingScheme, r_a: int, r_d: int) -> bool:
    """True iff the top class keeps probability above 1/2 at exactly ``(r_a, r_d)``.

    A zero flip probability in a perturbed direction makes the two inputs'
    sample supports partly disjoint; the region construction then yields the
    exact, usually uncertifiable, worst case rather than raising.
    """
    return worst_case_probability(float(p_lower), scheme.p_plus, scheme.p_minus, int(r_a), int(r_d)) > 0.5


def certify_radius_multiclass(p_lower: float, p_upper: float, scheme: SmoothingScheme, r_a: int, r_d: int) -> bool:
    lo = worst_case_probability(float(p_lower), scheme.p_plus, scheme.p_minus, int(r_a), int(r_d))
    hi = best_case_probability(float(p_upper), scheme.p_plus, scheme.p_minus, int(r_a), int(r_d))
    return lo > hi


def brute_force_worst_case(p_lower: float, p_plus: float, p_minus: float, r_a: int, r_d: int) -> float:
    """Worst case by enumerating all ``2^(r_a + r_d)`` joint outcomes of the flipped bits."""
    m = r_a + r_d
    bits = (np.arange(2 ** m)[:, None] >> np.arange(m)[None, :]) & 1
    # the first r_a bits are absent in the clean input and present in the perturbed one
    on_x = np.r_[np.full(r_a, p_plus), np.full(r_d, 1 - p_minus)]
    on_t = np.r_[np.full(r_a, 1 - p_minus), np.full(r_d, p_plus)]
    px = np.where(bits, on_x, 1 - on_x).prod(axis=1)
    pt = np.where(bits, on_t, 1 - on_t).prod(axis=1)
    return _greedy_fill(px, pt, p_lower, ascending=True)


# --- grid ----------------------------------------------------------------------


@dataclass
class CertGrid:
    """``R[r_a, r_d]``: fraction of nodes predicted correctly and certified at that radius."""
    R: np.ndarray
    nodes: np.ndarray
    predictions: np.ndarray
    correct: np.ndarray
    p_lower: np.ndarray
    certified: np.ndarray  # nodes x (max_ra + 1) x (max_rd + 1), ball-closed
    meta: dict = field(default_factory=dict)

    @property
    def clean_accuracy(self) -> float:
        return float(self.R[0, 0])

    def max_radius(self, axis: str) -> np.ndarray:
        """Per-node largest certified radius along one axis (0 when not certified at all)."""
        line = self.certified[:, :, 0] if axis == "a" else self.certified[:, 0, :]
        out = np.zeros(line.shape[0], dtype=np.int64)
        for i, row in enumerate(line):
            idx = np.flatnonzero(row)
            out[i] = idx.max() if idx.size else 0
        return out


def node_certificates(p_lower, scheme, max_ra, max_rd, p_upper=None) -> np.ndarray:
    """Boolean ``(max_ra+1, max_rd+1)`` table closed under componentwise-smaller radii."""
    cert = np.zeros((max_ra + 1, max_rd + 1), dtype=bool)
    for ra in range(max_ra + 1):
        for rd in range(max_rd + 1):
            if ra and not cert[ra - 1, rd] or rd and not cert[ra, rd - 1]:
                continue
            if p_upper is None:
                cert[ra, rd] = certify_radius(p_lower, scheme, ra, rd)
            else:
                cert[ra, rd] = certify_radius_multiclass(p_lower, p_upper, scheme, ra, rd)
    return cert


def certification_grid(model, g: LabeledGraph, nodes, scheme: SmoothingScheme, n0: int = 1000,
                       n1: int = 10000, alpha_sig: float = 0.01, max_ra: int = 10, max_rd: int = 10,
                       seed: int = 0, multiclass: bool = False) -> CertGrid:
    """Smoothed prediction from ``n0`` samples, bound from the next ``n1``, then certificates."""
    nodes = np.asarray(nodes, dtype=np.int64)
    preds = np.empty(nodes.size, dtype=np.int64)
    plow = np.empty(nodes.size)
    certs = np.zeros((nodes.size, max_ra + 1, max_rd + 1), dtype=bool)
    for j, v in enumerate(nodes):
        c0 = sample_smoothed_votes(model, g, v, scheme, n0, seed, start=0).counts
        top = int(np.argmax(c0))
        c1 = sample_smoothed_votes(model, g, v, scheme, n1, seed, start=n0).counts
        preds[j] = top
        if multiclass:
            runner = np.delete(c1, top)
            plow[j] = lower_confidence_bound(int(c1[top]), n1, alpha_sig / 2)
            p_up = upper_confidence_bound(int(runner.max()), n1, alpha_sig / 2)
            certs[j] = node_certificates(plow[j], scheme, max_ra, max_rd, p_upper=p_up)
        else:
            plow[j] = lower_confidence_bound(int(c1[top]), n1, alpha_sig)
            certs[j] = node_certificates(plow[j], scheme, max_ra, max_rd)
    correct = preds == g.labels[nodes]
    R = (certs & correct[:, None, None]).mean(axis=0) if nodes.size else np.zeros((max_ra + 1, max_rd + 1))
    meta = {"p_plus": scheme.p_plus, "p_minus": scheme.p_minus, "n0": n0, "n1": n1, "alpha_sig": alpha_sig,
            "seed": seed, "multiclass": multiclass,
            "truncated": bool(R[-1, :].any() or R[:, -1].any())}
    return CertGrid(R, nodes, preds, correct, plow, certs, meta)


def summarize_certification(grid: CertGrid) -> dict:
    """AC (sum of ``R`` minus ``R[0, 0]``), mean axis radii over correct nodes, and accuracy.

    Radii are None when no node is predicted correctly.
    """
    R = grid.R
    out = {"AC": float(R.sum() - R[0, 0]), "acc": float(R[0, 0])}
    if grid.correct is None or not np.any(grid.correct):
        out["ra_bar"] = out["rd_bar"] = None
    else:
        out["ra_bar"] = float(grid.max_radius("a")[grid.correct].mean())
        out["rd_bar"] = float(grid.max_radius("d")[grid.correct].mean())
    return out
