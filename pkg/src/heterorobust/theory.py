"""Closed-form attack-loss changes for linear GNNs on stylized graphs, and their oracles.

Stylized setting: a ``d``-regular graph where every node has a fraction
``h`` of same-class neighbors (the rest split evenly over the other
classes) and features ``p * onehot(y) + (1 - p) / |Y|``. A unit edge
perturbation at target ``v`` is encoded by ``delta1`` (+1/-1: add/remove a
homophilous edge or path) and ``delta2`` (the same for heterophilous ones).

The closed forms are written without float coercion, so passing
:class:`fractions.Fraction` arguments gives exact results; the grid checks
rely on this to get exact signs at threshold degrees.
"""

from __future__ import annotations

import functools
import itertools
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import MissingClassInTrain, NotHeterophilous, RankDeficientWarning, SingularConfiguration
from .graph import LabeledGraph, normalize, two_hop_adjacency

PROPAGATIONS = ("two_layer_self_loop", "one_layer_self_loop", "alpha_mix")
UNIT_PERTURBATIONS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class TheoryParams:
    h: float
    d: int
    num_classes: int
    p: float = 1.0
    alpha: float = 0.5
    delta1: int = 0
    delta2: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.delta1 not in (-1, 0, 1) or self.delta2 not in (-1, 0, 1):
            raise ValueError("delta1, delta2 must be in {-1, 0, 1}")


def stylized_denominator(h, d, num_classes):
    """``d (h|Y| - 1) + |Y| - 1``; zero marks the degenerate configurations."""
    return d * (h * num_classes - 1) + num_classes - 1


def optimal_weights(h, d, num_classes, p) -> np.ndarray:
    """Inverse of the class-prototype rows of ``Abar_s^2 X``.

    ``c * [(|Y|-1) on the diagonal, -1 elsewhere] + 1/|Y]``, with
    ``c = (d+1)^2 (|Y|-1)^2 / (p (-d h |Y| + d - (|Y|-1))^2 |Y|)``.
    Rows of the result sum to one.
    """
    k = num_classes
    den = p * (-d * h * k + d - (k - 1)) ** 2 * k
    if den == 0:
        raise SingularConfiguration(f"d(h|Y|-1) + |Y|-1 = 0 at h={h}, d={d}, |Y|={k}")
    c = (d + 1) ** 2 * (k - 1) ** 2 / den
    w = np.full((k, k), -float(c))
    np.fill_diagonal(w, float(c) * (k - 1))
    return w + 1.0 / k


def cm_margin_loss(z, true_label: int) -> float:
    """Negative classification margin ``-(z_y - max_{y' != y} z_y')``."""
    z = np.asarray(z, dtype=np.float64)
    others = np.delete(z, true_label)
    return float(-(z[true_label] - others.max()))


def delta_loss_direct(params: TheoryParams):
    """Change in CM loss for a 1-hop perturbation under ``Abar_s^2 X W_*``."""
    h, d, k, d1, d2 = params.h, params.d, params.num_classes, params.delta1, params.delta2
    den = stylized_denominator(h, d, k) ** 2
    if den == 0:
        raise SingularConfiguration(f"zero denominator at h={h}, d={d}, |Y|={k}")
    num = (k - 1) * (d * h * k - d + 2 * k - 2)
    return -d1 * num / den + d2 * num / den


def delta_loss_indirect(params: TheoryParams):
    """Change in CM loss for a 2-hop perturbation under ``Abar_s^2 X W_*``."""
    h, d, k, d1, d2 = params.h, params.d, params.num_classes, params.delta1, params.delta2
    den = stylized_denominator(h, d, k)
    if den == 0:
        raise SingularConfiguration(f"zero denominator at h={h}, d={d}, |Y|={k}")
    return (-d1 + d2) * (k - 1) / den


def delta_loss_alpha(params: TheoryParams):
    """Change in CM loss for the layer ``((1-a) Abar + a I) X W``."""
    h, d, k, a = params.h, params.d, params.num_classes, params.alpha
    den = d * (a * (h - 1) - h) * k + d
    if den == 0:
        raise SingularConfiguration(f"zero denominator at h={h}, d={d}, |Y|={k}, alpha={a}")
    return (((1 - a) * k + a - 1) * params.delta1 + (a - 1) * (k - 1) * params.delta2) / den


def delta_loss_single_layer(params: TheoryParams):
    """The ``Abar_s X W`` layer (``alpha = 1/(1+d)``), written out directly."""
    h, d, k = params.h, params.d, params.num_classes
    den = stylized_denominator(h, d, k)
    if den == 0:
        raise SingularConfiguration(f"zero denominator at h={h}, d={d}, |Y|={k}")
    return -(k - 1) * params.delta1 / den + (k - 1) * params.delta2 / den


def degree_threshold(h, num_classes, hop: str = "direct"):
    """Degree at which the loss-increasing perturbation types swap (heterophilous graphs only)."""
    k = num_classes
    if h * k >= 1:
        raise NotHeterophilous(f"h={h} >= 1/|Y|={1 / k:.4g}")
    if hop == "direct":
        return 2 * (k - 1) / (1 - h * k)
    if hop == "indirect":
        return (k - 1) / (1 - h * k)
    raise ValueError("hop must be 'direct' or 'indirect'")


def effective_perturbations(h, d, num_classes, hop: str = "direct"):
    """Unit perturbations that raise the CM loss, from the published case tables.

    This encodes the sign tables independently of the closed forms: in the
    homophilous branch (``h >= 1/|Y|``) removing homophilous / adding
    heterophilous edges is effective; below ``1/|Y|`` the answer flips at
    :func:`degree_threshold` and nothing is effective exactly at it.
    """
    low = {(-1, 0), (0, 1)}
    if h * num_classes >= 1:
        return low
    t = degree_threshold(h, num_classes, hop)
    if d < t:
        return low
    if d > t:
        return {(1, 0), (0, -1)}
    return set()


def degree_regime(g: LabeledGraph, targets=None) -> dict:
    """Both candidate degrees (average and per-target) against the direct threshold."""
    from .graph import edge_homophily

    h = edge_homophily(g).edge_homophily
    deg = g.adjacency.degrees
    out = {"h": h, "num_classes": g.num_classes, "average_degree": float(deg.mean())}
    try:
        out["threshold_direct"] = float(degree_threshold(h, g.num_classes, "direct"))
        out["threshold_indirect"] = float(degree_threshold(h, g.num_classes, "indirect"))
    except NotHeterophilous:
        out["threshold_direct"] = out["threshold_indirect"] = None
    if targets is not None:
        out["target_degrees"] = {int(t): int(deg[t]) for t in targets}
    return out


# --- linear surrogate ---------------------------------------------------


def propagate(g: LabeledGraph, propagation: str = "two_layer_self_loop", alpha: Optional[float] = None):
    X = g.features
    if propagation == "two_layer_self_loop":
        P = normalize(g.adjacency, "row_stochastic_self_loop")
        return P @ (P @ X)
    if propagation == "one_layer_self_loop":
        return normalize(g.adjacency, "row_stochastic_self_loop") @ X
    if propagation == "alpha_mix":
        if alpha is None:
            raise ValueError("alpha_mix propagation needs alpha")
        return (1 - alpha) * (normalize(g.adjacency, "row_stochastic") @ X) + alpha * X
    raise ValueError(f"unknown propagation {propagation!r}")


@dataclass(frozen=True, eq=False)
class LinearSurrogate:
    weights: np.ndarray
    propagation: str = "two_layer_self_loop"
    alpha: Optional[float] = None
    rank_deficient: bool = field(default=False, compare=False)

    def logits(self, g: LabeledGraph) -> np.ndarray:
        return propagate(g, self.propagation, self.alpha) @ self.weights


def fit_linear_surrogate(g: LabeledGraph, train_nodes, propagation: str = "two_layer_self_loop",
                         alpha: Optional[float] = None) -> LinearSurrogate:
    """Minimum-norm least-squares fit of ``propagate(g) W`` to one-hot train labels."""
    train = np.asarray(train_nodes, dtype=np.int64)
    missing = set(range(g.num_classes)) - set(g.labels[train].tolist())
    if missing:
        raise MissingClassInTrain(f"classes {sorted(missing)} have no training node")
    agg = propagate(g, propagation, alpha)[train]
    target = np.eye(g.num_classes)[g.labels[train]]
    w, _, rank, _ = np.linalg.lstsq(agg, target, rcond=None)
    deficient = rank < min(agg.shape)
    if deficient:
        warnings.warn(f"aggregated training features have rank {rank} < {min(agg.shape)}; "
                      "returning the minimum-norm solution", RankDeficientWarning, stacklevel=2)
    return LinearSurrogate(w, propagation, alpha, deficient)


# --- brute-force oracles ---------------------------------------------------


def class_representatives(g: LabeledGraph) -> np.ndarray:
    """Lowest node id of each class."""
    return np.array([np.flatnonzero(g.labels == c)[0] for c in range(g.num_classes)])


def _stylized_inverse(agg, g):
    rows = agg[class_representatives(g)]
    return np.linalg.inv(rows) if rows.shape[0] == rows.shape[1] else np.linalg.pinv(rows)


def _perturbation_type(g, target, other, sign):
    same = g.labels[other] == g.labels[target]
    return (sign, 0) if same else (0, sign)


def _check_flip(g, target, other, sign, hop):
    A = g.adjacency
    if other == target:
        raise ValueError("flip partner must differ from the target")
    adjacent = A.has_edge(target, other)
    if hop == "direct":
        if sign > 0 and adjacent:
            raise ValueError(f"({target}, {other}) is already an edge")
        if sign < 0 and not adjacent:
            raise ValueError(f"({target}, {other}) is not an edge")
    elif hop == "indirect":
        if adjacent:
            raise ValueError(f"{other} is adjacent to {target}; not an indirect flip")
        if sign < 0 and not two_hop_adjacency(A).has_edge(target, other):
            raise ValueError(f"{other} is not in the 2-hop neighborhood of {target}")
    else:
        raise ValueError("hop must be 'direct' or 'indirect'")


def frozen_normalization_simulate(g: LabeledGraph, target: int, flip, hop: str = "direct",
                                  weights: Optional[np.ndarray] = None) -> float:
    """Measured CM-loss change of ``Abar_s^2 X W`` with row normalizations held fixed.

    ``flip = (other, sign)``. Only the target's aggregation rows are edited,
    by ``sign / (deg(target) + 1)`` at column ``other``: a direct flip edits
    the target row of both propagation steps, an indirect (2-hop) flip only
    the outer one. ``weights`` defaults to the numerical inverse of the
    class-prototype rows taken from the graph itself, so the oracle shares
    no code with the closed forms.
    """
    other, sign = int(flip[0]), int(flip[1])
    target = int(target)
    P = normalize(g.adjacency, "row_stochastic_self_loop")
    X = g.features
    if weights is None:
        weights = _stylized_inverse(P @ (P @ X), g)
    z = (P[target] @ (P @ X)) @ weights
    if sign == 0:
        return 0.0
    _check_flip(g, target, other, sign, hop)
    step = sign / (g.adjacency.degrees[target] + 1)
    outer = P.tolil(copy=True)
    outer[target, other] += step
    inner = outer if hop == "direct" else P
    outer, inner = outer.tocsr(), sp.csr_matrix(inner)
    z_new = (outer[target] @ (inner @ X)) @ weights
    y = g.labels[target]
    return cm_margin_loss(np.ravel(z_new), y) - cm_margin_loss(np.ravel(z), y)


def frozen_alpha_simulate(g: LabeledGraph, target: int, flip, alpha: float,
                          weights: Optional[np.ndarray] = None) -> float:
    """Single-layer ``((1-a) Abar + a I) X W`` counterpart of the frozen oracle."""
    other, sign = int(flip[0]), int(flip[1])
    abar = normalize(g.adjacency, "row_stochastic")
    M = ((1 - alpha) * abar + alpha * sp.identity(g.n)).tocsr()
    X = g.features
    if weights is None:
        weights = _stylized_inverse(M @ X, g)
    z = (M[target] @ X) @ weights
    if sign == 0:
        return 0.0
    _check_flip(g, target, other, sign, "direct")
    Mp = M.tolil(copy=True)
    Mp[target, other] += (1 - alpha) * sign / g.adjacency.degrees[target]
    z_new = (Mp.tocsr()[target] @ X) @ weights
    y = g.labels[target]
    return cm_margin_loss(np.ravel(z_new), y) - cm_margin_loss(np.ravel(z), y)


def renormalized_simulate(g: LabeledGraph, target: int, flip, hop: str = "direct", via: Optional[int] = None,
                          weights: Optional[np.ndarray] = None) -> float:
    """CM-loss change after a real symmetric edge flip with full renormalization.

    Direct flips toggle ``(target, other)``; indirect flips toggle
    ``(via, other)`` for a neighbor ``via`` of the target. Weights stay at
    their clean-graph values (evasion setting).
    """
    from .attacks import Perturbation, apply_perturbation

    other, sign = int(flip[0]), int(flip[1])
    P = normalize(g.adjacency, "row_stochastic_self_loop")
    X = g.features
    if weights is None:
        weights = _stylized_inverse(P @ (P @ X), g)
    z = (P[target] @ (P @ X)) @ weights
    if sign == 0:
        return 0.0
    if hop == "direct":
        pair = (target, other)
    else:
        if via is None or not g.adjacency.has_edge(target, via):
            raise ValueError("indirect flips need a neighbor 'via' of the target")
        pair = (via, other)
    g2 = apply_perturbation(g, Perturbation(((min(pair), max(pair), sign),)))
    P2 = normalize(g2.adjacency, "row_stochastic_self_loop")
    z_new = (P2[target] @ (P2 @ X)) @ weights
    y = g.labels[target]
    return cm_margin_loss(np.ravel(z_new), y) - cm_margin_loss(np.ravel(z), y)


def pick_flip_partner(g: LabeledGraph, target: int, same_class: bool, sign: int, hop: str = "direct"):
    """Lowest-id node forming the requested flip type with ``target``, or None."""
    A = g.adjacency
    nb = set(A.neighbors(target).tolist())
    pool = np.flatnonzero((g.labels == g.labels[target]) == same_class)
    if hop == "direct":
        cands = [u for u in pool if u != target and ((u in nb) == (sign < 0))]
    else:
        two = set(two_hop_adjacency(A).neighbors(target).tolist())
        cands = [u for u in pool if u != target and u not in nb and (sign > 0 or u in two)]
    return int(cands[0]) if cands else None


# --- grid verification ---------------------------------------------------


DEFAULT_GRID = {
    "num_classes": (2, 3, 5, 7),
    "h": tuple(Fraction(i, 10) for i in range(11)),
    "d": tuple(range(1, 33)),
    "alpha": tuple(Fraction(i, 10) for i in range(1, 10)),
}


def _as_fraction(x):
    return x if isinstance(x, Fraction) else Fraction(x).limit_denominator(10 ** 9)


def verify_theorems(grid: Optional[dict] = None, exclude_random_baseline: bool = True) -> dict:
    """Check the closed forms against the published case tables over a grid.

    Three families of checks per grid point ``(|Y|, h, d)``:

    ``sign``      every unit perturbation raises the loss iff the tables say so
                  (direct and indirect);
    ``direct``    for ``h > 1/|Y|`` effective direct flips beat indirect ones;
    ``alpha``     for ``h > 1/|Y|``, ``alpha > 1/(1+d)`` and ``delta1 < delta2``:
                  ``dL_fs > dL_f > 0``.

    Arithmetic is exact (fractions). Singular points are counted separately.
    """
    grid = dict(DEFAULT_GRID, **(grid or {}))
    hs = [_as_fraction(h) for h in grid["h"]]
    alphas = [_as_fraction(a) for a in grid["alpha"]]
    if not (grid["num_classes"] and hs and grid["d"]):
        raise ValueError("grid must be nonempty")
    counts = {"sign": 0, "direct": 0, "alpha": 0}
    failures = []
    singular = 0
    for k in grid["num_classes"]:
        for h in hs:
            if exclude_random_baseline and h * k == 1:
                continue
            for d in grid["d"]:
                if stylized_denominator(h, d, k) == 0:
                    singular += 1
                    continue
                for hop, fn in (("direct", delta_loss_direct), ("indirect", delta_loss_indirect)):
                    eff = effective_perturbations(h, d, k, hop)
                    for d1, d2 in UNIT_PERTURBATIONS:
                        val = fn(TheoryParams(h, d, k, delta1=d1, delta2=d2))
                        counts["sign"] += 1
                        if (val > 0) != ((d1, d2) in eff):
                            failures.append({"check": "sign", "hop": hop, "num_classes": k, "h": float(h), "d": d,
                                             "delta1": d1, "delta2": d2, "delta_loss": float(val)})
                if h * k > 1:
                    for d1, d2 in ((-1, 0), (0, 1)):
                        p = TheoryParams(h, d, k, delta1=d1, delta2=d2)
                        counts["direct"] += 1
                        if not delta_loss_direct(p) > delta_loss_indirect(p):
                            failures.append({"check": "direct", "num_classes": k, "h": float(h), "d": d,
                                             "delta1": d1, "delta2": d2})
                    for a in alphas:
                        if not a > Fraction(1, 1 + d):
                            continue
                        for d1, d2 in ((-1, 0), (0, 1), (-1, 1)):
                            p = TheoryParams(h, d, k, alpha=a, delta1=d1, delta2=d2)
                            f, fs = delta_loss_alpha(p), delta_loss_single_layer(p)
                            counts["alpha"] += 1
                            if not fs > f > 0:
                                failures.append({"check": "alpha", "num_classes": k, "h": float(h), "d": d,
                                                 "alpha": float(a), "delta1": d1, "delta2": d2,
                                                 "delta_loss_f": float(f), "delta_loss_fs": float(fs)})
    total = sum(counts.values())
    return {
        "grid": {"num_classes": list(grid["num_classes"]), "h": [float(h) for h in hs], "d": list(grid["d"]),
                 "alpha": [float(a) for a in alphas]},
        "checks": counts,
        "pass_count": total - len(failures),
        "fail_count": len(failures),
        "singular_points": singular,
        "failures": failures,
    }


# --- stylized instances for the simulation oracles ------------------------


def stylized_spec(h, d, num_classes, p=1.0, seed=0):
    """Smallest convenient exact-mix spec realizing ``(h, d, |Y|)``, or None if infeasible.

    Class size leaves room for non-adjacent same- and cross-class partners.
    """
    from .synth import SynthSpec

    k = num_classes
    hd = h * d
    d_in = math.floor(hd + Fraction(1, 2)) if isinstance(hd, Fraction) else math.floor(hd + 0.5)
    if abs(hd - d_in) > 1e-9 or (d - d_in) % (k - 1):
        return None
    c = (d - d_in) // (k - 1)
    m = max(2 * d_in + 4, 2 * c + 4, 6)
    if (m * d_in) % 2:
        m += 1
    return SynthSpec(n=m * k, d=d, h=float(h), num_classes=k, p=float(p), seed=seed, class_mix="exact")


def grid_points(num_classes=(2, 3, 5, 7), hs=None, ds=range(1, 33)):
    hs = [Fraction(i, 10) for i in range(11)] if hs is None else hs
    return itertools.product(num_classes, hs, ds)


def _class_mixing(h, d, num_classes):
    k = num_classes
    m = np.full((k, k), d * (1 - h) / (k - 1))
    np.fill_diagonal(m, 1 + h * d)
    return m / (d + 1)


def _ij_inverse(a, b, k):
    """Inverse of ``a I + b J`` (``J`` all ones) as the pair ``(a', b')``."""
    return 1 / a, -b / (a * (a + k * b))


def _ij_matrix(a, b, k):
    m = np.full((k, k), b, dtype=object)
    for i in range(k):
        m[i, i] = a + b
    return m


@functools.lru_cache(maxsize=4096)
def _exact_class_state(h, d, k, p):
    one = Fraction(1)
    ma, mb = (1 + h * d - d * (1 - h) / (k - 1)) / (d + 1), d * (1 - h) / (k - 1) / (d + 1)
    xa, xb = p * one, (1 - p) / k
    M, X = _ij_matrix(ma, mb, k), _ij_matrix(xa, xb, k)
    (mia, mib), (xia, xib) = _ij_inverse(ma, mb, k), _ij_inverse(xa, xb, k)
    W = _ij_matrix(xia, xib, k) @ _ij_matrix(mia, mib, k) @ _ij_matrix(mia, mib, k)
    z1 = M @ X
    return X, z1, (M @ z1)[0], W


def _exact_margin_loss(z, y):
    return -(z[y] - max(z[j] for j in range(len(z)) if j != y))


def symbolic_frozen_simulate(h, d, num_classes, p, delta1=0, delta2=0, hop: str = "direct",
                             exact: bool = False) -> float:
    """Frozen-normalization oracle in class space; admits non-integer ``h*d``.

    Every node of class ``c`` aggregates the same expected composition, so
    the aggregation collapses to a ``|Y| x |Y|`` mixing matrix. The flip
    partner is a class-0 node (homophilous) or a class-1 node, and the target
    is a class-0 node. Weights are the numerical inverse of ``M^2 X``; with
    ``exact`` everything runs in rationals instead (``M`` and ``X`` are both
    of the form ``a I + b J``, whose inverse is again of that form), which
    matters near a singular ``M`` where the float inverse loses ~1e-9.
    """
    if delta1 and delta2:
        raise ValueError("one perturbation at a time")
    if hop not in ("direct", "indirect"):
        raise ValueError("hop must be 'direct' or 'indirect'")
    k = num_classes
    sign = delta1 or delta2
    u = 0 if delta1 else 1
    if exact:
        X, z1, z, W = _exact_class_state(Fraction(h), Fraction(d), k, Fraction(str(p)))
        step = Fraction(sign) / (d + 1)
    else:
        h, p = float(h), float(p)
        M = _class_mixing(h, d, k)
        X = np.full((k, k), (1 - p) / k) + p * np.eye(k)
        z1 = M @ X
        W = np.linalg.inv(M @ z1)
        z = (M @ z1)[0]
        step = sign / (d + 1)
    if hop == "direct":
        z_new = z + step / (d + 1) * X[u] + step * z1[u]
    else:
        z_new = z + step * z1[u]
    if exact:
        return float(_exact_margin_loss(z_new @ W, 0) - _exact_margin_loss(z @ W, 0))
    return cm_margin_loss(z_new @ W, 0) - cm_margin_loss(z @ W, 0)


def symbolic_alpha_simulate(h, d, num_classes, p, alpha, delta1=0, delta2=0) -> float:
    """Class-space oracle for ``((1-a) Abar + a I) X W``."""
    if delta1 and delta2:
        raise ValueError("one perturbation at a time")
    k = num_classes
    h, p, alpha = float(h), float(p), float(alpha)
    abar = np.full((k, k), (1 - h) / (k - 1))
    np.fill_diagonal(abar, h)
    M = (1 - alpha) * abar + alpha * np.eye(k)
    X = np.full((k, k), (1 - p) / k) + p * np.eye(k)
    W = np.linalg.inv(M @ X)
    z = (M @ X)[0]
    sign = delta1 or delta2
    u = 0 if delta1 else 1
    z_new = z + (1 - alpha) * sign / d * X[u]
    return cm_margin_loss(z_new @ W, 0) - cm_margin_loss(z @ W, 0)
