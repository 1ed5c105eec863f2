"""Low-rank spectral preprocessing of the adjacency and its wiring into models."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import UnsupportedArch, ZeroRowAfterApproximation
from .graph import SparseAdjacency, two_hop_adjacency

VARIANTS = ("I", "II")
SVD_NORMALIZATIONS = ("symmetric", "row_stochastic")
DEFENDABLE = ("gcn", "sage_separate", "h2gcn_style")
ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class SvdConfig:
    """``variant="I"``: normalize(svd(A, k) + I); ``"II"``: normalize(svd(A + I, k))."""
    rank: int
    variant: str = "II"
    normalization: str = "symmetric"

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.normalization not in SVD_NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {SVD_NORMALIZATIONS}")


def _dense(A):
    if isinstance(A, SparseAdjacency):
        return A.to_dense()
    if sp.issparse(A):
        return A.toarray()
    return np.asarray(A, dtype=np.float64)


def truncated_svd(A, k: int) -> np.ndarray:
    """Best rank-``k`` approximation ``U_k S_k V_k^T`` (dense).

    Each left singular vector is flipped so its largest-magnitude entry is
    nonnegative (first occurrence on ties), with the right vector flipped
    along; this fixes the output bit-for-bit across runs.
    """
    M = _dense(A)
    n = min(M.shape)
    if not 1 <= k <= n:
        raise ValueError(f"rank k={k} outside [1, {n}]")
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    U, s, Vt = U[:, :k], s[:k], Vt[:k]
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.where(U[idx, np.arange(k)] < 0, -1.0, 1.0)
    U = U * signs
    Vt = Vt * signs[:, None]
    return (U * s) @ Vt


def normalize_dense(M, normalization: str, zero_rows=None) -> np.ndarray:
    """Degree-normalize a signed dense matrix by its row sums.

    Rows with sum at most ``ROW_SUM_TOL`` raise ZeroRowAfterApproximation,
    except rows listed in ``zero_rows``, which are set to zero.
    """
    M = np.asarray(M, dtype=np.float64)
    r = M.sum(axis=1)
    zero = np.zeros(M.shape[0], dtype=bool)
    if zero_rows is not None:
        zero[np.asarray(zero_rows, dtype=np.int64)] = True
    bad = np.flatnonzero((r <= ROW_SUM_TOL) & ~zero)
    if bad.size:
        raise ZeroRowAfterApproximation(int(bad[0]), float(r[bad[0]]))
    safe = np.where(zero, 1.0, r)
    if normalization == "row_stochastic":
        out = M / safe[:, None]
    elif normalization == "symmetric":
        s = 1.0 / np.sqrt(safe)
        out = s[:, None] * M * s[None, :]
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    out[zero] = 0.0
    out[:, zero] = 0.0
    return out


def svd_preprocess(A, cfg: SvdConfig) -> np.ndarray:
    """Low-rank normalized propagation matrix in one of the two orderings."""
    M = _dense(A)
    eye = np.eye(M.shape[0])
    if cfg.variant == "I":
        approx = truncated_svd(M, cfg.rank) + eye
    else:
        approx = truncated_svd(M + eye, cfg.rank)
    return normalize_dense(approx, cfg.normalization)


def diagonal_dominance(M) -> float:
    """Mean absolute diagonal entry over mean absolute off-diagonal entry."""
    M = _dense(M)
    n = M.shape[0]
    diag = np.abs(np.diag(M)).mean()
    off = (np.abs(M).sum() - np.abs(np.diag(M)).sum()) / (n * n - n)
    return float(diag / off)


def build_defended_model(base, cfg: SvdConfig):
    """Model config whose propagation matrices are the low-rank ones.

    gcn      ``A_s`` -> :func:`svd_preprocess`
    sage     ``Abar`` -> row-normalized ``svd(A, k)`` (no self-loop, as in the base)
    h2gcn    ``Ahat``, ``A2hat`` -> symmetric-normalized ``svd(A, k)``, ``svd(A2, k)``
    """
    if base.arch not in DEFENDABLE:
        raise UnsupportedArch(f"no low-rank variant for arch {base.arch!r}")
    return dataclasses.replace(base, defense=cfg)


def defended_operators(model_cfg, A: SparseAdjacency):
    from .models import Operators

    cfg = model_cfg.defense
    k = min(cfg.rank, A.n)
    if model_cfg.arch == "gcn":
        return Operators(svd_preprocess(A, dataclasses.replace(cfg, rank=k)))
    if model_cfg.arch == "sage_separate":
        return Operators(normalize_dense(truncated_svd(A, k), "row_stochastic"))
    if model_cfg.arch == "h2gcn_style":
        A2 = two_hop_adjacency(A)
        # nodes with no 2-hop partner have zero rows in the base operator too
        empty = np.flatnonzero(A2.degrees == 0)
        return Operators(normalize_dense(truncated_svd(A, k), "symmetric"),
                         normalize_dense(truncated_svd(A2, k), "symmetric", zero_rows=empty))
    raise UnsupportedArch(f"no low-rank variant for arch {model_cfg.arch!r}")
