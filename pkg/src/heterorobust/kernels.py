"""Hot loops with a numba route and an equivalent numpy route.

:func:`score_flips` scores candidate edge flips against the linear
surrogate ``z = Abar_s^2 X W`` at a target ``v``. Flipping ``(a, u)`` only
changes the first-hop rows ``a`` and ``u``, so the new target row follows
from running sums:

    Z1[x] = S1[x] / (deg[x] + 1),   S1 = (A + I) XW,   T = sum_{x in N[v]} Z1[x]

and a flip with sign ``s`` updates ``T`` by ``Z1'[a] - Z1[a]`` plus the
entry or exit of ``u`` from the closed neighborhood ``N[v]``.
"""

import numpy as np

from . import _accel
from ._accel import njit


def surrogate_state(indptr, indices, xw, v):
    """``(S1, Z1, deg, T)`` for the current graph."""
    n = indptr.size - 1
    deg = np.diff(indptr).astype(np.float64)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    s1 = xw.copy()
    np.add.at(s1, rows, xw[indices])
    z1 = s1 / (deg + 1.0)[:, None]
    nb = indices[indptr[v]:indptr[v + 1]]
    t = z1[v] + z1[nb].sum(axis=0)
    return s1, z1, deg, t


def _margin_rows(z, y):
    other = np.delete(z, y, axis=1)
    return z[:, y] - other.max(axis=1)


def score_flips_numpy(s1, z1, xw, deg, t, v, y, a, u, s, in_old, in_new):
    sf = s.astype(np.float64)[:, None]
    z1a = (s1[a] + sf * xw[u]) / (deg[a][:, None] + 1.0 + sf)
    z1u = (s1[u] + sf * xw[a]) / (deg[u][:, None] + 1.0 + sf)
    tn = t[None, :] + z1a - z1[a] - in_old[:, None] * z1[u] + in_new[:, None] * z1u
    dv = deg[v] + 1.0 + np.where(a == v, sf[:, 0], 0.0)
    zn = tn / dv[:, None]
    z0 = t / (deg[v] + 1.0)
    base = -_margin_rows(z0[None, :], y)[0]
    return -_margin_rows(zn, y) - base


@njit
def score_flips_numba(s1, z1, xw, deg, t, v, y, a, u, s, in_old, in_new):
    m = a.size
    k = xw.shape[1]
    out = np.empty(m)
    z0 = t / (deg[v] + 1.0)
    best = -np.inf
    for c in range(k):
        if c != y and z0[c] > best:
            best = z0[c]
    base = -(z0[y] - best)
    zn = np.empty(k)
    for i in range(m):
        ai, ui, si = a[i], u[i], float(s[i])
        da = deg[ai] + 1.0 + si
        du = deg[ui] + 1.0 + si
        dv = deg[v] + 1.0 + (si if ai == v else 0.0)
        for c in range(k):
            val = t[c] + (s1[ai, c] + si * xw[ui, c]) / da - z1[ai, c]
            if in_old[i]:
                val -= z1[ui, c]
            if in_new[i]:
                val += (s1[ui, c] + si * xw[ai, c]) / du
            zn[c] = val / dv
        best = -np.inf
        for c in range(k):
            if c != y and zn[c] > best:
                best = zn[c]
        out[i] = -(zn[y] - best) - base
    return out


def score_flips(s1, z1, xw, deg, t, v, y, a, u, s, in_old, in_new):
    """CM-loss increase at ``v`` for each candidate flip ``(a[i], u[i], s[i])``."""
    args = (s1, z1, xw, deg, t, int(v), int(y), np.ascontiguousarray(a, dtype=np.int64),
            np.ascontiguousarray(u, dtype=np.int64), np.ascontiguousarray(s, dtype=np.int64),
            np.ascontiguousarray(in_old, dtype=np.bool_), np.ascontiguousarray(in_new, dtype=np.bool_))
    if _accel.USE_NUMBA:
        return score_flips_numba(*args)
    return score_flips_numpy(*args)


# --- smoothed votes ----------------------------------------------------------
#
# A sample ``i`` of the smoothing distribution around certified node ``v``
# removes edge ``e`` iff ``U(seed, 1, i, e) < p_minus`` and adds the absent
# pair ``(v, u)`` iff ``U(seed, 2, i, v * n + u) < p_plus``. The numba kernel
# evaluates a 2-layer model at ``v`` only, touching the 2-hop ball of ``v``
# plus whatever the sample attaches to it.

DELETE_STREAM = 1
ADD_STREAM = 2
MODE_SYM = 0   # gcn: symmetric normalization of A + I
MODE_MEAN = 1  # neighbor mean (no self-loop) plus a separate ego term

counter_uniform = _accel.counter_uniform


@njit
def _kept(eid, seed, i, p_minus):
    return p_minus == 0.0 or counter_uniform(seed, DELETE_STREAM, i, eid) >= p_minus


@njit
def _sample_degree(x, v, stamp, indptr, eids, seed, i, p_minus, added, nadd, degc, degs):
    if degs[x] == stamp:
        return degc[x]
    c = 0
    for k in range(indptr[x], indptr[x + 1]):
        if _kept(eids[k], seed, i, p_minus):
            c += 1
    if x == v:
        c += nadd
    elif added[x] == stamp:
        c += 1
    degs[x] = stamp
    degc[x] = c
    return c


@njit
def _hidden_row(x, v, stamp, mode, indptr, indices, eids, seed, i, p_minus, added, add_list, nadd,
                degc, degs, p_nb, p_self, b1, out):
    hdim = out.size
    dx = _sample_degree(x, v, stamp, indptr, eids, seed, i, p_minus, added, nadd, degc, degs)
    for c in range(hdim):
        out[c] = 0.0
    dt = dx + 1.0
    for k in range(indptr[x], indptr[x + 1]):
        if not _kept(eids[k], seed, i, p_minus):
            continue
        y = indices[k]
        if mode == MODE_SYM:
            w = 1.0 / np.sqrt(dt * (_sample_degree(y, v, stamp, indptr, eids, seed, i, p_minus, added, nadd,
                                                   degc, degs) + 1.0))
        else:
            w = 1.0
        for c in range(hdim):
            out[c] += w * p_nb[y, c]
    if x == v:
        for j in range(nadd):
            y = add_list[j]
            w = 1.0
            if mode == MODE_SYM:
                w = 1.0 / np.sqrt(dt * (_sample_degree(y, v, stamp, indptr, eids, seed, i, p_minus, added, nadd,
                                                       degc, degs) + 1.0))
            for c in range(hdim):
                out[c] += w * p_nb[y, c]
    elif added[x] == stamp:
        w = 1.0
        if mode == MODE_SYM:
            w = 1.0 / np.sqrt(dt * (_sample_degree(v, v, stamp, indptr, eids, seed, i, p_minus, added, nadd,
                                                   degc, degs) + 1.0))
        for c in range(hdim):
            out[c] += w * p_nb[v, c]
    for c in range(hdim):
        if mode == MODE_SYM:
            val = out[c] + p_nb[x, c] / dt
        else:
            val = (out[c] / dx if dx > 0 else 0.0) + p_self[x, c]
        val += b1[c]
        out[c] = val if val > 0.0 else 0.0


@njit
def local_votes_numba(indptr, indices, eids, v, mode, p_nb, p_self, b1, w2_nb, w2_self, b2,
                      seed, start, count, p_plus, p_minus):
    n = indptr.size - 1
    hdim = b1.size
    k = b2.size
    counts = np.zeros(k, dtype=np.int64)
    added = np.zeros(n, dtype=np.int64)
    degs = np.zeros(n, dtype=np.int64)
    degc = np.zeros(n, dtype=np.int64)
    add_list = np.empty(n, dtype=np.int64)
    is_nb = np.zeros(n, dtype=np.bool_)
    for q in range(indptr[v], indptr[v + 1]):
        is_nb[indices[q]] = True
    h = np.empty(hdim)
    agg = np.empty(hdim)
    hv = np.empty(hdim)
    logits = np.empty(k)
    for s in range(count):
        i = start + s
        stamp = i + 1
        nadd = 0
        if p_plus > 0.0:
            for u in range(n):
                if u != v and not is_nb[u]:
                    if counter_uniform(seed, ADD_STREAM, i, v * n + u) < p_plus:
                        added[u] = stamp
                        add_list[nadd] = u
                        nadd += 1
        _hidden_row(v, v, stamp, mode, indptr, indices, eids, seed, i, p_minus, added, add_list, nadd,
                    degc, degs, p_nb, p_self, b1, hv)
        dv = _sample_degree(v, v, stamp, indptr, eids, seed, i, p_minus, added, nadd, degc, degs)
        for c in range(hdim):
            agg[c] = 0.0
        for q in range(indptr[v], indptr[v + 1] + nadd):
            if q < indptr[v + 1]:
                if not _kept(eids[q], seed, i, p_minus):
                    continue
                x = indices[q]
            else:
                x = add_list[q - indptr[v + 1]]
            _hidden_row(x, v, stamp, mode, indptr, indices, eids, seed, i, p_minus, added, add_list, nadd,
                        degc, degs, p_nb, p_self, b1, h)
            if mode == MODE_SYM:
                w = 1.0 / np.sqrt((dv + 1.0) * (_sample_degree(x, v, stamp, indptr, eids, seed, i, p_minus, added,
                                                               nadd, degc, degs) + 1.0))
            else:
                w = 1.0
            for c in range(hdim):
                agg[c] += w * h[c]
        for c in range(hdim):
            if mode == MODE_SYM:
                agg[c] += hv[c] / (dv + 1.0)
            elif dv > 0:
                agg[c] /= dv
        best = 0
        for j in range(k):
            val = b2[j]
            for c in range(hdim):
                val += agg[c] * w2_nb[c, j]
                if mode == MODE_MEAN:
                    val += hv[c] * w2_self[c, j]
            logits[j] = val
            if logits[j] > logits[best]:
                best = j
        counts[best] += 1
    return counts
