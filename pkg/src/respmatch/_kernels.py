"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with the same signature and output.
Setting ``RESPMATCH_NUMBA=0`` in the environment (or running without
numba installed) selects the numpy path at import time.  Both paths are
exercised by the test-suite and compared in ``benchmarks/bench_kernels.py``.
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - import guard
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("RESPMATCH_NUMBA", "1").strip() not in ("0", "false", "no")


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def pair_search_numpy(pos, shift_vecs, rcut):
    """All (i, j, k) with 0 < |pos[j] + shift_vecs[k] - pos[i]| < rcut.

    Returns ``(i, j, k, vec)`` ordered by i, then j, then k.
    """
    rc2 = rcut * rcut
    ii, jj, kk, vv = [], [], [], []
    for k in range(shift_vecs.shape[0]):
        d = (pos[None, :, :] + shift_vecs[k]) - pos[:, None, :]
        d2 = np.einsum("ijx,ijx->ij", d, d)
        i, j = np.nonzero((d2 < rc2) & (d2 > 0.0))
        if i.size:
            ii.append(i)
            jj.append(j)
            kk.append(np.full(i.size, k))
            vv.append(d[i, j])
    if not ii:
        return (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, 3)))
    i = np.concatenate(ii)
    j = np.concatenate(jj)
    k = np.concatenate(kk)
    v = np.concatenate(vv)
    order = np.lexsort((k, j, i))
    return i[order].astype(np.int64), j[order].astype(np.int64), k[order].astype(np.int64), v[order]


def segment_sum_numpy(values, index, n):
    """Sum rows of ``values`` (E, K) into ``n`` bins given by ``index``."""
    out = np.zeros((n,) + values.shape[1:], dtype=values.dtype)
    np.add.at(out, index, values)
    return out


def edge_scatter_numpy(center, t, r, l, n_atoms):
    """A[i, c, n, m] = sum over edges e with center i of t[e,c] r[e,n] l[e,m]."""
    prod = t[:, :, None, None] * r[:, None, :, None] * l[:, None, None, :]
    return segment_sum_numpy(prod, center, n_atoms)


def edge_contract_numpy(center, abar, t, r, l):
    """Reverse of :func:`edge_scatter_numpy`.

    Returns the per-edge cotangents ``(tbar, rbar, lbar)``.
    """
    ae = abar[center]
    x = np.einsum("ecnm,em->ecn", ae, l)
    rbar = np.einsum("ecn,ec->en", x, t)
    tbar = np.einsum("ecn,en->ec", x, r)
    lbar = np.einsum("ecnm,ec,en->em", ae, t, r, optimize=True)
    return tbar, rbar, lbar


def monomials_numpy(u, exps):
    """Values (E, M) and gradients (E, M, 3) of u_x^a u_y^b u_z^c."""
    lmax = int(exps.max()) if exps.size else 0
    powers = np.ones((u.shape[0], lmax + 1, 3))
    for p in range(1, lmax + 1):
        powers[:, p] = powers[:, p - 1] * u
    f = [powers[:, exps[:, k], k] for k in range(3)]
    val = f[0] * f[1] * f[2]
    grad = np.zeros(val.shape + (3,))
    for k in range(3):
        e = exps[:, k]
        lower = powers[:, np.maximum(e - 1, 0), k]
        grad[..., k] = e * lower * f[(k + 1) % 3] * f[(k + 2) % 3]
    return val, grad


def smeared_histogram_numpy(dist, pair_id, n_pairs, centers, sigma, weights):
    """Gaussian-smeared distance histogram per pair-type channel."""
    x = (centers[None, :] - dist[:, None]) / sigma
    g = np.where(np.abs(x) < 8.0, np.exp(-0.5 * x * x), 0.0) * weights[:, None]
    return segment_sum_numpy(g, pair_id, n_pairs)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _pair_search_nb(pos, shift_vecs, rcut):
        n = pos.shape[0]
        ns = shift_vecs.shape[0]
        rc2 = rcut * rcut
        count = 0
        for i in range(n):
            for j in range(n):
                for k in range(ns):
                    dx = pos[j, 0] + shift_vecs[k, 0] - pos[i, 0]
                    dy = pos[j, 1] + shift_vecs[k, 1] - pos[i, 1]
                    dz = pos[j, 2] + shift_vecs[k, 2] - pos[i, 2]
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < rc2 and d2 > 0.0:
                        count += 1
        ii = np.empty(count, np.int64)
        jj = np.empty(count, np.int64)
        kk = np.empty(count, np.int64)
        vv = np.empty((count, 3))
        e = 0
        for i in range(n):
            for j in range(n):
                for k in range(ns):
                    dx = pos[j, 0] + shift_vecs[k, 0] - pos[i, 0]
                    dy = pos[j, 1] + shift_vecs[k, 1] - pos[i, 1]
                    dz = pos[j, 2] + shift_vecs[k, 2] - pos[i, 2]
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < rc2 and d2 > 0.0:
                        ii[e] = i
                        jj[e] = j
                        kk[e] = k
                        vv[e, 0] = dx
                        vv[e, 1] = dy
                        vv[e, 2] = dz
                        e += 1
        return ii, jj, kk, vv

    @njit(cache=True)
    def _segment_sum_nb(values, index, n):
        out = np.zeros((n, values.shape[1]))
        for e in range(values.shape[0]):
            row = index[e]
            for q in range(values.shape[1]):
                out[row, q] += values[e, q]
        return out

    @njit(cache=True)
    def _edge_scatter_nb(center, t, r, l, n_atoms):
        ne, nc = t.shape
        nr = r.shape[1]
        nm = l.shape[1]
        out = np.zeros((n_atoms, nc, nr, nm))
        for e in range(ne):
            i = center[e]
            for c in range(nc):
                tc = t[e, c]
                for n in range(nr):
                    trn = tc * r[e, n]
                    for m in range(nm):
                        out[i, c, n, m] += trn * l[e, m]
        return out

    @njit(cache=True)
    def _edge_contract_nb(center, abar, t, r, l):
        ne, nc = t.shape
        nr = r.shape[1]
        nm = l.shape[1]
        tbar = np.zeros((ne, nc))
        rbar = np.zeros((ne, nr))
        lbar = np.zeros((ne, nm))
        for e in range(ne):
            i = center[e]
            for c in range(nc):
                tc = t[e, c]
                for n in range(nr):
                    rn = r[e, n]
                    acc = 0.0
                    for m in range(nm):
                        a = abar[i, c, n, m]
                        acc += a * l[e, m]
                        lbar[e, m] += a * tc * rn
                    tbar[e, c] += acc * rn
                    rbar[e, n] += acc * tc
        return tbar, rbar, lbar

    @njit(cache=True)
    def _monomials_nb(u, exps):
        ne = u.shape[0]
        nm = exps.shape[0]
        lmax = 0
        for m in range(nm):
            for k in range(3):
                if exps[m, k] > lmax:
                    lmax = exps[m, k]
        val = np.empty((ne, nm))
        grad = np.empty((ne, nm, 3))
        pw = np.empty((lmax + 1, 3))
        for e in range(ne):
            for k in range(3):
                pw[0, k] = 1.0
                for p in range(1, lmax + 1):
                    pw[p, k] = pw[p - 1, k] * u[e, k]
            for m in range(nm):
                a = exps[m, 0]
                b = exps[m, 1]
                c = exps[m, 2]
                fx = pw[a, 0]
                fy = pw[b, 1]
                fz = pw[c, 2]
                val[e, m] = fx * fy * fz
                grad[e, m, 0] = a * pw[a - 1, 0] * fy * fz if a > 0 else 0.0
                grad[e, m, 1] = b * pw[b - 1, 1] * fx * fz if b > 0 else 0.0
                grad[e, m, 2] = c * pw[c - 1, 2] * fx * fy if c > 0 else 0.0
        return val, grad

    @njit(cache=True)
    def _smeared_histogram_nb(dist, pair_id, n_pairs, centers, sigma, weights):
        nb = centers.shape[0]
        out = np.zeros((n_pairs, nb))
        inv = 1.0 / sigma
        for e in range(dist.shape[0]):
            p = pair_id[e]
            w = weights[e]
            for b in range(nb):
                x = (centers[b] - dist[e]) * inv
                if x > -8.0 and x < 8.0:
                    out[p, b] += w * np.exp(-0.5 * x * x)
        return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def pair_search(pos, shift_vecs, rcut):
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    shift_vecs = np.ascontiguousarray(shift_vecs, dtype=np.float64)
    if USE_NUMBA:
        return _pair_search_nb(pos, shift_vecs, float(rcut))
    return pair_search_numpy(pos, shift_vecs, rcut)


def segment_sum(values, index, n):
    values = np.asarray(values, dtype=np.float64)
    if not USE_NUMBA:
        return segment_sum_numpy(values, index, n)
    shape = values.shape
    width = int(np.prod(shape[1:]))
    flat = np.ascontiguousarray(values.reshape(shape[0], width))
    out = _segment_sum_nb(flat, np.asarray(index, dtype=np.int64), int(n))
    return out.reshape((n,) + shape[1:])


def edge_scatter(center, t, r, l, n_atoms):
    if USE_NUMBA:
        return _edge_scatter_nb(
            np.asarray(center, np.int64),
            np.ascontiguousarray(t),
            np.ascontiguousarray(r),
            np.ascontiguousarray(l),
            int(n_atoms),
        )
    return edge_scatter_numpy(center, t, r, l, n_atoms)


def edge_contract(center, abar, t, r, l):
    if USE_NUMBA:
        return _edge_contract_nb(
            np.asarray(center, np.int64),
            np.ascontiguousarray(abar),
            np.ascontiguousarray(t),
            np.ascontiguousarray(r),
            np.ascontiguousarray(l),
        )
    return edge_contract_numpy(center, abar, t, r, l)


def monomials(u, exps):
    if USE_NUMBA:
        return _monomials_nb(np.ascontiguousarray(u, np.float64), np.ascontiguousarray(exps, np.int64))
    return monomials_numpy(u, exps)


def smeared_histogram(dist, pair_id, n_pairs, centers, sigma, weights):
    if USE_NUMBA:
        return _smeared_histogram_nb(
            np.ascontiguousarray(dist, np.float64),
            np.asarray(pair_id, np.int64),
            int(n_pairs),
            np.ascontiguousarray(centers, np.float64),
            float(sigma),
            np.ascontiguousarray(weights, np.float64),
        )
    return smeared_histogram_numpy(dist, pair_id, n_pairs, centers, sigma, weights)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
