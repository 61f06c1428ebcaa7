"""Radial and Cartesian angular bases and the invariant contractions."""

from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np

from .. import _kernels


def cutoff_fn(r, r_cut):
    r = np.asarray(r, dtype=np.float64)
    inside = r < r_cut
    return np.where(inside, 0.5 * (np.cos(np.pi * r / r_cut) + 1.0), 0.0)


def radial_basis(r, n_max: int, r_cut: float, derivative: bool = False):
    """R_n(r) = sin(n pi r / r_cut) / r * f_cut(r), n = 1..n_max.

    Returns an (..., n_max) array, plus dR/dr when ``derivative``.
    """
    r = np.asarray(r, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError("radial basis needs r > 0")
    n = np.arange(1, n_max + 1, dtype=np.float64)
    k = n * np.pi / r_cut
    rr = r[..., None]
    inside = rr < r_cut
    fc = np.where(inside, 0.5 * (np.cos(np.pi * rr / r_cut) + 1.0), 0.0)
    s = np.sin(k * rr)
    val = s / rr * fc
    if not derivative:
        return val
    dfc = np.where(inside, -0.5 * np.pi / r_cut * np.sin(np.pi * rr / r_cut), 0.0)
    ds = (k * np.cos(k * rr) * rr - s) / (rr * rr)
    return val, ds * fc + s / rr * dfc


@lru_cache(maxsize=None)
def monomials(l_max: int) -> tuple[tuple[int, int, int], ...]:
    """Exponent triples (lx, ly, lz) ordered by total degree, then descending lx, ly."""
    out = []
    for total in range(l_max + 1):
        for lx in range(total, -1, -1):
            for ly in range(total - lx, -1, -1):
                out.append((lx, ly, total - lx - ly))
    return tuple(out)


def multinomial(l) -> int:
    lx, ly, lz = l
    return factorial(lx + ly + lz) // (factorial(lx) * factorial(ly) * factorial(lz))


def angular_basis(u, l) -> float | np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    return u[..., 0] ** l[0] * u[..., 1] ** l[1] * u[..., 2] ** l[2]


def angular_all(u, l_max: int, derivative: bool = False):
    """All monomials for unit vectors ``u`` (E, 3) -> (E, M) [, (E, M, 3)]."""
    u = np.asarray(u, dtype=np.float64).reshape(-1, 3)
    val, grad = _kernels.monomials(u, _exponents(l_max))
    return (val, grad) if derivative else val


@lru_cache(maxsize=None)
def _exponents(l_max: int) -> np.ndarray:
    e = np.array(monomials(l_max), dtype=np.int64)
    e.setflags(write=False)
    return e


class Contraction:
    """Rotation-invariant polynomial features of A over the monomial axis.

    Body order 2 (per degree L):
        B2_L = sum_{|l|=L} C(l) A_l^2
    Body order 3 (per degree pair L1 <= L2, L1 + L2 <= l_max):
        B3_{L1 L2} = sum_{|l1|=L1, |l2|=L2} C(l1) C(l2) A_l1 A_l2 A_{l1+l2}
    Both are full Cartesian tensor contractions written in multi-index form,
    so invariance holds algebraically.
    """

    def __init__(self, l_max: int, nu_max: int):
        if nu_max not in (2, 3):
            raise ValueError("nu_max must be 2 or 3")
        self.l_max = l_max
        self.nu_max = nu_max
        mono = monomials(l_max)
        index = {l: k for k, l in enumerate(mono)}
        self.n_mono = len(mono)

        labels: list[tuple] = []
        terms2 = []  # (feature, a, coef)
        for L in range(l_max + 1):
            f = len(labels)
            labels.append((2, L))
            for l in mono:
                if sum(l) == L:
                    terms2.append((f, index[l], multinomial(l)))
        terms3 = []  # (feature, a, b, c, coef)
        if nu_max >= 3:
            for L1 in range(l_max + 1):
                for L2 in range(L1, l_max + 1 - L1):
                    f = len(labels)
                    labels.append((3, L1, L2))
                    for l1 in mono:
                        if sum(l1) != L1:
                            continue
                        for l2 in mono:
                            if sum(l2) != L2:
                                continue
                            l3 = (l1[0] + l2[0], l1[1] + l2[1], l1[2] + l2[2])
                            terms3.append((f, index[l1], index[l2], index[l3], multinomial(l1) * multinomial(l2)))
        self.labels = tuple(labels)
        self.n_features = len(labels)
        m = self.n_mono
        nf = self.n_features

        t2 = np.array(terms2, dtype=np.int64).reshape(-1, 3)
        self._a2 = t2[:, 1]
        self._c2 = t2[:, 2].astype(np.float64)
        self._p2 = np.zeros((len(t2), nf))
        self._p2[np.arange(len(t2)), t2[:, 0]] = 1.0
        self._s2 = np.zeros((len(t2), m))
        self._s2[np.arange(len(t2)), self._a2] = 1.0

        t3 = np.array(terms3, dtype=np.int64).reshape(-1, 5)
        self._i3 = [t3[:, 1], t3[:, 2], t3[:, 3]]
        self._c3 = t3[:, 4].astype(np.float64)
        self._p3 = np.zeros((len(t3), nf))
        self._p3[np.arange(len(t3)), t3[:, 0]] = 1.0
        self._s3 = []
        for idx in self._i3:
            s = np.zeros((len(t3), m))
            s[np.arange(len(t3)), idx] = 1.0
            self._s3.append(s)
        self.has3 = len(t3) > 0

    # A has shape (..., M); features have shape (..., F)

    def forward(self, A):
        a = A[..., self._a2]
        out = (self._c2 * a * a) @ self._p2
        if self.has3:
            x, y, z = (A[..., i] for i in self._i3)
            out = out + (self._c3 * x * y * z) @ self._p3
        return out

    def vjp(self, A, gbar):
        """d(sum gbar * B)/dA."""
        g2 = (gbar @ self._p2.T) * self._c2
        out = (2.0 * g2 * A[..., self._a2]) @ self._s2
        if self.has3:
            g3 = (gbar @ self._p3.T) * self._c3
            x, y, z = (A[..., i] for i in self._i3)
            out = out + (g3 * y * z) @ self._s3[0] + (g3 * x * z) @ self._s3[1] + (g3 * x * y) @ self._s3[2]
        return out

    def jvp(self, A, Adot):
        a = A[..., self._a2]
        ad = Adot[..., self._a2]
        out = (2.0 * self._c2 * a * ad) @ self._p2
        if self.has3:
            x, y, z = (A[..., i] for i in self._i3)
            xd, yd, zd = (Adot[..., i] for i in self._i3)
            out = out + (self._c3 * (xd * y * z + x * yd * z + x * y * zd)) @ self._p3
        return out

    def vjp_of_jvp(self, A, Adot, gbar, gdotbar):
        """Cotangents of (A, Adot) for  sum gbar*B(A) + gdotbar*Bdot(A, Adot)."""
        g2 = (gbar @ self._p2.T) * self._c2
        h2 = (gdotbar @ self._p2.T) * self._c2
        a = A[..., self._a2]
        ad = Adot[..., self._a2]
        abar = (2.0 * g2 * a + 2.0 * h2 * ad) @ self._s2
        adbar = (2.0 * h2 * a) @ self._s2
        if self.has3:
            g3 = (gbar @ self._p3.T) * self._c3
            h3 = (gdotbar @ self._p3.T) * self._c3
            x, y, z = (A[..., i] for i in self._i3)
            xd, yd, zd = (Adot[..., i] for i in self._i3)
            sx, sy, sz = self._s3
            abar = (
                abar
                + (g3 * y * z + h3 * (yd * z + y * zd)) @ sx
                + (g3 * x * z + h3 * (xd * z + x * zd)) @ sy
                + (g3 * x * y + h3 * (xd * y + x * yd)) @ sz
            )
            adbar = adbar + (h3 * y * z) @ sx + (h3 * x * z) @ sy + (h3 * x * y) @ sz
        return abar, adbar

