"""Pseudo convex hulls, structure fingerprints and embedding PCA."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .elements import symbol
from .structure import Structure, build_neighbor_list


class MissingEndmemberError(ValueError):
    pass


@dataclass(frozen=True)
class HullPoint:
    x: float
    e_ex: float
    structure_ref: str = ""

    def __post_init__(self):
        if not 0.0 <= self.x <= 1.0:
            raise ValueError(f"composition fraction {self.x} outside [0, 1]")
        if not np.isfinite(self.e_ex):
            raise ValueError("excess energy must be finite")


def excess_energy(e_per_atom, x, e_A, e_B):
    """Energy per atom relative to the x-weighted endmembers (A at x=1, B at x=0)."""
    return e_per_atom - x * e_A - (1.0 - x) * e_B


def lower_convex_hull(points, tol: float = 1e-12):
    """Lower convex envelope in (x, e_ex).

    Returns ``(on_hull, vertices)``: a boolean flag per input point (points
    lying on an envelope edge count as on-hull) and the indices of the
    envelope vertices sorted by x.
    """
    pts = list(points)
    xs = np.array([p.x for p in pts], dtype=np.float64)
    es = np.array([p.e_ex for p in pts], dtype=np.float64)
    if not (np.any(xs == 0.0) and np.any(xs == 1.0)):
        raise MissingEndmemberError("both endmembers (x=0 and x=1) are required")
    order = np.lexsort((es, xs))
    hull: list[int] = []
    for k in order:
        if hull and xs[hull[-1]] == xs[k]:
            continue  # higher duplicate at the same x
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (xs[b] - xs[a]) * (es[k] - es[a]) - (es[b] - es[a]) * (xs[k] - xs[a])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(int(k))
    vx = xs[hull]
    ve = es[hull]
    envelope = np.interp(xs, vx, ve)
    scale = max(1.0, float(np.max(np.abs(es))))
    on_hull = es <= envelope + tol * scale
    return on_hull, hull


# ---------------------------------------------------------------------------
# fingerprints and matching
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Fingerprint:
    pairs: tuple[tuple[int, int], ...]
    histogram: np.ndarray  # (n_pairs, bins)
    composition: dict
    volume_per_atom: float | None
    r_max: float
    bins: int
    smearing: float

    def vector(self, pairs) -> np.ndarray:
        lookup = {p: k for k, p in enumerate(self.pairs)}
        out = np.zeros((len(pairs), self.bins))
        for k, p in enumerate(pairs):
            if p in lookup:
                out[k] = self.histogram[lookup[p]]
        return out.ravel()


def structure_fingerprint(s: Structure, r_max: float = 6.0, bins: int = 120, smearing: float = 0.1) -> Fingerprint:
    """Gaussian-smeared pair-distance histogram per species pair, per atom.

    Each neighbor distance r contributes a Gaussian of width ``smearing``
    weighted by 1/r^2, so distant shells do not swamp the near ones.
    """
    if not r_max > 0:
        raise ValueError("r_max must be > 0")
    species = sorted({int(z) for z in s.species})
    pairs = tuple((a, b) for k, a in enumerate(species) for b in species[k:])
    pid = {p: k for k, p in enumerate(pairs)}
    centers = (np.arange(bins) + 0.5) * (r_max / bins)
    nl = build_neighbor_list(s, r_max + 4 * smearing)
    if len(nl):
        zi = s.species[nl.centers]
        zj = s.species[nl.neighbors]
        lo = np.minimum(zi, zj)
        hi = np.maximum(zi, zj)
        ids = np.array([pid[(int(a), int(b))] for a, b in zip(lo, hi)], dtype=np.int64)
        r = nl.distances
        hist = _kernels.smeared_histogram(r, ids, len(pairs), centers, smearing, 1.0 / r**2)
    else:
        hist = np.zeros((len(pairs), bins))
    hist = hist / len(s)
    vpa = s.volume / len(s) if s.pbc else None
    return Fingerprint(pairs, hist, s.composition(), vpa, r_max, bins, smearing)


def fingerprint_distance(fa: Fingerprint, fb: Fingerprint) -> float:
    if (fa.r_max, fa.bins, fa.smearing) != (fb.r_max, fb.bins, fb.smearing):
        raise ValueError("fingerprints were computed on different grids")
    pairs = sorted(set(fa.pairs) | set(fb.pairs))
    va = fa.vector(pairs)
    vb = fb.vector(pairs)
    scale = max(np.linalg.norm(va), np.linalg.norm(vb))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(va - vb) / scale)


def _reduced(comp: dict) -> dict:
    from math import gcd
    from functools import reduce

    g = reduce(gcd, comp.values())
    return {z: n // g for z, n in sorted(comp.items())}


def _scaled_to(s: Structure, volume_per_atom: float) -> Structure:
    f = (volume_per_atom * len(s) / s.volume) ** (1.0 / 3.0)
    return Structure(s.species, s.positions * f, s.cell * f, s.info)


DEFAULT_TOL_F = 0.15
DEFAULT_TOL_V = 0.1


def match_structures(
    a: Structure,
    b: Structure,
    tol_f: float = DEFAULT_TOL_F,
    tol_v: float = DEFAULT_TOL_V,
    r_max: float = 6.0,
    bins: int = 120,
    smearing: float = 0.1,
):
    """Simplified structure matcher; returns ``(matched, fingerprint distance)``.

    Gates: proportional compositions, then volume per atom within ``tol_v``
    (relative), then fingerprint distance below ``tol_f``.  Periodic
    structures are compared after isotropic rescaling to their mean volume
    per atom.
    """
    if _reduced(a.composition()) != _reduced(b.composition()) or a.pbc != b.pbc:
        return False, float("inf")
    if a.pbc:
        va = a.volume / len(a)
        vb = b.volume / len(b)
        if abs(va - vb) / max(va, vb) > tol_v:
            return False, float("inf")
        mean = 0.5 * (va + vb)
        a = _scaled_to(a, mean)
        b = _scaled_to(b, mean)
    d = fingerprint_distance(structure_fingerprint(a, r_max, bins, smearing), structure_fingerprint(b, r_max, bins, smearing))
    return d < tol_f, d


# ---------------------------------------------------------------------------
# embedding PCA and tables
# ---------------------------------------------------------------------------


def embedding_pca(embeddings, n_components: int = 2):
    """Project element embeddings onto their leading principal axes.

    Returns ``(coords (n_el, 2), explained variance ratio (2,))``.  Each
    axis is oriented so its largest-magnitude loading is positive.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        from .structure import UnsupportedError

        raise UnsupportedError("PCA needs embeddings of dimension >= 2")
    if X.shape[0] < 3:
        raise ValueError("PCA needs at least 3 elements")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1][:n_components]
    w = w[order]
    v = v[:, order]
    for k in range(v.shape[1]):
        if v[np.argmax(np.abs(v[:, k])), k] < 0:
            v[:, k] = -v[:, k]
    total = float(np.sum(np.clip(np.linalg.eigvalsh(cov), 0, None)))
    ratio = w / total if total > 0 else np.zeros_like(w)
    return Xc @ v, ratio


@dataclass(frozen=True)
class EVRow:
    molar_volume: float | None
    energy_per_atom: float
    n_atoms: int
    label: str


def energy_volume_table(results, labels=None) -> list[EVRow]:
    rows = []
    for k, r in enumerate(results):
        s = r.structure
        mv = s.volume / len(s) if s.pbc else None
        label = labels[k] if labels is not None else (r.seed or str(k))
        rows.append(EVRow(mv, float(r.pseudo_energy_per_atom), len(s), label))
    return rows


HULL_COLUMNS = ("x", "e_ex", "on_hull", "structure_ref")
EV_COLUMNS = ("molar_volume", "energy_per_atom", "n_atoms", "label")
PCA_COLUMNS = ("element", "pc1", "pc2")


def write_hull_csv(path, points, on_hull) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HULL_COLUMNS)
        for p, flag in zip(points, on_hull):
            w.writerow([repr(float(p.x)), repr(float(p.e_ex)), int(bool(flag)), p.structure_ref])


def write_ev_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EV_COLUMNS)
        for r in rows:
            w.writerow(["" if r.molar_volume is None else repr(r.molar_volume), repr(r.energy_per_atom), r.n_atoms, r.label])


def write_pca_csv(path, elements, coords) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PCA_COLUMNS)
        for z, (a, b) in zip(elements, coords):
            w.writerow([symbol(z), repr(float(a)), repr(float(b))])
