"""Atomic structures, periodic geometry and neighbor lists."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .elements import atomic_number


class InvalidCellError(ValueError):
    pass


class UnsupportedError(ValueError):
    pass


def _frozen(a, dtype=np.float64):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Structure:
    """Species, Cartesian positions (Å) and an optional periodic cell.

    ``cell`` holds lattice vectors as rows.  ``info`` carries free-form
    per-structure metadata (extxyz key-values, generation seeds, ...).
    """

    species: np.ndarray
    positions: np.ndarray
    cell: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        species = np.array([atomic_number(z) for z in np.ravel(self.species)], dtype=np.int64)
        pos = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        if len(species) < 1:
            raise ValueError("a structure needs at least one atom")
        if pos.shape[0] != len(species):
            raise ValueError(f"{len(species)} species but {pos.shape[0]} positions")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        object.__setattr__(self, "species", _frozen(species, np.int64))
        object.__setattr__(self, "positions", _frozen(pos))
        if self.cell is not None:
            cell = np.array(self.cell, dtype=np.float64).reshape(3, 3)
            check_cell(cell)
            object.__setattr__(self, "cell", _frozen(cell))
        object.__setattr__(self, "info", dict(self.info))

    @property
    def pbc(self) -> bool:
        return self.cell is not None

    def __len__(self) -> int:
        return len(self.species)

    @property
    def volume(self) -> float:
        if self.cell is None:
            raise UnsupportedError("non-periodic structure has no volume")
        return float(np.linalg.det(self.cell))

    def fractional(self) -> np.ndarray:
        if self.cell is None:
            raise UnsupportedError("non-periodic structure has no fractional coordinates")
        return self.positions @ np.linalg.inv(self.cell)

    def composition(self) -> dict[int, int]:
        zs, counts = np.unique(self.species, return_counts=True)
        return {int(z): int(c) for z, c in zip(zs, counts)}

    def replace(self, **changes) -> "Structure":
        kw = dict(species=self.species, positions=self.positions, cell=self.cell, info=self.info)
        kw.update(changes)
        return Structure(**kw)

    def copy_with_positions(self, positions, cell=None) -> "Structure":
        return Structure(self.species, positions, self.cell if cell is None else cell, self.info)


def check_cell(cell) -> None:
    cell = np.asarray(cell, dtype=np.float64)
    if cell.shape != (3, 3) or not np.all(np.isfinite(cell)):
        raise InvalidCellError("cell must be a finite 3x3 matrix")
    det = np.linalg.det(cell)
    scale = np.prod(np.linalg.norm(cell, axis=1))
    if not det > 1e-12 * max(scale, 1e-300):
        raise InvalidCellError(f"cell is degenerate or left-handed (det={det:.3g})")


def perpendicular_widths(cell) -> np.ndarray:
    """Distances between opposite faces of the cell."""
    cell = np.asarray(cell, dtype=np.float64)
    inv = np.linalg.inv(cell)
    # row a of the reciprocal (without 2π) is column a of inv
    return 1.0 / np.linalg.norm(inv, axis=0)


def _shift_grid(ranges) -> np.ndarray:
    axes = [range(-n, n + 1) for n in ranges]
    return np.array(list(itertools.product(*axes)), dtype=np.int64)


def minimum_image_displacement(cell, r_a, r_b) -> np.ndarray:
    """Shortest vector from ``r_a`` to any periodic image of ``r_b``."""
    cell = np.asarray(cell, dtype=np.float64)
    check_cell(cell)
    d = np.asarray(r_b, dtype=np.float64) - np.asarray(r_a, dtype=np.float64)
    return minimum_image_vectors(cell, d[None, :])[0]


def minimum_image_vectors(cell, d) -> np.ndarray:
    """Minimum-image version of each row of ``d`` (M, 3)."""
    cell = np.asarray(cell, dtype=np.float64)
    d = np.atleast_2d(np.asarray(d, dtype=np.float64))
    inv = np.linalg.inv(cell)
    f = d @ inv
    f = f - np.round(f)
    v = f @ cell
    widths = perpendicular_widths(cell)
    # |f_a + s_a| * w_a <= |v| bounds the candidate shifts per axis
    reach = np.max(np.linalg.norm(v, axis=1)) if len(v) else 0.0
    ranges = [int(math.ceil(reach / w + 0.5)) for w in widths]
    shifts = _shift_grid(ranges) @ cell
    cand = v[:, None, :] + shifts[None, :, :]
    d2 = np.einsum("msx,msx->ms", cand, cand)
    best = np.argmin(d2, axis=1)
    return cand[np.arange(len(v)), best]


@dataclass(frozen=True, eq=False)
class NeighborList:
    """Directed edges (center i -> neighbor j + shift) within ``r_cut``.

    Flat arrays ordered by center, then neighbor, then lexicographic shift.
    ``vectors[e] = positions[j] + shifts[e] @ cell - positions[i]``.
    """

    centers: np.ndarray
    neighbors: np.ndarray
    shifts: np.ndarray
    vectors: np.ndarray
    r_cut: float
    n_atoms: int

    @property
    def distances(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=1)

    @property
    def unit_vectors(self) -> np.ndarray:
        return self.vectors / self.distances[:, None]

    def __len__(self) -> int:
        return len(self.centers)

    def counts(self) -> np.ndarray:
        return np.bincount(self.centers, minlength=self.n_atoms)

    def entries(self, i: int) -> list[tuple[int, tuple[int, int, int], float, np.ndarray]]:
        """(j, shift, r_ji, unit vector) tuples for atom ``i``."""
        sel = np.nonzero(self.centers == i)[0]
        dist = self.distances
        return [
            (int(self.neighbors[e]), tuple(int(x) for x in self.shifts[e]), float(dist[e]), self.vectors[e] / dist[e])
            for e in sel
        ]


CELL_LIST_THRESHOLD = 200


def build_neighbor_list(s: Structure, r_cut: float) -> NeighborList:
    if not r_cut > 0:
        raise ValueError("r_cut must be positive")
    n = len(s)
    if not s.pbc:
        if n > CELL_LIST_THRESHOLD:
            i, j, vec = _cell_list_pairs(s.positions, None, r_cut)
            shifts = np.zeros((len(i), 3), dtype=np.int64)
        else:
            i, j, _, vec = _kernels.pair_search(s.positions, np.zeros((1, 3)), r_cut)
            shifts = np.zeros((len(i), 3), dtype=np.int64)
        return NeighborList(i, j, shifts, vec, float(r_cut), n)

    cell = s.cell
    frac = s.fractional()
    offsets = np.floor(frac)
    wrapped = (frac - offsets) @ cell
    widths = perpendicular_widths(cell)
    ranges = [int(math.ceil(r_cut / w)) for w in widths]
    if n > CELL_LIST_THRESHOLD and all(w > 3 * r_cut for w in widths):
        i, j, vec, sprime = _cell_list_pairs(wrapped, cell, r_cut)
    else:
        grid = _shift_grid(ranges)
        i, j, k, vec = _kernels.pair_search(wrapped, grid.astype(np.float64) @ cell, r_cut)
        sprime = grid[k]
    off = offsets.astype(np.int64)
    shifts = sprime - off[j] + off[i]
    order = np.lexsort((shifts[:, 2], shifts[:, 1], shifts[:, 0], j, i))
    return NeighborList(i[order], j[order], shifts[order], vec[order], float(r_cut), n)


def _cell_list_pairs(pos, cell, r_cut):
    """Binned pair search for large systems.

    Non-periodic: returns (i, j, vec).  Periodic (cell given, widths > 3 r_cut):
    returns (i, j, vec, image shift) for wrapped positions.
    """
    if cell is None:
        lo = pos.min(axis=0)
        idx = np.floor((pos - lo) / r_cut).astype(np.int64)
        bins: dict[tuple, list[int]] = {}
        for a, key in enumerate(map(tuple, idx)):
            bins.setdefault(key, []).append(a)
        ii, jj = [], []
        for key, members in bins.items():
            cand = []
            for off in itertools.product((-1, 0, 1), repeat=3):
                cand.extend(bins.get((key[0] + off[0], key[1] + off[1], key[2] + off[2]), ()))
            cand = np.array(sorted(cand))
            for a in members:
                d = pos[cand] - pos[a]
                d2 = np.einsum("ij,ij->i", d, d)
                ok = (d2 < r_cut * r_cut) & (d2 > 0)
                ii.append(np.full(ok.sum(), a))
                jj.append(cand[ok])
        i = np.concatenate(ii) if ii else np.zeros(0, np.int64)
        j = np.concatenate(jj) if jj else np.zeros(0, np.int64)
        order = np.lexsort((j, i))
        i, j = i[order], j[order]
        return i, j, pos[j] - pos[i]

    inv = np.linalg.inv(cell)
    frac = pos @ inv
    widths = perpendicular_widths(cell)
    nb = np.maximum((widths / r_cut).astype(np.int64), 1)
    idx = np.minimum((frac * nb).astype(np.int64), nb - 1)
    bins: dict[tuple, list[int]] = {}
    for a, key in enumerate(map(tuple, idx)):
        bins.setdefault(key, []).append(a)
    ii, jj, ss = [], [], []
    for key, members in bins.items():
        for off in itertools.product((-1, 0, 1), repeat=3):
            raw = np.array(key) + off
            shift = np.floor_divide(raw, nb)
            other = tuple(raw - shift * nb)
            cand = bins.get(other)
            if not cand:
                continue
            cand = np.array(cand)
            svec = shift @ cell
            for a in members:
                d = pos[cand] + svec - pos[a]
                d2 = np.einsum("ij,ij->i", d, d)
                ok = (d2 < r_cut * r_cut) & (d2 > 0)
                ii.append(np.full(ok.sum(), a))
                jj.append(cand[ok])
                ss.append(np.repeat(shift[None, :], ok.sum(), axis=0))
    i = np.concatenate(ii)
    j = np.concatenate(jj)
    sprime = np.concatenate(ss).astype(np.int64)
    vec = pos[j] + sprime @ cell - pos[i]
    return i, j, vec, sprime


def make_supercell(s: Structure, n1: int, n2: int, n3: int) -> Structure:
    if not s.pbc:
        raise UnsupportedError("make_supercell needs a periodic structure")
    reps = (int(n1), int(n2), int(n3))
    if min(reps) < 1:
        raise ValueError("supercell multiples must be >= 1")
    grid = np.array(list(itertools.product(*(range(n) for n in reps))), dtype=np.float64)
    offsets = grid @ s.cell
    pos = (offsets[:, None, :] + s.positions[None, :, :]).reshape(-1, 3)
    species = np.tile(s.species, len(grid))
    cell = s.cell * np.array(reps, dtype=np.float64)[:, None]
    return Structure(species, pos, cell, s.info)


def wrap_positions(s: Structure) -> Structure:
    if not s.pbc:
        raise UnsupportedError("wrap_positions needs a periodic structure")
    frac = s.fractional()
    frac = frac - np.floor(frac)
    frac[frac >= 1.0] = 0.0
    wrapped = frac @ s.cell
    # keep atoms that were already inside bit-identical
    inside = np.all((s.fractional() >= 0.0) & (s.fractional() < 1.0), axis=1)
    wrapped[inside] = s.positions[inside]
    return s.copy_with_positions(wrapped)


def rotate(s: Structure, rot) -> Structure:
    """Apply a rotation matrix to positions and cell vectors."""
    rot = np.asarray(rot, dtype=np.float64)
    cell = None if s.cell is None else s.cell @ rot.T
    return Structure(s.species, s.positions @ rot.T, cell, s.info)


def random_rotation(rng) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    a, b, c, d = q
    return np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d],
        ]
    )


def pair_distances(s: Structure) -> np.ndarray:
    """All N(N-1)/2 minimum-image (or plain) pair distances, i<j order."""
    n = len(s)
    i, j = np.triu_indices(n, 1)
    d = s.positions[j] - s.positions[i]
    if s.pbc:
        d = minimum_image_vectors(s.cell, d) if len(d) else d
    return np.linalg.norm(d, axis=1)
