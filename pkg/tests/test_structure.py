import itertools

import numpy as np
import pytest
from conftest import cubic_diamond, random_structure

from respmatch import Structure
from respmatch.structure import (
    InvalidCellError,
    UnsupportedError,
    build_neighbor_list,
    make_supercell,
    minimum_image_displacement,
    pair_distances,
    random_rotation,
    wrap_positions,
)


def brute_force_edges(s, r_cut, reach=3):
    """Every (i, j, shift) with 0 < |r_j + shift - r_i| < r_cut, from raw positions."""
    out = {}
    rng = range(-reach, reach + 1) if s.pbc else range(0, 1)
    for i in range(len(s)):
        for j in range(len(s)):
            for shift in itertools.product(rng, repeat=3):
                vec = s.positions[j] - s.positions[i]
                if s.pbc:
                    vec = vec + np.array(shift, dtype=float) @ s.cell
                d = np.linalg.norm(vec)
                if 0 < d < r_cut:
                    out[(i, j, shift if s.pbc else (0, 0, 0))] = vec
    return out


def as_dict(nl):
    return {
        (int(i), int(j), tuple(int(x) for x in sh)): v
        for i, j, sh, v in zip(nl.centers, nl.neighbors, nl.shifts, nl.vectors)
    }


class TestStructure:
    def test_symbols_and_numbers_accepted(self):
        s = Structure(["C", "H", 8], np.zeros((3, 3)) + np.arange(3)[:, None])
        assert s.species.tolist() == [6, 1, 8]
        assert not s.pbc

    def test_arrays_are_read_only(self, diamond):
        with pytest.raises(ValueError):
            diamond.positions[0, 0] = 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Structure([6, 6], np.zeros((3, 3)))

    def test_left_handed_cell_rejected(self):
        with pytest.raises(InvalidCellError):
            Structure([6], np.zeros((1, 3)), np.diag([1.0, 1.0, -1.0]))

    def test_degenerate_cell_rejected(self):
        with pytest.raises(InvalidCellError):
            Structure([6], np.zeros((1, 3)), [[1, 0, 0], [2, 0, 0], [0, 0, 1]])

    def test_molecule_has_no_volume(self):
        with pytest.raises(UnsupportedError):
            Structure([6], np.zeros((1, 3))).volume


class TestMinimumImage:
    def test_cubic_wraps_to_nearest(self):
        d = minimum_image_displacement(np.eye(3) * 10, [0, 0, 0], [9, 0, 0])
        np.testing.assert_allclose(d, [-1, 0, 0], atol=1e-12)

    def test_identity(self, rng):
        cell = np.eye(3) * 4 + rng.uniform(-1, 1, (3, 3))
        r = rng.random(3)
        np.testing.assert_array_equal(minimum_image_displacement(cell, r, r), 0.0)

    def test_triclinic_matches_exhaustive_search(self):
        cell = np.array([[4.0, 0, 0], [2.0, 4.0, 0], [0, 0, 4.0]])
        b = np.array([3.5, 0.5, 0.0])
        best = min(
            (b + np.array(s, dtype=float) @ cell for s in itertools.product(range(-2, 3), repeat=3)),
            key=np.linalg.norm,
        )
        d = minimum_image_displacement(cell, np.zeros(3), b)
        np.testing.assert_allclose(d, best, atol=1e-12)
        np.testing.assert_allclose(d, [-0.5, 0.5, 0.0], atol=1e-12)

    def test_strongly_skewed_cells(self, rng):
        for _ in range(50):
            cell = np.eye(3) * 3 + np.triu(rng.uniform(-2.5, 2.5, (3, 3)), 1)
            a, b = rng.uniform(-6, 6, (2, 3))
            best = min(
                (b - a + np.array(s, dtype=float) @ cell for s in itertools.product(range(-5, 6), repeat=3)),
                key=np.linalg.norm,
            )
            d = minimum_image_displacement(cell, a, b)
            assert np.linalg.norm(d) == pytest.approx(np.linalg.norm(best), abs=1e-12)


class TestNeighborList:
    def test_dimer(self):
        s = Structure([1, 1], [[0, 0, 0], [3, 0, 0]])
        nl = build_neighbor_list(s, 4.0)
        assert nl.counts().tolist() == [1, 1]

    def test_single_atom_small_cell(self):
        s = Structure([6], np.zeros((1, 3)), np.eye(3) * 2.0)
        nl = build_neighbor_list(s, 4.5)
        count = sum(
            1
            for sh in itertools.product(range(-3, 4), repeat=3)
            if 0 < np.linalg.norm(np.array(sh) * 2.0) < 4.5
        )
        assert len(nl) == count
        assert count == 56  # frozen from the enumeration above

    def test_short_cutoff_is_empty(self):
        s = Structure([1, 1, 8], [[0, 0, 0], [1.5, 0, 0], [0, 1.5, 0]])
        nl = build_neighbor_list(s, 1.0)
        assert len(nl) == 0
        assert nl.vectors.shape == (0, 3)

    def test_nonpositive_cutoff(self, diamond):
        with pytest.raises(ValueError):
            build_neighbor_list(diamond, 0.0)

    @pytest.mark.parametrize("pbc", [True, False])
    def test_matches_brute_force(self, rng, pbc):
        for _ in range(10):
            s = random_structure(rng, pbc=pbc)
            # move some atoms outside the cell so the shift bookkeeping matters
            if pbc:
                s = s.copy_with_positions(s.positions + rng.integers(-2, 3, (len(s), 1)) * s.cell[0])
            nl = build_neighbor_list(s, 3.2)
            got = as_dict(nl)
            want = brute_force_edges(s, 3.2, reach=6)
            assert set(got) == set(want)
            for key, v in want.items():
                np.testing.assert_allclose(got[key], v, atol=1e-10)

    def test_reverse_edges(self, rng):
        s = random_structure(rng, n=6, pbc=True)
        nl = build_neighbor_list(s, 4.0)
        edges = as_dict(nl)
        for (i, j, sh), v in edges.items():
            back = edges[(j, i, tuple(-x for x in sh))]
            assert abs(np.linalg.norm(back) - np.linalg.norm(v)) < 1e-12

    def test_ordering(self, rng):
        nl = build_neighbor_list(random_structure(rng, n=5, pbc=True), 3.5)
        keys = [(int(i), int(j), tuple(sh)) for i, j, sh in zip(nl.centers, nl.neighbors, nl.shifts.tolist())]
        assert keys == sorted(keys)

    def test_diamond_coordination(self, diamond):
        nl = build_neighbor_list(diamond, 1.6)
        assert nl.counts().tolist() == [4] * 8
        bond = (8 * 4.4) ** (1 / 3) * np.sqrt(3) / 4
        np.testing.assert_allclose(nl.distances, bond, rtol=1e-12)

    def test_cell_list_path_agrees(self, rng):
        # 8x8x8 diamond supercell (512 atoms) goes through the binned path
        big = make_supercell(cubic_diamond(), 4, 4, 4)
        base = build_neighbor_list(cubic_diamond(), 2.0)
        nl = build_neighbor_list(big, 2.0)
        assert len(nl) == 64 * len(base)
        keys = list(zip(nl.centers.tolist(), nl.neighbors.tolist(), map(tuple, nl.shifts.tolist())))
        assert keys == sorted(keys)
        cluster = Structure(np.full(300, 6), rng.uniform(0, 12, (300, 3)))
        nl = build_neighbor_list(cluster, 2.0)
        want = brute_force_edges(cluster, 2.0)
        assert set(as_dict(nl)) == set(want)

    def test_entries(self):
        s = Structure([1, 8], [[0, 0, 0], [0, 0, 1.0]])
        (j, shift, r, u), = build_neighbor_list(s, 2.0).entries(0)
        assert (j, shift, r) == (1, (0, 0, 0), 1.0)
        np.testing.assert_array_equal(u, [0, 0, 1.0])


class TestSupercellAndWrap:
    def test_identity_supercell(self, diamond):
        s = make_supercell(diamond, 1, 1, 1)
        np.testing.assert_array_equal(s.positions, diamond.positions)
        np.testing.assert_array_equal(s.cell, diamond.cell)

    def test_two_atom_doubling(self):
        s = Structure([1, 1], [[0, 0, 0], [1, 1, 1]], np.eye(3) * 3)
        big = make_supercell(s, 2, 1, 1)
        assert len(big) == 4
        np.testing.assert_array_equal(big.cell[0], [6, 0, 0])
        np.testing.assert_array_equal(big.cell[1:], s.cell[1:])

    def test_diamond_222(self, diamond):
        big = make_supercell(diamond, 2, 2, 2)
        assert len(big) == 64
        assert big.volume == pytest.approx(8 * diamond.volume, rel=1e-14)
        assert big.volume / len(big) == pytest.approx(diamond.volume / 8, rel=1e-12)

    def test_supercell_needs_pbc(self):
        with pytest.raises(UnsupportedError):
            make_supercell(Structure([1], [[0, 0, 0]]), 2, 1, 1)

    def test_wrap_fraction(self):
        cell = np.eye(3) * 2.0
        s = Structure([1], np.array([[1.25, 0.5, -0.5]]) * 2.0, cell)
        np.testing.assert_allclose(wrap_positions(s).fractional(), [[0.25, 0.5, 0.5]], atol=1e-14)

    def test_wrap_keeps_inside_atoms(self, diamond):
        np.testing.assert_array_equal(wrap_positions(diamond).positions, diamond.positions)

    def test_wrap_preserves_distances_and_is_idempotent(self, rng):
        s = random_structure(rng, n=7, pbc=True)
        s = s.copy_with_positions(s.positions + rng.uniform(-10, 10, (7, 3)))
        w = wrap_positions(s)
        np.testing.assert_allclose(pair_distances(w), pair_distances(s), atol=1e-10)
        frac = w.fractional()
        assert np.all((frac >= 0) & (frac < 1))
        np.testing.assert_array_equal(wrap_positions(w).positions, w.positions)

    def test_random_rotation_is_proper(self, rng):
        rot = random_rotation(rng)
        np.testing.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-14)
        assert np.linalg.det(rot) == pytest.approx(1.0)
