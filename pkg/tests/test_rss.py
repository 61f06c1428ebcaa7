import itertools

import numpy as np
import pytest
from conftest import CellSpring, QuadraticBowl, cubic_diamond, random_params

from respmatch import Structure
from respmatch.rss import (
    FireParams,
    GenSpec,
    PackingInfeasibleError,
    RelaxationError,
    fire_relax,
    fit_molar_volumes,
    generate,
    random_structure,
)
from respmatch.structure import perpendicular_widths


def closest_approach(s):
    """Smallest distance between any two atoms or periodic images, by brute force."""
    shifts = [np.array(t) @ s.cell for t in itertools.product((-1, 0, 1), repeat=3)] if s.pbc else [np.zeros(3)]
    best = np.inf
    for i in range(len(s)):
        for j in range(len(s)):
            for sh in shifts:
                if i == j and not sh.any():
                    continue
                best = min(best, np.linalg.norm(s.positions[j] + sh - s.positions[i]))
    return best


class TestGenSpec:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(composition={6: 0}),
            dict(min_distance=0.0),
            dict(molar_volume_range=(5.0, 4.0)),
            dict(formula_units=(3, 2)),
            dict(f_tol=0.0),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            GenSpec(**kwargs)

    def test_symbols_normalized(self):
        assert GenSpec(composition={"O": 1, "Li": 2}).composition == {3: 2, 8: 1}


class TestMolarVolumes:
    def test_pure_element(self):
        structs = [cubic_diamond(5.0), Structure([6] * 3, np.eye(3), np.eye(3) * 15.0 ** (1 / 3))]
        assert fit_molar_volumes(structs) == {6: pytest.approx(5.0, rel=1e-14)}

    def test_two_elements_additive(self):
        def box(species, v):
            return Structure(species, np.zeros((len(species), 3)) + np.arange(len(species))[:, None] * 0.1, np.eye(3) * v ** (1 / 3))

        structs = [box([3, 3, 16], 2 * 20.0 + 30.0), box([3, 16, 16], 20.0 + 2 * 30.0), box([16], 30.0)]
        v = fit_molar_volumes(structs)
        assert v[3] == pytest.approx(20.0, abs=1e-10) and v[16] == pytest.approx(30.0, abs=1e-10)

    def test_normal_equations(self, rng):
        counts = rng.integers(1, 6, size=(12, 3))
        volumes = counts @ [7.0, 11.0, 15.0] + rng.normal(0, 2.0, 12)
        structs = []
        for c, vol in zip(counts, volumes):
            species = np.repeat([1, 6, 8], c)
            structs.append(Structure(species, rng.random((len(species), 3)), np.eye(3) * vol ** (1 / 3)))
        X = counts.astype(float)
        want = np.linalg.solve(X.T @ X, X.T @ np.array([s.volume for s in structs]))
        got = fit_molar_volumes(structs)
        np.testing.assert_allclose([got[1], got[6], got[8]], want, rtol=1e-10)

    def test_rank_deficient_names_elements(self):
        s = Structure([3, 8], [[0, 0, 0], [1, 1, 1]], np.eye(3) * 3)
        with pytest.raises(ValueError, match=r"\[3, 8\]"):
            fit_molar_volumes([s, make_double(s)])

    def test_molecules_rejected(self):
        with pytest.raises(ValueError):
            fit_molar_volumes([Structure([1], [[0, 0, 0]])])


def make_double(s):
    return Structure(list(s.species) * 2, np.vstack([s.positions, s.positions + 0.5]), s.cell * 2 ** (1 / 3))


class TestRandomStructure:
    def test_min_distance_periodic(self, rng):
        spec = GenSpec(composition={6: 1, 8: 2}, formula_units=(1, 4), min_distance=1.2)
        for _ in range(20):
            s = random_structure(spec, {6: 9.0, 8: 12.0}, rng)
            assert closest_approach(s) >= 1.2
            assert perpendicular_widths(s.cell).min() >= 0.5 * s.volume ** (1 / 3) - 1e-12

    def test_min_distance_molecule(self, rng):
        spec = GenSpec(composition={1: 4, 6: 2}, pbc=False)
        for _ in range(20):
            s = random_structure(spec, None, rng)
            assert not s.pbc and len(s) == 6
            assert closest_approach(s) >= 0.7

    def test_single_atom_volume(self, rng):
        for _ in range(20):
            s = random_structure(GenSpec(composition={"C": 1}), {6: 5.7}, rng)
            assert len(s) == 1
            assert 0.8 * 5.7 <= s.volume <= 1.2 * 5.7

    def test_molar_volume_range(self, rng):
        spec = GenSpec(molar_volume_range=(3.8, 5.6), formula_units=(2, 12))
        for _ in range(20):
            s = random_structure(spec, None, rng)
            assert 2 <= len(s) <= 12
            assert 3.8 <= s.volume / len(s) <= 5.6

    def test_infeasible_packing(self, rng):
        spec = GenSpec(composition={6: 20}, molar_volume_range=(0.5, 0.5), min_distance=1.5, max_restarts=2, attempts_per_atom=50)
        with pytest.raises(PackingInfeasibleError, match="larger volume"):
            random_structure(spec, None, rng)

    def test_missing_volume(self, rng):
        with pytest.raises(ValueError):
            random_structure(GenSpec(composition={8: 1}), {6: 5.0}, rng)


class TestFire:
    def test_bowl_reaches_minimum(self, rng):
        x0 = rng.uniform(0, 5, (4, 3))
        start = Structure([1] * 4, x0 + rng.uniform(-1, 1, (4, 3)))
        res = fire_relax(start, QuadraticBowl(x0), GenSpec(pbc=False, f_tol=1e-7))
        assert res.converged and res.steps < 500
        assert np.abs(res.structure.positions - x0).max() < 1e-6
        assert res.max_force_final < 1e-7
        assert res.energies[-1] <= res.energies[0]

    def test_fixed_point(self, rng):
        x0 = rng.uniform(0, 5, (3, 3))
        res = fire_relax(Structure([1] * 3, x0), QuadraticBowl(x0), GenSpec(pbc=False))
        assert res.converged and res.steps <= 1
        np.testing.assert_allclose(res.structure.positions, x0, atol=1e-8)

    def test_cell_degrees_of_freedom(self, rng):
        h0 = np.diag([3.0, 3.5, 4.0])
        start = cubic_diamond(4.4).copy_with_positions(cubic_diamond(4.4).positions, cell=h0 @ (np.eye(3) + 0.05 * rng.uniform(-1, 1, (3, 3))).T)
        res = fire_relax(start, CellSpring(h0), GenSpec(f_tol=1e-8, max_steps=5000))
        assert res.converged
        np.testing.assert_allclose(res.structure.cell, h0, atol=1e-6)

    def test_fixed_cell(self, rng):
        x0 = cubic_diamond().positions
        start = cubic_diamond().copy_with_positions(x0 + 0.1 * rng.normal(size=x0.shape))
        res = fire_relax(start, QuadraticBowl(x0), GenSpec(relax_cell=False, f_tol=1e-8))
        np.testing.assert_array_equal(res.structure.cell, start.cell)
        np.testing.assert_allclose(res.structure.positions, x0, atol=1e-7)

    def test_max_steps_not_converged(self, rng):
        x0 = rng.uniform(0, 5, (3, 3))
        res = fire_relax(Structure([1] * 3, x0 + 1.0), QuadraticBowl(x0), GenSpec(pbc=False, max_steps=3))
        assert not res.converged and res.steps == 3

    def test_step_is_capped(self, rng):
        x0 = np.zeros((1, 3))
        res = fire_relax(Structure([1], [[50.0, 0, 0]]), QuadraticBowl(x0, k=100.0), GenSpec(pbc=False, max_steps=4), FireParams(max_step=0.2))
        assert res.structure.positions[0, 0] >= 50.0 - 4 * 0.2 - 1e-12

    def test_non_finite_aborts(self):
        class Broken:
            def calculate(self, s):
                return float("nan"), np.zeros((len(s), 3)), None

        with pytest.raises(RelaxationError) as info:
            fire_relax(Structure([1], [[0, 0, 0]]), Broken(), GenSpec(pbc=False))
        assert len(info.value.trajectory) == 1


@pytest.fixture(scope="module")
def model():
    return random_params(np.random.default_rng(3), elements=(6,), r_cut=3.0, n_max=2, l_max=1, nu_max=2, n_embedding=1, hidden=4)


class TestGenerate:
    spec = GenSpec(molar_volume_range=(6.0, 9.0), formula_units=(2, 4), max_steps=150, f_tol=1e-2)

    def test_deterministic_and_sorted(self, model):
        a = generate(model, self.spec, 4, seed=11)
        b = generate(model, self.spec, 4, seed=11)
        assert [r.seed for r in a] == [r.seed for r in b]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.structure.positions, y.structure.positions)
            assert x.pseudo_energy == y.pseudo_energy
        e = [r.pseudo_energy_per_atom for r in a if r.error is None]
        assert e == sorted(e)
        assert sorted(r.seed for r in a) == [f"11:{k}" for k in range(4)]

    def test_converged_runs_below_tolerance(self, model):
        for r in generate(model, self.spec, 4, seed=2):
            if r.converged:
                assert r.max_force_final < self.spec.f_tol
            if r.error is None:
                assert r.energies[-1] <= r.energies[0]

    def test_workers_match_serial(self, model):
        serial = generate(model, self.spec, 3, seed=5)
        pooled = generate(model, self.spec, 3, seed=5, workers=2)
        assert [r.seed for r in serial] == [r.seed for r in pooled]
        for x, y in zip(serial, pooled):
            np.testing.assert_array_equal(x.structure.positions, y.structure.positions)

    def test_needs_samples(self, model):
        with pytest.raises(ValueError):
            generate(model, self.spec, 0)
