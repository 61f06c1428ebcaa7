"""Noising of equilibrium structures and the pseudo-response targets."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .structure import (
    Structure,
    build_neighbor_list,
    minimum_image_vectors,
    wrap_positions,
)


class CoincidentAtomsError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    d_max: float = 0.8
    gamma_max: float = 0.1
    k: float = 1.0
    rep_m: float = 2.0
    rep_n: int = 2
    rep_rc: float = 0.7
    K_normal: float = 1.0
    K_shear: float = 0.5
    n_noise_per_structure: int = 32
    center_displacements: bool = True

    def __post_init__(self):
        if not self.d_max > 0:
            raise ValueError("d_max must be > 0")
        if not self.gamma_max >= 0:
            raise ValueError("gamma_max must be >= 0")
        if not self.k > 0:
            raise ValueError("k must be > 0")
        if not self.rep_rc > 0:
            raise ValueError("rep_rc must be > 0")
        if not self.rep_m >= 0:
            raise ValueError("rep_m must be >= 0")
        if int(self.rep_n) != self.rep_n or self.rep_n < 2:
            raise ValueError("rep_n must be an integer >= 2")
        if int(self.n_noise_per_structure) < 1:
            raise ValueError("n_noise_per_structure must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class TrainingSample:
    noised: Structure
    target_forces: np.ndarray
    target_stress: np.ndarray
    displacements: np.ndarray
    strain: np.ndarray


def sample_displacements(s: Structure, d_max: float, rng) -> np.ndarray:
    """Uniform random direction times a magnitude uniform on [0, d_max]."""
    if not d_max > 0:
        raise ValueError("d_max must be > 0")
    n = len(s)
    direction = rng.normal(size=(n, 3))
    norm = np.linalg.norm(direction, axis=1, keepdims=True)
    norm[norm == 0.0] = 1.0
    mag = rng.uniform(0.0, d_max, size=(n, 1))
    return direction / norm * mag


def sample_strain(gamma_max: float, rng) -> np.ndarray:
    if not gamma_max >= 0:
        raise ValueError("gamma_max must be >= 0")
    v = rng.uniform(-gamma_max, gamma_max, size=6) if gamma_max > 0 else np.zeros(6)
    xx, yy, zz, yz, xz, xy = v
    return np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]])


def strain_structure(s: Structure, strain) -> Structure:
    """Affine map of cell rows and positions by (I + strain)."""
    deform = np.eye(3) + np.asarray(strain, dtype=np.float64)
    return Structure(s.species, s.positions @ deform.T, s.cell @ deform.T, s.info)


def apply_noise(s: Structure, disp, strain) -> Structure:
    disp = np.asarray(disp, dtype=np.float64)
    strain = np.asarray(strain, dtype=np.float64)
    if disp.shape != (len(s), 3) or not np.all(np.isfinite(disp)):
        raise ValueError("displacements must be a finite (N, 3) array")
    if not s.pbc:
        if np.any(strain != 0.0):
            raise ValueError("cannot strain a non-periodic structure")
        return s.copy_with_positions(s.positions + disp)
    strained = strain_structure(s, strain)
    return wrap_positions(strained.copy_with_positions(strained.positions + disp))


def harmonic_force_targets(disp, k: float) -> np.ndarray:
    return -k * np.asarray(disp, dtype=np.float64)


def repulsive_energy(r, rep_m: float, rep_n: int, rep_rc: float):
    r = np.asarray(r, dtype=np.float64)
    x = 1.0 - (r / rep_rc) ** 2
    out = np.where(r < rep_rc, rep_m * np.clip(x, 0.0, None) ** rep_n, 0.0)
    return out if out.ndim else float(out)


def repulsive_energy_derivative(r, rep_m: float, rep_n: int, rep_rc: float):
    """d g_c / d r."""
    r = np.asarray(r, dtype=np.float64)
    x = np.clip(1.0 - (r / rep_rc) ** 2, 0.0, None)
    out = np.where(r < rep_rc, -rep_m * rep_n * x ** (rep_n - 1) * 2.0 * r / rep_rc**2, 0.0)
    return out if out.ndim else float(out)


def repulsive_force_targets(noised: Structure, rep_m: float, rep_n: int, rep_rc: float) -> np.ndarray:
    _check_coincident(noised)
    nl = build_neighbor_list(noised, rep_rc)
    forces = np.zeros((len(noised), 3))
    if len(nl) == 0:
        return forces
    r = nl.distances
    dg = repulsive_energy_derivative(r, rep_m, rep_n, rep_rc)
    # dg < 0 inside r_c, so the center is pushed away from its neighbor
    np.add.at(forces, nl.centers, dg[:, None] * nl.vectors / r[:, None])
    return forces


def _check_coincident(s: Structure) -> None:
    n = len(s)
    if n < 2:
        return
    i, j = np.triu_indices(n, 1)
    d = s.positions[j] - s.positions[i]
    if s.pbc:
        d = minimum_image_vectors(s.cell, d)
    hit = np.nonzero(np.all(d == 0.0, axis=1))[0]
    if hit.size:
        raise CoincidentAtomsError(f"atoms {i[hit[0]]} and {j[hit[0]]} coincide")


def stress_target(strain, K_normal: float, K_shear: float) -> np.ndarray:
    """Restoring pseudo stress: -K_normal on the diagonal, -K_shear off it."""
    strain = np.asarray(strain, dtype=np.float64)
    if strain.shape != (3, 3) or not np.allclose(strain, strain.T, rtol=0, atol=1e-12):
        raise ValueError("strain must be a symmetric 3x3 matrix")
    moduli = np.full((3, 3), K_shear, dtype=np.float64)
    np.fill_diagonal(moduli, K_normal)
    return -moduli * strain


def make_training_sample(s: Structure, spec: NoiseSpec, rng) -> TrainingSample:
    """One noised copy of ``s`` plus its force and stress targets.

    A global noise level u ~ U(0, 1] scales both ``d_max`` and
    ``gamma_max`` for this sample.  With ``center_displacements`` the net
    translation is removed from the harmonic displacements before the
    springs act: a rigid shift is not a deformation, and a
    translation-invariant model has no way to produce the net force it
    would imply.
    """
    u = 1.0 - rng.random()
    if s.pbc:
        strain = sample_strain(spec.gamma_max * u, rng)
    else:
        strain = np.zeros((3, 3))
    disp = sample_displacements(s, spec.d_max * u, rng)
    noised = apply_noise(s, disp, strain)
    if s.pbc:
        reference = strain_structure(s, strain)
        delta = minimum_image_vectors(noised.cell, noised.positions - reference.positions)
        stress = stress_target(strain, spec.K_normal, spec.K_shear)
    else:
        delta = noised.positions - s.positions
        stress = np.zeros((3, 3))
    if spec.center_displacements:
        delta = delta - delta.mean(axis=0)
    forces = harmonic_force_targets(delta, spec.k) + repulsive_force_targets(
        noised, spec.rep_m, spec.rep_n, spec.rep_rc
    )
    return TrainingSample(noised, forces, stress, delta, strain)
