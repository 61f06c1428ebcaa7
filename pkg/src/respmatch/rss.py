"""Random structure search on the learned pseudo potential-energy surface."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .elements import atomic_number
from .structure import Structure, minimum_image_vectors, perpendicular_widths

log = logging.getLogger(__name__)


class PackingInfeasibleError(RuntimeError):
    pass


class RelaxationError(RuntimeError):
    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory or []


@dataclass(frozen=True)
class FireParams:
    dt_start: float = 0.01
    dt_max: float = 0.1
    n_min: int = 5
    f_inc: float = 1.1
    f_dec: float = 0.5
    alpha_start: float = 0.1
    f_alpha: float = 0.99
    max_step: float = 0.2


@dataclass(frozen=True)
class GenSpec:
    """What to generate and how to relax it.

    ``composition`` is one formula unit; each sample uses a number of formula
    units drawn uniformly from ``formula_units``.  When ``molar_volume_range``
    is given the initial volume per atom is drawn from it, otherwise it comes
    from per-element volumes jittered by ``volume_jitter``.
    """

    composition: dict = field(default_factory=lambda: {6: 1})
    pbc: bool = True
    min_distance: float = 0.7
    molar_volume_range: tuple[float, float] | None = None
    formula_units: tuple[int, int] = (1, 1)
    volume_jitter: float = 0.2
    cell_strain: float = 0.3
    min_width_fraction: float = 0.5
    box_volume_per_atom: float = 8.0
    f_tol: float = 1e-3
    max_steps: int = 2000
    relax_cell: bool = True
    max_volume_ratio: float = 4.0
    attempts_per_atom: int = 500
    max_restarts: int = 20

    def __post_init__(self):
        comp = {atomic_number(z): int(n) for z, n in dict(self.composition).items()}
        if not comp or min(comp.values()) < 1:
            raise ValueError("composition counts must be >= 1")
        object.__setattr__(self, "composition", dict(sorted(comp.items())))
        if not self.min_distance > 0:
            raise ValueError("min_distance must be > 0")
        if self.molar_volume_range is not None:
            lo, hi = (float(v) for v in self.molar_volume_range)
            if not 0 < lo <= hi:
                raise ValueError("molar_volume_range must satisfy 0 < v_lo <= v_hi")
            object.__setattr__(self, "molar_volume_range", (lo, hi))
        lo, hi = (int(v) for v in self.formula_units)
        if not 1 <= lo <= hi:
            raise ValueError("formula_units must satisfy 1 <= lo <= hi")
        object.__setattr__(self, "formula_units", (lo, hi))
        if not self.f_tol > 0 or self.max_steps < 0:
            raise ValueError("f_tol > 0 and max_steps >= 0 required")


@dataclass
class RelaxationResult:
    structure: Structure
    pseudo_energy: float
    pseudo_energy_per_atom: float
    converged: bool
    steps: int
    max_force_final: float
    energies: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    initial: Structure | None = field(default=None, repr=False)
    seed: str = ""
    error: str | None = None

    @property
    def molar_volume(self) -> float | None:
        s = self.structure
        return s.volume / len(s) if s.pbc else None


def fit_molar_volumes(training) -> dict[int, float]:
    """Least-squares per-element volumes v_z with V_total ≈ sum_z n_z v_z."""
    training = [s for s in training]
    if any(not s.pbc for s in training):
        raise ValueError("fit_molar_volumes needs periodic structures")
    elements = sorted({int(z) for s in training for z in s.species})
    col = {z: k for k, z in enumerate(elements)}
    X = np.zeros((len(training), len(elements)))
    y = np.array([s.volume for s in training])
    for r, s in enumerate(training):
        for z, n in s.composition().items():
            X[r, col[z]] = n
    rank = np.linalg.matrix_rank(X)
    if rank < len(elements):
        # identify elements whose volume is not determined by the data
        _, _, vt = np.linalg.svd(X)
        null = vt[rank:]
        loose = [elements[k] for k in range(len(elements)) if np.any(np.abs(null[:, k]) > 1e-8)]
        raise ValueError(f"molar volumes undetermined for elements {loose}: design matrix rank {rank} < {len(elements)}")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return {z: float(coef[col[z]]) for z in elements}


def _species_for(spec: GenSpec, rng) -> np.ndarray:
    lo, hi = spec.formula_units
    n_fu = int(rng.integers(lo, hi + 1))
    return np.array([z for z, n in spec.composition.items() for _ in range(n * n_fu)], dtype=np.int64)


def _random_cell(volume: float, spec: GenSpec, rng) -> np.ndarray:
    for _ in range(1000):
        v = rng.uniform(-spec.cell_strain, spec.cell_strain, size=6)
        strain = np.array([[v[0], v[5], v[4]], [v[5], v[1], v[3]], [v[4], v[3], v[2]]])
        h = np.eye(3) + strain
        det = np.linalg.det(h)
        if det <= 0:
            continue
        h = h * (volume / det) ** (1.0 / 3.0)
        if perpendicular_widths(h).min() >= spec.min_width_fraction * volume ** (1.0 / 3.0):
            return h
    raise PackingInfeasibleError("could not draw a cell within the skew limit")


def random_structure(spec: GenSpec, volumes: dict | None, rng) -> Structure:
    """Random cell (or box) filled by sequential rejection sampling."""
    species = _species_for(spec, rng)
    n = len(species)
    dmin = spec.min_distance
    for _ in range(spec.max_restarts):
        if spec.pbc:
            if spec.molar_volume_range is not None:
                volume = n * rng.uniform(*spec.molar_volume_range)
            else:
                if volumes is None:
                    raise ValueError("periodic generation needs per-element volumes or a molar_volume_range")
                try:
                    base = sum(volumes[int(z)] for z in species)
                except KeyError as exc:
                    raise ValueError(f"no molar volume for element {exc.args[0]}") from None
                volume = base * rng.uniform(1.0 - spec.volume_jitter, 1.0 + spec.volume_jitter)
            cell = _random_cell(volume, spec, rng)
            # an atom must also clear its own periodic images
            lattice = np.array([[a, b, c] for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1) if (a, b, c) != (0, 0, 0)])
            if np.min(np.linalg.norm(lattice @ cell, axis=1)) < dmin:
                continue
        else:
            cell = None
            side = (n * spec.box_volume_per_atom) ** (1.0 / 3.0)
        placed = np.zeros((0, 3))
        ok = True
        for _ in range(n):
            for _ in range(spec.attempts_per_atom):
                if cell is not None:
                    trial = rng.random(3) @ cell
                else:
                    trial = rng.random(3) * side
                if len(placed):
                    d = placed - trial
                    if cell is not None:
                        d = minimum_image_vectors(cell, d)
                    if np.min(np.linalg.norm(d, axis=1)) < dmin:
                        continue
                placed = np.vstack([placed, trial])
                break
            else:
                ok = False
                break
        if ok:
            return Structure(species, placed, cell)
    raise PackingInfeasibleError(
        f"could not place {n} atoms with min_distance {dmin} after {spec.max_restarts} restarts; try a larger volume"
    )


def fire_relax(s: Structure, potential, spec: GenSpec, fire: FireParams | None = None) -> RelaxationResult:
    """FIRE minimization of positions (and the cell, if periodic and ``relax_cell``).

    ``potential`` needs ``calculate(structure) -> (energy, forces, stress)``
    where stress is the virial stress (1/V) dE/dstrain.  Cell degrees of
    freedom are c * D with D the deformation gradient from the starting cell
    and c = V0^(1/3); their conjugate force is -(V/c) stress D^-T.
    """
    fire = fire or FireParams()
    n = len(s)
    relax_cell = bool(spec.relax_cell and s.pbc)
    h0 = s.cell
    v0 = s.volume if s.pbc else None
    c = v0 ** (1.0 / 3.0) if relax_cell else 1.0

    def unpack(X):
        if not relax_cell:
            return Structure(s.species, X[:n], h0, s.info)
        D = X[n:] / c
        return Structure(s.species, X[:n] @ D.T, h0 @ D.T, s.info)

    def gradient(X):
        st = unpack(X)
        e, f, sigma = potential.calculate(st)
        if not relax_cell:
            return st, e, f
        D = X[n:] / c
        gx = f @ D
        gcell = -(st.volume / c) * sigma @ np.linalg.inv(D).T
        return st, e, np.vstack([gx, gcell])

    X = s.positions.copy()
    if relax_cell:
        X = np.vstack([X, c * np.eye(3)])
    v = np.zeros_like(X)
    dt = fire.dt_start
    alpha = fire.alpha_start
    n_pos = 0
    energies = []
    trajectory = []
    steps = 0
    while True:
        st, e, G = gradient(X)
        energies.append(e)
        trajectory.append(st)
        if len(trajectory) > 5:
            trajectory.pop(0)
        if not (np.isfinite(e) and np.all(np.isfinite(G))):
            raise RelaxationError(f"non-finite energy or forces at step {steps}", trajectory)
        fmax = float(np.max(np.abs(G))) if G.size else 0.0
        if fmax < spec.f_tol or steps >= spec.max_steps:
            break
        if relax_cell:
            ratio = st.volume / v0
            if not (1.0 / spec.max_volume_ratio < ratio < spec.max_volume_ratio):
                raise RelaxationError(f"cell volume changed by a factor {ratio:.3g}", trajectory)
        P = float(np.sum(G * v))
        if P > 0:
            vn = np.linalg.norm(v)
            gn = np.linalg.norm(G)
            v = (1.0 - alpha) * v + alpha * vn * G / gn
            if n_pos > fire.n_min:
                dt = min(dt * fire.f_inc, fire.dt_max)
                alpha *= fire.f_alpha
            n_pos += 1
        else:
            v[:] = 0.0
            dt *= fire.f_dec
            alpha = fire.alpha_start
            n_pos = 0
        v = v + dt * G
        dx = dt * v
        norm = np.linalg.norm(dx)
        if norm > fire.max_step:
            dx *= fire.max_step / norm
        X = X + dx
        steps += 1
    converged = fmax < spec.f_tol
    return RelaxationResult(
        structure=st,
        pseudo_energy=float(e),
        pseudo_energy_per_atom=float(e) / n,
        converged=converged,
        steps=steps,
        max_force_final=fmax,
        energies=np.array(energies),
        initial=s,
    )


def _run_one(args):
    potential, spec, volumes, seed_seq, label, fire = args
    rng = np.random.default_rng(seed_seq)
    try:
        start = random_structure(spec, volumes, rng)
    except PackingInfeasibleError as exc:
        return None, label, str(exc)
    try:
        res = fire_relax(start, potential, spec, fire)
    except RelaxationError as exc:
        last = exc.trajectory[-1] if exc.trajectory else start
        res = RelaxationResult(last, float("nan"), float("nan"), False, -1, float("nan"), initial=start, error=str(exc))
    res.seed = label
    res.structure.info.update({"seed": label})
    return res, label, None


def generate(potential, spec: GenSpec, n_samples: int, seed=0, volumes=None, workers: int = 1, fire=None):
    """``n_samples`` independent random-start relaxations sorted by energy per atom.

    Each sample has its own rng stream spawned from ``seed``, so results do
    not depend on ``workers``.  Failed samples are kept with ``error`` set
    and sort last.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    children = np.random.SeedSequence(seed).spawn(n_samples)
    jobs = [(potential, spec, volumes, child, f"{seed}:{k}", fire) for k, child in enumerate(children)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_one, jobs))
    else:
        outputs = [_run_one(job) for job in jobs]
    results = []
    for res, label, err in outputs:
        if res is None:
            log.warning("sample %s failed: %s", label, err)
            continue
        results.append(res)
    key = [(np.isnan(r.pseudo_energy_per_atom), r.pseudo_energy_per_atom if not np.isnan(r.pseudo_energy_per_atom) else 0.0) for r in results]
    order = sorted(range(len(results)), key=lambda k: key[k])
    return [results[k] for k in order]
