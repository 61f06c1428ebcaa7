"""Fitting the pseudo potential to pseudo-force and pseudo-stress targets."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .noise import NoiseSpec, TrainingSample, make_training_sample
from .potential import model
from .potential.params import Hyper, PotentialParams, save_params
from .structure import Structure

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 1.0
    learning_rate: float = 1e-3
    lr_final: float | None = None
    batch_size: int = 4
    epochs: int = 500
    seed: int = 0
    validation_fraction: float = 0.1
    grad_clip: float | None = None
    checkpoint_interval: int = 0

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.lr_final is not None and not self.lr_final > 0:
            raise ValueError("lr_final must be > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError("grad_clip must be > 0")


@dataclass
class TrainReport:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    force_rmse: list[float] = field(default_factory=list)
    stress_rmse: list[float] = field(default_factory=list)
    best_val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    wall_clock: float = 0.0
    params: PotentialParams | None = field(default=None, repr=False)

    def rows(self):
        for k, e in enumerate(self.epochs):
            yield e, self.train_loss[k], self.val_loss[k], self.force_rmse[k], self.stress_rmse[k]

    def same_trajectory(self, other: "TrainReport") -> bool:
        keys = ("epochs", "train_loss", "val_loss", "force_rmse", "stress_rmse", "best_val_loss", "best_epoch")
        a, b = asdict(self), asdict(other)
        return all(a[k] == b[k] for k in keys)


LOG_HEADER = ("epoch", "train_loss", "val_loss", "force_rmse", "stress_rmse")


def write_log(report: TrainReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for row in report.rows():
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


def _stack_targets(samples):
    forces = np.concatenate([s.target_forces for s in samples])
    stress = np.stack([s.target_stress for s in samples])
    return forces, stress


def rm_loss(p: PotentialParams, sample: TrainingSample, beta: float) -> float:
    f, st = _stack_targets([sample])
    return model.loss_and_gradient(p, [sample.noised], f, st, beta, grad=False)[0]


def loss_param_gradient(p: PotentialParams, batch, beta: float) -> np.ndarray:
    if not batch:
        raise ValueError("empty batch")
    f, st = _stack_targets(batch)
    return model.loss_and_gradient(p, [s.noised for s in batch], f, st, beta)[1]


def batch_loss_and_gradient(p: PotentialParams, batch, beta: float):
    f, st = _stack_targets(batch)
    return model.loss_and_gradient(p, [s.noised for s in batch], f, st, beta)


def fit_normalization(p: PotentialParams, structures) -> PotentialParams:
    """Set the fixed neighbor-sum scale and feature standardization from data."""
    counts = []
    for s in structures:
        g = model.build_graph(p, [s])
        counts.append(len(g.center) / max(g.n_atoms, 1))
    mean_nb = float(np.mean(counts)) if counts else 1.0
    q = p.copy()
    q.edge_scale = 1.0 / max(mean_nb, 1.0)
    q.feature_shift = np.zeros_like(q.feature_shift)
    q.feature_scale = np.ones_like(q.feature_scale)
    B = np.concatenate([model.features(s, q)[1] for s in structures])
    mu = B.mean(axis=0)
    sd = B.std(axis=0)
    sd = np.where(sd > 1e-8 * (np.abs(mu) + 1e-8), sd, 1.0)
    q.feature_shift = mu
    q.feature_scale = sd
    return q


def init_params(dataset, spec: NoiseSpec, hyper: Hyper, rng) -> PotentialParams:
    elements = sorted({int(z) for s in dataset for z in s.species})
    p = PotentialParams.initialize(elements, hyper, rng)
    probe = [make_training_sample(s, spec, rng).noised for s in dataset for _ in range(4)]
    return fit_normalization(p, list(dataset) + probe)


class Adam:
    def __init__(self, n, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.lr = lr
        self.b1, self.b2, self.eps = beta1, beta2, eps

    def step(self, x, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return x - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _evaluate(p, samples, beta):
    """(loss, force RMSE, stress RMSE) over a list of samples."""
    if not samples:
        return float("nan"), float("nan"), float("nan")
    loss = fsq = ssq = 0.0
    n_f = n_s = 0
    for k in range(0, len(samples), 16):
        chunk = samples[k : k + 16]
        f, st = _stack_targets(chunk)
        value, _, det = model.loss_and_gradient(p, [s.noised for s in chunk], f, st, beta, grad=False)
        loss += value
        fsq += det["force_sq"].sum()
        n_f += 3 * int(det["n_atoms"].sum())
        per = np.array([s.noised.pbc for s in chunk])
        ssq += det["stress_sq"][per].sum()
        n_s += 9 * int(per.sum())
    return loss, float(np.sqrt(fsq / max(n_f, 1))), float(np.sqrt(ssq / n_s)) if n_s else 0.0


def train(
    dataset,
    spec: NoiseSpec,
    cfg: TrainConfig,
    hyper: Hyper | None = None,
    params: PotentialParams | None = None,
    log_path=None,
    checkpoint_path=None,
):
    """Fit a potential; returns ``(best params, TrainReport)``.

    Noise is redrawn every epoch.  With fewer than 10 structures (or a zero
    validation fraction) the validation set is a fixed set of fresh noise
    draws on the training structures.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(dataset))
    n_val = int(round(cfg.validation_fraction * len(dataset)))
    if n_val >= 1 and len(dataset) - n_val >= 1:
        val_structs = [dataset[i] for i in order[:n_val]]
        train_structs = [dataset[i] for i in order[n_val:]]
    else:
        val_structs = list(dataset)
        train_structs = list(dataset)
    if params is None:
        params = init_params(train_structs, spec, hyper or Hyper(), rng)
    val_rng = np.random.default_rng([cfg.seed, 1])
    val_samples = [make_training_sample(s, spec, val_rng) for s in val_structs for _ in range(spec.n_noise_per_structure)]

    x = params.to_vector()
    opt = Adam(x.size, cfg.learning_rate)
    report = TrainReport()
    best = float("inf")
    best_params = params
    current = params
    for epoch in range(cfg.epochs):
        if cfg.lr_final is not None and cfg.epochs > 1:
            frac = epoch / (cfg.epochs - 1)
            opt.lr = cfg.learning_rate * (cfg.lr_final / cfg.learning_rate) ** frac
        samples = [make_training_sample(s, spec, rng) for s in train_structs for _ in range(spec.n_noise_per_structure)]
        perm = rng.permutation(len(samples))
        total = 0.0
        for k in range(0, len(samples), cfg.batch_size):
            batch = [samples[i] for i in perm[k : k + cfg.batch_size]]
            loss, grad, _ = batch_loss_and_gradient(current, batch, cfg.beta)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                report.wall_clock = time.perf_counter() - t0
                report.params = best_params
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", report)
            if cfg.grad_clip is not None:
                norm = np.linalg.norm(grad)
                if norm > cfg.grad_clip:
                    grad = grad * (cfg.grad_clip / norm)
            total += loss
            x = opt.step(x, grad)
            current = params.with_vector(x)
        val_loss, frmse, srmse = _evaluate(current, val_samples, cfg.beta)
        if not np.isfinite(val_loss):
            report.wall_clock = time.perf_counter() - t0
            report.params = best_params
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}", report)
        if val_loss < best:
            best = val_loss
            best_params = current
            report.best_epoch = epoch
        report.epochs.append(epoch)
        report.train_loss.append(total / len(samples))
        report.val_loss.append(val_loss / len(val_samples))
        report.force_rmse.append(frmse)
        report.stress_rmse.append(srmse)
        report.best_val_loss.append(best / len(val_samples))
        log.info("epoch %d train %.5g val %.5g F-rmse %.4g S-rmse %.4g", epoch, total / len(samples), val_loss / len(val_samples), frmse, srmse)
        if checkpoint_path and cfg.checkpoint_interval and (epoch + 1) % cfg.checkpoint_interval == 0:
            save_params(best_params, checkpoint_path)
    if cfg.epochs == 0:
        val_loss, frmse, srmse = _evaluate(current, val_samples, cfg.beta)
        report.best_epoch = -1
    report.wall_clock = time.perf_counter() - t0
    report.params = best_params
    if log_path:
        write_log(report, log_path)
    if checkpoint_path:
        save_params(best_params, checkpoint_path)
    return best_params, report


def _rel_err(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(b)) if b.size else 0.0, np.max(np.abs(a)) if a.size else 0.0)
    diff = np.max(np.abs(a - b)) if a.size else 0.0
    if scale == 0.0:
        return 0.0
    return float(diff / scale)


def finite_difference_forces(p, s: Structure, h=1e-4):
    out = np.zeros((len(s), 3))
    for i in range(len(s)):
        for k in range(3):
            pos = s.positions.copy()
            pos[i, k] += h
            ep = model.total_energy(s.copy_with_positions(pos), p)
            pos[i, k] -= 2 * h
            em = model.total_energy(s.copy_with_positions(pos), p)
            out[i, k] = -(ep - em) / (2 * h)
    return out


def finite_difference_stress(p, s: Structure, h=1e-5):
    from .noise import strain_structure

    out = np.zeros((3, 3))
    for a in range(3):
        for b in range(3):
            g = np.zeros((3, 3))
            g[a, b] = h
            ep = model.total_energy(strain_structure(s, g), p)
            em = model.total_energy(strain_structure(s, -g), p)
            out[a, b] = (ep - em) / (2 * h) / s.volume
    return out


def finite_difference_loss_gradient(p, samples, beta, h=1e-5):
    x = p.to_vector()
    out = np.zeros_like(x)
    f, st = _stack_targets(samples)
    structs = [s.noised for s in samples]
    for k in range(x.size):
        xp = x.copy()
        xp[k] += h
        lp = model.loss_and_gradient(p.with_vector(xp), structs, f, st, beta, grad=False)[0]
        xp[k] -= 2 * h
        lm = model.loss_and_gradient(p.with_vector(xp), structs, f, st, beta, grad=False)[0]
        out[k] = (lp - lm) / (2 * h)
    return out


@dataclass
class DerivativeReport:
    force_error: float
    stress_error: float
    gradient_error: float
    force_tol: float = 1e-5
    stress_tol: float = 1e-4
    gradient_tol: float = 1e-4

    @property
    def ok(self) -> bool:
        return (
            self.force_error < self.force_tol
            and self.stress_error < self.stress_tol
            and self.gradient_error < self.gradient_tol
        )


def verify_derivatives(p: PotentialParams, sample: TrainingSample, beta: float = 1.0) -> DerivativeReport:
    """Compare analytic forces, stress and loss gradient with central differences.

    Errors are max |analytic - FD| divided by the largest magnitude of either.
    """
    s = sample.noised
    if len(s) > 8:
        raise ValueError("verify_derivatives is meant for N <= 8")
    f = model.forces(s, p)
    fe = _rel_err(f, finite_difference_forces(p, s))
    if s.pbc:
        se = _rel_err(model.virial_stress(s, p), finite_difference_stress(p, s))
    else:
        se = 0.0
    g = loss_param_gradient(p, [sample], beta)
    ge = _rel_err(g, finite_difference_loss_gradient(p, [sample], beta))
    return DerivativeReport(float(fe), float(se), float(ge))

