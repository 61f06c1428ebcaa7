"""Energy, forces, virial stress and parameter gradients of the pseudo potential.

Batches of structures are evaluated as one disjoint graph.  Every
derivative is exact: forces and the virial come from a reverse pass over
the edge geometry, and the loss gradient uses the identity

    dL/dθ = 2 d/dθ [ sum_e g_e(θ) · w_e ]

where g_e = dE/d(edge vector) and w_e collects the force and stress
residuals (held fixed).  The bracket is a directional derivative of E, so it
is evaluated in forward (tangent) mode and then differentiated in reverse
mode with respect to θ.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _kernels
from ..structure import Structure, build_neighbor_list
from .basis import angular_all, radial_basis
from .params import PotentialParams


@dataclass
class Graph:
    species_idx: np.ndarray  # (N,)
    positions: np.ndarray  # (N, 3)
    center: np.ndarray  # (E,)
    neighbor: np.ndarray  # (E,)
    vectors: np.ndarray  # (E, 3)
    atom_struct: np.ndarray  # (N,)
    edge_struct: np.ndarray  # (E,)
    volumes: np.ndarray  # (S,), nan for molecules
    periodic: np.ndarray  # (S,) bool
    n_atoms: int
    n_structs: int


def build_graph(params: PotentialParams, structures) -> Graph:
    species, pos, centers, neigh, vecs, astruct, estruct, vols, per = [], [], [], [], [], [], [], [], []
    offset = 0
    for k, s in enumerate(structures):
        nl = build_neighbor_list(s, params.r_cut)
        species.append(params.element_index(s.species))
        pos.append(s.positions)
        centers.append(nl.centers + offset)
        neigh.append(nl.neighbors + offset)
        vecs.append(nl.vectors)
        astruct.append(np.full(len(s), k))
        estruct.append(np.full(len(nl), k))
        vols.append(s.volume if s.pbc else np.nan)
        per.append(s.pbc)
        offset += len(s)
    return Graph(
        species_idx=np.concatenate(species),
        positions=np.concatenate(pos),
        center=np.concatenate(centers).astype(np.int64),
        neighbor=np.concatenate(neigh).astype(np.int64),
        vectors=np.concatenate(vecs).reshape(-1, 3),
        atom_struct=np.concatenate(astruct).astype(np.int64),
        edge_struct=np.concatenate(estruct).astype(np.int64),
        volumes=np.array(vols, dtype=np.float64),
        periodic=np.array(per, dtype=bool),
        n_atoms=offset,
        n_structs=len(structures),
    )


class _Pass:
    """Forward pass with every intermediate kept for the derivative passes."""

    def __init__(self, params: PotentialParams, g: Graph):
        self.p = params
        self.g = g
        h = params.hyper
        c = params.contraction
        d = g.vectors
        self.r = np.linalg.norm(d, axis=1)
        self.u = d / self.r[:, None] if len(d) else d
        if len(d):
            self.R, self.dR = radial_basis(self.r, h.n_max, h.r_cut, derivative=True)
            self.L, self.dL = angular_all(self.u, h.l_max, derivative=True)
        else:
            self.R = self.dR = np.zeros((0, h.n_max))
            self.L = np.zeros((0, h.n_mono))
            self.dL = np.zeros((0, h.n_mono, 3))
        emb = params.embeddings
        self.th_i = emb[g.species_idx[g.center]]
        self.th_j = emb[g.species_idx[g.neighbor]]
        k = h.n_embedding
        self.T = (self.th_i[:, :, None] * self.th_j[:, None, :]).reshape(-1, k * k) * params.edge_scale
        n = g.n_atoms
        self.A = _kernels.edge_scatter(g.center, self.T, self.R, self.L, n)  # (N, C, n, M)
        self.B = c.forward(self.A).reshape(n, -1)
        self.Bh = (self.B - params.feature_shift) / params.feature_scale
        self.z = self.Bh @ params.w1.T + params.b1
        self.hid = np.tanh(self.z)
        self.atomic_energy = self.hid @ params.w2 + params.b2
        self.energy = np.bincount(g.atom_struct, weights=self.atomic_energy, minlength=g.n_structs)

    def _feature_shape(self):
        h = self.p.hyper
        return (self.g.n_atoms, h.n_channels, h.n_max, self.p.contraction.n_features)

    def edge_gradients(self):
        """g_e = dE_total / d(edge vector e)."""
        p = self.p
        self.dsig = 1.0 - self.hid**2
        self.zbar = p.w2 * self.dsig
        bbar = (self.zbar @ p.w1) / p.feature_scale
        self.Abar = p.contraction.vjp(self.A, bbar.reshape(self._feature_shape()))
        _, rbar, lbar = _kernels.edge_contract(self.g.center, self.Abar, self.T, self.R, self.L)
        rs = np.einsum("en,en->e", rbar, self.dR)
        us = np.einsum("em,emk->ek", lbar, self.dL)
        tang = us - np.einsum("ek,ek->e", us, self.u)[:, None] * self.u
        self.ge = rs[:, None] * self.u + tang / self.r[:, None]
        return self.ge

    def forces(self):
        g = self.g
        ge = self.ge
        grad = _kernels.segment_sum(ge, g.neighbor, g.n_atoms) - _kernels.segment_sum(ge, g.center, g.n_atoms)
        return -grad

    def virial(self):
        """(S, 3, 3) sum over edges of g_e ⊗ d_e."""
        outer = (self.ge[:, :, None] * self.g.vectors[:, None, :]).reshape(-1, 9)
        return _kernels.segment_sum(outer, self.g.edge_struct, self.g.n_structs).reshape(-1, 3, 3)

    def tangent_and_param_grad(self, w):
        """Directional derivative S = sum_e g_e·w_e and dS/dθ."""
        p = self.p
        g = self.g
        h = p.hyper
        rdot = np.einsum("ek,ek->e", self.u, w)
        udot = (w - rdot[:, None] * self.u) / self.r[:, None] if len(w) else w
        Rdot = self.dR * rdot[:, None]
        Ldot = np.einsum("emk,ek->em", self.dL, udot)
        Adot = _kernels.edge_scatter(g.center, self.T, Rdot, self.L, g.n_atoms) + _kernels.edge_scatter(
            g.center, self.T, self.R, Ldot, g.n_atoms
        )
        Bhdot = p.contraction.jvp(self.A, Adot).reshape(g.n_atoms, -1) / p.feature_scale
        zdot = Bhdot @ p.w1.T
        hdot = self.dsig * zdot
        S = float(np.sum(hdot @ p.w2))

        w2bar = hdot.sum(axis=0)
        zdotbar = self.zbar
        zbar = p.w2 * (-2.0 * self.hid * zdot) * self.dsig
        w1bar = zbar.T @ self.Bh + zdotbar.T @ Bhdot
        b1bar = zbar.sum(axis=0)
        shape = self._feature_shape()
        bbar = ((zbar @ p.w1) / p.feature_scale).reshape(shape)
        bdotbar = ((zdotbar @ p.w1) / p.feature_scale).reshape(shape)
        Abar, Adotbar = p.contraction.vjp_of_jvp(self.A, Adot, bbar, bdotbar)
        tbar = _kernels.edge_contract(g.center, Abar, self.T, self.R, self.L)[0]
        tbar = tbar + _kernels.edge_contract(g.center, Adotbar, self.T, Rdot, self.L)[0]
        tbar = tbar + _kernels.edge_contract(g.center, Adotbar, self.T, self.R, Ldot)[0]
        k = h.n_embedding
        tbar = tbar.reshape(-1, k, k) * p.edge_scale
        gi = np.einsum("eab,eb->ea", tbar, self.th_j)
        gj = np.einsum("eab,ea->eb", tbar, self.th_i)
        n_el = len(p.elements)
        embbar = _kernels.segment_sum(gi, g.species_idx[g.center], n_el) + _kernels.segment_sum(
            gj, g.species_idx[g.neighbor], n_el
        )
        grad = np.concatenate([embbar.ravel(), w1bar.ravel(), b1bar, w2bar, np.zeros(1)])
        return S, grad


@dataclass
class Evaluation:
    energy: np.ndarray  # (S,)
    atomic_energy: np.ndarray  # (N,)
    forces: np.ndarray | None  # (N, 3)
    stress: np.ndarray | None  # (S, 3, 3) virial stress, nan for molecules


def evaluate(params: PotentialParams, structures, forces=True, stress=True) -> Evaluation:
    g = build_graph(params, structures)
    fp = _Pass(params, g)
    f = st = None
    if forces or stress:
        fp.edge_gradients()
        if forces:
            f = fp.forces()
        if stress:
            st = fp.virial() / g.volumes[:, None, None]
    return Evaluation(fp.energy, fp.atomic_energy, f, st)


def total_energy(s: Structure, params: PotentialParams) -> float:
    return float(evaluate(params, [s], forces=False, stress=False).energy[0])


def forces(s: Structure, params: PotentialParams) -> np.ndarray:
    return evaluate(params, [s], forces=True, stress=False).forces


def virial_stress(s: Structure, params: PotentialParams) -> np.ndarray:
    """(1/V) dE/dγ at zero applied strain."""
    if not s.pbc:
        from ..structure import UnsupportedError

        raise UnsupportedError("virial stress needs a periodic structure")
    return evaluate(params, [s], forces=False, stress=True).stress[0]


def features(s: Structure, params: PotentialParams):
    """Per-atom A (N, C, n, M) and raw invariant B (N, F) features."""
    fp = _Pass(params, build_graph(params, [s]))
    return fp.A, fp.B


def loss_and_gradient(params: PotentialParams, structures, target_forces, target_stress, beta: float, grad=True):
    """Response-matching loss summed over a batch, and its parameter gradient.

    ``target_forces`` is the concatenation of per-structure (N_s, 3) arrays and
    ``target_stress`` a (S, 3, 3) array (ignored for molecules).  The model's
    restoring stress is the negative virial stress.
    Returns ``(loss, gradient or None, details)``.
    """
    g = build_graph(params, structures)
    fp = _Pass(params, g)
    fp.edge_gradients()
    f = fp.forces()
    dF = f - np.asarray(target_forces, dtype=np.float64).reshape(-1, 3)
    force_sq = np.bincount(g.atom_struct, weights=np.einsum("ik,ik->i", dF, dF), minlength=g.n_structs)
    vir = fp.virial()
    model_stress = np.zeros_like(vir)
    dS = np.zeros_like(vir)
    per = g.periodic
    if per.any():
        model_stress[per] = -vir[per] / g.volumes[per, None, None]
        dS[per] = model_stress[per] - np.asarray(target_stress, dtype=np.float64).reshape(-1, 3, 3)[per]
    stress_sq = np.einsum("sab,sab->s", dS, dS)
    per_struct = force_sq + beta * stress_sq
    loss = float(per_struct.sum())
    details = {
        "per_structure": per_struct,
        "force_sq": force_sq,
        "stress_sq": stress_sq,
        "forces": f,
        "model_stress": model_stress,
        "n_atoms": np.bincount(g.atom_struct, minlength=g.n_structs),
    }
    if not grad:
        return loss, None, details
    w = dF[g.center] - dF[g.neighbor]
    if per.any():
        coef = np.zeros(g.n_structs)
        coef[per] = beta / g.volumes[per]
        sd = np.einsum("eab,eb->ea", dS[g.edge_struct], g.vectors)
        w = w - coef[g.edge_struct][:, None] * sd
    _, dSdth = fp.tangent_and_param_grad(w)
    return loss, 2.0 * dSdth, details


def directional_derivative(params: PotentialParams, structures, w):
    """sum_e (dE/d edge_e) · w_e, for derivative tests."""
    g = build_graph(params, structures)
    fp = _Pass(params, g)
    ge = fp.edge_gradients()
    S, _ = fp.tangent_and_param_grad(np.asarray(w, dtype=np.float64))
    return S, float(np.sum(ge * w))
