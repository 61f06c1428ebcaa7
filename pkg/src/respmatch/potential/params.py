"""Learnable parameters of the pseudo potential and their checkpoint format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..elements import atomic_number
from .basis import Contraction, monomials

CHECKPOINT_FORMAT = "respmatch-potential"
CHECKPOINT_VERSION = 1

LEARNABLE = ("embeddings", "w1", "b1", "w2", "b2")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class Hyper:
    r_cut: float = 4.5
    n_max: int = 6
    l_max: int = 3
    nu_max: int = 3
    n_embedding: int = 1
    hidden: int = 32

    def __post_init__(self):
        if not self.r_cut > 0:
            raise ConfigurationError("r_cut must be > 0")
        if self.n_max < 1 or self.l_max < 0 or self.n_embedding < 1 or self.hidden < 1:
            raise ConfigurationError("n_max, n_embedding, hidden >= 1 and l_max >= 0 required")
        if self.nu_max not in (2, 3):
            raise ConfigurationError("nu_max must be 2 or 3")

    @property
    def n_channels(self) -> int:
        return self.n_embedding**2

    @property
    def n_mono(self) -> int:
        return len(monomials(self.l_max))

    @property
    def n_features(self) -> int:
        return self.n_channels * self.n_max * Contraction(self.l_max, self.nu_max).n_features


@dataclass(eq=False)
class PotentialParams:
    """Element embeddings, MLP readout weights and fixed hyperparameters.

    ``feature_shift``/``feature_scale`` standardize the invariant features
    and ``edge_scale`` divides the neighbor sums; all three are fixed at
    initialization from the training structures and never trained.
    """

    hyper: Hyper
    elements: tuple[int, ...]
    embeddings: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    feature_shift: np.ndarray
    feature_scale: np.ndarray
    edge_scale: float = 1.0
    activation: str = "tanh"
    _contraction: Contraction | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.elements = tuple(atomic_number(z) for z in self.elements)
        if len(set(self.elements)) != len(self.elements):
            raise ConfigurationError("duplicate element in table")
        h = self.hyper
        nf = h.n_features
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64).reshape(len(self.elements), h.n_embedding)
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64).reshape(-1)
        self.w2 = np.asarray(self.w2, dtype=np.float64).reshape(-1)
        self.b2 = np.asarray(self.b2, dtype=np.float64).reshape(())
        self.feature_shift = np.asarray(self.feature_shift, dtype=np.float64).reshape(-1)
        self.feature_scale = np.asarray(self.feature_scale, dtype=np.float64).reshape(-1)
        if self.w1.shape != (h.hidden, nf):
            raise ConfigurationError(f"w1 has shape {self.w1.shape}, expected {(h.hidden, nf)}")
        if self.b1.shape != (h.hidden,) or self.w2.shape != (h.hidden,):
            raise ConfigurationError("b1/w2 must have length hidden")
        if self.feature_shift.shape != (nf,) or self.feature_scale.shape != (nf,):
            raise ConfigurationError("feature normalization has wrong length")
        if self.activation != "tanh":
            raise ConfigurationError("only the tanh activation is supported")

    @property
    def contraction(self) -> Contraction:
        if self._contraction is None:
            self._contraction = Contraction(self.hyper.l_max, self.hyper.nu_max)
        return self._contraction

    @property
    def r_cut(self) -> float:
        return self.hyper.r_cut

    def element_index(self, species) -> np.ndarray:
        lookup = {z: k for k, z in enumerate(self.elements)}
        try:
            return np.array([lookup[int(z)] for z in species], dtype=np.int64)
        except KeyError as exc:
            raise ConfigurationError(f"element {exc.args[0]} not in the model's element table") from None

    # flat parameter vector (optimizer / finite differences)

    def arrays(self) -> list[np.ndarray]:
        return [self.embeddings, self.w1, self.b1, self.w2, self.b2]

    def n_params(self) -> int:
        return int(sum(a.size for a in self.arrays()))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_vector(self, vec) -> "PotentialParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_params():
            raise ConfigurationError("parameter vector has the wrong length")
        parts = {}
        k = 0
        for name, a in zip(LEARNABLE, self.arrays()):
            parts[name] = vec[k : k + a.size].reshape(a.shape).copy()
            k += a.size
        return replace(self, _contraction=self._contraction, **parts)

    def copy(self) -> "PotentialParams":
        return self.with_vector(self.to_vector())

    @classmethod
    def initialize(cls, elements, hyper: Hyper | None = None, rng=None) -> "PotentialParams":
        hyper = hyper or Hyper()
        rng = np.random.default_rng(rng)
        elements = tuple(sorted({atomic_number(z) for z in elements}))
        nf = hyper.n_features
        k = hyper.n_embedding
        emb = rng.uniform(0.5, 1.5, size=(len(elements), k)) / np.sqrt(k)
        w1 = rng.normal(size=(hyper.hidden, nf)) / np.sqrt(nf)
        w2 = rng.normal(size=hyper.hidden) / np.sqrt(hyper.hidden)
        return cls(
            hyper=hyper,
            elements=elements,
            embeddings=emb,
            w1=w1,
            b1=np.zeros(hyper.hidden),
            w2=w2,
            b2=np.zeros(()),
            feature_shift=np.zeros(nf),
            feature_scale=np.ones(nf),
        )

    def calculate(self, structure):
        """(energy, forces, virial stress or None) for one structure."""
        from .model import evaluate

        res = evaluate(self, [structure], forces=True, stress=structure.pbc)
        stress = res.stress[0] if structure.pbc else None
        return float(res.energy[0]), res.forces, stress


def save_params(params: PotentialParams, path) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "hyper": {
            "r_cut": params.hyper.r_cut,
            "n_max": params.hyper.n_max,
            "l_max": params.hyper.l_max,
            "nu_max": params.hyper.nu_max,
            "n_embedding": params.hyper.n_embedding,
            "hidden": params.hyper.hidden,
        },
        "elements": list(params.elements),
        "activation": params.activation,
        "edge_scale": float(params.edge_scale).hex(),
    }
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8),
            embeddings=params.embeddings,
            w1=params.w1,
            b1=params.b1,
            w2=params.w2,
            b2=params.b2,
            feature_shift=params.feature_shift,
            feature_scale=params.feature_scale,
        )


def load_params(path) -> PotentialParams:
    with np.load(Path(path), allow_pickle=False) as data:
        try:
            header = json.loads(bytes(data["header"]).decode())
        except (KeyError, ValueError) as exc:
            raise ConfigurationError(f"{path}: not a potential checkpoint") from exc
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ConfigurationError(f"{path}: unknown checkpoint format {header.get('format')!r}")
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ConfigurationError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
        arrays = {k: np.array(data[k]) for k in data.files if k != "header"}
    return PotentialParams(
        hyper=Hyper(**header["hyper"]),
        elements=tuple(header["elements"]),
        activation=header["activation"],
        edge_scale=float.fromhex(header["edge_scale"]),
        **arrays,
    )
