from .basis import Contraction, angular_all, angular_basis, monomials, multinomial, radial_basis
from .model import (
    Evaluation,
    evaluate,
    features,
    forces,
    loss_and_gradient,
    total_energy,
    virial_stress,
)
from .params import ConfigurationError, Hyper, PotentialParams, load_params, save_params

__all__ = [
    "Contraction",
    "ConfigurationError",
    "Evaluation",
    "Hyper",
    "PotentialParams",
    "angular_all",
    "angular_basis",
    "evaluate",
    "features",
    "forces",
    "load_params",
    "loss_and_gradient",
    "monomials",
    "multinomial",
    "radial_basis",
    "save_params",
    "total_energy",
    "virial_stress",
]
