"""Response matching: generate molecules and crystals from a learned pseudo potential."""

from .noise import NoiseSpec, TrainingSample, make_training_sample
from .potential import Hyper, PotentialParams, load_params, save_params
from .structure import NeighborList, Structure, build_neighbor_list

__version__ = "0.1.0"

__all__ = [
    "Hyper",
    "NeighborList",
    "NoiseSpec",
    "PotentialParams",
    "Structure",
    "TrainingSample",
    "build_neighbor_list",
    "load_params",
    "make_training_sample",
    "save_params",
]
