"""Point-cloud autoencoder that folds a 2D lattice into 3D, learns a graph
over the reconstructed points, refines the output by graph filtering, and
ships executable certificates for the reconstruction-error and
graph-smoothness guarantees behind it."""

from . import autodiff, graphsignal, network, pointcloud, theory, trainer
from .errors import (
    CheckpointError,
    DimensionError,
    DomainError,
    FileFormatError,
    NumericalError,
)

__all__ = [
    "autodiff",
    "graphsignal",
    "network",
    "pointcloud",
    "theory",
    "trainer",
    "CheckpointError",
    "DimensionError",
    "DomainError",
    "FileFormatError",
    "NumericalError",
]

__version__ = "0.1.0"
