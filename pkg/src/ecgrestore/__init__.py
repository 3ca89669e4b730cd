"""Unpaired restoration of artifact-corrupted single-lead ECG segments.

The package trains a 1D cycle-consistent adversarial translator whose
layers are operational (polynomial-tap) convolutions, then scores the
restoration by how much it improves R-peak detection.  Everything runs on
plain numpy arrays; the convolution and backprop kernels live in
:mod:`ecgrestore.numerics` and are hand-rolled on top of BLAS matmuls.
"""

from .errors import (
    ConfigurationError,
    InputError,
    NumericsError,
    TrainingDivergenceError,
)

__all__ = [
    "ConfigurationError",
    "InputError",
    "NumericsError",
    "TrainingDivergenceError",
]

__version__ = "0.1.0"
