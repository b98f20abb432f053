"""Fiber parameter estimation from transmitted/received signal pairs.

The package trains a segment-wise parameterized split-step model of a
single-span fiber against measured input/output signals.  A bicubic spline
surface over the model's intermediate wavefield supplies the value and the
derivatives needed to penalize the propagation-equation residual at
arbitrary space-time points, which regularizes the per-segment parameters
toward physically consistent values and yields estimates of the dispersion
and nonlinearity constants.
"""

__version__ = "0.1.0"

from .losses import (
    CoordinateSet,
    LossWeights,
    ResidualParams,
    nlse_residual,
    observation_loss,
    physics_loss,
    total_loss,
    update_weights,
)
from .nlse import (
    FiberParams,
    Frame,
    GridSpec,
    SignalMatrix,
    TwinParams,
    propagate,
    reference_channel,
)
from .signals import ComplexSignal, NoiseConfig, add_awgn, generate_qam_symbols, pulse_shape
from .spline import MultCounter, SplineSurface, build_surface, natural_spline, thomas_solve
from .trainer import (
    Dataset,
    Scenario,
    TrainConfig,
    TrainHistory,
    build_dataset,
    compare_profiles,
    train,
)

__all__ = [
    "__version__",
    "ComplexSignal",
    "NoiseConfig",
    "add_awgn",
    "generate_qam_symbols",
    "pulse_shape",
    "FiberParams",
    "Frame",
    "GridSpec",
    "SignalMatrix",
    "TwinParams",
    "propagate",
    "reference_channel",
    "MultCounter",
    "SplineSurface",
    "build_surface",
    "natural_spline",
    "thomas_solve",
    "CoordinateSet",
    "LossWeights",
    "ResidualParams",
    "nlse_residual",
    "observation_loss",
    "physics_loss",
    "total_loss",
    "update_weights",
    "Dataset",
    "Scenario",
    "TrainConfig",
    "TrainHistory",
    "build_dataset",
    "compare_profiles",
    "train",
]
