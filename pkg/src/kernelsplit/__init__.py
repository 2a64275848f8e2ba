"""Block-splitting ADMM over random Fourier feature spaces."""

from .blockadmm import (
    DivergenceError,
    IterationReport,
    MemoryEstimate,
    Model,
    SolverConfig,
    memory_estimate,
    objective,
    predict_scores,
    solve,
)
from .featuremap import TransformDescriptor, full_transform, gaussian_kernel, transform
from .matrixio import BlockLayout, LabelEncoding, load_dataset, load_model, save_model

__all__ = [
    "BlockLayout",
    "DivergenceError",
    "IterationReport",
    "LabelEncoding",
    "MemoryEstimate",
    "Model",
    "SolverConfig",
    "TransformDescriptor",
    "full_transform",
    "gaussian_kernel",
    "load_dataset",
    "load_model",
    "memory_estimate",
    "objective",
    "predict_scores",
    "save_model",
    "solve",
    "transform",
]

__version__ = "0.1.0"
