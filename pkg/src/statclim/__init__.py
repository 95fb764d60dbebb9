"""Statistical reduced-complexity climate model.

Carbon cycle, CO2 forcing and two-box energy balance in nonlinear
state-space form, estimated by maximum likelihood through an extended
Kalman filter, with model selection, residual diagnostics and
simulation-based probabilistic projections.
"""
from ._kernels import JIT_ENABLED, kernel_backend
from .params import (ClimateState, Constants, ForcingForm,
                     MeasurementOffsets, ModelParams, NoiseParams,
                     PhysicalParams)

__version__ = "0.1.0"

__all__ = [
    "ClimateState", "Constants", "ForcingForm", "MeasurementOffsets",
    "ModelParams", "NoiseParams", "PhysicalParams", "JIT_ENABLED",
    "kernel_backend", "__version__",
]
