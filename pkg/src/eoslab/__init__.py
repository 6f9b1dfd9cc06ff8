"""Numerical laboratory for edge-of-stability implicit regularization in
two-layer locally connected ReLU networks with weight sharing."""

from .model import (
    ConvergenceWarning,
    Dataset,
    ModelParams,
    ReceptiveFields,
    dense_hessian,
    forward,
    gates,
    gradient,
    gradient_factorized,
    hvp,
    load_checkpoint,
    loss,
    plugin_risk,
    save_checkpoint,
    sharpness,
    tangent_top_eig,
)
from .rng import RngStream

__version__ = "0.1.0"
