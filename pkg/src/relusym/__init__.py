"""Functional dimension, bent-hyperplane geometry and hidden symmetries of ReLU networks."""
from .network import (
    Architecture, EvalTrace, Network, NetworkFormatError, ShapeMismatchError, TernaryLabel,
    deserialize, forward, he_init, label_batch, load, param_count, save, serialize, ternary_label,
)
from .jacobian import (
    FdimEstimate, JacobianBatch, NonFiniteError, RankAccumulator, batch_jacobian, estimate_fdim,
    fdim_upper_bound, grad_wrt_params, numerical_rank,
)

__version__ = "0.1.0"
