"""Low-TT-rank tensor completion by Riemannian gradient descent."""

from .completion import CompletionConfig, CompletionTrace, rgrad_complete, rgrad_step, trim, trim_threshold
from .diagnostics import DiagnosticsReport, detect_tt_rank, diagnose, incoherence, relative_error, spikiness
from .observations import ObservationSet, objective_f, read_observations, sample_uniform, write_observations
from .spectral_init import InitConfig, InitFailure, estimate_spikiness, initialize, naive_init
from .tangent import build_gauge_pair, embed, project_dense, riemannian_gradient
from .tensor import DENSE_CAP, DenseCapError, separation
from .tt import (
    IllConditionedPoint,
    TTTensor,
    condition_number,
    load_tt,
    random_tt,
    save_tt,
    tt_full,
    tt_rounding,
    tt_svd,
)

__version__ = "0.1.0"
