"""Federated learning with networked control-variate gradient estimators."""

from ._backend import BACKEND
from .config import RunConfig, parse_config
from .estimators import (
    AggregationMode,
    ClientGradSet,
    CvConfig,
    DegenerateStatistics,
    Flavor,
    client_aggregate,
    client_reshape,
    identity_form_estimate,
    loo_mean,
    networked_estimate_direct,
    optimal_alpha,
    server_aggregate,
    server_control_variate,
    variance_gap,
)
from .fedsim import Algorithm, AlphaMode, RoundMetrics, Simulation, algorithm_select, run

__version__ = "0.1.0"
