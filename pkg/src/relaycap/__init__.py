"""Effective capacity of buffer-aided full-duplex relaying with selection routing."""

from .capacity import (
    CapacityResult,
    check_stability,
    effective_capacity,
    invert_exponent,
    limit_capacity_eps1,
    upper_bound_rate,
)
from .delay import DelayConstraint, end_to_end_violation, j_threshold, lambert_w_minus1, phi
from .exceptions import ConvergenceError, DomainError, NumericalFailure, RelayCapError, SaturationError
from .fading import (
    ChannelState,
    Constant,
    Discrete,
    FadingSpec,
    Rayleigh,
    RelayPolicy,
    Scenario,
    in_region_Z,
    in_region_Z0,
    sample_state,
    service_rate_relay,
    service_rate_source,
)
from .mgf import (
    EnumerationEngine,
    ExponentPoint,
    MonteCarloEngine,
    QuadratureEngine,
    arrival_lmgf_relay,
    j1,
    j2,
    lambda_p1,
    mean_rates,
    prob_Z,
)
from .policies import (
    effective_capacity_mde,
    fixed_policy,
    mcg_policy,
    mde_policy,
    mde_threshold,
    nobuffer_capacity,
)
from .queuesim import DelayStats, SimConfig, ValidationReport, simulate, validate_capacity

__version__ = "0.1.0"

__all__ = [
    "CapacityResult",
    "check_stability",
    "effective_capacity",
    "invert_exponent",
    "limit_capacity_eps1",
    "upper_bound_rate",
    "DelayConstraint",
    "end_to_end_violation",
    "j_threshold",
    "lambert_w_minus1",
    "phi",
    "ConvergenceError",
    "DomainError",
    "NumericalFailure",
    "RelayCapError",
    "SaturationError",
    "ChannelState",
    "Constant",
    "Discrete",
    "FadingSpec",
    "Rayleigh",
    "RelayPolicy",
    "Scenario",
    "in_region_Z",
    "in_region_Z0",
    "sample_state",
    "service_rate_relay",
    "service_rate_source",
    "EnumerationEngine",
    "ExponentPoint",
    "MonteCarloEngine",
    "QuadratureEngine",
    "arrival_lmgf_relay",
    "j1",
    "j2",
    "lambda_p1",
    "mean_rates",
    "prob_Z",
    "effective_capacity_mde",
    "fixed_policy",
    "mcg_policy",
    "mde_policy",
    "mde_threshold",
    "nobuffer_capacity",
    "DelayStats",
    "SimConfig",
    "ValidationReport",
    "simulate",
    "validate_capacity",
]
