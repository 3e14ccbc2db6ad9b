"""Normalized Ricci flow on conformal spheres and the transport map it induces."""

__version__ = "0.1.0"

from .certify import ContractionCertificate, M_field, certify, hessian_decay_monitor, lambda_dot
from .config import RunConfig, config_hash, initial_metric, preset
from .errors import (
    AccuracyWarning,
    CertificationError,
    ConfigurationError,
    FlowNotConverged,
    IntegrationError,
    RicciTransportError,
    SolvabilityError,
    StepRejected,
)
from .flow import FlowConfig, FlowTrajectory, run_flow, track_min_R
from .harmonics import SpectralField, analyze, build_grid, synthesize
from .metric import ConformalMetric, hessian_g, scalar_curvature
from .potential import fill_potentials, solve_potential
from .transport import KimMilmanMap, build_atlas, differential, flow_backward, lipschitz_measured
from .verification import lichnerowicz_check, linearized_decay_oracle, pushforward_test

__all__ = [
    "AccuracyWarning",
    "CertificationError",
    "ConfigurationError",
    "ConformalMetric",
    "ContractionCertificate",
    "FlowConfig",
    "FlowNotConverged",
    "FlowTrajectory",
    "IntegrationError",
    "KimMilmanMap",
    "M_field",
    "RicciTransportError",
    "RunConfig",
    "SolvabilityError",
    "SpectralField",
    "StepRejected",
    "analyze",
    "build_atlas",
    "build_grid",
    "certify",
    "config_hash",
    "differential",
    "fill_potentials",
    "flow_backward",
    "hessian_decay_monitor",
    "hessian_g",
    "initial_metric",
    "lambda_dot",
    "lichnerowicz_check",
    "linearized_decay_oracle",
    "lipschitz_measured",
    "preset",
    "pushforward_test",
    "run_flow",
    "scalar_curvature",
    "solve_potential",
    "synthesize",
    "track_min_R",
]
