"""Secure quantum remote sensing: simulator, wire protocol, and analysis."""

from .estimation import (
    BoundaryProbabilityError,
    CFIReport,
    GroupStats,
    PhaseEstimate,
    ProbabilityModel,
    analytic_cfi,
    cfi,
    classify,
    estimate_phase_grid,
    eve_report,
    model_probability,
    pooled_mle,
    three_point_slope,
    xor_decode,
)
from .experiment import (
    CalibrationAbortError,
    ConfigError,
    ExperimentConfig,
    SweepReport,
    run_sweep,
    run_tomography,
)
from .protocol import (
    Basis,
    DegenerateBranchError,
    EveView,
    RoundRecord,
    Transcript,
    bob_measure_y,
    eve_view,
    phase_channel,
    run_protocol,
    steer,
    steer_branch,
)
from .qcore import (
    DensityMatrix,
    expectation,
    fidelity,
    partial_trace_alice,
    projector,
    tensor,
)
from .source import NoiseModel, SourceConfig, apply_noise, ideal_singlet
from .tomography import (
    ReconstructionResult,
    TomographyCounts,
    fidelity_to_singlet,
    reconstruct,
    simulate_counts,
)

__version__ = "0.1.0"

__all__ = [
    "Basis",
    "BoundaryProbabilityError",
    "CFIReport",
    "CalibrationAbortError",
    "ConfigError",
    "DegenerateBranchError",
    "DensityMatrix",
    "EveView",
    "ExperimentConfig",
    "GroupStats",
    "NoiseModel",
    "PhaseEstimate",
    "ProbabilityModel",
    "ReconstructionResult",
    "RoundRecord",
    "SourceConfig",
    "SweepReport",
    "TomographyCounts",
    "Transcript",
    "analytic_cfi",
    "apply_noise",
    "bob_measure_y",
    "cfi",
    "classify",
    "estimate_phase_grid",
    "eve_report",
    "eve_view",
    "expectation",
    "fidelity",
    "fidelity_to_singlet",
    "ideal_singlet",
    "model_probability",
    "partial_trace_alice",
    "phase_channel",
    "pooled_mle",
    "projector",
    "reconstruct",
    "run_protocol",
    "run_sweep",
    "run_tomography",
    "simulate_counts",
    "steer",
    "steer_branch",
    "tensor",
    "three_point_slope",
    "xor_decode",
]
