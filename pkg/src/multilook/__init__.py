"""Multi-look coherent lidar reconstruction.

Reconstructs a 3D reflectivity volume from several speckle realizations
("looks") of the same scene measured through a finite aperture.  Each look
gets a statistical data-fidelity agent built around a diagonal posterior
approximation of the latent speckle field; a pluggable denoiser acts as
the prior agent; a weighted consensus iteration drives all agents to a
common equilibrium.

Layout: `volume` grids/FFTs/apertures, `forward` the measurement operator,
`simulate` synthetic scenes and looks, `fidelity` + `kernels` the per-look
agents, `priors` + `sidecar` the denoisers, `engine` the consensus loop,
`theory` small-problem convergence checks, `metrics` quality measures,
`io` file formats, `cli` the command line.
"""

from .engine import (
    AgentError,
    EngineConfig,
    ReconResult,
    StackedState,
    TraceRow,
    convergence_error,
    default_weights,
    mace_iterate,
    mu_residual,
    reconstruct,
    weighted_average,
)
from .fidelity import EmParams, LookState, beta_schedule
from .forward import (
    ForwardOperator,
    apply_adjoint,
    apply_forward,
    back_project_init,
    speckle_average,
)
from .io import (
    DatasetBundle,
    RunConfig,
    dump_config,
    load_bundle,
    load_config,
    parse_config,
    read_volume,
    save_bundle,
    write_volume,
)
from .kernels import COMPILED
from .metrics import (
    CloudMetrics,
    GeometryParams,
    PointCloud,
    cloud_metrics,
    psnr_scaled,
    rayleigh_cutoff,
    to_point_cloud,
)
from .priors import PriorConfig, make_prior_agent
from .simulate import Phantom, SimParams, make_operator, make_phantom, simulate_looks
from .theory import (
    QuadraticConsensusProblem,
    ValidationReport,
    random_consensus_problem,
    validate_consensus_theory,
)
from .volume import ApertureMask, Dims, dft3, full_aperture, make_aperture, set_fft_workers

__version__ = "0.1.0"

__all__ = [
    "AgentError",
    "ApertureMask",
    "CloudMetrics",
    "COMPILED",
    "DatasetBundle",
    "Dims",
    "EmParams",
    "EngineConfig",
    "ForwardOperator",
    "GeometryParams",
    "LookState",
    "Phantom",
    "PointCloud",
    "PriorConfig",
    "QuadraticConsensusProblem",
    "ReconResult",
    "RunConfig",
    "SimParams",
    "StackedState",
    "TraceRow",
    "ValidationReport",
    "apply_adjoint",
    "apply_forward",
    "back_project_init",
    "beta_schedule",
    "cloud_metrics",
    "convergence_error",
    "default_weights",
    "dft3",
    "dump_config",
    "full_aperture",
    "load_bundle",
    "load_config",
    "mace_iterate",
    "make_aperture",
    "make_operator",
    "make_phantom",
    "make_prior_agent",
    "mu_residual",
    "parse_config",
    "psnr_scaled",
    "random_consensus_problem",
    "rayleigh_cutoff",
    "read_volume",
    "reconstruct",
    "save_bundle",
    "set_fft_workers",
    "simulate_looks",
    "speckle_average",
    "to_point_cloud",
    "validate_consensus_theory",
    "weighted_average",
    "write_volume",
]
