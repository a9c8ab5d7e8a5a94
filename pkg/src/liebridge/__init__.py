"""Brownian motion and guided diffusion bridges on matrix Lie groups.

Left-invariant Brownian motion on SO(3), GL+(3), and abelian groups;
guided bridges to points, fibers of homogeneous spaces (S^2, SPD(3)),
and finite point sets; importance-sampling heat-kernel estimates; and
likelihood-based metric and diffusion-mean estimation.
"""

from .cli import ExperimentConfig, RunManifest, parse_config, render_config, run_experiment
from .estimators import (
    DensityEstimate,
    DensityGrid,
    DiffusionMean,
    MetricEstimator,
    MLETrace,
    diffusion_mean_spd,
    heat_kernel_is,
    log_likelihood,
    metric_mle,
    pushforward_density_grid,
    q_density,
    s2_exact_kernel,
    s2_kernel_is,
)
from .fiber import (
    FiberTarget,
    MHChain,
    PointSetTarget,
    PointTarget,
    lattice_points,
    mh_fiber_sampler,
    nearest_fiber_point,
    project_path,
    sample_fermi_bridge,
    sample_kpoint_bridge,
    write_mh_csv,
)
from .lie_core import (
    BranchError,
    MetricParam,
    NumericalError,
    StructureCoefficients,
    gl_exp,
    gl_log,
    hat,
    identity_metric,
    polar_project,
    so3_exp,
    so3_log,
    vee,
)
from .sde import (
    NoiseStream,
    SamplePath,
    TimeGrid,
    estimate_log_phi,
    euler_heun_step,
    sample_brownian_motion,
    sample_guided_bridge,
    write_path_csv,
)
from .spaces import (
    AbelianGroup,
    GLGroup,
    GroupSpec,
    HomogeneousSpec,
    S2Space,
    SO3Group,
    SPDSpace,
    make_space,
)

__version__ = "0.1.0"

__all__ = [
    "AbelianGroup",
    "BranchError",
    "DensityEstimate",
    "DensityGrid",
    "DiffusionMean",
    "ExperimentConfig",
    "FiberTarget",
    "GLGroup",
    "GroupSpec",
    "HomogeneousSpec",
    "MetricEstimator",
    "MetricParam",
    "MHChain",
    "MLETrace",
    "NoiseStream",
    "NumericalError",
    "PointSetTarget",
    "PointTarget",
    "RunManifest",
    "S2Space",
    "SamplePath",
    "SO3Group",
    "SPDSpace",
    "StructureCoefficients",
    "TimeGrid",
    "diffusion_mean_spd",
    "estimate_log_phi",
    "euler_heun_step",
    "gl_exp",
    "gl_log",
    "hat",
    "heat_kernel_is",
    "identity_metric",
    "lattice_points",
    "log_likelihood",
    "make_space",
    "metric_mle",
    "mh_fiber_sampler",
    "nearest_fiber_point",
    "parse_config",
    "polar_project",
    "project_path",
    "pushforward_density_grid",
    "q_density",
    "render_config",
    "run_experiment",
    "s2_exact_kernel",
    "s2_kernel_is",
    "sample_brownian_motion",
    "sample_fermi_bridge",
    "sample_guided_bridge",
    "sample_kpoint_bridge",
    "so3_exp",
    "so3_log",
    "vee",
    "write_mh_csv",
    "write_path_csv",
    "__version__",
]
