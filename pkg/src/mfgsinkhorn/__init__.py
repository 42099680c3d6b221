"""Grid solver for coupled populations steered by pairwise non-local costs.

The package discretizes the evolution of one or more interacting crowds on a
box: each population starts from a prescribed density, diffuses, pays a
terminal cost, and pays a running cost determined by convolving the other
populations' densities with pairwise interaction kernels.  The coupled
problem is solved by per-population Sinkhorn-style sweeps on potentials over
time slices, with marginals recovered from forward/backward messages so
memory stays linear in the number of slices.

Typical use::

    from mfgsinkhorn import MultiPopulationSinkhorn, ProblemSpec

    est = MultiPopulationSinkhorn(tol=1e-6).fit(problem)
    est.marginals_.normalized(0, k)      # population 0 at time slice k

The ``mfgsinkhorn`` command line drives the same machinery from JSON
configurations and writes binary frames plus a manifest for downstream
tools.
"""

from ._version import __version__
from .bruteforce import (
    DensePlan,
    OracleReport,
    best_response_marginals,
    direct_entropy,
    inner_subproblem_bruteforce,
    materialize_plan,
    reference_plan,
    run_oracle_suite,
)
from .config import ConfigError, ResolvedRun, parse_config, parse_config_dict
from .diagnostics import (
    EnergyBreakdown,
    HopfColeState,
    assemble_interaction_fields,
    barycenter_trajectory,
    energy_breakdown,
    fp_forward_consistency,
    hopf_cole_backward,
    mirror_distance,
    second_moment,
    separation_metric,
)
from .grids import (
    GridSpec,
    MassField,
    ScalarField,
    SeparableKernel,
    build_grid,
    discretize_heat_kernel,
    gaussian_field,
    kernel_apply,
    normalize,
)
from .interaction import (
    BallKernel,
    CoulombKernel,
    InteractionMatrix,
    TabulatedKernel,
    ZeroKernel,
    convolve_density,
    load_tabulated_kernel,
)
from .messages import (
    MarginalSet,
    MessageCache,
    OverflowInLinearMode,
    PotentialStack,
    plan_entropy,
)
from .solver import (
    IterationRecord,
    MultiPopulationSinkhorn,
    ProblemSpec,
    SolveReport,
    SweepEngine,
    resolve_log_domain,
    solve,
)

__all__ = [
    "__version__",
    "BallKernel",
    "ConfigError",
    "CoulombKernel",
    "DensePlan",
    "EnergyBreakdown",
    "GridSpec",
    "HopfColeState",
    "InteractionMatrix",
    "IterationRecord",
    "MarginalSet",
    "MassField",
    "MessageCache",
    "MultiPopulationSinkhorn",
    "OracleReport",
    "OverflowInLinearMode",
    "PotentialStack",
    "ProblemSpec",
    "ResolvedRun",
    "ScalarField",
    "SeparableKernel",
    "SolveReport",
    "SweepEngine",
    "TabulatedKernel",
    "ZeroKernel",
    "assemble_interaction_fields",
    "barycenter_trajectory",
    "best_response_marginals",
    "build_grid",
    "convolve_density",
    "direct_entropy",
    "discretize_heat_kernel",
    "energy_breakdown",
    "fp_forward_consistency",
    "gaussian_field",
    "hopf_cole_backward",
    "inner_subproblem_bruteforce",
    "kernel_apply",
    "load_tabulated_kernel",
    "materialize_plan",
    "mirror_distance",
    "normalize",
    "parse_config",
    "parse_config_dict",
    "plan_entropy",
    "reference_plan",
    "resolve_log_domain",
    "run_oracle_suite",
    "second_moment",
    "separation_metric",
    "solve",
]
