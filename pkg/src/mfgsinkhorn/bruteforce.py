"""Dense-tensor cross checks for the message-passing machinery.

Everything here materializes the full path tensor over ``(x_0, ..., x_K)``
and works on it with plain array reductions.  That is exponentially wasteful
on purpose: the results share no code with the streaming recursions in
``messages``, so agreement between the two is evidence, not tautology.

Only tiny instances fit: the tensor has ``M ** (K + 1)`` entries and the
module refuses anything above :data:`DENSE_SIZE_LIMIT`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .grids import GridSpec, SeparableKernel, build_grid, discretize_heat_kernel
from .interaction import assemble_linearized_potential
from .messages import (
    LINEAR,
    LOG,
    MarginalSet,
    PotentialStack,
    backward_messages,
    forward_messages,
    marginal_masses,
    plan_entropy,
)

#: largest number of path-tensor entries the dense route will materialize
DENSE_SIZE_LIMIT = 10_000_000

#: proportional-fit iterations allowed when matching the initial marginal
FIT_ITER_CAP = 100_000
FIT_TOL = 1e-12


def check_dense_feasible(grid: GridSpec, n_steps: int) -> None:
    entries = grid.size ** (n_steps + 1)
    if entries > DENSE_SIZE_LIMIT:
        raise ValueError(
            f"dense path tensor would hold {entries} entries "
            f"(limit {DENSE_SIZE_LIMIT}); use the message route instead"
        )


@dataclass
class DensePlan:
    """Path tensor with one axis per time slice, time 0 slowest."""

    tensor: np.ndarray
    grid: GridSpec

    @property
    def n_steps(self) -> int:
        return self.tensor.ndim - 1

    def marginal(self, k: int) -> np.ndarray:
        """Mass of time slice ``k``, summed over every other axis."""
        axes = tuple(a for a in range(self.tensor.ndim) if a != k)
        return self.tensor.sum(axis=axes)

    def total_mass(self) -> float:
        return float(self.tensor.sum())


def _step_matrix(kernel: SeparableKernel) -> np.ndarray:
    """Transition weights indexed (from, to); columns of dense() are \"from\"."""
    return kernel.dense().T


def materialize_plan(
    u_i: np.ndarray, kernel: SeparableKernel, grid: GridSpec
) -> DensePlan:
    """Dense path tensor of one population from its potentials.

    Entry ``(x_0, ..., x_K)`` is ``(1/M) exp(u_0(x_0))`` times the product of
    one-step transition weights, times ``exp(u_k(x_k))`` for k >= 1.
    """
    K = u_i.shape[0] - 1
    check_dense_feasible(grid, K)
    step = _step_matrix(kernel)
    plan = np.exp(u_i[0]) / grid.size
    for k in range(1, K + 1):
        plan = plan[..., None] * (step * np.exp(u_i[k])[None, :])
    return DensePlan(plan, grid)


def reference_plan(kernel: SeparableKernel, grid: GridSpec, n_steps: int) -> DensePlan:
    """The zero-potential plan: uniform start, free diffusion."""
    zeros = np.zeros((n_steps + 1, grid.size))
    return materialize_plan(zeros, kernel, grid)


#: below this, a path's entropy contribution is smaller than q times the
#: full double-precision log range, so dropping it cannot move any digit
#: a test could see; it also sidesteps underflow asymmetry between the
#: plan and reference products
NEGLIGIBLE_PATH_MASS = 1e-250


def direct_entropy(plan: DensePlan, reference: DensePlan) -> float:
    """Relative entropy sum q log(q/r); negligible-mass paths are dropped."""
    q = plan.tensor
    r = reference.tensor
    mask = q > NEGLIGIBLE_PATH_MASS
    if np.any(mask & (r == 0)):
        raise FloatingPointError(
            "plan puts mass where the reference vanishes; entropy is infinite"
        )
    qm = q[mask]
    return float(np.sum(qm * (np.log(qm) - np.log(r[mask]))))


def fit_initial_marginal(plan: DensePlan, target: np.ndarray) -> DensePlan:
    """Rescale along axis 0 until the time-0 marginal equals ``target``.

    The fit is proportional and exact after one pass; the loop exists to
    verify that and to guard against degenerate inputs.
    """
    tensor = plan.tensor.copy()
    shape = (-1,) + (1,) * plan.n_steps
    for _ in range(FIT_ITER_CAP):
        m0 = tensor.sum(axis=tuple(range(1, tensor.ndim)))
        if np.any((m0 == 0) & (target > 0)):
            raise FloatingPointError(
                "plan has no mass at a required initial cell; cannot fit"
            )
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(m0 > 0, target / m0, 0.0)
        tensor *= scale.reshape(shape)
        if np.abs(scale[m0 > 0] - 1.0).max(initial=0.0) < FIT_TOL:
            return DensePlan(tensor, plan.grid)
    raise RuntimeError("initial-marginal fit did not stabilize")


def inner_subproblem_bruteforce(
    kernel: SeparableKernel,
    grid: GridSpec,
    fixed_fields: np.ndarray,
    final_cost: np.ndarray,
    rho0: np.ndarray,
) -> np.ndarray:
    """Exact best response of one population to frozen interaction fields.

    ``fixed_fields`` has shape (K + 1, M); rows 1..K-1 are the already
    weighted running costs, rows 0 and K are ignored.  Returns the marginal
    trajectory (K + 1, M) of the optimizer, found by tilting the reference
    plan with ``exp(-field)`` factors and fitting the initial marginal.
    """
    K = fixed_fields.shape[0] - 1
    u = np.zeros_like(fixed_fields)
    u[1:K] = -fixed_fields[1:K]
    u[K] = -final_cost
    tilted = materialize_plan(u, kernel, grid)
    fitted = fit_initial_marginal(tilted, rho0)
    return np.stack([fitted.marginal(k) for k in range(K + 1)])


def best_response_marginals(
    problem,
    i: int,
    frozen_marginals,
    *,
    symmetrize: bool = False,
    legacy_unweighted: bool = False,
) -> np.ndarray:
    """Dense best response of one population to frozen partner marginals.

    Assembles the same weighted running-cost fields the solver would use,
    then solves the single-population problem exactly on the path tensor.
    The result should match the marginals the solver produces for population
    ``i`` right after its per-population block.
    """
    kernel = discretize_heat_kernel(
        problem.grid, problem.kernel_variance, problem.boundary
    )
    K = problem.n_steps
    weight = 1.0 if legacy_unweighted else problem.step_size
    fields = np.zeros((K + 1, problem.grid.size))
    for k in range(1, K):
        fields[k] = assemble_linearized_potential(
            i,
            k,
            problem.interactions,
            frozen_marginals,
            problem.grid,
            weight=weight,
            symmetrize=symmetrize,
        )
    return inner_subproblem_bruteforce(
        kernel,
        problem.grid,
        fields,
        problem.final_cost[i].values,
        problem.initial[i].values,
    )


# -- randomized agreement suite ---------------------------------------------


@dataclass
class OracleReport:
    n_instances: int
    max_marginal_deviation: float
    max_entropy_deviation: float
    max_mass_deviation: float
    elapsed: float
    marginal_tol: float = 1e-12
    entropy_tol: float = 1e-10
    mass_tol: float = 1e-10

    @property
    def passed(self) -> bool:
        return (
            self.max_marginal_deviation <= self.marginal_tol
            and self.max_entropy_deviation <= self.entropy_tol
            and self.max_mass_deviation <= self.mass_tol
        )

    def summary_lines(self) -> list:
        verdict = "PASS" if self.passed else "FAIL"
        return [
            f"instances checked          {self.n_instances}",
            f"max marginal deviation     {self.max_marginal_deviation:.3e}"
            f"  (tol {self.marginal_tol:.0e})",
            f"max entropy deviation      {self.max_entropy_deviation:.3e}"
            f"  (tol {self.entropy_tol:.0e})",
            f"max plan mass deviation    {self.max_mass_deviation:.3e}"
            f"  (tol {self.mass_tol:.0e})",
            f"elapsed                    {self.elapsed:.2f}s",
            f"verdict                    {verdict}",
        ]


def random_instance(rng: np.random.Generator):
    """Draw a tiny instance: grid, kernel, potentials with fitted start."""
    dims = int(rng.integers(1, 3))
    if dims == 1:
        points = (int(rng.integers(3, 9)),)
    else:
        points = (int(rng.integers(3, 6)), int(rng.integers(3, 6)))
    extents = tuple(
        (0.0, float(rng.uniform(0.5, 2.0))) for _ in range(dims)
    )
    grid = build_grid(points, extents)
    n_steps = int(rng.integers(2, 5))
    while grid.size ** (n_steps + 1) > DENSE_SIZE_LIMIT:
        n_steps -= 1
    tau = float(10.0 ** rng.uniform(-3.0, -0.3))
    boundary = "reflecting" if rng.random() < 0.5 else "truncated"
    kernel = discretize_heat_kernel(grid, tau, boundary)
    mode = LOG if rng.random() < 0.5 else LINEAR

    u = rng.normal(0.0, 1.0, size=(n_steps + 1, grid.size))
    rho0 = rng.uniform(0.2, 1.0, size=grid.size)
    rho0 /= rho0.sum()
    # closed-form start so the plan is a probability measure
    beta = backward_messages(u, kernel, mode)
    if mode == LOG:
        log_b0 = beta[0]
    else:
        log_b0 = np.log(beta[0])
    u[0] = np.log(grid.size * rho0) - log_b0
    return grid, kernel, mode, u, rho0


def run_oracle_suite(n_instances: int = 20, seed: int = 20240) -> OracleReport:
    """Compare message and dense routes on random tiny instances."""
    started = time.perf_counter()
    worst_marg = 0.0
    worst_ent = 0.0
    worst_mass = 0.0
    for idx in range(n_instances):
        rng = np.random.default_rng(seed + idx)
        grid, kernel, mode, u, rho0 = random_instance(rng)

        alpha = forward_messages(u, kernel, mode)
        beta = backward_messages(u, kernel, mode)
        rho_msg = marginal_masses(u, alpha, beta, mode)
        stack = PotentialStack(u[None, :, :], grid)
        mset = MarginalSet(rho_msg[None, :, :], grid)
        ent_msg = plan_entropy(0, stack, mset)

        plan = materialize_plan(u, kernel, grid)
        ref = reference_plan(kernel, grid, plan.n_steps)
        for k in range(plan.n_steps + 1):
            dev = float(np.abs(plan.marginal(k) - rho_msg[k]).max())
            worst_marg = max(worst_marg, dev)
        worst_ent = max(worst_ent, abs(direct_entropy(plan, ref) - ent_msg))
        worst_mass = max(worst_mass, abs(plan.total_mass() - 1.0))
    return OracleReport(
        n_instances=n_instances,
        max_marginal_deviation=worst_marg,
        max_entropy_deviation=worst_ent,
        max_mass_deviation=worst_mass,
        elapsed=time.perf_counter() - started,
    )
