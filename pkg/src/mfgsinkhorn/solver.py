"""Coupled-population fixed-point solver over entropic path measures.

Each population ``i`` seeks a path measure whose time marginals start at a
prescribed mass field, feel a terminal cost ``g_i``, and pay a running cost
against the other populations' current marginals through pairwise interaction
kernels.  One outer sweep updates, population by population:

1. interior potentials ``u_k`` (k = 1..K-1) from the others' marginals:
   the candidate is ``-(T/K) * sum_j V[i,j] * rho_j_k``, so the factor
   ``exp(u_k)`` carried by the path measure penalizes overlap;
2. the final potential ``u_K = -g_i`` (pinned exactly);
3. backward messages, then the initial potential, chosen in closed form so
   the time-0 marginal matches the prescribed initial field exactly;
4. forward messages and fresh marginals.

Gauss-Seidel sweeps read marginals updated earlier in the same sweep; Jacobi
sweeps read the snapshot taken at sweep start, which preserves any mirror
symmetry of the data exactly.  The convergence error is the sum over
populations of the L1 mismatch between the pre-update time-0 marginal and its
target, plus the largest sup-norm potential change of the sweep.

Potential updates may be relaxed by a damping factor; damping applies to the
interior (interaction) updates only, never to the two exact constraints.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .grids import (
    GridSpec,
    MassField,
    ScalarField,
    SeparableKernel,
    discretize_heat_kernel,
)
from .interaction import InteractionMatrix, assemble_linearized_potential
from .messages import (
    LINEAR,
    LOG,
    MarginalSet,
    MessageCache,
    PotentialStack,
)
from .validation import check_positive_scalar

SWEEP_MODES = ("gauss_seidel", "jacobi")
LOG_DOMAIN_MODES = ("auto", "on", "off")

#: sweeps the error may sit 10x above its running minimum before giving up
DIVERGENCE_PATIENCE = 50
DIVERGENCE_FACTOR = 10.0


@dataclass
class ProblemSpec:
    """Full description of one coupled-population problem instance."""

    grid: GridSpec
    horizon: float
    n_steps: int
    initial: list  # MassField per population
    final_cost: list  # ScalarField per population
    interactions: InteractionMatrix
    epsilon: float = 1.0
    boundary: str = "reflecting"

    def __post_init__(self):
        check_positive_scalar(self.horizon, "horizon")
        check_positive_scalar(self.epsilon, "epsilon")
        if int(self.n_steps) < 1:
            raise ValueError(f"n_steps must be >= 1; got {self.n_steps}")
        self.n_steps = int(self.n_steps)
        n = len(self.initial)
        if n == 0:
            raise ValueError("need at least one population")
        if len(self.final_cost) != n:
            raise ValueError(
                f"{len(self.final_cost)} final costs for {n} populations"
            )
        if self.interactions.n_populations != n:
            raise ValueError(
                f"interaction table is {self.interactions.n_populations}-way "
                f"for {n} populations"
            )
        for i, fld in enumerate(self.initial):
            if not isinstance(fld, MassField):
                raise ValueError(f"initial[{i}] must be a MassField")
            if fld.grid.points_per_axis != self.grid.points_per_axis:
                raise ValueError(f"initial[{i}] lives on a different grid")
        for i, fld in enumerate(self.final_cost):
            if not isinstance(fld, ScalarField):
                raise ValueError(f"final_cost[{i}] must be a ScalarField")
            if fld.grid.points_per_axis != self.grid.points_per_axis:
                raise ValueError(f"final_cost[{i}] lives on a different grid")

    @property
    def n_populations(self) -> int:
        return len(self.initial)

    @property
    def step_size(self) -> float:
        return self.horizon / self.n_steps

    @property
    def kernel_variance(self) -> float:
        """Per-step variance of the reference diffusion."""
        return self.epsilon * self.horizon / self.n_steps


@dataclass
class IterationRecord:
    index: int
    marginal_error_per_population: tuple
    max_potential_change: float
    wall_time: float
    energies: object = None


@dataclass
class SolveReport:
    status: str
    iterations: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def n_sweeps(self) -> int:
        return len(self.iterations)

    @property
    def final_error(self) -> float:
        if not self.iterations:
            return np.inf
        rec = self.iterations[-1]
        return sum(rec.marginal_error_per_population) + rec.max_potential_change


def resolve_log_domain(problem: ProblemSpec, log_domain: str) -> str:
    """Pick the message mode: log space when the step kernel is cell-narrow."""
    if log_domain not in LOG_DOMAIN_MODES:
        raise ValueError(f"log_domain must be one of {LOG_DOMAIN_MODES}")
    if log_domain == "on":
        return LOG
    if log_domain == "off":
        return LINEAR
    threshold = 4.0 * max(problem.grid.spacing) ** 2
    return LOG if problem.kernel_variance < threshold else LINEAR


class SweepEngine:
    """Mutable solver state with one method per update rule."""

    def __init__(
        self,
        problem: ProblemSpec,
        *,
        sweep: str = "gauss_seidel",
        symmetrize: bool = False,
        legacy_unweighted: bool = False,
        log_domain: str = "auto",
        damping: float = 1.0,
        literal_signs: bool = False,
    ):
        if sweep not in SWEEP_MODES:
            raise ValueError(f"sweep must be one of {SWEEP_MODES}; got {sweep!r}")
        if not 0.0 < damping <= 1.0:
            raise ValueError(f"damping must lie in (0, 1]; got {damping}")
        self.problem = problem
        self.sweep_mode = sweep
        self.symmetrize = bool(symmetrize)
        self.damping = float(damping)
        # orientation of the exponent: the path weight exp(u_k) must shrink
        # where costs are high, hence the minus; the literal switch flips it
        # for side-by-side comparison with the unnegated update rule
        self.sign = +1.0 if literal_signs else -1.0
        self.weight = 1.0 if legacy_unweighted else problem.step_size
        self.mode = resolve_log_domain(problem, log_domain)

        grid = problem.grid
        self.kernel: SeparableKernel = discretize_heat_kernel(
            grid, problem.kernel_variance, problem.boundary
        )
        N, K, M = problem.n_populations, problem.n_steps, grid.size
        self.u = np.zeros((N, K + 1, M))
        self.cache = MessageCache(N, K, grid, self.kernel, self.mode)
        self.marginals = np.full((N, K + 1, M), 1.0 / M)
        self.rho0 = np.stack([f.values for f in problem.initial])
        with np.errstate(divide="ignore"):
            self.log_rho0 = np.log(M * self.rho0)
        self.g = np.stack([f.values for f in problem.final_cost])
        self.n_sweeps_done = 0

    # -- single update rules -------------------------------------------------

    def update_interior_potentials(self, i: int, source: np.ndarray) -> None:
        """Relaxed interior update from the marginals in ``source``."""
        K = self.problem.n_steps
        theta = self.damping
        for k in range(1, K):
            cand = self.sign * assemble_linearized_potential(
                i,
                k,
                self.problem.interactions,
                source,
                self.problem.grid,
                weight=self.weight,
                symmetrize=self.symmetrize,
            )
            if theta == 1.0:
                self.u[i, k] = cand
            else:
                self.u[i, k] = (1.0 - theta) * self.u[i, k] + theta * cand

    def update_final_potential(self, i: int) -> None:
        self.u[i, self.problem.n_steps] = self.sign * self.g[i]

    def update_initial_potential(self, i: int) -> None:
        """Closed-form match of the time-0 marginal to its target."""
        log_b0 = self.cache.log_beta_initial(i)
        u0 = self.log_rho0[i] - log_b0
        if np.any(np.isposinf(u0)):
            raise FloatingPointError(
                f"population {i}: backward message vanishes where the initial "
                "mass is positive; the instance is infeasible (this can only "
                "happen with a truncated boundary)"
            )
        self.u[i, 0] = u0

    def initial_marginal(self, i: int) -> np.ndarray:
        """Time-0 marginal under the current potentials and beta messages."""
        M = self.problem.grid.size
        if self.mode == LOG:
            return np.exp(self.u[i, 0] + self.cache.beta[i, 0]) / M
        return np.exp(self.u[i, 0]) * self.cache.beta[i, 0] / M

    def refresh_population(self, i: int, source: np.ndarray) -> float:
        """Full per-population block; returns the pre-update time-0 error."""
        self.update_interior_potentials(i, source)
        self.update_final_potential(i)
        self.cache.refresh_backward(i, self.u)
        err0 = float(np.abs(self.initial_marginal(i) - self.rho0[i]).sum())
        self.update_initial_potential(i)
        self.cache.refresh_forward(i, self.u)
        self.marginals[i] = self.cache.marginals(i, self.u)
        return err0

    # -- one full sweep ------------------------------------------------------

    def sweep(self) -> tuple:
        """Update every population once; returns (errors, max potential change)."""
        u_prev = self.u.copy()
        if self.sweep_mode == "jacobi":
            source = self.marginals.copy()
        else:
            source = self.marginals
        errors = []
        for i in range(self.problem.n_populations):
            errors.append(self.refresh_population(i, source))
        dpot = _sup_change(self.u, u_prev)
        self.n_sweeps_done += 1
        return tuple(errors), dpot

    # -- views ---------------------------------------------------------------

    def marginal_set(self) -> MarginalSet:
        return MarginalSet(self.marginals.copy(), self.problem.grid)

    def potential_stack(self) -> PotentialStack:
        return PotentialStack(self.u.copy(), self.problem.grid)


def _sup_change(u: np.ndarray, u_prev: np.ndarray) -> float:
    """Sup-norm change, with matching -inf entries counting as unchanged."""
    with np.errstate(invalid="ignore"):
        d = np.abs(u - u_prev)
    bad = np.isnan(d)
    if bad.any():
        d = np.where(bad & (u == u_prev), 0.0, np.where(bad, np.inf, d))
    return float(d.max())


def solve(
    problem: ProblemSpec,
    *,
    tol: float = 1e-6,
    max_iter: int = 2000,
    sweep: str = "gauss_seidel",
    symmetrize: bool = False,
    legacy_unweighted: bool = False,
    log_domain: str = "auto",
    damping: float = 1.0,
    literal_signs: bool = False,
    record_energy: bool = False,
    callback=None,
):
    """Run sweeps until the convergence error drops below ``tol``.

    Returns ``(MarginalSet, PotentialStack, SolveReport)``.  Status is
    ``"converged"``, ``"max_iter"``, or ``"diverged"`` (the latter when the
    error has stayed an order of magnitude above its running minimum for
    ``DIVERGENCE_PATIENCE`` consecutive sweeps).
    """
    check_positive_scalar(tol, "tol")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1; got {max_iter}")
    engine = SweepEngine(
        problem,
        sweep=sweep,
        symmetrize=symmetrize,
        legacy_unweighted=legacy_unweighted,
        log_domain=log_domain,
        damping=damping,
        literal_signs=literal_signs,
    )
    report = SolveReport(status="max_iter")
    started = time.perf_counter()
    best = np.inf
    stale = 0
    for it in range(max_iter):
        t0 = time.perf_counter()
        errors, dpot = engine.sweep()
        wall = time.perf_counter() - t0
        energies = None
        if record_energy:
            from .diagnostics import energy_breakdown

            energies = energy_breakdown(
                problem,
                MarginalSet(engine.marginals, problem.grid),
                PotentialStack(engine.u, problem.grid),
            )
        record = IterationRecord(
            index=it,
            marginal_error_per_population=errors,
            max_potential_change=dpot,
            wall_time=wall,
            energies=energies,
        )
        report.iterations.append(record)
        if callback is not None:
            callback(engine, record)
        err = sum(errors) + dpot
        if err < best:
            best = err
            stale = 0
        elif err > DIVERGENCE_FACTOR * best:
            stale += 1
            if stale >= DIVERGENCE_PATIENCE:
                report.status = "diverged"
                break
        else:
            stale = 0
        if err < tol:
            report.status = "converged"
            break
    report.elapsed = time.perf_counter() - started
    return engine.marginal_set(), engine.potential_stack(), report


class MultiPopulationSinkhorn(BaseEstimator):
    """Estimator-style wrapper around :func:`solve`.

    Hyperparameters mirror the keyword arguments of :func:`solve`; ``fit``
    takes a :class:`ProblemSpec` and exposes the result through trailing
    underscore attributes.

    Attributes (after ``fit``)
    --------------------------
    marginals_ : MarginalSet
    potentials_ : PotentialStack
    report_ : SolveReport
    n_iter_ : int
    """

    def __init__(
        self,
        tol: float = 1e-6,
        max_iter: int = 2000,
        sweep: str = "gauss_seidel",
        symmetrize: bool = False,
        legacy_unweighted: bool = False,
        log_domain: str = "auto",
        damping: float = 1.0,
        literal_signs: bool = False,
        record_energy: bool = False,
    ):
        self.tol = tol
        self.max_iter = max_iter
        self.sweep = sweep
        self.symmetrize = symmetrize
        self.legacy_unweighted = legacy_unweighted
        self.log_domain = log_domain
        self.damping = damping
        self.literal_signs = literal_signs
        self.record_energy = record_energy

    def fit(self, problem: ProblemSpec, y=None):
        marginals, potentials, report = solve(
            problem,
            tol=self.tol,
            max_iter=self.max_iter,
            sweep=self.sweep,
            symmetrize=self.symmetrize,
            legacy_unweighted=self.legacy_unweighted,
            log_domain=self.log_domain,
            damping=self.damping,
            literal_signs=self.literal_signs,
            record_energy=self.record_energy,
        )
        self.marginals_ = marginals
        self.potentials_ = potentials
        self.report_ = report
        self.n_iter_ = report.n_sweeps
        return self

    def marginal_trajectory(self, i: int) -> np.ndarray:
        """Marginals of population ``i`` as an array of shape (K+1, M)."""
        if not hasattr(self, "marginals_"):
            raise AttributeError("call fit before requesting trajectories")
        return self.marginals_.rho[i]
