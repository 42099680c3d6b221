"""Sweep engine, solve loop, and the estimator wrapper."""

import numpy as np
import pytest

from mfgsinkhorn.grids import (
    MassField,
    ScalarField,
    apply_kernel_array,
    build_grid,
    discretize_heat_kernel,
    gaussian_field,
)
from mfgsinkhorn.interaction import BallKernel, InteractionMatrix
from mfgsinkhorn.messages import LINEAR, LOG, MarginalSet, PotentialStack
from mfgsinkhorn.solver import (
    MultiPopulationSinkhorn,
    ProblemSpec,
    SolveReport,
    SweepEngine,
    IterationRecord,
    resolve_log_domain,
    solve,
)


def _quadratic_cost(grid, center, strength=20.0):
    pts = grid.cell_centers()
    c = np.asarray(center, dtype=float)
    return ScalarField(strength * np.sum((pts - c) ** 2, axis=1), grid)


def _free_problem(n=16, n_steps=4):
    """Single population, no interaction, no final cost: pure diffusion."""
    grid = build_grid((n, n))
    return ProblemSpec(
        grid=grid,
        horizon=1.0,
        n_steps=n_steps,
        initial=[gaussian_field(grid, (0.35, 0.6), (40.0, 40.0))],
        final_cost=[ScalarField(np.zeros(grid.size), grid)],
        interactions=InteractionMatrix.none(1),
    )


def _two_pop_problem(n=10, n_steps=4, strength=30.0):
    grid = build_grid((n, n))
    return ProblemSpec(
        grid=grid,
        horizon=1.0,
        n_steps=n_steps,
        initial=[
            gaussian_field(grid, (0.25, 0.5), (40.0, 40.0)),
            gaussian_field(grid, (0.75, 0.5), (40.0, 40.0)),
        ],
        final_cost=[
            _quadratic_cost(grid, (0.75, 0.5)),
            _quadratic_cost(grid, (0.25, 0.5)),
        ],
        interactions=InteractionMatrix.uniform(2, BallKernel(strength, 0.25)),
    )


def test_problem_spec_validation():
    grid = build_grid((4, 4))
    rho = gaussian_field(grid, (0.5, 0.5), (10.0, 10.0))
    g = ScalarField(np.zeros(16), grid)
    ok = ProblemSpec(grid, 1.0, 2, [rho], [g], InteractionMatrix.none(1))
    assert ok.n_populations == 1
    assert ok.step_size == 0.5
    assert ok.kernel_variance == 0.5
    with pytest.raises(ValueError):
        ProblemSpec(grid, 0.0, 2, [rho], [g], InteractionMatrix.none(1))
    with pytest.raises(ValueError):
        ProblemSpec(grid, 1.0, 0, [rho], [g], InteractionMatrix.none(1))
    with pytest.raises(ValueError):
        ProblemSpec(grid, 1.0, 2, [], [], InteractionMatrix.none(1))
    with pytest.raises(ValueError):
        ProblemSpec(grid, 1.0, 2, [rho], [g, g], InteractionMatrix.none(1))
    with pytest.raises(ValueError):
        ProblemSpec(grid, 1.0, 2, [rho], [g], InteractionMatrix.none(2))
    with pytest.raises(ValueError, match="MassField"):
        ProblemSpec(grid, 1.0, 2, [g], [g], InteractionMatrix.none(1))
    other = build_grid((5, 5))
    rho_other = gaussian_field(other, (0.5, 0.5), (10.0, 10.0))
    with pytest.raises(ValueError, match="different grid"):
        ProblemSpec(grid, 1.0, 2, [rho_other], [g], InteractionMatrix.none(1))
    with pytest.raises(ValueError, match="epsilon"):
        ProblemSpec(grid, 1.0, 2, [rho], [g], InteractionMatrix.none(1), epsilon=-1.0)


def test_resolve_log_domain_rule():
    grid = build_grid((2,))  # spacing 0.5, threshold 4 * 0.25 = 1.0
    rho = MassField(np.array([0.5, 0.5]), grid)
    g = ScalarField(np.zeros(2), grid)

    def prob(n_steps):
        return ProblemSpec(grid, 1.0, n_steps, [rho], [g], InteractionMatrix.none(1))

    assert resolve_log_domain(prob(1), "auto") == LINEAR  # variance == threshold
    assert resolve_log_domain(prob(2), "auto") == LOG
    assert resolve_log_domain(prob(2), "off") == LINEAR
    assert resolve_log_domain(prob(1), "on") == LOG
    with pytest.raises(ValueError):
        resolve_log_domain(prob(1), "maybe")


def test_free_diffusion_converges_in_two_sweeps():
    problem = _free_problem()
    marginals, potentials, report = solve(problem)
    assert report.status == "converged"
    assert report.n_sweeps <= 2
    kernel = discretize_heat_kernel(
        problem.grid, problem.kernel_variance, problem.boundary
    )
    expected = problem.initial[0].values.copy()
    for k in range(problem.n_steps + 1):
        assert np.abs(marginals.rho[0, k] - expected).sum() < 1e-12
        expected = apply_kernel_array(kernel, expected)
    # no interaction, no final cost: all interior/final potentials stay zero
    assert np.all(potentials.u[0, 1:] == 0.0)


def test_initial_constraint_exact_after_every_sweep():
    problem = _two_pop_problem()
    worst_initial = []
    worst_mass = []

    def watch(engine, record):
        for i in range(2):
            dev = np.abs(engine.marginals[i, 0] - problem.initial[i].values).sum()
            worst_initial.append(dev)
            sums = engine.marginals[i].sum(axis=1)
            worst_mass.append(np.abs(sums - 1.0).max())

    solve(problem, max_iter=6, tol=1e-14, callback=watch)
    assert len(worst_initial) == 12
    assert max(worst_initial) < 1e-12
    assert max(worst_mass) < 1e-10


def test_two_population_run_converges_and_separates():
    problem = _two_pop_problem()
    marginals, potentials, report = solve(problem, tol=1e-7)
    assert report.status == "converged"
    assert report.final_error < 1e-7
    # terminal masses end near the swapped targets
    top = marginals.normalized(0, problem.n_steps).barycenter()
    bot = marginals.normalized(1, problem.n_steps).barycenter()
    assert np.linalg.norm(top - [0.75, 0.5]) < 0.15
    assert np.linalg.norm(bot - [0.25, 0.5]) < 0.15


def test_converged_potentials_are_a_fixed_point():
    problem = _two_pop_problem(n=8, n_steps=3)
    marginals, potentials, report = solve(problem, tol=1e-9)
    assert report.status == "converged"
    engine = SweepEngine(problem)
    engine.u = potentials.u.copy()
    engine.marginals = marginals.rho.copy()
    for i in range(2):
        engine.cache.refresh_backward(i, engine.u)
        engine.cache.refresh_forward(i, engine.u)
    _, dpot = engine.sweep()
    assert dpot < 1e-7


def test_jacobi_reads_sweep_start_snapshot():
    problem = _two_pop_problem(n=6, n_steps=3)
    gs = SweepEngine(problem, sweep="gauss_seidel")
    ja = SweepEngine(problem, sweep="jacobi")
    gs.sweep()
    ja.sweep()
    # population 0 saw identical (uniform) sources, population 1 did not
    np.testing.assert_array_equal(gs.u[0], ja.u[0])
    assert np.abs(gs.u[1, 1] - ja.u[1, 1]).max() > 1e-8


def test_jacobi_preserves_exact_mirror_symmetry():
    grid = build_grid((8, 8))
    shape = grid.points_per_axis

    def mirror(values):
        return np.flip(values.reshape(shape), axis=0).ravel().copy()

    rho_a = gaussian_field(grid, (0.3, 0.5), (30.0, 30.0))
    rho_b = MassField(mirror(rho_a.values), grid)
    g_a = _quadratic_cost(grid, (0.7, 0.5))
    g_b = ScalarField(mirror(g_a.values), grid)
    problem = ProblemSpec(
        grid=grid,
        horizon=1.0,
        n_steps=3,
        initial=[rho_a, rho_b],
        final_cost=[g_a, g_b],
        interactions=InteractionMatrix.uniform(2, BallKernel(40.0, 0.3)),
    )
    engine = SweepEngine(problem, sweep="jacobi")
    for _ in range(6):
        engine.sweep()
        for k in range(4):
            gap = np.abs(engine.marginals[1, k] - mirror(engine.marginals[0, k])).sum()
            assert gap < 1e-13


def test_damping_reaches_the_same_fixed_point():
    problem = _two_pop_problem(n=8, n_steps=3)
    plain, _, rep_plain = solve(problem, tol=1e-9)
    damped, _, rep_damped = solve(problem, tol=1e-9, damping=0.5)
    assert rep_plain.status == rep_damped.status == "converged"
    assert np.abs(plain.rho - damped.rho).max() < 1e-6
    # the exact constraints are never relaxed, even mid-run
    engine = SweepEngine(problem, damping=0.5)
    engine.sweep()
    assert np.abs(engine.marginals[:, 0] - np.stack(
        [f.values for f in problem.initial]
    )).max() < 1e-14


def test_literal_signs_flips_the_exponent():
    problem = _two_pop_problem(n=6, n_steps=3)
    std = SweepEngine(problem)
    lit = SweepEngine(problem, literal_signs=True)
    std.sweep()
    lit.sweep()
    g0 = problem.final_cost[0].values
    np.testing.assert_array_equal(std.u[0, 3], -g0)
    np.testing.assert_array_equal(lit.u[0, 3], +g0)
    np.testing.assert_allclose(lit.u[0, 1], -std.u[0, 1], atol=1e-14)


def test_legacy_unweighted_scales_interior_updates():
    problem = _two_pop_problem(n=6, n_steps=4)  # step size 1/4
    weighted = SweepEngine(problem)
    legacy = SweepEngine(problem, legacy_unweighted=True)
    weighted.sweep()
    legacy.sweep()
    # population 0 reads the same uniform source in both runs
    for k in range(1, 4):
        np.testing.assert_allclose(
            weighted.u[0, k], 0.25 * legacy.u[0, k], atol=1e-14
        )


def test_sweep_engine_rejects_bad_options():
    problem = _free_problem(n=4, n_steps=2)
    with pytest.raises(ValueError, match="sweep"):
        SweepEngine(problem, sweep="chaotic")
    with pytest.raises(ValueError, match="damping"):
        SweepEngine(problem, damping=0.0)
    with pytest.raises(ValueError, match="damping"):
        SweepEngine(problem, damping=1.5)
    with pytest.raises(ValueError, match="tol"):
        solve(problem, tol=0.0)
    with pytest.raises(ValueError, match="max_iter"):
        solve(problem, max_iter=0)


def test_infeasible_truncated_instance_raises():
    problem = _free_problem(n=4, n_steps=2)
    engine = SweepEngine(problem, log_domain="off")
    engine.cache.beta[0, 0][:] = 0.0  # backward message dead everywhere
    with pytest.raises(FloatingPointError, match="infeasible"):
        engine.update_initial_potential(0)


def _scripted_solve(monkeypatch, errors, **kwargs):
    """Run solve() with sweep() replaced by a scripted error sequence."""
    feed = iter(errors)

    def fake_sweep(self):
        self.n_sweeps_done += 1
        return (next(feed),), 0.0

    monkeypatch.setattr(SweepEngine, "sweep", fake_sweep)
    problem = _free_problem(n=4, n_steps=2)
    return solve(problem, **kwargs)


def test_solve_reports_max_iter(monkeypatch):
    _, _, report = _scripted_solve(
        monkeypatch, [1e-3] * 10, tol=1e-9, max_iter=10
    )
    assert report.status == "max_iter"
    assert report.n_sweeps == 10
    assert report.final_error == pytest.approx(1e-3)


def test_solve_reports_divergence(monkeypatch):
    errors = [1e-3] + [0.02] * 60
    _, _, report = _scripted_solve(
        monkeypatch, errors, tol=1e-9, max_iter=200
    )
    assert report.status == "diverged"
    # one settling sweep plus the patience window
    assert report.n_sweeps == 51


def test_solve_recovery_resets_divergence_patience(monkeypatch):
    # dips back under 10x the running best before patience runs out
    errors = ([1e-3] + [0.02] * 30 + [5e-3] + [0.02] * 30 + [1e-10])
    _, _, report = _scripted_solve(
        monkeypatch, errors, tol=1e-9, max_iter=200
    )
    assert report.status == "converged"
    assert report.n_sweeps == 63


def test_record_energy_attaches_breakdowns():
    problem = _two_pop_problem(n=6, n_steps=3)
    _, _, report = solve(problem, max_iter=3, tol=1e-14, record_energy=True)
    assert len(report.iterations) == 3
    for rec in report.iterations:
        assert rec.energies is not None
        assert np.isfinite(rec.energies.total)


def test_solve_report_final_error():
    empty = SolveReport(status="max_iter")
    assert empty.final_error == np.inf
    rec = IterationRecord(0, (0.25, 0.5), 0.125, 0.0)
    assert SolveReport("max_iter", [rec]).final_error == pytest.approx(0.875)


def test_estimator_wrapper_roundtrip():
    from sklearn.base import clone

    est = MultiPopulationSinkhorn(tol=1e-7, max_iter=50, sweep="jacobi")
    params = est.get_params()
    assert params["tol"] == 1e-7
    assert params["sweep"] == "jacobi"
    assert set(params) == {
        "tol",
        "max_iter",
        "sweep",
        "symmetrize",
        "legacy_unweighted",
        "log_domain",
        "damping",
        "literal_signs",
        "record_energy",
    }
    twin = clone(est)
    assert twin.get_params() == params

    with pytest.raises(AttributeError):
        est.marginal_trajectory(0)

    problem = _free_problem(n=8, n_steps=2)
    out = est.fit(problem)
    assert out is est
    assert isinstance(est.marginals_, MarginalSet)
    assert isinstance(est.potentials_, PotentialStack)
    assert est.report_.status == "converged"
    assert est.n_iter_ == est.report_.n_sweeps
    traj = est.marginal_trajectory(0)
    assert traj.shape == (3, 64)
