"""Energy accounting, the forward-propagation probe, and summary metrics."""

import numpy as np
import pytest

from mfgsinkhorn.diagnostics import (
    assemble_interaction_fields,
    barycenter_trajectory,
    energy_breakdown,
    fp_forward_consistency,
    hopf_cole_backward,
    mirror_distance,
    mirrored_masses,
    relative_entropy_vs_uniform,
    second_moment,
    separation_metric,
)
from mfgsinkhorn.grids import (
    MassField,
    ScalarField,
    build_grid,
    discretize_heat_kernel,
    gaussian_field,
)
from mfgsinkhorn.interaction import BallKernel, InteractionMatrix
from mfgsinkhorn.messages import MarginalSet, PotentialStack, backward_messages
from mfgsinkhorn.solver import ProblemSpec, solve


def _quadratic_cost(grid, center, strength=20.0):
    pts = grid.cell_centers()
    return ScalarField(
        strength * np.sum((pts - np.asarray(center)) ** 2, axis=1), grid
    )


def _two_pop_problem(n=10, n_steps=4, strength=40.0, epsilon=1.0):
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
        epsilon=epsilon,
    )


def test_relative_entropy_vs_uniform_known_values():
    uniform = np.full(8, 1.0 / 8.0)
    assert relative_entropy_vs_uniform(uniform) == pytest.approx(0.0, abs=1e-15)
    point = np.zeros(8)
    point[3] = 1.0
    assert relative_entropy_vs_uniform(point) == pytest.approx(np.log(8.0))
    half = np.zeros(4)
    half[:2] = 0.5
    assert relative_entropy_vs_uniform(half) == pytest.approx(np.log(2.0))


def test_interaction_fields_shape_and_content():
    problem = _two_pop_problem(n=6, n_steps=3)
    rho = np.full((2, 4, 36), 1.0 / 36.0)
    fields = assemble_interaction_fields(problem, MarginalSet(rho, problem.grid))
    assert fields.shape == (2, 4, 36)
    from mfgsinkhorn.interaction import convolve_masses

    want = convolve_masses(problem.interactions.pair(0, 1), rho[1, 0], problem.grid)
    np.testing.assert_allclose(fields[0, 0], want, atol=1e-14)


def test_energy_breakdown_hand_check_single_step():
    # K = 1: no interior slices, so the interaction part must vanish and the
    # final part is a plain dot product
    grid = build_grid((4,))
    rho0 = MassField(np.array([0.4, 0.3, 0.2, 0.1]), grid)
    g = ScalarField(np.array([0.0, 1.0, 2.0, 3.0]), grid)
    problem = ProblemSpec(
        grid, 1.0, 1, [rho0], [g], InteractionMatrix.none(1)
    )
    marginals, potentials, report = solve(problem)
    eb = energy_breakdown(problem, marginals, potentials)
    assert eb.interaction_total == 0.0
    want_final = float(np.dot(g.values, marginals.rho[0, 1]))
    assert eb.final_cost_total == pytest.approx(want_final, abs=1e-15)
    assert eb.total == pytest.approx(
        eb.entropic_total + eb.final_cost_total, abs=1e-15
    )
    assert eb.eulerian_calibrated
    d = eb.as_dict()
    assert d["total"] == pytest.approx(eb.total)
    assert len(d["entropic_per_population"]) == 1


def test_energy_interaction_term_counts_ordered_pairs():
    problem = _two_pop_problem(n=5, n_steps=3)
    marginals, potentials, _ = solve(problem, max_iter=4, tol=1e-14)
    eb = energy_breakdown(problem, marginals, potentials)
    # hand evaluation: weight * sum over interior k of both ordered pairs
    from mfgsinkhorn.interaction import convolve_masses

    V = problem.interactions.pair(0, 1)
    want = 0.0
    for k in range(1, 3):
        a = convolve_masses(V, marginals.rho[1, k], problem.grid)
        b = convolve_masses(V, marginals.rho[0, k], problem.grid)
        want += np.dot(a, marginals.rho[0, k]) + np.dot(b, marginals.rho[1, k])
    want *= problem.step_size
    assert eb.interaction_total == pytest.approx(want, rel=1e-12)
    # an explicit quadrature weight rescales only the interaction part
    unweighted = energy_breakdown(problem, marginals, potentials, weight=1.0)
    assert unweighted.interaction_total == pytest.approx(
        eb.interaction_total / problem.step_size, rel=1e-12
    )
    assert unweighted.final_cost_total == eb.final_cost_total


def test_energy_calibration_flag_follows_diffusivity():
    problem = _two_pop_problem(n=5, n_steps=3, epsilon=0.5)
    marginals, potentials, _ = solve(problem, max_iter=3, tol=1e-14)
    eb = energy_breakdown(problem, marginals, potentials)
    assert eb.epsilon == 0.5
    assert not eb.eulerian_calibrated


def test_energy_entropy_decreases_with_tighter_start():
    # a more concentrated start pays more relative entropy against uniform
    tight = relative_entropy_vs_uniform(
        gaussian_field(build_grid((20, 20)), (0.5, 0.5), (200.0, 200.0)).values
    )
    broad = relative_entropy_vs_uniform(
        gaussian_field(build_grid((20, 20)), (0.5, 0.5), (5.0, 5.0)).values
    )
    assert tight > broad > 0.0


def test_hopf_cole_matches_backward_messages_when_free():
    # with no interactions and unit scale the value recursion is exactly the
    # solver's backward message recursion started from exp(-g)
    grid = build_grid((7, 7))
    g = _quadratic_cost(grid, (0.3, 0.4), 8.0)
    problem = ProblemSpec(
        grid,
        1.0,
        3,
        [gaussian_field(grid, (0.5, 0.5), (20.0, 20.0))],
        [g],
        InteractionMatrix.none(1),
    )
    state = hopf_cole_backward(
        problem, np.zeros((4, grid.size)), g.values, exponent_scale=1.0
    )
    kernel = discretize_heat_kernel(grid, problem.kernel_variance)
    u = np.zeros((4, grid.size))
    u[3] = -g.values
    beta = backward_messages(u, kernel)
    np.testing.assert_allclose(np.exp(state.log_v), beta * np.exp(u), rtol=1e-12)
    assert state.scale == 1.0
    # value accessor inverts the log transform
    np.testing.assert_allclose(state.value, -state.log_v, atol=1e-13)


def test_hopf_cole_exponent_scale_rescales_terminal_slice():
    problem = _two_pop_problem(n=5, n_steps=2)
    fields = np.zeros((3, 25))
    g = problem.final_cost[0].values
    s1 = hopf_cole_backward(problem, fields, g, exponent_scale=1.0)
    s2 = hopf_cole_backward(problem, fields, g, exponent_scale=2.0)
    np.testing.assert_allclose(s1.log_v[2], -g, atol=1e-14)
    np.testing.assert_allclose(s2.log_v[2], -g / 2.0, atol=1e-14)
    with pytest.raises(ValueError):
        hopf_cole_backward(problem, fields, g, exponent_scale=0.0)


def test_fp_probe_is_machine_exact_without_interactions():
    grid = build_grid((12, 12))
    problem = ProblemSpec(
        grid,
        1.0,
        4,
        [gaussian_field(grid, (0.4, 0.55), (50.0, 50.0))],
        [_quadratic_cost(grid, (0.7, 0.5))],
        InteractionMatrix.none(1),
    )
    marginals, _, report = solve(problem)
    assert report.status == "converged"
    res = fp_forward_consistency(problem, marginals, 0, mode="tilt")
    assert res.shape == (5,)
    assert res[0] == 0.0
    assert res.max() < 1e-12


def test_fp_probe_tracks_solver_convergence_with_interactions():
    problem = _two_pop_problem(n=8, n_steps=3)
    marginals, _, report = solve(problem, tol=1e-8)
    assert report.status == "converged"
    for i in range(2):
        res = fp_forward_consistency(problem, marginals, i, mode="tilt")
        assert res.max() < 1e-5


def test_fp_probe_gradient_mode_runs_but_is_coarser():
    grid = build_grid((12, 12))
    problem = ProblemSpec(
        grid,
        1.0,
        4,
        [gaussian_field(grid, (0.4, 0.55), (50.0, 50.0))],
        [_quadratic_cost(grid, (0.7, 0.5))],
        InteractionMatrix.none(1),
    )
    marginals, _, _ = solve(problem)
    tilt = fp_forward_consistency(problem, marginals, 0, mode="tilt")
    grad = fp_forward_consistency(problem, marginals, 0, mode="gradient")
    assert np.all(np.isfinite(grad))
    assert grad.max() < 2.0  # bounded, but orders above the exact scheme
    assert grad.max() > tilt.max()
    with pytest.raises(ValueError):
        fp_forward_consistency(problem, marginals, 0, mode="spectral")


def test_fp_probe_accepts_precomputed_fields():
    problem = _two_pop_problem(n=6, n_steps=3)
    marginals, _, _ = solve(problem, tol=1e-8)
    mset = marginals
    fields = assemble_interaction_fields(problem, mset)
    a = fp_forward_consistency(problem, mset, 0)
    b = fp_forward_consistency(problem, mset, 0, fields=fields)
    np.testing.assert_array_equal(a, b)


def test_barycenter_trajectory_matches_field_barycenters():
    problem = _two_pop_problem(n=8, n_steps=3)
    marginals, _, _ = solve(problem, max_iter=5, tol=1e-14)
    traj = barycenter_trajectory(marginals, 1)
    assert traj.shape == (4, 2)
    for k in range(4):
        np.testing.assert_allclose(
            traj[k], marginals.normalized(1, k).barycenter(), atol=1e-12
        )


def test_second_moment_point_mass_and_shifted_center():
    grid = build_grid((5,))
    m = np.zeros(5)
    m[2] = 1.0  # cell center 0.5
    assert second_moment(m, grid) == pytest.approx(0.0, abs=1e-30)
    assert second_moment(m, grid, center=[0.1]) == pytest.approx(0.16)
    two = np.zeros(5)
    two[0] = two[4] = 0.5  # centers 0.1 and 0.9, barycenter 0.5
    assert second_moment(two, grid) == pytest.approx(0.16)


def test_separation_metric_disjoint_and_overlapping():
    grid = build_grid((20, 20))
    far_a = gaussian_field(grid, (0.15, 0.5), (400.0, 400.0))
    far_b = gaussian_field(grid, (0.85, 0.5), (400.0, 400.0))
    rho = np.stack([np.tile(far_a.values, (2, 1)), np.tile(far_b.values, (2, 1))])
    ms = MarginalSet(rho, grid)
    sep = separation_metric(ms, 0, 1, radius=0.2)
    assert sep.shape == (2,)
    assert sep.max() < 1e-6
    # fully overlapping populations at a generous radius pair almost all mass
    rho2 = np.stack([np.tile(far_a.values, (2, 1))] * 2)
    sep2 = separation_metric(MarginalSet(rho2, grid), 0, 1, radius=0.5)
    assert sep2.min() > 0.99


def test_mirror_helpers_roundtrip():
    grid = build_grid((4, 3))
    rng = np.random.default_rng(2)
    m = rng.uniform(size=12)
    m /= m.sum()
    flipped = mirrored_masses(m, grid, axis=0)
    np.testing.assert_array_equal(mirrored_masses(flipped, grid, axis=0), m)
    np.testing.assert_allclose(flipped.sum(), m.sum(), atol=1e-15)
    assert not np.array_equal(flipped, m)

    rho = np.stack([m[None, :], flipped[None, :]])
    dist = mirror_distance(MarginalSet(rho, grid), 0, 1, axis=0)
    np.testing.assert_allclose(dist, 0.0, atol=1e-16)
    dist_self = mirror_distance(MarginalSet(rho, grid), 0, 0, axis=0)
    assert dist_self[0] > 0.01
