import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparse_eit.fem import RieszSolver, assemble_h1_matrices
from sparse_eit.forward import ForwardModel, exact_data, simulate_cauchy_data
from sparse_eit.mesh import generate_ball_mesh, node_volumes
from sparse_eit.patterns import build_phantom, default_phantom
from sparse_eit.reconstruct import (
    AdmissibilityError,
    RegularizationPlan,
    SolverConfig,
    bb_step,
    gradient_load,
    objective,
    project_admissible,
    proximal_update,
    run,
    soft_threshold,
    sobolev_gradient,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


@pytest.mark.parametrize("x, beta, expected", [(1.2, 0.5, 0.7), (-3, 1, -2), (0.3, 0.5, 0.0), (0.0, 0.2, 0.0)])
def test_soft_threshold_examples(x, beta, expected):
    assert soft_threshold(x, beta) == pytest.approx(expected)


def test_soft_threshold_rejects_negative():
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


@given(finite, st.floats(0, 100), finite)
def test_soft_threshold_odd_and_nonexpansive(x, beta, y):
    assert soft_threshold(-x, beta) == -soft_threshold(x, beta)
    assert abs(soft_threshold(x, beta) - soft_threshold(y, beta)) <= abs(x - y) + 1e-12


@given(st.floats(-5, 5), st.floats(0, 5))
@settings(max_examples=200)
def test_soft_threshold_minimises_prox_objective(d, beta):
    t = soft_threshold(d, beta)
    f = lambda s: 0.5 * (s - d) ** 2 + beta * np.abs(s)
    grid = np.linspace(t - 1, t + 1, 2001)
    assert f(t) <= f(grid).min() + 1e-12


def test_projection_examples():
    assert project_admissible(np.array([3.0]), 1.0, 0.5)[0] == 1.0
    assert project_admissible(np.array([-0.9]), 1.0, 0.5)[0] == -0.5
    zeta = np.array([0.2, -0.3, 0.0])
    np.testing.assert_array_equal(project_admissible(zeta, 1.0, 0.5), zeta)
    with pytest.raises(AdmissibilityError):
        project_admissible(zeta, np.array([1.0, 3.0, 1.0]), 0.5)
    with pytest.raises(AdmissibilityError):
        project_admissible(zeta, 1.0, 1.5)


@given(st.lists(finite, min_size=1, max_size=30), st.floats(0.05, 0.95))
def test_projection_idempotent_and_nonexpansive(vals, c):
    z = np.array(vals)
    sigma0 = np.full_like(z, 1.0)
    p = project_admissible(z, sigma0, c)
    np.testing.assert_array_equal(project_admissible(p, sigma0, c), p)
    assert np.all(sigma0 + p >= c - 1e-12) and np.all(sigma0 + p <= 1 / c + 1e-12)
    w = z[::-1]
    assert np.all(np.abs(p - project_admissible(w, sigma0, c)) <= np.abs(z - w) + 1e-12)


@pytest.fixture(scope="module")
def h1_disk():
    mesh = generate_ball_mesh(2, 6)
    return mesh, assemble_h1_matrices(mesh)


def test_bb_step_examples(h1_disk, rng):
    mesh, h1 = h1_disk
    cfg = SolverConfig()
    x0, x1 = np.zeros(mesh.n_vertices), rng.standard_normal(mesh.n_vertices)
    g0 = rng.standard_normal(mesh.n_vertices)
    assert bb_step(h1, x1, x0, g0 + 2 * x1, g0, cfg) == 1.0  # raw 0.5, clamped up
    assert bb_step(h1, x1, x0, g0 + x1, g0, cfg) == pytest.approx(1.0)
    assert bb_step(h1, x1, x0, g0 + 0.25 * x1, g0, cfg) == pytest.approx(4.0)
    assert bb_step(h1, x1, x0, g0, g0, cfg) == 1000.0
    assert bb_step(h1, x1, x0, g0 - x1, g0, cfg) == 1000.0


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(c=1.0)
    with pytest.raises(ValueError):
        SolverConfig(s_min=10, s_max=1)
    with pytest.raises(ValueError):
        SolverConfig(tau=0)


def test_plan_thresholds_mesh_independent():
    for r in (4, 8):
        mesh = generate_ball_mesh(2, r)
        plan = RegularizationPlan.for_mesh(mesh, 0.3)
        np.testing.assert_allclose(plan.thresholds(2.0), 0.6, rtol=1e-13)
        np.testing.assert_allclose(plan.beta, node_volumes(mesh))
    with pytest.raises(ValueError):
        RegularizationPlan.for_mesh(mesh, 0.1, np.zeros(mesh.n_vertices))


def test_proximal_update(h1_disk, rng):
    mesh, _ = h1_disk
    dg, grad = rng.standard_normal((2, mesh.n_vertices))
    free = RegularizationPlan.for_mesh(mesh, 0.0)
    np.testing.assert_allclose(proximal_update(dg, grad, 0.7, free), dg - 0.7 * grad)
    mu = rng.uniform(0.01, 1, mesh.n_vertices)
    plan = RegularizationPlan.for_mesh(mesh, 0.5, mu)
    out = proximal_update(dg, grad, 2.0, plan, mesh.boundary_mask)
    assert np.all(out[mesh.boundary_mask] == 0)
    inner = ~mesh.boundary_mask
    expected = soft_threshold((dg - 2 * grad)[inner], mu[inner])
    np.testing.assert_allclose(out[inner], expected)
    assert np.all(proximal_update(grad, grad, 1.0, plan) == 0)


@pytest.fixture(scope="module")
def problem():
    mesh = generate_ball_mesh(2, 6)
    sigma, masks = build_phantom(default_phantom(2), mesh)
    return mesh, sigma, masks


def test_objective_terms(problem):
    mesh, sigma, _ = problem
    data = exact_data(mesh, sigma, "full", 2)
    plan = RegularizationPlan.for_mesh(mesh, 0.01)
    psi, mis, pen, _ = objective(ForwardModel(data), sigma - 1, 1.0, plan)
    assert pen == pytest.approx(plan.penalty(sigma - 1)) and psi == pytest.approx(mis + pen)
    assert mis < 1e-18
    psi0, mis0, pen0, _ = objective(ForwardModel(data), np.zeros(mesh.n_vertices), 1.0, plan)
    assert pen0 == 0 and psi0 == mis0 > 0
    j = mesh.interior_vertices[3]
    e = np.zeros(mesh.n_vertices)
    e[j] = 1.0
    assert plan.penalty(e) == pytest.approx(0.01 * plan.beta[j])


def test_gradient_matches_finite_differences(problem, rng):
    mesh, sigma, _ = problem
    fine = generate_ball_mesh(2, 18)
    sf, _ = build_phantom(default_phantom(2), fine)
    data = simulate_cauchy_data(fine, sf, mesh, "upper", 2, 0.0)
    model = ForwardModel(data)
    gamma = 1 + 0.3 * rng.uniform(-1, 1, mesh.n_vertices)
    load = gradient_load(model, model.evaluate(gamma))
    eta = rng.standard_normal(mesh.n_vertices) * ~mesh.boundary_mask
    h = 1e-4
    fd = (model.evaluate(gamma + h * eta).value - model.evaluate(gamma - h * eta).value) / (2 * h)
    assert abs(fd - load @ eta) < 1e-5 * abs(load @ eta)


def test_gradient_additive_over_patterns(problem):
    mesh, sigma, _ = problem
    data = exact_data(mesh, sigma, "full", 2)
    gamma = np.ones(mesh.n_vertices)
    model = ForwardModel(data)
    total = gradient_load(model, model.evaluate(gamma))
    parts = []
    for k in range(data.K):
        m = ForwardModel(data.subset(k))
        parts.append(gradient_load(m, m.evaluate(gamma)))
    np.testing.assert_allclose(total, sum(parts), atol=1e-9 * np.abs(total).max())


def test_sobolev_gradient_riesz_identity(h1_disk, rng):
    mesh, h1 = h1_disk
    riesz = RieszSolver(h1)
    load = rng.standard_normal(mesh.n_vertices)
    v = sobolev_gradient(riesz, load)
    assert np.all(v[mesh.boundary_mask] == 0)
    eta = rng.standard_normal(mesh.n_vertices) * ~mesh.boundary_mask
    assert h1.inner(v, eta) == pytest.approx(load @ eta, rel=1e-8)
    assert np.all(sobolev_gradient(riesz, np.zeros(mesh.n_vertices)) == 0)


def test_zero_fixed_point(problem):
    mesh, _, _ = problem
    data = exact_data(mesh, np.ones(mesh.n_vertices), "full", 2)
    res = run(data, 1.0, RegularizationPlan.for_mesh(mesh, 1e-3), SolverConfig(max_iter=5))
    assert np.all(res.dg == 0)


def test_run_invariants_exact_data(problem, tmp_path):
    mesh, sigma, _ = problem
    data = exact_data(mesh, sigma, "full", 3)
    cfg = SolverConfig(c=0.2, max_iter=60)
    plan = RegularizationPlan.for_mesh(mesh, 1e-5)
    res = run(data, 1.0, plan, cfg, keep_iterates=True)
    assert res.psi[-1] < res.initial_psi / 10
    for rec, it in zip(res.log, res.iterates[1:]):
        assert rec.psi <= rec.reference - rec.decrease
        assert cfg.s_stop <= rec.step <= cfg.s_max
        assert np.all(it[mesh.boundary_mask] == 0)
        assert np.all((1 + it >= cfg.c - 1e-14) & (1 + it <= 1 / cfg.c + 1e-14))
    res.write_csv(tmp_path / "log.csv")
    rows = list(csv.DictReader(open(tmp_path / "log.csv")))
    assert [int(r["iteration"]) for r in rows] == list(range(len(res.log) + 1))
    assert float(rows[-1]["psi"]) == res.log[-1].psi
