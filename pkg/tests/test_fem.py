import math

import numpy as np
import pytest
from scipy.sparse import diags

from sparse_eit.fem import (
    BoundaryPattern,
    CompatibilityError,
    NeumannSystem,
    RieszSolver,
    SolverError,
    assemble_h1_matrices,
    assemble_stiffness,
    pcg,
    solve_neumann,
    solve_riesz,
)
from sparse_eit.mesh import full_boundary, mark_boundary_subset
from sparse_eit.patterns import circular_harmonic, full_data_patterns


def random_gamma(mesh, rng, c=0.5):
    return rng.uniform(c, 1 / c, mesh.n_vertices)


def l2_rel(u, exact, subset):
    e = u - exact
    return math.sqrt(e @ subset.mass @ e / (exact @ subset.mass @ exact))


@pytest.mark.parametrize("fixture", ["disk", "ball"])
def test_stiffness_properties(fixture, request, rng):
    mesh = request.getfixturevalue(fixture)
    K1 = assemble_stiffness(mesh, np.ones(mesh.n_vertices))
    plain = assemble_h1_matrices(mesh).stiffness
    assert abs(K1 - plain).max() < 1e-14
    gamma = random_gamma(mesh, rng)
    K = assemble_stiffness(mesh, gamma)
    assert abs(K - K.T).max() < 1e-13
    assert np.abs(K @ np.ones(mesh.n_vertices)).max() < 1e-12
    K2 = assemble_stiffness(mesh, 2 * gamma)
    assert abs(K2 - 2 * K).max() < 1e-13


def test_stiffness_rejects_wrong_length(disk):
    with pytest.raises(ValueError):
        assemble_stiffness(disk, np.ones(3))


@pytest.mark.parametrize("fixture", ["disk", "ball"])
def test_h1_matrices(fixture, request, rng):
    mesh = request.getfixturevalue(fixture)
    lower = mark_boundary_subset(mesh, lambda c: c[:, -1] < 0)
    h1, B = assemble_h1_matrices(mesh, lower)
    one = np.ones(mesh.n_vertices)
    assert one @ h1.mass @ one == pytest.approx(mesh.volume, rel=1e-13)
    assert one @ B @ one == pytest.approx(lower.area, rel=1e-13)
    for _ in range(20):
        v = rng.standard_normal(mesh.n_vertices)
        assert h1.norm2(v) > 0
    assert abs(h1.gram - h1.gram.T).max() < 1e-14


def test_zero_current_gives_zero(disk):
    sub = full_boundary(disk)
    g = BoundaryPattern(np.zeros(disk.n_vertices), sub)
    u = solve_neumann(NeumannSystem(disk, np.ones(disk.n_vertices)), g, sub)
    assert np.all(u == 0)


def test_disk_harmonic_oracle(disk_fine):
    """u = r^n cos(n t)/n has normal derivative cos(n t) on the unit circle."""
    sub = full_boundary(disk_fine)
    system = NeumannSystem(disk_fine, np.ones(disk_fine.n_vertices))
    x = disk_fine.vertices
    for n in (1, 2, 3):
        values = np.where(sub.mask, circular_harmonic(n, n, x), 0.0)
        values[sub.mask] -= sub.mean(values)
        u = solve_neumann(system, BoundaryPattern(values, sub), sub)
        assert l2_rel(u, values / n, sub) < 0.01


def test_ball_harmonic_oracle(ball_medium):
    fam = full_data_patterns(ball_medium, 2)
    system = NeumannSystem(ball_medium, np.ones(ball_medium.n_vertices))
    for p in fam:
        u = solve_neumann(system, p, fam.subset)
        assert l2_rel(u, p.values / p.degree, fam.subset) < 0.06


def test_residual_meets_tolerance(disk, rng):
    fam = full_data_patterns(disk, 3)
    system = NeumannSystem(disk, random_gamma(disk, rng), rtol=1e-10)
    u = system.solve_loads(fam.loads(), fam.subset)
    b = fam.loads() - fam.loads().mean(axis=0)
    res = np.linalg.norm(system.K @ u - b, axis=0) / np.linalg.norm(b, axis=0)
    assert np.all(res <= 1e-10)
    assert np.all(system.last_info["residual"] <= 1e-10)


def test_grounding_on_subset(disk, rng):
    fam = full_data_patterns(disk, 2)
    lower = mark_boundary_subset(disk, lambda c: c[:, 1] < 0)
    u = NeumannSystem(disk, random_gamma(disk, rng)).solve_loads(fam.loads(), lower)
    assert np.abs(lower.weights @ u).max() < 1e-13


def test_incompatible_current_rejected(disk):
    sub = full_boundary(disk)
    g = BoundaryPattern(np.where(sub.mask, 1.0, 0.0), sub)
    with pytest.raises(CompatibilityError):
        solve_neumann(NeumannSystem(disk, np.ones(disk.n_vertices)), g, sub)


def test_nonconvergence_reported(disk):
    fam = full_data_patterns(disk, 1)
    system = NeumannSystem(disk, np.ones(disk.n_vertices), maxiter=2)
    with pytest.raises(SolverError) as info:
        system.solve_loads(fam.loads(), fam.subset)
    assert info.value.residual > 1e-10


def test_nd_map_self_adjoint(disk, rng):
    fam = full_data_patterns(disk, 3)
    sub = fam.subset
    u = NeumannSystem(disk, random_gamma(disk, rng)).solve_loads(fam.loads(), sub)
    # int g_i Lambda g_j ds
    gram = fam.values.T @ sub.mass @ u
    np.testing.assert_allclose(gram, gram.T, atol=1e-9 * np.abs(gram).max())


def test_energy_positivity(ball, rng):
    c = 0.5
    gamma = random_gamma(ball, rng, c)
    K = assemble_stiffness(ball, gamma)
    K1 = assemble_stiffness(ball, np.ones(ball.n_vertices))
    for _ in range(10):
        u = rng.standard_normal(ball.n_vertices)
        assert u @ K @ u >= c * (u @ K1 @ u) * (1 - 1e-12)


def test_riesz_zero_load(ball):
    h1 = assemble_h1_matrices(ball)
    assert np.all(solve_riesz(h1, np.zeros(ball.n_vertices)) == 0)


@pytest.mark.parametrize("fixture", ["disk", "ball"])
def test_riesz_identity(fixture, request, rng):
    mesh = request.getfixturevalue(fixture)
    h1 = assemble_h1_matrices(mesh)
    load = rng.standard_normal(mesh.n_vertices)
    v = RieszSolver(h1).solve(load)
    assert np.all(v[mesh.boundary_mask] == 0)
    for _ in range(5):
        eta = rng.standard_normal(mesh.n_vertices) * ~mesh.boundary_mask
        assert h1.inner(v, eta) == pytest.approx(load @ eta, rel=1e-8, abs=1e-12)


def test_pcg_multiple_columns(rng):
    n = 50
    A = diags([-1, 2.5, -1], [-1, 0, 1], shape=(n, n)).tocsr()
    B = rng.standard_normal((n, 3))
    X, info = pcg(A, B, rtol=1e-12)
    np.testing.assert_allclose(A @ X, B, atol=1e-10)
    assert info["iterations"].shape == (3,)
