import math

import numpy as np
import pytest
from scipy.special import sph_harm_y

from sparse_eit.fem import NeumannSystem
from sparse_eit.mesh import SimplicialMesh
from sparse_eit.patterns import (
    ANGLE,
    Inclusion,
    OverlapError,
    PhantomSpec,
    build_phantom,
    circular_harmonic,
    default_phantom,
    full_data_patterns,
    partial_data_patterns,
    phantom_values,
    prior_field,
    real_spherical_harmonic,
    stretch_to_sphere,
)


def complex_real_form(n, m, polar, azimuth):
    """Real harmonic from complex ones (Condon-Shortley phase, as in scipy)."""
    Y = lambda k: sph_harm_y(n, k, polar, azimuth)  # noqa: E731
    if m < 0:
        val = 1j / math.sqrt(2) * (Y(m) - (-1) ** m * Y(-m))
    elif m == 0:
        val = Y(0)
    else:
        val = 1 / math.sqrt(2) * (Y(-m) + (-1) ** m * Y(m))
    return val


def test_phantom_values_at_reference_points():
    spec = default_phantom(3)
    pts = [(-0.09, -0.55, 0), (0, 0, 0.9), (-0.55 * math.sin(ANGLE), 0.55 * math.cos(ANGLE), 0),
           (0.45 * math.sin(ANGLE), 0.45 * math.cos(ANGLE), 0)]
    np.testing.assert_array_equal(phantom_values(spec, pts), [2.0, 1.0, 0.5, 0.5])


def test_phantom_on_mesh_takes_only_listed_values(ball_medium):
    spec = default_phantom(3)
    sigma, masks = build_phantom(spec, ball_medium)
    assert set(np.unique(sigma)) <= spec.values
    assert masks.shape == (3, ball_medium.n_vertices)
    assert all(m.any() for m in masks)
    assert np.all(sigma[masks[0]] == 2.0)


def test_ellipsoid_rotation_is_counterclockwise():
    inc = default_phantom(3).inclusions[1]
    axis = np.array([math.cos(ANGLE), math.sin(ANGLE), 0.0])
    c = np.array(inc.center)
    assert inc.contains(c + 0.58 * axis)[0]
    assert not inc.contains(c + 0.58 * np.array([-axis[1], axis[0], 0]))[0]


def test_overlap_detection(disk):
    spec = PhantomSpec(1.0, [Inclusion("ball", (0, 0), (0.3,), 2.0), Inclusion("ball", (0.1, 0), (0.3,), 0.5)])
    with pytest.raises(OverlapError):
        build_phantom(spec, disk)
    sigma, _ = build_phantom(spec, disk, allow_overlap=True)
    assert phantom_values(spec, [(0.05, 0)])[0] == 2.0
    assert sigma[np.argmin(np.linalg.norm(disk.vertices, axis=1))] == 2.0


def test_inclusion_outside_ball_rejected():
    with pytest.raises(ValueError):
        PhantomSpec(1.0, [Inclusion("ball", (0.9, 0, 0), (0.3,), 2.0)])


def test_prior_field_examples():
    spec = default_phantom(3)
    pts = np.array([[-0.09, -0.55, 0], [-0.09 + 0.38, -0.55, 0], [-0.09 + 0.39, -0.55, 0], [0, 0, 0.95]])
    # a throwaway mesh whose vertices are the probe points
    mesh = SimplicialMesh(np.vstack([pts, [[0.0, 0, -0.9], [0.3, 0.1, -0.8], [0.1, 0.3, -0.7], [0.05, 0.05, -0.5]]]),
                          [[4, 5, 6, 7]])
    mu = prior_field(spec, mesh)
    assert mu[0] == 1e-2
    assert mu[1] == 1e-2
    assert mu[2] == 1.0
    assert mu[3] == 1.0
    with pytest.raises(ValueError):
        prior_field(spec, mesh, dilation=0.9)


def test_prior_contains_true_support(ball_medium):
    spec = default_phantom(3)
    _, masks = build_phantom(spec, ball_medium)
    mu = prior_field(spec, ball_medium)
    assert set(np.unique(mu)) <= {1e-2, 1.0}
    assert np.all(mu[masks.any(axis=0)] == 1e-2)


def test_y00_constant(rng):
    pts = rng.standard_normal((20, 3))
    np.testing.assert_allclose(real_spherical_harmonic(0, 0, pts), 1 / math.sqrt(4 * math.pi))


@pytest.mark.parametrize("n", range(0, 6))
def test_matches_complex_combination(n, rng):
    pts = rng.standard_normal((40, 3))
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    polar = np.arccos(pts[:, 2])
    azimuth = np.arctan2(pts[:, 1], pts[:, 0])
    for m in range(-n, n + 1):
        ref = complex_real_form(n, m, polar, azimuth)
        assert np.abs(ref.imag).max() < 1e-12
        np.testing.assert_allclose(real_spherical_harmonic(n, m, pts), ref.real, atol=1e-12)


def test_order_out_of_range():
    with pytest.raises(ValueError):
        real_spherical_harmonic(2, 3, [[0, 0, 1.0]])


def test_orthonormal_by_boundary_quadrature(ball_medium):
    fam_sub = full_data_patterns(ball_medium, 1).subset
    b = fam_sub.vertices
    B = fam_sub.mass
    y10 = np.zeros(ball_medium.n_vertices)
    y11 = np.zeros(ball_medium.n_vertices)
    y10[b] = real_spherical_harmonic(1, 0, ball_medium.vertices[b])
    y11[b] = real_spherical_harmonic(1, 1, ball_medium.vertices[b])
    assert y10 @ B @ y10 == pytest.approx(1.0, rel=0.03)
    assert abs(y10 @ B @ y11) < 1e-3


@pytest.mark.parametrize("n_max, size", [(1, 3), (5, 35)])
def test_full_family_size(ball, n_max, size):
    fam = full_data_patterns(ball, n_max)
    assert len(fam) == size
    for p in fam:
        m = fam.subset.weights
        assert abs(m @ p.values) <= 1e-10 * np.linalg.norm(p.values)


def test_family_gram_nonsingular(ball_medium):
    fam = full_data_patterns(ball_medium, 3)
    gram = fam.values.T @ fam.subset.mass @ fam.values
    assert np.linalg.cond(gram) < 1e3


@pytest.mark.parametrize("which", ["upper", "lower"])
def test_partial_family(ball_medium, which):
    fam = partial_data_patterns(ball_medium, which, 5)
    assert len(fam) == 35
    z = ball_medium.vertices[:, 2]
    outside = (z < -1e-12) if which == "upper" else (z > 1e-12)
    for p in fam:
        assert np.all(p.values[outside] == 0)
        m = fam.subset.weights
        assert abs(m @ p.values) <= 1e-10 * np.linalg.norm(m) * np.linalg.norm(p.values)
    gram = fam.values.T @ fam.subset.mass @ fam.values
    assert np.linalg.matrix_rank(gram) == 35


def test_partial_patterns_drive_solver(ball):
    fam = partial_data_patterns(ball, "upper", 2)
    u = NeumannSystem(ball, np.ones(ball.n_vertices)).solve_loads(fam.loads(), fam.subset)
    assert np.isfinite(u).all()


def test_stretch_maps_rim_to_opposite_pole():
    rim = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    np.testing.assert_allclose(stretch_to_sphere(rim, "upper"), [[0, 0, -1], [0, 0, -1]], atol=1e-12)
    np.testing.assert_allclose(stretch_to_sphere([[0, 0, 1.0]], "upper"), [[0, 0, 1]], atol=1e-12)
    np.testing.assert_allclose(stretch_to_sphere([[0, 0, -1.0]], "lower"), [[0, 0, -1]], atol=1e-12)
    # quarter circle -> half circle in 2D
    np.testing.assert_allclose(stretch_to_sphere([[0, 1.0]], "upper"), [[-1, 0]], atol=1e-12)


def test_circular_harmonic_normalised():
    t = np.linspace(0, 2 * math.pi, 4001)[:-1]
    pts = np.column_stack([np.cos(t), np.sin(t)])
    for n in (1, 3):
        for m in (n, -n):
            v = circular_harmonic(n, m, pts)
            assert np.sum(v * v) * (2 * math.pi / len(t)) == pytest.approx(1.0, rel=1e-12)
