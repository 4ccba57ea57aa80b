"""Numerical phantom, harmonic current patterns and the spatial prior field."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fem import BoundaryPattern
from .mesh import BoundarySubset, SimplicialMesh, full_boundary, mark_boundary_subset

ANGLE = 5 * math.pi / 12


@dataclass(frozen=True)
class Inclusion:
    """Ball or ellipsoid (disk/ellipse in 2D) with a constant value.

    ``angle`` rotates the semi-axes counterclockwise about the z-axis through
    ``center`` (viewed from +z).
    """

    shape: str
    center: tuple
    radii: tuple
    value: float
    angle: float = 0.0

    def __post_init__(self):
        if self.shape not in ("ball", "ellipsoid"):
            raise ValueError(f"unknown inclusion shape {self.shape!r}")
        if self.value <= 0:
            raise ValueError("inclusion value must be positive")
        radii = tuple(float(r) for r in np.atleast_1d(self.radii))
        if self.shape == "ball":
            radii = radii[:1] * len(self.center)
        if len(radii) != len(self.center) or min(radii) <= 0:
            raise ValueError("radii must be positive, one per coordinate")
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains(self, points, scale: float = 1.0) -> np.ndarray:
        points = np.atleast_2d(points)
        local = points - np.asarray(self.center)
        c, s = math.cos(self.angle), math.sin(self.angle)
        x, y = local[:, 0], local[:, 1]
        # inverse rotation into the inclusion frame
        local = local.copy()
        local[:, 0], local[:, 1] = c * x + s * y, -s * x + c * y
        return np.sum((local / (scale * np.asarray(self.radii))) ** 2, axis=1) <= 1.0

    def inside_unit_ball(self, samples: int = 64) -> bool:
        """Check the rotated boundary of the inclusion stays within |x| < 1."""
        if self.dim == 2:
            t = np.linspace(0, 2 * math.pi, 4 * samples, endpoint=False)
            unit = np.column_stack([np.cos(t), np.sin(t)])
        else:
            t, p = np.meshgrid(np.linspace(0, math.pi, samples), np.linspace(0, 2 * math.pi, 2 * samples))
            unit = np.column_stack([(np.sin(t) * np.cos(p)).ravel(), (np.sin(t) * np.sin(p)).ravel(),
                                    np.cos(t).ravel()])
        pts = unit * np.asarray(self.radii)
        c, s = math.cos(self.angle), math.sin(self.angle)
        x, y = pts[:, 0].copy(), pts[:, 1].copy()
        pts[:, 0], pts[:, 1] = c * x - s * y, s * x + c * y
        return bool(np.all(np.linalg.norm(pts + np.asarray(self.center), axis=1) < 1.0))


@dataclass
class PhantomSpec:
    background: float = 1.0
    inclusions: list = field(default_factory=list)

    def __post_init__(self):
        if self.background <= 0:
            raise ValueError("background conductivity must be positive")
        for inc in self.inclusions:
            if not inc.inside_unit_ball():
                raise ValueError(f"inclusion centred at {inc.center} leaves the unit ball")

    @property
    def values(self) -> set:
        return {self.background} | {inc.value for inc in self.inclusions}


def default_phantom(dim: int = 3) -> PhantomSpec:
    """Ball of value 2 and two rotated ellipsoids of value 0.5 in background 1.

    In 2D the same geometry is cut by the plane z = 0.
    """
    s, c = math.sin(ANGLE), math.cos(ANGLE)
    incs = [
        Inclusion("ball", (-0.09, -0.55, 0.0), (0.35,), 2.0),
        Inclusion("ellipsoid", (-0.55 * s, 0.55 * c, 0.0), (0.6, 0.3, 0.3), 0.5, ANGLE),
        Inclusion("ellipsoid", (0.45 * s, 0.45 * c, 0.0), (0.7, 0.35, 0.35), 0.5, -ANGLE),
    ]
    if dim == 2:
        incs = [Inclusion(i.shape, i.center[:2], i.radii[:2], i.value, i.angle) for i in incs]
    return PhantomSpec(1.0, incs)


class OverlapError(ValueError):
    pass


def phantom_values(spec: PhantomSpec, points) -> np.ndarray:
    """Conductivity of the phantom at arbitrary points (first inclusion wins)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    sigma = np.full(len(points), float(spec.background))
    for inc in reversed(spec.inclusions):
        sigma[inc.contains(points)] = inc.value
    return sigma


def build_phantom(spec: PhantomSpec, mesh: SimplicialMesh, allow_overlap: bool = False):
    """Nodal conductivity and one membership mask per inclusion.

    Where inclusions overlap the first listed wins (only with ``allow_overlap``).
    """
    masks = np.array([inc.contains(mesh.vertices) for inc in spec.inclusions], dtype=bool).reshape(
        len(spec.inclusions), mesh.n_vertices
    )
    if not allow_overlap and masks.size and np.any(masks.sum(axis=0) > 1):
        node = int(np.argmax(masks.sum(axis=0) > 1))
        raise OverlapError(f"inclusions overlap at vertex {node} ({mesh.vertices[node].tolist()})")
    return phantom_values(spec, mesh.vertices), masks


def prior_field(spec: PhantomSpec, mesh: SimplicialMesh, dilation: float = 1.1, mu_in: float = 1e-2) -> np.ndarray:
    """mu_j = mu_in inside any inclusion scaled by ``dilation`` about its centre, else 1."""
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    if not 0 < mu_in <= 1:
        raise ValueError(f"mu_in must lie in (0, 1], got {mu_in}")
    mu = np.ones(mesh.n_vertices)
    for inc in spec.inclusions:
        mu[inc.contains(mesh.vertices, scale=dilation)] = mu_in
    return mu


# --- harmonics -------------------------------------------------------------

def normalized_legendre(n_max: int, x):
    """Orthonormal associated Legendre functions without Condon-Shortley phase.

    Returns ``P[n, m]`` (shape ``(n_max+1, n_max+1) + x.shape``) such that
    ``P[n, m](cos t) * exp(i m p)`` has unit L2 norm on the sphere.  Computed
    with the standard upward recurrences in ``m`` then ``n``.
    """
    x = np.asarray(x, dtype=float)
    sin = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    P = np.zeros((n_max + 1, n_max + 1) + x.shape)
    P[0, 0] = 1.0 / math.sqrt(4 * math.pi)
    for m in range(1, n_max + 1):
        P[m, m] = math.sqrt((2 * m + 1) / (2 * m)) * sin * P[m - 1, m - 1]
    for m in range(0, n_max):
        P[m + 1, m] = math.sqrt(2 * m + 3) * x * P[m, m]
    for m in range(0, n_max + 1):
        for n in range(m + 2, n_max + 1):
            a = math.sqrt((4 * n * n - 1) / (n * n - m * m))
            b = math.sqrt(((n - 1) ** 2 - m * m) / (4 * (n - 1) ** 2 - 1))
            P[n, m] = a * (x * P[n - 1, m] - b * P[n - 2, m])
    return P


def real_spherical_harmonic(n: int, m: int, points) -> np.ndarray:
    """Real orthonormal spherical harmonic of degree n, order m at unit vectors.

    m > 0 gives the cosine-type, m < 0 the sine-type and m = 0 the zonal
    harmonic; this equals the usual combination of complex harmonics
    ``(Y_n^{-m} + (-1)^m Y_n^m)/sqrt(2)`` and ``i(Y_n^m - (-1)^m Y_n^{-m})/sqrt(2)``.
    """
    if abs(m) > n or n < 0:
        raise ValueError(f"need |m| <= n, got n={n}, m={m}")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.linalg.norm(points, axis=1)
    z = np.clip(points[:, 2] / r, -1.0, 1.0)
    phi = np.arctan2(points[:, 1], points[:, 0])
    p = normalized_legendre(n, z)[n, abs(m)]
    if m == 0:
        return p
    if m > 0:
        return math.sqrt(2) * p * np.cos(m * phi)
    return math.sqrt(2) * p * np.sin(-m * phi)


def circular_harmonic(n: int, m: int, points) -> np.ndarray:
    """2D analogue: cos(n t)/sqrt(pi) for m = +n, sin(n t)/sqrt(pi) for m = -n."""
    if n < 1 or abs(m) != n:
        raise ValueError(f"circular harmonics need n >= 1 and m = +-n, got n={n}, m={m}")
    points = np.atleast_2d(points)
    t = np.arctan2(points[:, 1], points[:, 0])
    return (np.cos(n * t) if m > 0 else np.sin(n * t)) / math.sqrt(math.pi)


def harmonic_indices(dim: int, n_max: int):
    if dim == 3:
        return [(n, m) for n in range(1, n_max + 1) for m in range(-n, n + 1)]
    return [(n, m) for n in range(1, n_max + 1) for m in (n, -n)]


def harmonic(dim, n, m, points):
    return real_spherical_harmonic(n, m, points) if dim == 3 else circular_harmonic(n, m, points)


def hemisphere(mesh: SimplicialMesh, which: str) -> BoundarySubset:
    """Boundary facets with centroid in the upper (last coordinate > 0) or lower half."""
    if which not in ("upper", "lower"):
        raise ValueError(f"hemisphere must be 'upper' or 'lower', got {which!r}")
    sign = 1.0 if which == "upper" else -1.0
    return mark_boundary_subset(mesh, lambda c: sign * c[:, -1] > 0)


def stretch_to_sphere(points, which: str) -> np.ndarray:
    """Map a half-sphere (half-circle) onto the whole sphere by doubling the
    polar angle measured from the hemisphere's pole."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    pole_sign = 1.0 if which == "upper" else -1.0
    unit = points / np.linalg.norm(points, axis=1)[:, None]
    if points.shape[1] == 2:
        t = np.arctan2(unit[:, 1], unit[:, 0])
        start = 0.0 if which == "upper" else -math.pi
        t = 2.0 * (np.clip(np.mod(t - start + math.pi, 2 * math.pi) - math.pi, 0.0, math.pi))
        return np.column_stack([np.cos(t), np.sin(t)])
    theta = np.arccos(np.clip(pole_sign * unit[:, 2], -1.0, 1.0))
    theta = 2.0 * np.clip(theta, 0.0, math.pi / 2)
    phi = np.arctan2(unit[:, 1], unit[:, 0])
    return np.column_stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi),
                            pole_sign * np.cos(theta)])


@dataclass
class PatternFamily:
    patterns: list
    subset: BoundarySubset
    kind: str = "full"

    def __len__(self):
        return len(self.patterns)

    def __iter__(self):
        return iter(self.patterns)

    def __getitem__(self, k):
        return self.patterns[k]

    @property
    def values(self) -> np.ndarray:
        """Nodal values, shape ``(N, K)``."""
        return np.column_stack([p.values for p in self.patterns])

    def loads(self) -> np.ndarray:
        return self.subset.mass @ self.values

    @property
    def indices(self):
        return [(p.degree, p.order) for p in self.patterns]


def _mean_correct(values, subset: BoundarySubset):
    values = np.where(subset.mask, values, 0.0)
    values[subset.mask] -= subset.mean(values)
    return values


def full_data_patterns(mesh: SimplicialMesh, n_max: int = 5) -> PatternFamily:
    """Harmonics of degree 1..n_max on the whole boundary (35 patterns for n_max = 5 in 3D)."""
    subset = full_boundary(mesh)
    x = mesh.vertices
    patterns = []
    for n, m in harmonic_indices(mesh.dim, n_max):
        values = np.zeros(mesh.n_vertices)
        b = subset.vertices
        values[b] = harmonic(mesh.dim, n, m, x[b])
        patterns.append(BoundaryPattern(_mean_correct(values, subset), subset, n, m))
    return PatternFamily(patterns, subset, "full")


def partial_data_patterns(mesh: SimplicialMesh, which: str = "upper", n_max: int = 5) -> PatternFamily:
    """Harmonics pulled back to a half-sphere by polar-angle doubling.

    Values vanish off the half-sphere; the mean correction is applied on it
    only so the support stays inside.
    """
    subset = hemisphere(mesh, which)
    b = subset.vertices
    stretched = stretch_to_sphere(mesh.vertices[b], which)
    patterns = []
    for n, m in harmonic_indices(mesh.dim, n_max):
        values = np.zeros(mesh.n_vertices)
        values[b] = harmonic(mesh.dim, n, m, stretched)
        patterns.append(BoundaryPattern(_mean_correct(values, subset), subset, n, m))
    return PatternFamily(patterns, subset, which)


def make_patterns(mesh: SimplicialMesh, kind: str, n_max: int) -> PatternFamily:
    if kind == "full":
        return full_data_patterns(mesh, n_max)
    return partial_data_patterns(mesh, kind, n_max)
