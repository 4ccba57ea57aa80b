"""Simplicial meshes of the unit disk / ball, boundary subsets and P1 helpers.

Vertices live in ``(N, d)`` arrays, cells are ``(C, d + 1)`` index arrays
oriented to positive signed volume, and boundary facets are ``(F, d)`` index
arrays with an integer marker per facet.  Nodal fields are plain
``(N,)`` float arrays.
"""
from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.sparse import coo_matrix
from scipy.spatial import cKDTree

__all__ = [
    "SimplicialMesh",
    "BoundarySubset",
    "MeshError",
    "generate_ball_mesh",
    "mark_boundary_subset",
    "subset_from_markers",
    "node_volumes",
    "interpolate_at_points",
    "PointLocator",
]


class MeshError(ValueError):
    """Raised for malformed or degenerate meshes."""


def _simplex_jacobians(vertices, cells):
    x0 = vertices[cells[:, 0]]
    return np.stack([vertices[cells[:, k]] - x0 for k in range(1, cells.shape[1])], axis=-1)


def _faces(cells):
    """All d-vertex faces of every cell (unsorted), grouped by omitted vertex."""
    return np.concatenate([np.delete(cells, k, axis=1) for k in range(cells.shape[1])])


def boundary_facets_of(cells):
    """Faces belonging to exactly one cell."""
    faces = _faces(cells)
    _, index, counts = np.unique(np.sort(faces, axis=1), axis=0, return_index=True, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("non-manifold mesh: a facet is shared by more than two cells")
    return faces[np.sort(index[counts == 1])]


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    """Triangle (2D) or tetrahedron (3D) mesh.

    ``cells`` are reoriented on construction so that every signed volume is
    positive.  When ``facets`` is omitted the boundary is inferred as the set
    of faces owned by a single cell and every facet gets marker 1.
    """

    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray | None = None
    facet_markers: np.ndarray | None = None

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
            raise MeshError(f"vertices must have shape (N, 2) or (N, 3), got {vertices.shape}")
        dim = vertices.shape[1]
        if cells.ndim != 2 or len(cells) == 0:
            raise MeshError("mesh has no cells")
        if cells.shape[1] != dim + 1:
            raise MeshError(f"{dim}D mesh needs cells with {dim + 1} vertices, got {cells.shape[1]}")
        if cells.min() < 0 or cells.max() >= len(vertices):
            bad = int(np.argmax((cells < 0).any(axis=1) | (cells >= len(vertices)).any(axis=1)))
            raise MeshError(f"cell {bad} references a vertex index outside 0..{len(vertices) - 1}")

        det = np.linalg.det(_simplex_jacobians(vertices, cells))
        scale = np.ptp(vertices, axis=0).max() ** dim
        if np.any(np.abs(det) <= 1e-14 * scale):
            bad = int(np.argmin(np.abs(det)))
            raise MeshError(f"cell {bad} has (near) zero volume")
        cells = cells.copy()
        neg = det < 0
        cells[neg, :2] = cells[neg, 1::-1]

        if self.facets is None:
            facets = boundary_facets_of(cells)
            markers = np.ones(len(facets), dtype=np.int64)
        else:
            facets = np.asarray(self.facets, dtype=np.int64).reshape(-1, dim)
            markers = (
                np.ones(len(facets), dtype=np.int64)
                if self.facet_markers is None
                else np.asarray(self.facet_markers, dtype=np.int64).ravel()
            )
            if len(markers) != len(facets):
                raise MeshError("one marker per boundary facet required")
        for name, value in [("vertices", vertices), ("cells", cells), ("facets", facets),
                            ("facet_markers", markers)]:
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def cell_volumes(self) -> np.ndarray:
        det = np.linalg.det(_simplex_jacobians(self.vertices, self.cells))
        return det / math.factorial(self.dim)

    @cached_property
    def cell_gradients(self) -> np.ndarray:
        """Gradients of the barycentric coordinates, shape ``(C, d + 1, d)``."""
        inv = np.linalg.inv(_simplex_jacobians(self.vertices, self.cells))
        return np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)

    @property
    def volume(self) -> float:
        return float(self.cell_volumes.sum())

    @cached_property
    def facet_areas(self) -> np.ndarray:
        x = self.vertices[self.facets]
        if self.dim == 2:
            return np.linalg.norm(x[:, 1] - x[:, 0], axis=1)
        return 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)

    @cached_property
    def facet_centroids(self) -> np.ndarray:
        return self.vertices[self.facets].mean(axis=1)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.facets)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.boundary_vertices] = True
        return mask

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.ptp(self.vertices, axis=0)))

    @cached_property
    def hash(self) -> str:
        """Content hash of geometry and connectivity (stable across runs)."""
        h = hashlib.sha256()
        h.update(np.round(self.vertices, 12).astype("<f8").tobytes())
        h.update(self.cells.astype("<i8").tobytes())
        h.update(self.facets.astype("<i8").tobytes())
        h.update(self.facet_markers.astype("<i8").tobytes())
        return h.hexdigest()[:16]

    def check(self) -> None:
        """Validate the boundary invariants; raises MeshError."""
        uniq, counts = np.unique(np.sort(_faces(self.cells), axis=1), axis=0, return_counts=True)
        single = {tuple(f) for f in uniq[counts == 1]}
        given = {tuple(f) for f in np.sort(self.facets, axis=1)}
        if given - single:
            raise MeshError("a boundary facet is not owned by exactly one cell")
        # closedness: every (d-2)-face of the boundary shared by exactly two facets
        d = self.dim
        sub = np.sort(np.concatenate([np.delete(self.facets, k, axis=1) for k in range(d)]), axis=1)
        _, c = np.unique(sub, axis=0, return_counts=True)
        if np.any(c != 2):
            raise MeshError("boundary surface is not closed")

    def __repr__(self) -> str:
        return f"SimplicialMesh(dim={self.dim}, vertices={self.n_vertices}, cells={self.n_cells})"


@dataclass(frozen=True, eq=False)
class BoundarySubset:
    """A union of whole boundary facets of ``mesh``.

    ``weights`` are the row sums of the boundary mass matrix restricted to
    the selected facets (one entry per mesh vertex, zero off the subset).
    """

    mesh: SimplicialMesh
    facet_index: np.ndarray

    @cached_property
    def facets(self) -> np.ndarray:
        return self.mesh.facets[self.facet_index]

    @cached_property
    def vertices(self) -> np.ndarray:
        return np.unique(self.facets)

    @cached_property
    def mask(self) -> np.ndarray:
        mask = np.zeros(self.mesh.n_vertices, dtype=bool)
        mask[self.vertices] = True
        return mask

    @cached_property
    def weights(self) -> np.ndarray:
        d = self.mesh.dim
        share = np.repeat(self.mesh.facet_areas[self.facet_index] / d, d)
        return np.bincount(self.facets.ravel(), weights=share, minlength=self.mesh.n_vertices)

    @cached_property
    def mass(self):
        """Boundary mass matrix over the subset, int_Gamma psi_i psi_j ds (exact P1)."""
        d = self.mesh.dim
        local = (np.ones((d, d)) + np.eye(d)) / (d * (d + 1))
        data = self.mesh.facet_areas[self.facet_index][:, None, None] * local
        rows = np.repeat(self.facets[:, :, None], d, axis=2)
        cols = np.repeat(self.facets[:, None, :], d, axis=1)
        n = self.mesh.n_vertices
        return coo_matrix((data.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()

    @property
    def area(self) -> float:
        return float(self.mesh.facet_areas[self.facet_index].sum())

    def mean(self, values: np.ndarray) -> float:
        """ds-weighted mean of a nodal boundary function over the subset."""
        return float(self.weights @ values) / self.area

    def __len__(self) -> int:
        return len(self.facet_index)


def mark_boundary_subset(mesh: SimplicialMesh, predicate: Callable[[np.ndarray], bool | np.ndarray]) -> BoundarySubset:
    """Select the boundary facets whose centroid satisfies ``predicate``.

    The predicate may be vectorised (``(F, d) -> (F,)`` booleans) or take a
    single centroid.
    """
    centroids = mesh.facet_centroids
    try:
        selected = np.asarray(predicate(centroids))
        if selected.shape != (len(centroids),):
            raise TypeError
    except (TypeError, ValueError, IndexError):
        selected = np.array([bool(predicate(c)) for c in centroids])
    selected = selected.astype(bool)
    if not selected.any():
        raise MeshError("boundary subset predicate selected no facets")
    return BoundarySubset(mesh, np.flatnonzero(selected))


def subset_from_markers(mesh: SimplicialMesh, markers) -> BoundarySubset:
    markers = np.atleast_1d(markers)
    selected = np.isin(mesh.facet_markers, markers)
    if not selected.any():
        raise MeshError(f"no boundary facets carry markers {markers.tolist()}")
    return BoundarySubset(mesh, np.flatnonzero(selected))


def full_boundary(mesh: SimplicialMesh) -> BoundarySubset:
    return BoundarySubset(mesh, np.arange(len(mesh.facets)))


def node_volumes(mesh: SimplicialMesh) -> np.ndarray:
    """beta_j: the integral of the hat function psi_j.

    Each cell's volume is split evenly between its d + 1 vertices.
    """
    share = np.repeat(mesh.cell_volumes / (mesh.dim + 1), mesh.dim + 1)
    return np.bincount(mesh.cells.ravel(), weights=share, minlength=mesh.n_vertices)


def _kuhn_simplices(dim):
    # Kuhn/Freudenthal split of the unit cube: one simplex per axis permutation
    out = []
    for perm in itertools.permutations(range(dim)):
        corner = np.zeros(dim, dtype=int)
        simplex = [corner.copy()]
        for axis in perm:
            corner[axis] = 1
            simplex.append(corner.copy())
        out.append(simplex)
    return np.array(out)  # (d!, d+1, d)


def generate_ball_mesh(dim: int, refinement: int) -> SimplicialMesh:
    """Mesh of the unit disk (dim=2) or unit ball (dim=3).

    A grid of ``2 * refinement`` cells per axis on ``[-1, 1]^d`` is split into
    simplices (Kuhn split, mirrored per orthant so the mesh is symmetric) and
    mapped radially onto the ball by ``x -> x |x|_inf / |x|_2``.  The mesh has
    ``(2 * refinement + 1) ** dim`` vertices.
    """
    if dim not in (2, 3):
        raise MeshError(f"dim must be 2 or 3, got {dim}")
    if int(refinement) != refinement or refinement < 1:
        raise MeshError(f"refinement must be a positive integer, got {refinement}")
    n = 2 * int(refinement)
    ticks = np.linspace(-1.0, 1.0, n + 1)
    grid = np.stack(np.meshgrid(*([ticks] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    strides = np.array([(n + 1) ** (dim - 1 - a) for a in range(dim)])

    lower = np.stack(np.meshgrid(*([np.arange(n)] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    kuhn = _kuhn_simplices(dim)
    # orthants with negative coordinates get a mirrored split
    flip = lower < n // 2
    local = kuhn[None, :, :, :]
    local = np.where(flip[:, None, None, :], 1 - local, local)
    corners = lower[:, None, None, :] + local
    cells = (corners @ strides).reshape(-1, dim + 1)

    norm2 = np.linalg.norm(grid, axis=1)
    norminf = np.abs(grid).max(axis=1)
    scale = np.divide(norminf, norm2, out=np.ones_like(norm2), where=norm2 > 0)
    vertices = grid * scale[:, None]
    on_surface = np.isclose(norminf, 1.0)
    vertices[on_surface] /= np.linalg.norm(vertices[on_surface], axis=1)[:, None]
    return SimplicialMesh(vertices, cells)


class PointLocator:
    """Barycentric point location with snapping for points just outside.

    A point outside every cell is accepted when its distance to the closest
    candidate cell is at most ``snap_tol`` (absolute); its barycentric
    coordinates are then clipped to the cell.
    """

    def __init__(self, mesh: SimplicialMesh, snap_tol: float | None = None, candidates: int = 24):
        self.mesh = mesh
        self.snap_tol = 1e-8 * mesh.diameter if snap_tol is None else float(snap_tol)
        self.k = min(candidates, mesh.n_cells)
        centroids = mesh.vertices[mesh.cells].mean(axis=1)
        self.tree = cKDTree(centroids)
        self._inv = np.linalg.inv(_simplex_jacobians(mesh.vertices, mesh.cells))

    def _barycentric(self, cells, points):
        x0 = self.mesh.vertices[self.mesh.cells[cells, 0]]
        lam = np.einsum("...ij,...j->...i", self._inv[cells], points - x0)
        return np.concatenate([1.0 - lam.sum(axis=-1, keepdims=True), lam], axis=-1)

    def locate(self, points):
        """Return ``(cell_index, barycentric)`` for each point."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        _, cand = self.tree.query(points, k=self.k)
        cand = cand.reshape(len(points), -1)
        lam = self._barycentric(cand, points[:, None, :])
        best = np.argmax(lam.min(axis=-1), axis=1)
        rows = np.arange(len(points))
        cell = cand[rows, best]
        lam = lam[rows, best]
        outside = lam.min(axis=1) < -1e-12
        if outside.any():
            clipped = np.clip(lam[outside], 0.0, None)
            clipped /= clipped.sum(axis=1, keepdims=True)
            proj = np.einsum("pi,pid->pd", clipped, self.mesh.vertices[self.mesh.cells[cell[outside]]])
            dist = np.linalg.norm(points[outside] - proj, axis=1)
            far = dist > self.snap_tol
            if far.any():
                p = points[np.flatnonzero(outside)[np.argmax(far)]]
                raise MeshError(
                    f"point {p.tolist()} lies outside the mesh beyond the snap tolerance {self.snap_tol:g}"
                )
            lam[outside] = clipped
        return cell, lam

    def interpolate(self, values, points):
        """Evaluate the P1 field(s) ``values`` (``(N,)`` or ``(N, K)``) at points."""
        cell, lam = self.locate(points)
        values = np.asarray(values, dtype=float)
        nodal = values[self.mesh.cells[cell]]  # (P, d+1[, K])
        if nodal.ndim == 2:
            return np.einsum("pi,pi->p", lam, nodal)
        return np.einsum("pi,pik->pk", lam, nodal)


def interpolate_at_points(mesh: SimplicialMesh, field: np.ndarray, points, snap_tol: float | None = None) -> np.ndarray:
    return PointLocator(mesh, snap_tol).interpolate(field, points)
