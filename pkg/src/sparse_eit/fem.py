"""P1 finite elements: assembly and conjugate-gradient solves.

Two boundary value problems are needed.  The weighted Neumann problem

    -div(gamma grad u) = 0,  gamma du/dn = g,  grounded on a boundary subset,

and the H1 Riesz problem ``(-Laplace + 1) v = load`` with ``v = 0`` on the
boundary, which turns a derivative into a Sobolev gradient.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix

from .mesh import BoundarySubset, SimplicialMesh, full_boundary

log = logging.getLogger(__name__)

DEFAULT_RTOL = 1e-10
COMPAT_TOL = 1e-10


class SolverError(RuntimeError):
    """Linear solver failed to reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CompatibilityError(ValueError):
    """Neumann data does not integrate to zero over the boundary."""


# worker threads used to split multi-column solves; set by the CLI
THREADS = 1


@dataclass
class BoundaryPattern:
    """Neumann current as nodal values on a boundary subset.

    ``values`` has one entry per mesh vertex and vanishes off ``subset``.
    ``degree``/``order`` record the harmonic that generated it, if any.
    """

    values: np.ndarray
    subset: BoundarySubset
    degree: int | None = None
    order: int | None = None

    def load(self) -> np.ndarray:
        """b_i = int_Gamma g psi_i ds."""
        return self.subset.mass @ self.values

    def flux(self) -> float:
        return float(self.subset.weights @ self.values)


class P1Assembler:
    """Caches the sparsity pattern and local element matrices of a mesh.

    Assembly of ``sum_cells w_cell * local_cell`` then reduces to a single
    ``bincount`` into the CSR data array.
    """

    def __init__(self, mesh: SimplicialMesh):
        self.mesh = mesh
        n = mesh.n_vertices
        nv = mesh.dim + 1
        rows = np.repeat(mesh.cells[:, :, None], nv, axis=2).ravel()
        cols = np.repeat(mesh.cells[:, None, :], nv, axis=1).ravel()
        keys, self._slot = np.unique(rows * n + cols, return_inverse=True)
        self._slot = self._slot.ravel()
        self._indices = (keys % n).astype(np.int32)
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(keys // n, minlength=n))]).astype(np.int32)
        grads = mesh.cell_gradients
        self._grad_local = mesh.cell_volumes[:, None, None] * np.einsum("cid,cjd->cij", grads, grads)
        ref = (np.ones((nv, nv)) + np.eye(nv)) / (nv * (nv + 1))
        self._mass_local = mesh.cell_volumes[:, None, None] * ref

    def _build(self, local, weights=None):
        data = local if weights is None else local * weights[:, None, None]
        values = np.bincount(self._slot, weights=data.ravel(), minlength=len(self._indices))
        n = self.mesh.n_vertices
        return csr_matrix((values, self._indices.copy(), self._indptr.copy()), shape=(n, n))

    def cell_average(self, nodal):
        return np.asarray(nodal, dtype=float)[self.mesh.cells].mean(axis=1)

    def stiffness(self, gamma=None):
        if gamma is None:
            return self._build(self._grad_local)
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != (self.mesh.n_vertices,):
            raise ValueError(f"gamma must have one value per vertex, got shape {gamma.shape}")
        return self._build(self._grad_local, self.cell_average(gamma))

    def mass(self):
        return self._build(self._mass_local)


_assemblers: dict[int, P1Assembler] = {}


def assembler_for(mesh: SimplicialMesh) -> P1Assembler:
    key = id(mesh)
    cached = _assemblers.get(key)
    if cached is None or cached.mesh is not mesh:
        cached = _assemblers[key] = P1Assembler(mesh)
    return cached


def assemble_stiffness(mesh: SimplicialMesh, gamma) -> csr_matrix:
    """K_ij = sum_cells mean(gamma on cell) grad psi_i . grad psi_j |cell|."""
    return assembler_for(mesh).stiffness(gamma)


def assemble_mass(mesh: SimplicialMesh) -> csr_matrix:
    return assembler_for(mesh).mass()


@dataclass(frozen=True, eq=False)
class H1Matrices:
    """Plain stiffness ``K1``, mass ``M`` and the H1 Gram matrix ``K1 + M``."""

    mesh: SimplicialMesh
    stiffness: csr_matrix
    mass: csr_matrix

    @cached_property
    def gram(self) -> csr_matrix:
        return (self.stiffness + self.mass).tocsr()

    def inner(self, x, y) -> float:
        return float(x @ (self.gram @ y))

    def norm2(self, x) -> float:
        return self.inner(x, x)


def assemble_h1_matrices(mesh: SimplicialMesh, subset: BoundarySubset | None = None):
    """Return ``H1Matrices`` (and the boundary mass of ``subset`` if given)."""
    asm = assembler_for(mesh)
    mats = H1Matrices(mesh, asm.stiffness(), asm.mass())
    if subset is None:
        return mats
    return mats, subset.mass


def _mean_free(v):
    return v - v.mean(axis=0)


def pcg(A, b, *, diag=None, x0=None, rtol=DEFAULT_RTOL, maxiter=None, singular=False):
    """Jacobi-preconditioned conjugate gradients, column by column.

    ``b`` may be ``(n,)`` or ``(n, k)``; columns are iterated together but
    converge independently.  With ``singular=True`` the matrix is assumed to
    have the constants as its kernel and residuals are kept orthogonal to
    them.  Returns ``(x, info)`` where ``info`` holds iteration counts and the
    true relative residual per column.  Raises ``SolverError`` when a column
    misses ``rtol`` after ``maxiter`` iterations.
    """
    b = np.asarray(b, dtype=float)
    vector = b.ndim == 1
    B = b[:, None] if vector else b
    n, k = B.shape
    if maxiter is None:
        maxiter = 10 * n
    if diag is None:
        diag = A.diagonal()
    inv_diag = (1.0 / diag)[:, None]
    project = _mean_free if singular else (lambda v: v)

    B = project(B)
    X = np.zeros_like(B) if x0 is None else np.array(x0, dtype=float).reshape(n, k)
    bnorm = np.linalg.norm(B, axis=0)
    target = rtol * bnorm
    iterations = np.zeros(k, dtype=int)
    total = 0

    def true_residual(X):
        return project(B - A @ X)

    def colnorm(V):
        return np.sqrt(np.einsum("ij,ij->j", V, V))

    R = true_residual(X)
    for _restart in range(4):
        Z = inv_diag * R
        P = Z.copy()
        rz = np.einsum("ij,ij->j", R, Z)
        rnorm = colnorm(R)
        active = rnorm > target
        while active.any() and total < maxiter:
            AP = A @ P
            pap = np.einsum("ij,ij->j", P, AP)
            alpha = np.where(active, rz / np.where(pap > 0, pap, 1.0), 0.0)
            X += alpha * P
            R -= alpha * AP
            total += 1
            if singular and total % 32 == 0:
                # 1'K = 0 keeps residuals mean-free in exact arithmetic only
                R = project(R)
            rnorm = colnorm(R)
            iterations += active
            active = rnorm > target
            Z = inv_diag * R
            rz_new = np.einsum("ij,ij->j", R, Z)
            beta = np.where(active, rz_new / np.where(rz != 0, rz, 1.0), 0.0)
            P = Z + beta * P
            rz = rz_new
        R = true_residual(X)
        rnorm = colnorm(R)
        if np.all(rnorm <= target) or total >= maxiter:
            break
    rel = np.divide(rnorm, bnorm, out=np.zeros_like(rnorm), where=bnorm > 0)
    if np.any(rnorm > target):
        worst = float(rel.max())
        raise SolverError(
            f"CG did not converge in {total} iterations (relative residual {worst:.3e} > {rtol:.1e})",
            residual=worst,
            iterations=total,
        )
    info = {"iterations": iterations, "residual": rel}
    return (X[:, 0] if vector else X), info


def _pcg_threaded(A, B, **kw):
    if THREADS <= 1 or B.ndim == 1 or B.shape[1] < 2:
        return pcg(A, B, **kw)
    chunks = np.array_split(np.arange(B.shape[1]), min(THREADS, B.shape[1]))
    x0 = kw.pop("x0", None)
    with ThreadPoolExecutor(len(chunks)) as pool:
        results = list(pool.map(
            lambda idx: pcg(A, B[:, idx], x0=None if x0 is None else x0[:, idx], **kw), chunks
        ))
    X = np.concatenate([r[0] for r in results], axis=1)
    info = {key: np.concatenate([r[1][key] for r in results]) for key in ("iterations", "residual")}
    return X, info


class NeumannSystem:
    """Stiffness K(gamma) of the pure Neumann problem with its solver settings.

    The matrix is singular with the constants as kernel.  Solves run on the
    complement of the constants and the constant is then fixed by the
    grounding condition: the ds-weighted mean over ``ground`` is zero.
    """

    def __init__(self, mesh: SimplicialMesh, gamma, rtol: float = DEFAULT_RTOL, maxiter: int | None = None):
        self.mesh = mesh
        self.gamma = np.asarray(gamma, dtype=float)
        self.K = assemble_stiffness(mesh, self.gamma)
        self.diag = self.K.diagonal()
        self.rtol = rtol
        self.maxiter = maxiter
        self.last_info = None

    @property
    def boundary_weights(self):
        # row sums of the full-boundary mass matrix
        return full_boundary(self.mesh).weights

    def solve_loads(self, loads, ground: BoundarySubset, x0=None) -> np.ndarray:
        """Solve K u = load for one ``(n,)`` or several ``(n, k)`` load vectors."""
        loads = np.asarray(loads, dtype=float)
        total = loads.sum(axis=0)
        scale = np.abs(loads).sum(axis=0)
        if np.any(np.abs(total) > COMPAT_TOL * np.maximum(scale, np.finfo(float).tiny)):
            raise CompatibilityError(
                f"Neumann load is not mean-free: sum = {np.max(np.abs(total)):.3e}"
            )
        u, info = _pcg_threaded(self.K, loads, diag=self.diag, x0=x0, rtol=self.rtol,
                                maxiter=self.maxiter, singular=True)
        self.last_info = info
        return ground_potential(u, ground)


def ground_potential(u, ground: BoundarySubset):
    """Shift ``u`` (columns) by a constant so its ds-mean over ``ground`` is zero."""
    shift = (ground.weights @ u) / ground.area
    return u - shift


def check_compatible(g: BoundaryPattern, tol: float = COMPAT_TOL) -> None:
    m = g.subset.weights
    flux = m @ g.values
    if abs(flux) > tol * np.linalg.norm(m) * max(np.linalg.norm(g.values), np.finfo(float).tiny):
        raise CompatibilityError(f"boundary current is not mean-free: int g ds = {flux:.3e}")


def solve_neumann(system: NeumannSystem, g: BoundaryPattern, ground_subset: BoundarySubset, gamma=None) -> np.ndarray:
    """Potential of the Neumann problem with current ``g``, grounded on ``ground_subset``.

    ``gamma`` is accepted for call-site symmetry; it must match the system's.
    """
    if gamma is not None and not np.array_equal(np.asarray(gamma, dtype=float), system.gamma):
        raise ValueError("gamma differs from the coefficient the system was assembled with")
    check_compatible(g)
    return system.solve_loads(g.load(), ground_subset)


class RieszSolver:
    """Solves (K1 + M) v = load on interior vertices with v = 0 on the boundary."""

    def __init__(self, h1: H1Matrices, rtol: float = DEFAULT_RTOL, maxiter: int | None = None):
        self.h1 = h1
        self.interior = h1.mesh.interior_vertices
        self.A = h1.gram[self.interior][:, self.interior].tocsr()
        self.diag = self.A.diagonal()
        self.rtol = rtol
        self.maxiter = maxiter

    def solve(self, load) -> np.ndarray:
        load = np.asarray(load, dtype=float)
        v = np.zeros_like(load)
        if len(self.interior):
            v[self.interior], _ = pcg(self.A, load[self.interior], diag=self.diag,
                                      rtol=self.rtol, maxiter=self.maxiter)
        return v


def solve_riesz(h1: H1Matrices, load, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    return RieszSolver(h1, rtol).solve(load)
