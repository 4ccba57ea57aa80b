"""Forward map, Neumann-to-Dirichlet traces and synthetic Cauchy data."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fem import DEFAULT_RTOL, BoundaryPattern, NeumannSystem, check_compatible
from .mesh import BoundarySubset, MeshError, PointLocator, SimplicialMesh
from .patterns import PatternFamily, make_patterns

log = logging.getLogger(__name__)

DATA_FORMAT = "sparse-eit-cauchy"
DATA_VERSION = 1


def ground_trace(trace, gamma_d: BoundarySubset):
    """Remove the ds-weighted mean over Gamma_D from traces on its vertices."""
    w = gamma_d.weights[gamma_d.vertices]
    return trace - (w @ trace) / w.sum()


def nd_apply(mesh: SimplicialMesh, gamma, g, gamma_d: BoundarySubset, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """Trace on the vertices of ``gamma_d`` of the potential driven by ``g``.

    ``g`` is a BoundaryPattern or a PatternFamily; for a family the result has
    one column per pattern.  The potential is grounded on ``gamma_d``.
    """
    system = NeumannSystem(mesh, gamma, rtol)
    if isinstance(g, BoundaryPattern):
        check_compatible(g)
        loads = g.load()
    else:
        for p in g:
            check_compatible(p)
        loads = g.loads()
    u = system.solve_loads(loads, gamma_d)
    return u[gamma_d.vertices]


@dataclass
class CauchyDataSet:
    """K current patterns on ``mesh`` with their (noisy) traces on Gamma_D.

    ``traces`` has shape ``(len(gamma_d.vertices), K)``, rows ordered like
    ``gamma_d.vertices``, each column ds-mean-free on Gamma_D.
    """

    mesh: SimplicialMesh
    family: PatternFamily
    gamma_d: BoundarySubset
    traces: np.ndarray
    noise_level: float = 0.0
    seed: int | None = None
    noise_std: float = 0.0
    clean_traces: np.ndarray | None = None

    def __post_init__(self):
        self.traces = np.asarray(self.traces, dtype=float)
        if self.traces.shape != (len(self.gamma_d.vertices), len(self.family)):
            raise ValueError(
                f"traces must have shape {(len(self.gamma_d.vertices), len(self.family))}, got {self.traces.shape}"
            )

    @property
    def K(self) -> int:
        return len(self.family)

    def subset(self, k) -> "CauchyDataSet":
        """Data set restricted to the patterns ``k`` (int, slice or index list)."""
        idx = np.atleast_1d(np.arange(self.K)[k])
        fam = PatternFamily([self.family[i] for i in idx], self.family.subset, self.family.kind)
        clean = None if self.clean_traces is None else self.clean_traces[:, idx]
        return CauchyDataSet(self.mesh, fam, self.gamma_d, self.traces[:, idx], self.noise_level,
                             self.seed, self.noise_std, clean)


def gaussian_noise(seed: int, k: int, n: int) -> np.ndarray:
    """Standard normal draws for pattern ``k``; stream keyed by (seed, k)."""
    bitgen = np.random.Philox(key=[int(seed) & 0xFFFFFFFFFFFFFFFF, int(k)])
    return np.random.Generator(bitgen).standard_normal(n)


class InverseCrimeError(ValueError):
    """Data would be simulated on (nearly) the reconstruction mesh."""


def simulate_cauchy_data(
    fine_mesh: SimplicialMesh,
    sigma_fine,
    coarse_mesh: SimplicialMesh,
    kind: str = "full",
    n_max: int = 5,
    noise: float = 0.0,
    seed: int = 0,
    *,
    min_ratio: float = 3.0,
    allow_inverse_crime: bool = False,
    snap_tol: float = 1e-2,
    rtol: float = DEFAULT_RTOL,
) -> CauchyDataSet:
    """Simulate traces on ``fine_mesh`` and transfer them to ``coarse_mesh``.

    For each pattern: solve on the fine mesh, interpolate the trace to the
    coarse Gamma_D vertices, ground it, then add white Gaussian noise with
    standard deviation ``noise * max_k max_j |f_k(x_j)|`` and ground again.
    ``snap_tol`` (absolute) lets coarse boundary vertices that fall just
    outside the fine polyhedral boundary be projected onto it.
    """
    if noise < 0:
        raise ValueError("noise level must be non-negative")
    if not allow_inverse_crime:
        if fine_mesh is coarse_mesh or fine_mesh.hash == coarse_mesh.hash:
            raise InverseCrimeError("data and reconstruction meshes are identical")
        if fine_mesh.n_vertices < min_ratio * coarse_mesh.n_vertices:
            raise InverseCrimeError(
                f"fine mesh has {fine_mesh.n_vertices} vertices, need >= {min_ratio:g} x "
                f"{coarse_mesh.n_vertices} of the reconstruction mesh"
            )
    fine_family = make_patterns(fine_mesh, kind, n_max)
    coarse_family = make_patterns(coarse_mesh, kind, n_max)
    fine_d, coarse_d = fine_family.subset, coarse_family.subset

    system = NeumannSystem(fine_mesh, sigma_fine, rtol)
    u = system.solve_loads(fine_family.loads(), fine_d)
    if fine_mesh is coarse_mesh:
        clean = u[coarse_d.vertices]
    else:
        locator = PointLocator(fine_mesh, snap_tol=snap_tol)
        # traces live on the fine boundary; interpolating the boundary values
        # only is enough since the located cells touch the boundary
        clean = locator.interpolate(u, coarse_mesh.vertices[coarse_d.vertices])
    clean = ground_trace(clean, coarse_d)

    std = noise * float(np.abs(clean).max()) if clean.size else 0.0
    traces = clean.copy()
    if std > 0:
        n = len(coarse_d.vertices)
        for k in range(traces.shape[1]):
            traces[:, k] += std * gaussian_noise(seed, k, n)
        traces = ground_trace(traces, coarse_d)
    log.info("simulated %d patterns, noise std %.3e", traces.shape[1], std)
    return CauchyDataSet(coarse_mesh, coarse_family, coarse_d, traces, noise, seed, std, clean)


def exact_data(mesh: SimplicialMesh, gamma, kind: str = "full", n_max: int = 5, rtol: float = DEFAULT_RTOL) -> CauchyDataSet:
    """Noise-free data computed on the reconstruction mesh itself (inverse crime)."""
    family = make_patterns(mesh, kind, n_max)
    traces = nd_apply(mesh, gamma, family, family.subset, rtol)
    return CauchyDataSet(mesh, family, family.subset, traces, 0.0, None, 0.0, traces.copy())


@dataclass
class Evaluation:
    """Forward solution at one conductivity and its data misfit."""

    gamma: np.ndarray
    potentials: np.ndarray  # (N, K)
    residuals: np.ndarray  # (n_D, K)
    value: float


class ForwardModel:
    """Forward solves and misfit for a fixed data set.

    Keeps the last potentials and adjoint fields as warm starts.
    """

    def __init__(self, data: CauchyDataSet, rtol: float = DEFAULT_RTOL, maxiter: int | None = None):
        self.data = data
        self.mesh = data.mesh
        self.gamma_d = data.gamma_d
        self.rtol = rtol
        self.maxiter = maxiter
        for p in data.family:
            check_compatible(p)
        self.loads = data.family.loads()
        verts = self.gamma_d.vertices
        self.mass_d = self.gamma_d.mass[verts][:, verts].tocsr()
        self._mass_cols = self.gamma_d.mass[:, verts].tocsr()
        self._warm = None
        self._warm_adjoint = None
        self.n_solves = 0

    def system(self, gamma) -> NeumannSystem:
        return NeumannSystem(self.mesh, gamma, self.rtol, self.maxiter)

    def evaluate(self, gamma) -> Evaluation:
        gamma = np.asarray(gamma, dtype=float)
        u = self.system(gamma).solve_loads(self.loads, self.gamma_d, x0=self._warm)
        self._warm = u
        self.n_solves += u.shape[1]
        r = u[self.gamma_d.vertices] - self.data.traces
        value = 0.5 * float(np.einsum("ik,ik->", r, self.mass_d @ r))
        return Evaluation(gamma, u, r, value)

    def adjoint(self, ev: Evaluation) -> np.ndarray:
        """Potentials driven by the residual currents chi_D (Lambda g_k - f_k)."""
        loads = self._mass_cols @ ev.residuals
        z = self.system(ev.gamma).solve_loads(loads, self.gamma_d, x0=self._warm_adjoint)
        self._warm_adjoint = z
        self.n_solves += z.shape[1]
        return z


def discrepancy(gamma, data: CauchyDataSet, rtol: float = DEFAULT_RTOL):
    """Sum over patterns of 0.5 ||Lambda_gamma g_k - f_k||^2 on Gamma_D.

    Returns ``(value, residuals)`` with residuals shaped like ``data.traces``.
    """
    ev = ForwardModel(data, rtol).evaluate(gamma)
    return ev.value, ev.residuals


# --- serialisation ----------------------------------------------------------

def _floats(a):
    return [float(v) for v in np.asarray(a).ravel()]


def save_dataset(data: CauchyDataSet, path) -> None:
    """Versioned JSON: header fields, then per-pattern nodal arrays."""
    fam = data.family
    gn = fam.subset.vertices
    doc = {
        "format": DATA_FORMAT,
        "version": DATA_VERSION,
        "mesh_hash": data.mesh.hash,
        "dim": data.mesh.dim,
        "n_vertices": data.mesh.n_vertices,
        "pattern_kind": fam.kind,
        "gamma_n_facets": fam.subset.facet_index.tolist(),
        "gamma_d_facets": data.gamma_d.facet_index.tolist(),
        "noise_level": float(data.noise_level),
        "seed": data.seed,
        "noise_std": float(data.noise_std),
        "K": data.K,
        "gamma_n_vertices": gn.tolist(),
        "gamma_d_vertices": data.gamma_d.vertices.tolist(),
        "patterns": [
            {"degree": p.degree, "order": p.order, "g": _floats(p.values[gn]), "f": _floats(data.traces[:, k])}
            for k, p in enumerate(fam)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


class DataFileError(ValueError):
    pass


def load_dataset(path, mesh: SimplicialMesh) -> CauchyDataSet:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFileError(f"cannot read data file {path}: {exc}") from exc
    if doc.get("format") != DATA_FORMAT or doc.get("version") != DATA_VERSION:
        raise DataFileError(f"{path} is not a version-{DATA_VERSION} {DATA_FORMAT} file")
    if doc["mesh_hash"] != mesh.hash:
        raise DataFileError(
            f"data file was generated on mesh {doc['mesh_hash']}, reconstruction mesh is {mesh.hash}"
        )
    gamma_n = BoundarySubset(mesh, np.asarray(doc["gamma_n_facets"], dtype=np.int64))
    gamma_d = BoundarySubset(mesh, np.asarray(doc["gamma_d_facets"], dtype=np.int64))
    gn = np.asarray(doc["gamma_n_vertices"], dtype=np.int64)
    if not np.array_equal(gn, gamma_n.vertices) or not np.array_equal(doc["gamma_d_vertices"], gamma_d.vertices):
        raise MeshError("boundary subsets in the data file do not match the mesh")
    patterns, traces = [], []
    for entry in doc["patterns"]:
        values = np.zeros(mesh.n_vertices)
        values[gn] = entry["g"]
        patterns.append(BoundaryPattern(values, gamma_n, entry["degree"], entry["order"]))
        traces.append(entry["f"])
    family = PatternFamily(patterns, gamma_n, doc["pattern_kind"])
    return CauchyDataSet(mesh, family, gamma_d, np.array(traces).T.reshape(len(gamma_d.vertices), -1),
                         doc["noise_level"], doc["seed"], doc["noise_std"])
