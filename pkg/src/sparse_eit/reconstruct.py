"""Sparsity-regularised reconstruction with a distributed regularisation parameter.

The iterate ``dg`` is the conductivity perturbation on top of a known
background ``sigma0``, a P1 field vanishing on the boundary.  Each iteration
takes an H1 (Sobolev) gradient step of the data misfit, soft-thresholds it
nodewise with threshold ``s * alpha * mu_j`` and truncates the result so that
``c <= sigma0 + dg <= 1/c``.  Step sizes come from the Barzilai-Borwein rule
and are shrunk until a non-monotone (max over the last M objective values)
sufficient-decrease test passes.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .fem import DEFAULT_RTOL, H1Matrices, RieszSolver, SolverError, assemble_h1_matrices
from .forward import CauchyDataSet, Evaluation, ForwardModel
from .mesh import SimplicialMesh, node_volumes

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    c: float = 0.2
    M: int = 5
    tau: float = 1e-5
    s_min: float = 1.0
    s_max: float = 1000.0
    s_stop: float = 1e-3
    shrink: float = 0.5
    max_iter: int = 200
    rtol: float = DEFAULT_RTOL
    linear_maxiter: int | None = None

    def __post_init__(self):
        if not 0 < self.c < 1:
            raise ValueError(f"c must lie in (0, 1), got {self.c}")
        if not 0 < self.tau < 1:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0 < self.s_min <= self.s_max:
            raise ValueError(f"need 0 < s_min <= s_max, got {self.s_min}, {self.s_max}")
        if not 0 < self.shrink < 1:
            raise ValueError(f"shrink must lie in (0, 1), got {self.shrink}")
        if self.M < 1 or self.max_iter < 1 or self.s_stop <= 0:
            raise ValueError("M, max_iter and s_stop must be positive")


@dataclass
class RegularizationPlan:
    """alpha_j = alpha * beta_j * mu_j with beta_j the node volumes."""

    alpha: float
    mu: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if np.any(self.mu <= 0) or np.any(self.mu > 1):
            raise ValueError("mu must lie in (0, 1]")
        if self.mu.shape != self.beta.shape:
            raise ValueError("mu and beta must have one entry per vertex")

    @classmethod
    def for_mesh(cls, mesh: SimplicialMesh, alpha: float, mu=None) -> "RegularizationPlan":
        mu = np.ones(mesh.n_vertices) if mu is None else mu
        return cls(alpha, mu, node_volumes(mesh))

    @property
    def weights(self) -> np.ndarray:
        return self.alpha * self.beta * self.mu

    def thresholds(self, step: float) -> np.ndarray:
        # s * alpha_j / ||psi_j||_L1 with ||psi_j||_L1 = beta_j
        return step * self.weights / self.beta

    def penalty(self, dg) -> float:
        return float(self.weights @ np.abs(dg))


def soft_threshold(x, beta):
    """sign(x) max(|x| - beta, 0), elementwise."""
    x = np.asarray(x, dtype=float)
    if np.any(np.asarray(beta) < 0):
        raise ValueError("threshold must be non-negative")
    return np.sign(x) * np.maximum(np.abs(x) - beta, 0.0)


def proximal_update(dg, grad, step: float, plan: RegularizationPlan, boundary_mask=None) -> np.ndarray:
    """Nodewise soft threshold of the gradient step ``dg - step * grad``."""
    zeta = soft_threshold(np.asarray(dg) - step * np.asarray(grad), plan.thresholds(step))
    if boundary_mask is not None:
        zeta[boundary_mask] = 0.0
    return zeta


class AdmissibilityError(ValueError):
    pass


def project_admissible(zeta, sigma0, c: float) -> np.ndarray:
    """Truncate ``sigma0 + zeta`` to ``[c, 1/c]`` and subtract ``sigma0`` again."""
    sigma0 = np.broadcast_to(np.asarray(sigma0, dtype=float), np.shape(zeta))
    if not 0 < c < 1:
        raise AdmissibilityError(f"c must lie in (0, 1), got {c}")
    if np.any(sigma0 < c) or np.any(sigma0 > 1 / c):
        raise AdmissibilityError("background conductivity violates its own bounds [c, 1/c]")
    zeta = np.asarray(zeta, dtype=float)
    total = sigma0 + zeta
    # untouched nodes keep zeta bit-for-bit instead of (sigma0 + zeta) - sigma0
    out = np.where(total < c, c - sigma0, np.where(total > 1.0 / c, 1.0 / c - sigma0, zeta))
    # c - sigma0 may round so that sigma0 + out misses the bound by an ulp
    for _ in range(4):
        low, high = sigma0 + out < c, sigma0 + out > 1.0 / c
        if not (low.any() or high.any()):
            break
        out = np.where(low, np.nextafter(out, np.inf), np.where(high, np.nextafter(out, -np.inf), out))
    return out


def gradient_load(model: ForwardModel, ev: Evaluation) -> np.ndarray:
    """Derivative of the misfit as a nodal load vector.

    Per cell ``G = -sum_k grad u_k . grad w_k`` with ``w_k`` the potential for
    the residual current; ``load_j = sum_{cells ∋ j} G |cell| / (d + 1)``.
    Then ``load @ eta`` is the derivative of the misfit in direction ``eta``.
    """
    mesh = model.mesh
    w = model.adjoint(ev)
    grads = mesh.cell_gradients  # (C, d+1, d)
    cells = mesh.cells
    du = np.einsum("cid,cik->ckd", grads, ev.potentials[cells])
    dw = np.einsum("cid,cik->ckd", grads, w[cells])
    G = -np.einsum("ckd,ckd->c", du, dw)
    share = np.repeat(G * mesh.cell_volumes / (mesh.dim + 1), mesh.dim + 1)
    return np.bincount(cells.ravel(), weights=share, minlength=mesh.n_vertices)


def sobolev_gradient(riesz: RieszSolver, load) -> np.ndarray:
    """H1 Riesz representative of ``load`` in H1_0 (zero on the boundary)."""
    return riesz.solve(load)


def bb_step(h1: H1Matrices, dg, dg_prev, grad, grad_prev, config: SolverConfig) -> float:
    """Barzilai-Borwein step in the H1 inner product, clamped to [s_min, s_max]."""
    ds = np.asarray(dg) - np.asarray(dg_prev)
    dr = np.asarray(grad) - np.asarray(grad_prev)
    num = h1.norm2(ds)
    den = h1.inner(ds, dr)
    if den <= 1e-14 * num or num == 0.0:
        s = config.s_max
    else:
        s = num / den
    return float(min(max(s, config.s_min), config.s_max))


def objective(model: ForwardModel, dg, sigma0, plan: RegularizationPlan):
    """Return ``(psi, misfit, penalty, evaluation)`` at ``sigma0 + dg``."""
    ev = model.evaluate(np.asarray(sigma0) + dg)
    pen = plan.penalty(dg)
    return ev.value + pen, ev.value, pen, ev


@dataclass
class IterationRecord:
    iteration: int
    psi: float
    discrepancy: float
    penalty: float
    step: float
    trials: int
    reference: float  # max of the last M objective values
    decrease: float  # tau / (2 s) ||dg_new - dg||_H1^2


@dataclass
class ReconstructionResult:
    dg: np.ndarray
    status: str  # "converged" (step below s_stop) or "max_iter"
    log: list = field(default_factory=list)
    initial_psi: float = math.nan
    initial_discrepancy: float = math.nan
    iterates: list | None = None
    stop_step: float = math.nan  # rejected trial step that fell below s_stop

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def psi(self) -> np.ndarray:
        return np.array([self.initial_psi] + [r.psi for r in self.log])

    def write_csv(self, path) -> None:
        names = list(IterationRecord.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            writer.writerow([0, repr(self.initial_psi), repr(self.initial_discrepancy), "0.0", "", 0, "", ""])
            for rec in self.log:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in asdict(rec).values()])


class ReconstructionAborted(RuntimeError):
    """A linear solve failed; ``state`` holds the last accepted iterate."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


def run(
    data: CauchyDataSet,
    sigma0,
    plan: RegularizationPlan,
    config: SolverConfig | None = None,
    *,
    keep_iterates: bool = False,
    callback=None,
) -> ReconstructionResult:
    """Minimise misfit + weighted l1 penalty starting from ``dg = 0``.

    Stops when the safeguarded step drops below ``s_stop`` (status
    ``"converged"``) or after ``max_iter`` accepted iterations, in which case
    the iterate with the smallest objective is returned.
    """
    config = config or SolverConfig()
    mesh = data.mesh
    sigma0 = np.broadcast_to(np.asarray(sigma0, dtype=float), (mesh.n_vertices,)).copy()
    project_admissible(np.zeros(mesh.n_vertices), sigma0, config.c)  # validates sigma0
    model = ForwardModel(data, config.rtol, config.linear_maxiter)
    h1 = assemble_h1_matrices(mesh)
    riesz = RieszSolver(h1, config.rtol, config.linear_maxiter)
    bmask = mesh.boundary_mask

    dg = np.zeros(mesh.n_vertices)
    state = {"dg": dg, "iteration": 0}
    try:
        psi, mis, pen, ev = objective(model, dg, sigma0, plan)
        result = ReconstructionResult(dg, "max_iter", [], psi, mis, [dg.copy()] if keep_iterates else None)
        history = [psi] * config.M
        grad = sobolev_gradient(riesz, gradient_load(model, ev))
        dg_prev = grad_prev = None
        best_psi, best = psi, dg
        status = "max_iter"
        for i in range(config.max_iter):
            state["iteration"] = i
            if dg_prev is None:
                s = config.s_min
            else:
                s = bb_step(h1, dg, dg_prev, grad, grad_prev, config)
            reference = max(history[-config.M:])
            trials = 0
            while True:
                trials += 1
                cand = project_admissible(proximal_update(dg, grad, s, plan, bmask), sigma0, config.c)
                cpsi, cmis, cpen, cev = objective(model, cand, sigma0, plan)
                decrease = config.tau / (2 * s) * h1.norm2(cand - dg)
                if cpsi <= reference - decrease:
                    break
                s *= config.shrink
                if s < config.s_stop:
                    status = "converged"
                    result.stop_step = s
                    break
            if status == "converged":
                log.info("step below s_stop after %d iterations", i)
                break
            rec = IterationRecord(i + 1, cpsi, cmis, cpen, s, trials, reference, decrease)
            result.log.append(rec)
            log.debug("iter %d psi %.6e misfit %.6e step %.3g trials %d", i + 1, cpsi, cmis, s, trials)
            dg_prev, grad_prev = dg, grad
            dg, ev = cand, cev
            state["dg"] = dg
            history.append(cpsi)
            if cpsi < best_psi:
                best_psi, best = cpsi, dg
            grad = sobolev_gradient(riesz, gradient_load(model, ev))
            if keep_iterates:
                result.iterates.append(dg.copy())
            if callback is not None:
                callback(rec, dg)
    except SolverError as exc:
        raise ReconstructionAborted(f"linear solver failed at iteration {state['iteration']}: {exc}", state) from exc
    # at the iteration cap the last iterate may sit on a non-monotone
    # excursion; hand back the best one seen instead
    result.dg = dg if status == "converged" else best
    result.status = status
    return result
