"""Command-line front end: simulate, reconstruct, ndmap-check, gradient-check."""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__, fem
from .config import ConfigError, ExperimentConfig, load_config
from .fem import SolverError
from .forward import (
    DataFileError,
    ForwardModel,
    InverseCrimeError,
    exact_data,
    load_dataset,
    nd_apply,
    save_dataset,
    simulate_cauchy_data,
)
from .mesh import MeshError, SimplicialMesh, generate_ball_mesh
from .mesh_io import read_gmsh
from .patterns import Inclusion, OverlapError, PhantomSpec, build_phantom, default_phantom, full_data_patterns, prior_field
from .reconstruct import ReconstructionAborted, RegularizationPlan, gradient_load, run
from .vtk import write_vtk

log = logging.getLogger("sparse_eit")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_ITERATION_CAP = 4

LOG_ENV = "SPARSE_EIT_LOG"


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    versions: dict
    timings: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    status: str = ""
    extra: dict = field(default_factory=dict)

    def write(self, out_dir: Path) -> Path:
        missing = [f for f in self.files if not (out_dir / f).is_file()]
        if missing:
            raise RuntimeError(f"manifest lists missing files: {missing}")
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def _versions() -> dict:
    return {
        "sparse_eit": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


class _Timer:
    def __init__(self, timings: dict):
        self.timings = timings

    def __call__(self, name):
        timer = self

        class _Span:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.timings[name] = round(time.perf_counter() - self.t0, 6)

        return _Span()


# --- building blocks ---------------------------------------------------------

def phantom_spec(cfg: ExperimentConfig) -> PhantomSpec:
    ph = cfg.phantom
    if not ph.inclusions:
        spec = default_phantom(cfg.mesh.dim)
        return PhantomSpec(ph.background, spec.inclusions)
    incs = []
    for i, table in enumerate(ph.inclusions):
        try:
            incs.append(Inclusion(**table))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"phantom.inclusions[{i}]", str(exc)) from None
        if incs[-1].dim != cfg.mesh.dim:
            raise ConfigError(f"phantom.inclusions[{i}].center", f"needs {cfg.mesh.dim} coordinates")
    try:
        return PhantomSpec(ph.background, incs)
    except ValueError as exc:
        raise ConfigError("phantom.inclusions", str(exc)) from None


def _mesh(cfg: ExperimentConfig, which: str) -> SimplicialMesh:
    path = getattr(cfg.mesh, f"{which}_file")
    if path:
        mesh = read_gmsh(path)
        if mesh.dim != cfg.mesh.dim:
            raise ConfigError(f"mesh.{which}_file", f"mesh is {mesh.dim}D, config says {cfg.mesh.dim}D")
        return mesh
    return generate_ball_mesh(cfg.mesh.dim, getattr(cfg.mesh, f"{which}_refinement"))


def coarse_mesh(cfg: ExperimentConfig) -> SimplicialMesh:
    return _mesh(cfg, "coarse")


def fine_mesh(cfg: ExperimentConfig) -> SimplicialMesh:
    return _mesh(cfg, "fine")


def _output_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _save_config(cfg: ExperimentConfig, out: Path) -> str:
    (out / "config.toml").write_text(cfg.dumps())
    return "config.toml"


# --- commands ----------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig) -> int:
    out = _output_dir(cfg)
    timings = {}
    timed = _Timer(timings)
    spec = phantom_spec(cfg)
    with timed("meshes"):
        fine, coarse = fine_mesh(cfg), coarse_mesh(cfg)
    log.info("fine mesh %r, coarse mesh %r", fine, coarse)
    sigma_fine, _ = build_phantom(spec, fine)
    with timed("simulate"):
        data = simulate_cauchy_data(
            fine, sigma_fine, coarse, cfg.patterns.kind, cfg.patterns.n_max, cfg.data.noise, cfg.data.seed,
            allow_inverse_crime=cfg.data.allow_inverse_crime, rtol=cfg.solver.rtol,
        )
    save_dataset(data, out / "data.json")
    sigma_coarse, _ = build_phantom(spec, coarse)
    write_vtk(out / "phantom.vtk", coarse, {"sigma_true": sigma_coarse})
    files = ["data.json", "phantom.vtk", _save_config(cfg, out)]
    RunManifest(
        "simulate", cfg.digest(), cfg.data.seed, _versions(), timings, files, "ok",
        {"K": data.K, "noise_std": data.noise_std, "coarse_mesh": coarse.hash, "fine_mesh": fine.hash},
    ).write(out)
    print(f"wrote {data.K} Cauchy data pairs to {out / 'data.json'}")
    return EXIT_OK


def cmd_reconstruct(cfg: ExperimentConfig, data_path=None) -> int:
    out = _output_dir(cfg)
    timings = {}
    timed = _Timer(timings)
    mesh = coarse_mesh(cfg)
    data_path = Path(data_path) if data_path else out / "data.json"
    data = load_dataset(data_path, mesh)
    sigma0 = np.full(mesh.n_vertices, cfg.phantom.background)
    reg = cfg.regularization
    mu = None
    if reg.prior == "dilated":
        mu = prior_field(phantom_spec(cfg), mesh, reg.dilation, reg.mu_in)
    plan = RegularizationPlan.for_mesh(mesh, reg.alpha, mu)

    def progress(rec, _):
        log.info("iter %4d  psi %.6e  misfit %.6e  step %.4g", rec.iteration, rec.psi, rec.discrepancy, rec.step)

    files = []
    try:
        with timed("reconstruct"):
            result = run(data, sigma0, plan, cfg.solver, callback=progress)
    except ReconstructionAborted as exc:
        dg = exc.state["dg"]
        write_vtk(out / "aborted.vtk", mesh, {"delta_gamma": dg, "sigma": sigma0 + dg})
        files.append("aborted.vtk")
        RunManifest("reconstruct", cfg.digest(), cfg.data.seed, _versions(), timings,
                    files + [_save_config(cfg, out)], "solver_failure", {"error": str(exc)}).write(out)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    fields = {"sigma": sigma0 + result.dg, "delta_gamma": result.dg}
    if mu is not None:
        fields["mu"] = mu
    write_vtk(out / "reconstruction.vtk", mesh, fields)
    result.write_csv(out / "iterations.csv")
    files += ["reconstruction.vtk", "iterations.csv", _save_config(cfg, out)]
    last = result.log[-1] if result.log else None
    RunManifest(
        "reconstruct", cfg.digest(), cfg.data.seed, _versions(), timings, files, result.status,
        {
            "iterations": len(result.log),
            "initial_psi": result.initial_psi,
            "final_psi": last.psi if last else result.initial_psi,
            "final_discrepancy": last.discrepancy if last else result.initial_discrepancy,
            "data_file": str(data_path),
            "mesh_hash": mesh.hash,
        },
    ).write(out)
    print(f"{result.status} after {len(result.log)} iterations; wrote {out / 'reconstruction.vtk'}")
    return EXIT_OK if result.converged else EXIT_ITERATION_CAP


def cmd_ndmap_check(cfg: ExperimentConfig) -> int:
    """Compare traces for harmonic currents with the analytic spectrum on the unit ball."""
    if cfg.mesh.coarse_file:
        raise ConfigError("mesh.coarse_file", "ndmap-check needs the built-in ball mesh")
    mesh = coarse_mesh(cfg)
    family = full_data_patterns(mesh, cfg.checks.ndmap_n_max)
    gamma = cfg.checks.ndmap_conductivity
    sub = family.subset
    traces = nd_apply(mesh, np.full(mesh.n_vertices, gamma), family, sub, cfg.solver.rtol)
    B = sub.mass[sub.vertices][:, sub.vertices]
    worst = 0.0
    print(f"{'n':>3} {'m':>4} {'rel_L2_error':>14}")
    for k, p in enumerate(family):
        exact = p.values[sub.vertices] / (gamma * p.degree)
        err = traces[:, k] - exact
        rel = float(np.sqrt(err @ B @ err / (exact @ B @ exact)))
        worst = max(worst, rel)
        print(f"{p.degree:>3} {p.order:>4} {rel:>14.6e}")
    bound = cfg.checks.ndmap_bound
    print(f"max error {worst:.6e} (bound {bound:g}, {mesh.n_vertices} vertices)")
    return EXIT_OK if worst <= bound else EXIT_CHECK_FAILED


def cmd_gradient_check(cfg: ExperimentConfig) -> int:
    """Central finite differences of the misfit against the adjoint gradient."""
    mesh = coarse_mesh(cfg)
    rng = np.random.default_rng(cfg.data.seed)
    sigma, _ = build_phantom(phantom_spec(cfg), mesh)
    data = exact_data(mesh, sigma, cfg.patterns.kind, cfg.patterns.n_max, cfg.solver.rtol)
    model = ForwardModel(data, cfg.solver.rtol)
    gamma = cfg.phantom.background * (1 + 0.2 * rng.uniform(-1, 1, mesh.n_vertices) * ~mesh.boundary_mask)
    load = gradient_load(model, model.evaluate(gamma))
    h = cfg.checks.gradient_h
    worst = 0.0
    for i in range(cfg.checks.gradient_directions):
        eta = rng.standard_normal(mesh.n_vertices) * ~mesh.boundary_mask
        fd = (model.evaluate(gamma + h * eta).value - model.evaluate(gamma - h * eta).value) / (2 * h)
        exact = float(load @ eta)
        rel = abs(fd - exact) / abs(exact)
        worst = max(worst, rel)
        print(f"direction {i}: adjoint {exact:.10e} finite-difference {fd:.10e} rel error {rel:.3e}")
    print(f"max relative error {worst:.3e} (bound {cfg.checks.gradient_bound:g})")
    return EXIT_OK if worst <= cfg.checks.gradient_bound else EXIT_CHECK_FAILED


# --- argument handling -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment configuration")
    common.add_argument("--output-dir", help="directory for data, fields and the manifest")
    common.add_argument("--seed", type=int, help="noise / random-direction seed")
    common.add_argument("--threads", type=int, help="worker threads for the per-pattern solves")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a config value by dotted path, e.g. solver.max_iter=50")

    parser = argparse.ArgumentParser(prog="sparse-eit", description="Sparse reconstruction for (partial data) EIT.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate Cauchy data on the fine mesh")
    rec = sub.add_parser("reconstruct", parents=[common], help="run the sparsity reconstruction")
    rec.add_argument("--data", help="data file (default: <output-dir>/data.json)")
    sub.add_parser("ndmap-check", parents=[common], help="compare ND traces with the analytic spectrum")
    sub.add_parser("gradient-check", parents=[common], help="finite-difference check of the gradient")
    sub.add_parser("show-config", parents=[common], help="print the effective configuration")
    return parser


def _configure_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    overrides = list(args.override)
    if args.output_dir is not None:
        overrides.append(f"output_dir={json.dumps(args.output_dir)}")
    if args.seed is not None:
        overrides.append(f"data.seed={args.seed}")
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads", "must be >= 1")
            fem.THREADS = args.threads
        cfg = load_config(args.config, overrides)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg, args.data)
        if args.command == "ndmap-check":
            return cmd_ndmap_check(cfg)
        if args.command == "gradient-check":
            return cmd_gradient_check(cfg)
        print(cfg.dumps(), end="")
        return EXIT_OK
    except (ConfigError, DataFileError, MeshError, InverseCrimeError, OverlapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
