"""Boundary trace error of the discrete ND map against the harmonic spectrum.

For constant conductivity the trace of the potential driven by a normalised
harmonic of degree n is that harmonic divided by n (and by the conductivity).
Prints the worst relative L2 boundary error per refinement level.

    python scripts/ndmap_convergence.py --dim 3 --levels 3 6 12 24
"""
import argparse
import time

import numpy as np

from sparse_eit.forward import nd_apply
from sparse_eit.mesh import generate_ball_mesh
from sparse_eit.patterns import full_data_patterns


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--levels", type=int, nargs="+", default=[6, 11, 22, 44])
    ap.add_argument("--n-max", type=int, default=None)
    ap.add_argument("--conductivity", type=float, default=1.0)
    args = ap.parse_args()
    n_max = args.n_max or (5 if args.dim == 2 else 3)

    prev = None
    print(f"{'level':>6} {'vertices':>9} {'max_err':>10} {'rate':>6} {'seconds':>8}")
    for level in args.levels:
        t0 = time.perf_counter()
        mesh = generate_ball_mesh(args.dim, level)
        family = full_data_patterns(mesh, n_max)
        sub = family.subset
        traces = nd_apply(mesh, np.full(mesh.n_vertices, args.conductivity), family, sub)
        B = sub.mass[sub.vertices][:, sub.vertices]
        worst = 0.0
        for k, p in enumerate(family):
            exact = p.values[sub.vertices] / (args.conductivity * p.degree)
            e = traces[:, k] - exact
            worst = max(worst, float(np.sqrt(e @ B @ e / (exact @ B @ exact))))
        rate = "" if prev is None else f"{np.log(prev[1] / worst) / np.log(level / prev[0]):.2f}"
        print(f"{level:>6} {mesh.n_vertices:>9} {worst:>10.3e} {rate:>6} {time.perf_counter() - t0:>8.1f}")
        prev = (level, worst)


if __name__ == "__main__":
    main()
