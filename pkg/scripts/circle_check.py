"""Single layer on regular N-gons inscribed in the circle of radius 1/4.

Compares the Galerkin row potential and the energy a(1, 1) with the circle
values -a log a and 2 pi a (-a log a), and with an adaptive quadrature of
the polygon potential (scipy.integrate.quad) for one segment.
"""
import argparse
import math

import numpy as np
from scipy import integrate

from estconv.bem_symm import SingleLayerData, assemble_system, energy, solve_symm
from estconv.boundary_mesh import make_boundary_mesh, regular_polygon

A = 0.25


def quad_row_potential(mesh, j=0):
    a, b, L = mesh.starts, mesh.ends, mesh.lengths

    def potential(s):
        x = a[j] + s * (b[j] - a[j])
        total = 0.0
        for k in range(mesh.n_elements):
            d = b[k] - a[k]
            pts = [s] if k == j and 0 < s < 1 else None
            total += L[k] * integrate.quad(lambda t: math.log(np.hypot(*(x - a[k] - t * d))), 0, 1,
                                           points=pts, limit=200)[0]
        return -total / (2 * math.pi)

    return integrate.quad(potential, 0, 1, limit=100, epsabs=1e-13)[0]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64, 128, 256])
    ap.add_argument("--quad", action="store_true", help="also run the quadrature oracle (slow)")
    args = ap.parse_args()

    pot = -A * math.log(A)
    exact = 2 * math.pi * A * pot
    print(f"circle: potential {pot:.8f}, energy {exact:.8f}")
    for n in args.sizes:
        mesh = make_boundary_mesh(regular_polygon(n, A), 1)
        system = assemble_system(mesh, SingleLayerData(mesh, np.ones(n)))
        phi = solve_symm(system)
        row = system.matrix[0].sum() / mesh.lengths[0]
        e = energy(system.matrix, phi)
        line = (f"N={n:4d} row {row:.8f} ({row - pot:+.2e})  energy {e:.8f} ({(e - exact) / exact:+.2e})"
                f"  max|phi-1| {np.abs(phi.coefficients - 1).max():.1e}")
        if args.quad:
            line += f"  quad row {quad_row_potential(mesh):.10f}"
        print(line)


if __name__ == "__main__":
    main()
