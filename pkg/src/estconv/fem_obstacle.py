"""Discrete obstacle problem: minimize 1/2 a(u,u) - (f,u) over P1 with u >= chi."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import PreconditionError, SolverError
from .fem_poisson import (DiscreteFunction, Load, assemble_poisson, jump_terms,
                          quadrature_values, volume_l2_squared)
from .marking import IndicatorField
from .quadrature import TRIANGLE_WEIGHTS

ACTIVE_TOL = 1e-10


@dataclass(frozen=True)
class ObstacleProblem:
    """Load f and affine obstacle chi(x, y) = a x + b y + c."""

    f: Load
    chi: tuple = (0.0, 0.0, -1.0)

    def __post_init__(self):
        object.__setattr__(self, "f", Load.coerce(self.f))
        a, b, c = (float(t) for t in self.chi)
        object.__setattr__(self, "chi", (a, b, c))

    def chi_at(self, xy):
        a, b, c = self.chi
        xy = np.asarray(xy, dtype=float)
        return a * xy[..., 0] + b * xy[..., 1] + c

    def check_mesh(self, mesh):
        bnd = mesh.vertices[mesh.boundary_vertices]
        worst = float(self.chi_at(bnd).max())
        if worst > 1e-14:
            raise PreconditionError(f"obstacle is positive ({worst!r}) on the boundary")


@dataclass(frozen=True, eq=False)
class ObstacleSolution:
    u: DiscreteFunction
    active: np.ndarray
    sweeps: int
    update: float


@numba.njit(cache=True)
def _psor_sweeps(indptr, indices, data, diag, b, lower, u, omega, order, tol, max_sweeps):
    n = u.size
    upd = np.inf
    for sweep in range(max_sweeps):
        upd = 0.0
        for k in range(n):
            i = order[k]
            s = b[i]
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                if j != i:
                    s -= data[p] * u[j]
            new = (1.0 - omega) * u[i] + omega * s / diag[i]
            if new < lower[i]:
                new = lower[i]
            d = abs(new - u[i])
            if d > upd:
                upd = d
            u[i] = new
        umax = 0.0
        for i in range(n):
            if abs(u[i]) > umax:
                umax = abs(u[i])
        if upd <= tol * (1.0 + umax):
            return sweep + 1, upd
    return -1, upd


def psor(A, b, lower, u0, omega=1.5, tol=1e-10, max_sweeps=100_000, order=None):
    """Projected SOR; returns (u, sweeps, last update)."""
    A = sp.csr_matrix(A)
    n = b.size
    order = np.arange(n, dtype=np.int64) if order is None else np.asarray(order, dtype=np.int64)
    u = np.maximum(np.array(u0, dtype=float), lower)
    sweeps, upd = _psor_sweeps(A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data,
                               A.diagonal(), b, lower, u, float(omega), order, float(tol),
                               int(max_sweeps))
    if sweeps < 0:
        raise SolverError(f"PSOR exceeded {max_sweeps} sweeps", residual=float(upd))
    return u, sweeps, float(upd)


def _active_set(A, b, lower, u0, max_iter=200):
    """Primal-dual active set iteration; None if it does not settle."""
    n = b.size
    u = np.maximum(u0, lower)
    lam = A @ u - b
    scale = A.diagonal()
    prev = None
    for _ in range(max_iter):
        act = lam - scale * (u - lower) > 0
        if prev is not None and np.array_equal(act, prev):
            return u
        prev = act
        inact = np.nonzero(~act)[0]
        u = np.where(act, lower, 0.0)
        if inact.size:
            Aii = A[inact][:, inact].tocsc()
            rhs = b[inact] - A[inact] @ u
            u[inact] = spla.splu(Aii).solve(rhs)
        lam = np.where(act, A @ u - b, 0.0)
        if n == 0:
            return u
    return None


def discrete_energy(system, coeffs):
    """E(u) = 1/2 u.Au - b.u."""
    return float(0.5 * coeffs @ (system.matrix @ coeffs) - system.rhs @ coeffs)


def solve_obstacle(mesh, prob, method="active_set", u0=None, omega=1.5, tol=1e-10,
                   max_sweeps=100_000, order=None):
    """Minimize the energy over admissible P1 functions.

    ``active_set`` runs a primal-dual active set iteration and then PSOR
    sweeps from its result (normally one or two), so the PSOR stopping rule
    holds at exit.  ``psor`` runs projected SOR alone from ``u0`` or zero.
    """
    prob.check_mesh(mesh)
    system = assemble_poisson(mesh, prob.f)
    space = system.space
    if space.n_dofs == 0:
        return ObstacleSolution(DiscreteFunction.zero(space), np.zeros(0, np.int64), 0, 0.0), system
    A = system.matrix.tocsr()
    lower = prob.chi_at(mesh.vertices[space.dof_vertices])
    start = np.zeros(space.n_dofs) if u0 is None else np.asarray(u0, dtype=float)
    if method == "active_set":
        guess = _active_set(A, system.rhs, lower, start)
        if guess is not None:
            start = guess
    elif method != "psor":
        raise PreconditionError(f"unknown obstacle solver {method!r}")
    u, sweeps, upd = psor(A, system.rhs, lower, start, omega, tol, max_sweeps, order)
    active = np.nonzero(np.abs(u - lower) <= ACTIVE_TOL)[0]
    return ObstacleSolution(DiscreteFunction(space, u), active, sweeps, upd), system


def estimate_obstacle(mesh, prob, u, patch_norms=False):
    """Obstacle indicators.

    eta(T)^2 = |T|^(1/2) sum_E |E| jump^2
             + |T| * (#boundary edges of T) * ||f||^2_T
             + |T| * sum_{interior E} ||f - f_E||^2_T,
    with f_E the mean of f over the two elements sharing E.  With
    ``patch_norms`` the data norms are taken over the edge patch instead of T.
    """
    if u.mesh.uid != mesh.uid:
        raise PreconditionError("function does not live on this mesh")
    f = Load.coerce(prob.f)
    area = mesh.areas
    sq = jump_terms(mesh, u.gradients())
    fq = quadrature_values(mesh, f)
    f2 = volume_l2_squared(mesh, fq)
    ee = mesh.edge_elements
    bmask = ee[:, 1] < 0
    n_bnd = np.bincount(ee[bmask, 0], minlength=mesh.n_elements)
    sq += area * n_bnd * f2
    if not f.is_constant:
        inner = np.nonzero(~bmask)[0]
        a, b = ee[inner, 0], ee[inner, 1]
        integral = area * (fq @ TRIANGLE_WEIGHTS)
        fE = (integral[a] + integral[b]) / (area[a] + area[b])

        def osc(t):
            return area[t] * (((fq[t] - fE[:, None]) ** 2) @ TRIANGLE_WEIGHTS)

        da, db = osc(a), osc(b)
        if patch_norms:
            da = db = da + db
        sq += np.bincount(a, weights=area[a] * da, minlength=mesh.n_elements)
        sq += np.bincount(b, weights=area[b] * db, minlength=mesh.n_elements)
    return IndicatorField.from_squares(mesh.uid, sq)


def obstacle_energy_surrogate(system, coeffs):
    """-2 E(u); grows along nested runs and dominates sum of squared increments."""
    return -2.0 * discrete_energy(system, coeffs)

