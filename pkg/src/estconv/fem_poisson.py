"""P1 finite elements for -lap u = f with u = 0 on the boundary."""
from __future__ import annotations

import numbers
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import PreconditionError, SolverError
from .marking import IndicatorField
from .quadrature import TRIANGLE_BARY, TRIANGLE_WEIGHTS, triangle_points

DENSE_LIMIT = 500


@dataclass(frozen=True)
class Load:
    """A right-hand side: a constant or a vectorized callable f(x, y).

    ``grad`` (optional) returns the gradient, used where tangential
    derivatives of the data are needed.  Callables are integrated by the
    fixed quadrature and treated as exact.
    """

    value: float | None = None
    func: object = None
    grad: object = None

    @classmethod
    def coerce(cls, f):
        if isinstance(f, Load):
            return f
        if isinstance(f, numbers.Real):
            return cls(value=float(f))
        if callable(f):
            return cls(func=f)
        raise PreconditionError(f"cannot interpret load {f!r}")

    @property
    def is_constant(self):
        return self.func is None

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        if self.is_constant:
            return np.full(pts.shape[:-1], self.value)
        return np.asarray(self.func(pts[..., 0], pts[..., 1]), dtype=float) * np.ones(pts.shape[:-1])

    def gradient(self, pts):
        pts = np.asarray(pts, dtype=float)
        if self.is_constant:
            return np.zeros(pts.shape)
        if self.grad is None:
            raise PreconditionError("load gradient not supplied")
        gx, gy = self.grad(pts[..., 0], pts[..., 1])
        shape = pts.shape[:-1]
        return np.stack([gx * np.ones(shape), gy * np.ones(shape)], axis=-1)

    def scaled(self, c):
        if self.is_constant:
            return Load(value=c * self.value)
        f, g = self.func, self.grad
        return Load(func=lambda x, y: c * f(x, y),
                    grad=None if g is None else (lambda x, y: tuple(c * t for t in g(x, y))))


def quadrature_values(mesh, f):
    """f at the 7 quadrature points of every element, shape (m, 7)."""
    f = Load.coerce(f)
    if f.is_constant:
        return np.full((mesh.n_elements, TRIANGLE_WEIGHTS.size), f.value)
    return f(triangle_points(mesh.vertices, mesh.elements))


@dataclass(frozen=True, eq=False)
class P1Space:
    """Continuous piecewise linears vanishing on the boundary."""

    mesh: object

    @property
    def mesh_uid(self):
        return self.mesh.uid

    @cached_property
    def dof_vertices(self):
        return np.nonzero(~self.mesh.boundary_vertices)[0]

    @cached_property
    def dof_of_vertex(self):
        out = np.full(self.mesh.n_vertices, -1, dtype=np.int64)
        out[self.dof_vertices] = np.arange(self.dof_vertices.size)
        return out

    @property
    def n_dofs(self):
        return self.dof_vertices.size

    @property
    def n_constrained(self):
        return self.mesh.n_vertices - self.n_dofs


@dataclass(frozen=True, eq=False)
class DiscreteFunction:
    space: P1Space
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float, copy=True).ravel()
        if c.size != self.space.n_dofs:
            raise PreconditionError(f"expected {self.space.n_dofs} coefficients, got {c.size}")
        if not np.all(np.isfinite(c)):
            raise PreconditionError("non-finite coefficients")
        c.flags.writeable = False
        object.__setattr__(self, "coefficients", c)

    @property
    def mesh(self):
        return self.space.mesh

    @classmethod
    def zero(cls, space):
        return cls(space, np.zeros(space.n_dofs))

    @classmethod
    def from_nodal(cls, space, nodal):
        return cls(space, np.asarray(nodal, dtype=float)[space.dof_vertices])

    def nodal(self):
        out = np.zeros(self.mesh.n_vertices)
        out[self.space.dof_vertices] = self.coefficients
        return out

    def gradients(self):
        """(m, 2) elementwise constant gradient."""
        u = self.nodal()[self.mesh.elements]
        return np.einsum("mi,mid->md", u, self.mesh.barycentric_gradients)


@dataclass(frozen=True, eq=False)
class LinearSystem:
    space: P1Space
    matrix: object
    rhs: np.ndarray


def element_stiffness(mesh):
    """(m, 3, 3) exact P1 element stiffness matrices."""
    g = mesh.barycentric_gradients
    return mesh.areas[:, None, None] * np.einsum("mid,mjd->mij", g, g)


def element_load(mesh, f):
    """(m, 3) integrals of f times the hat functions (7-point rule)."""
    fq = quadrature_values(mesh, f)
    return mesh.areas[:, None] * np.einsum("q,mq,qi->mi", TRIANGLE_WEIGHTS, fq, TRIANGLE_BARY)


def stiffness_matrix(space):
    """Stiffness matrix restricted to interior dofs (CSR)."""
    mesh = space.mesh
    if space.n_dofs == 0:
        return sp.csr_matrix((0, 0))
    ke = element_stiffness(mesh)
    dofs = space.dof_of_vertex[mesh.elements]
    rows = np.repeat(dofs, 3, axis=1).ravel()
    cols = np.tile(dofs, (1, 3)).ravel()
    keep = (rows >= 0) & (cols >= 0)
    n = space.n_dofs
    A = sp.coo_matrix((ke.ravel()[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def assemble_poisson(mesh, f):
    """Return the interior-dof system (sparse SPD matrix, load vector)."""
    space = P1Space(mesh)
    A = stiffness_matrix(space)
    if space.n_dofs == 0:
        return LinearSystem(space, A, np.zeros(0))
    be = element_load(mesh, f)
    dofs = space.dof_of_vertex[mesh.elements].ravel()
    keep = dofs >= 0
    b = np.bincount(dofs[keep], weights=be.ravel()[keep], minlength=space.n_dofs)
    return LinearSystem(space, A, b)


def solve_spd(system, rtol=1e-10, x0=None, maxiter=None):
    """Jacobi-preconditioned CG, or a dense Cholesky solve for small systems."""
    A, b = system.matrix, system.rhs
    n = b.size
    if n == 0:
        return DiscreteFunction.zero(system.space)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return DiscreteFunction.zero(system.space)
    if n < DENSE_LIMIT:
        dense = A.toarray() if sp.issparse(A) else np.asarray(A)
        try:
            x = scipy.linalg.cho_solve(scipy.linalg.cho_factor(dense), b)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"Cholesky factorization failed: {exc}") from exc
        return DiscreteFunction(system.space, x)
    A = sp.csr_matrix(A)
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError("matrix has a non-positive diagonal")
    M = sp.diags(1.0 / d)
    maxiter = 10 * n if maxiter is None else maxiter
    # an unreachable tolerance can break CG down; the residual check reports it
    with np.errstate(divide="ignore", invalid="ignore"):
        x, info = spla.cg(A, b, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=M)
    res = np.linalg.norm(b - A @ x) / bnorm
    if info != 0 or not res <= rtol * 10:
        raise SolverError(f"PCG did not converge in {maxiter} iterations", residual=float(res))
    return DiscreteFunction(system.space, x)


def prolong_nodal(nodal, rmap):
    """Nodal values on the fine mesh: copies plus midpoint averages."""
    base = rmap.n_coarse_vertices
    ends = rmap.new_vertex_edges
    if nodal.size != base:
        raise PreconditionError("nodal vector does not match the coarse mesh")
    out = np.empty(base + ends.shape[0])
    out[:base] = nodal
    done = 0
    last = ends.max(axis=1) if ends.size else ends
    while done < ends.shape[0]:
        # longest run whose endpoints are already known
        ready = last[done:] < base + done
        stop = done + (int(np.argmin(ready)) if not ready.all() else ready.size)
        if stop == done:
            raise PreconditionError("new vertex refers to a later vertex")
        out[base + done:base + stop] = 0.5 * (out[ends[done:stop, 0]] + out[ends[done:stop, 1]])
        done = stop
    return out


def _check_map(u, rmap, fine=None):
    if rmap.coarse_uid != u.mesh.uid:
        raise PreconditionError(f"map starts at mesh {rmap.coarse_uid}, function lives on {u.mesh.uid}")
    if fine is not None and rmap.fine_uid != fine.uid:
        raise PreconditionError(f"map ends at mesh {rmap.fine_uid}, target mesh is {fine.uid}")


def prolong(u_H, rmap, fine):
    """The same function represented on the refined mesh."""
    _check_map(u_H, rmap, fine)
    return DiscreteFunction.from_nodal(P1Space(fine), prolong_nodal(u_H.nodal(), rmap))


def energy_norm(u):
    g = u.gradients()
    return float(np.sqrt(np.sum(u.mesh.areas * np.einsum("md,md->m", g, g))))


def energy_norm_diff(u_h, u_H, rmap):
    """||grad(u_h - P u_H)|| computed elementwise on the fine mesh."""
    _check_map(u_H, rmap, u_h.mesh)
    fine = u_h.mesh
    e = u_h.nodal() - prolong_nodal(u_H.nodal(), rmap)
    g = np.einsum("mi,mid->md", e[fine.elements], fine.barycentric_gradients)
    return float(np.sqrt(np.sum(fine.areas * np.einsum("md,md->m", g, g))))


def interior_jumps(mesh, grads):
    """Normal-derivative jumps on interior edges: (edge ids, |E|, jump)."""
    ee = mesh.edge_elements
    inner = np.nonzero(ee[:, 1] >= 0)[0]
    e = mesh.edges[inner]
    t = mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]]
    length = np.linalg.norm(t, axis=1)
    n = np.stack([t[:, 1], -t[:, 0]], axis=1) / length[:, None]
    jump = np.einsum("ed,ed->e", grads[ee[inner, 0]] - grads[ee[inner, 1]], n)
    return inner, length, jump


def jump_terms(mesh, grads):
    """Per element sum of |T|^(1/2) * |E| * jump^2 over interior edges of T."""
    inner, length, jump = interior_jumps(mesh, grads)
    ee = mesh.edge_elements[inner]
    per_edge = length * jump**2
    acc = np.bincount(ee[:, 0], weights=per_edge, minlength=mesh.n_elements)
    acc += np.bincount(ee[:, 1], weights=per_edge, minlength=mesh.n_elements)
    return np.sqrt(mesh.areas) * acc


def volume_l2_squared(mesh, fq):
    """||f||^2_{L2(T)} per element from quadrature values (m, 7)."""
    return mesh.areas * (fq**2 @ TRIANGLE_WEIGHTS)


def estimate_residual(mesh, f, u):
    """Residual indicators: |T| ||f||_T^2 + |T|^(1/2) sum_E |E| jump^2."""
    if u.mesh.uid != mesh.uid:
        raise PreconditionError("function does not live on this mesh")
    fq = quadrature_values(mesh, f)
    sq = mesh.areas * volume_l2_squared(mesh, fq) + jump_terms(mesh, u.gradients())
    return IndicatorField.from_squares(mesh.uid, sq)


def error_vs_manufactured(mesh, u_h, exact_gradient):
    """||grad(u - u_h)||_{L2} with the 7-point rule; exact_gradient(x, y) -> (gx, gy)."""
    pts = triangle_points(mesh.vertices, mesh.elements)
    gx, gy = exact_gradient(pts[..., 0], pts[..., 1])
    g = u_h.gradients()
    err = (np.asarray(gx) - g[:, 0:1]) ** 2 + (np.asarray(gy) - g[:, 1:2]) ** 2
    return float(np.sqrt(np.sum(mesh.areas * (err @ TRIANGLE_WEIGHTS))))


def interpolate(space, func):
    """Nodal interpolant of func(x, y) (boundary values dropped)."""
    v = space.mesh.vertices[space.dof_vertices]
    return DiscreteFunction(space, np.asarray(func(v[:, 0], v[:, 1]), dtype=float))
