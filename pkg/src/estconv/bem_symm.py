"""Galerkin P0 boundary elements for the single layer equation V phi = f.

The kernel is G(z) = -(1/2 pi) log|z| on a closed polygon of diameter < 1.
Matrix entries use closed forms for equal and touching segments, tensor
Gauss rules whose order follows the pair separation for well separated
segments, and an analytic inner integral otherwise.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np
import scipy.linalg

from . import _bem_kernels as K
from .errors import PreconditionError, SolverError
from .fem_poisson import Load
from .marking import IndicatorField
from .quadrature import barycentric_matrix, endpoint_graded_rule, gauss_legendre, gauss_table

SCALE = -1.0 / (2.0 * np.pi)


def _apply_thread_cap():
    cap = os.environ.get("ESTCONV_THREADS")
    if cap:
        numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))


def _geometry(mesh):
    a, b = mesh.starts, mesh.ends
    t = mesh.tangents
    return (np.ascontiguousarray(a[:, 0]), np.ascontiguousarray(a[:, 1]),
            np.ascontiguousarray(b[:, 0]), np.ascontiguousarray(b[:, 1]),
            np.ascontiguousarray(mesh.lengths), np.ascontiguousarray(t[:, 0]),
            np.ascontiguousarray(t[:, 1]))


@dataclass(frozen=True, eq=False)
class P0Density:
    mesh: object
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float, copy=True).ravel()
        if c.size != self.mesh.n_elements:
            raise PreconditionError(f"expected {self.mesh.n_elements} coefficients, got {c.size}")
        c.flags.writeable = False
        object.__setattr__(self, "coefficients", c)

    @property
    def mesh_uid(self):
        return self.mesh.uid


@dataclass(frozen=True, eq=False)
class SingleLayerSystem:
    mesh: object
    matrix: np.ndarray
    rhs: np.ndarray


def assemble_single_layer(mesh, previous=None):
    """Dense Galerkin matrix V_jk = int_Tj int_Tk G(x - y).

    ``previous = (V_coarse, rmap)`` reuses entries between segments kept
    from the coarse mesh; they are bit-identical to a fresh computation.
    """
    _apply_thread_cap()
    n = mesh.n_elements
    geo = _geometry(mesh)
    gn, gw = gauss_table()
    V = np.empty((n, n))
    rows = np.arange(n)
    if previous is not None:
        Vc, rmap = previous
        if rmap.fine_uid != mesh.uid or Vc.shape[0] != rmap.n_coarse:
            raise PreconditionError("previous matrix does not match the refinement map")
        kept = rmap.kept
        if kept.shape[0]:
            V[np.ix_(kept[:, 1], kept[:, 1])] = Vc[np.ix_(kept[:, 0], kept[:, 0])]
        rows = rmap.new_fine
    is_row = np.zeros(n, dtype=np.bool_)
    is_row[rows] = True
    if rows.size:
        K.assemble_rows(*geo, rows.astype(np.int64), is_row, V, gn, gw)
    return V


def segment_moments(mesh, f):
    """int_{T_j} f ds for a Load or SingleLayerData."""
    if isinstance(f, SingleLayerData):
        return f.moments(mesh)
    f = Load.coerce(f)
    if f.is_constant:
        return f.value * mesh.lengths
    x, w = gauss_legendre(16)
    pts = mesh.starts[:, None, :] + (x[None, :, None] * (mesh.ends - mesh.starts)[:, None, :])
    return mesh.lengths * (f(pts) @ w)


def assemble_system(mesh, f, previous=None):
    return SingleLayerSystem(mesh, assemble_single_layer(mesh, previous), segment_moments(mesh, f))


def solve_symm(system, rtol=1e-12):
    """Cholesky solve of the symmetric positive definite Galerkin system."""
    V, b = system.matrix, system.rhs
    if not np.any(b):
        return P0Density(system.mesh, np.zeros(b.size))
    # symmetric diagonal scaling keeps graded meshes well conditioned
    d = 1.0 / np.sqrt(np.diag(V))
    try:
        fac = scipy.linalg.cho_factor(V * d[:, None] * d[None, :])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"single layer matrix is not positive definite: {exc}") from exc
    x = d * scipy.linalg.cho_solve(fac, d * b)
    bn = np.linalg.norm(b)
    for _ in range(3):
        r = b - V @ x
        res = np.linalg.norm(r) / bn
        if res <= rtol:
            break
        x = x + d * scipy.linalg.cho_solve(fac, d * r)
    else:
        res = np.linalg.norm(b - V @ x) / bn
        if res > rtol:
            raise SolverError("single layer solve stalled", residual=float(res))
    return P0Density(system.mesh, x)


def energy(V, phi):
    c = phi.coefficients if isinstance(phi, P0Density) else np.asarray(phi)
    return float(c @ V @ c)


def prolong_density(phi, rmap, fine):
    """P0 prolongation: each child inherits its parent's value."""
    if rmap.coarse_uid != phi.mesh.uid or rmap.fine_uid != fine.uid:
        raise PreconditionError("refinement map does not connect these meshes")
    return P0Density(fine, phi.coefficients[rmap.fine_parent])


def energy_norm_diff(V_h, phi_h, phi_H, rmap):
    """a(phi_h - P phi_H, phi_h - P phi_H)^(1/2) with the fine matrix."""
    d = phi_h.coefficients - prolong_density(phi_H, rmap, phi_h.mesh).coefficients
    return float(np.sqrt(max(d @ V_h @ d, 0.0)))


def bem_energy_error(discrete_energy, exact_energy, tol=1e-12):
    """(a(u,u) - a(phi,phi))^(1/2), clamped at zero within tol."""
    gap = exact_energy - discrete_energy
    if gap < -tol * max(1.0, abs(exact_energy)):
        raise PreconditionError(
            f"exact energy {exact_energy!r} is below the discrete energy {discrete_energy!r}")
    return float(np.sqrt(max(gap, 0.0)))


@lru_cache(maxsize=None)
def _estimator_rules():
    s, w = endpoint_graded_rule()
    g16, _ = gauss_legendre(16)
    g6, _ = gauss_legendre(6)
    frac = np.concatenate([s, 1.0 - s])
    P16 = np.ascontiguousarray(barycentric_matrix(g16, frac))
    P6 = np.ascontiguousarray(barycentric_matrix(g6, frac))
    return s, w, g16, g6, P16, P6


def fine_nodes(mesh):
    """(n, 2 * nf, 2) estimator nodes: graded from a_j, then graded from b_j."""
    s = _estimator_rules()[0]
    off = (s[None, :, None] * mesh.lengths[:, None, None]) * mesh.tangents[:, None, :]
    return np.concatenate([mesh.starts[:, None, :] + off, mesh.ends[:, None, :] - off], axis=1)


def _data_derivative(mesh, f):
    n, nf = mesh.n_elements, 2 * _estimator_rules()[0].size
    if isinstance(f, SingleLayerData):
        pts = fine_nodes(mesh).reshape(-1, 2)
        gx, gy = f.gradient(pts)
        t = np.repeat(mesh.tangents, nf, axis=0)
        return (gx * t[:, 0] + gy * t[:, 1]).reshape(n, nf)
    f = Load.coerce(f)
    if f.is_constant:
        return np.zeros((n, nf))
    g = f.gradient(fine_nodes(mesh))
    return np.einsum("mqd,md->mq", g, mesh.tangents)


def estimate_weaksing(mesh, f, phi):
    """eta(T)^2 = |T| * ||d_t (f - V phi)||^2_{L2(T)}, integrated per segment."""
    if phi.mesh.uid != mesh.uid:
        raise PreconditionError("density does not live on this mesh")
    _apply_thread_cap()
    coeffs = np.array(phi.coefficients)
    if isinstance(f, SingleLayerData) and f.mesh.uid == mesh.uid:
        # same mesh: the residual is the single layer potential of (psi - phi)
        coeffs = coeffs - f.density
        dfine = np.zeros((mesh.n_elements, 2 * _estimator_rules()[0].size))
    else:
        dfine = _data_derivative(mesh, f)
    s, w, g16, g6, P16, P6 = _estimator_rules()
    gn, gw = gauss_table()
    sq = K.tangential_residual_sq(*_geometry(mesh), coeffs, s, w, g16, g6, P16, P6, gn, gw,
                                  np.ascontiguousarray(dfine), SCALE)
    return IndicatorField.from_squares(mesh.uid, sq)


class SingleLayerData:
    """Data f = V psi for a P0 density psi on a boundary mesh."""

    def __init__(self, mesh, density):
        self.mesh = mesh
        self.density = np.array(density, dtype=float).ravel()
        if self.density.size != mesh.n_elements:
            raise PreconditionError("density length does not match the mesh")
        self._V = None

    def matrix(self):
        if self._V is None:
            self._V = assemble_single_layer(self.mesh)
        return self._V

    def value(self, pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        return SCALE * K.potential_at(np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]),
                                      *_geometry(self.mesh), self.density)

    def gradient(self, pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        ax, ay, bx, by, _, tx, ty = _geometry(self.mesh)
        gx, gy = K.gradient_at(np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]),
                               ax, ay, bx, by, tx, ty, self.density)
        return SCALE * gx, SCALE * gy

    def moments(self, mesh):
        if mesh.uid == self.mesh.uid:
            return self.matrix() @ self.density
        s, w = endpoint_graded_rule()
        pts = fine_nodes(mesh).reshape(-1, 2)
        vals = self.value(pts).reshape(mesh.n_elements, -1)
        return mesh.lengths * (vals @ np.concatenate([w, w]))
