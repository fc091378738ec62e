"""Fixed quadrature rules shared by the FEM and BEM modules."""
from __future__ import annotations

from functools import lru_cache

import numpy as np


def _seven_point_rule():
    s = np.sqrt(15.0)
    a1, b1 = (6.0 - s) / 21.0, (9.0 + 2.0 * s) / 21.0
    a2, b2 = (6.0 + s) / 21.0, (9.0 - 2.0 * s) / 21.0
    w1, w2 = (155.0 - s) / 1200.0, (155.0 + s) / 1200.0
    bary = np.array([
        [1 / 3, 1 / 3, 1 / 3],
        [a1, a1, b1], [a1, b1, a1], [b1, a1, a1],
        [a2, a2, b2], [a2, b2, a2], [b2, a2, a2],
    ])
    weights = np.array([9.0 / 40.0, w1, w1, w1, w2, w2, w2])
    return bary, weights


#: Barycentric coordinates (7, 3) and area-relative weights (7,) of the
#: degree-5 seven point rule on triangles.  Weights sum to one.
TRIANGLE_BARY, TRIANGLE_WEIGHTS = _seven_point_rule()
TRIANGLE_BARY.flags.writeable = False
TRIANGLE_WEIGHTS.flags.writeable = False


def triangle_points(vertices, elements):
    """Physical quadrature points, shape (n_elements, 7, 2)."""
    p = vertices[elements]  # (m, 3, 2)
    return np.einsum("qi,mid->mqd", TRIANGLE_BARY, p)


@lru_cache(maxsize=None)
def gauss_legendre(n):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


GAUSS_TABLE_MAX = 16


@lru_cache(maxsize=None)
def gauss_table():
    """Padded (17, 16) tables of nodes and weights for orders 1..16."""
    nodes = np.zeros((GAUSS_TABLE_MAX + 1, GAUSS_TABLE_MAX))
    weights = np.zeros_like(nodes)
    for n in range(1, GAUSS_TABLE_MAX + 1):
        x, w = gauss_legendre(n)
        nodes[n, :n] = x
        weights[n, :n] = w
    return nodes, weights


@lru_cache(maxsize=None)
def endpoint_graded_rule(power=7, n=32):
    """Half-segment rule clustered at the anchor endpoint.

    Returns offsets ``s`` in (0, 1/2] measured from the anchor and weights
    for integrating over [0, 1/2].  The full segment is covered by using the
    rule once from each endpoint.  Integrands with log or log^2 behaviour at
    the endpoints are integrated to near machine precision.
    """
    t, w = gauss_legendre(n)
    s = 0.5 * t**power
    ws = 0.5 * power * t ** (power - 1) * w
    s.flags.writeable = False
    ws.flags.writeable = False
    return s, ws


def barycentric_matrix(nodes, points):
    """Matrix P with P @ values(nodes) = Lagrange interpolant at points."""
    nodes = np.asarray(nodes, dtype=float)
    points = np.asarray(points, dtype=float)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    lam = 1.0 / np.prod(diff, axis=1)
    d = points[:, None] - nodes[None, :]
    exact = d == 0.0
    d[exact] = 1.0
    terms = lam[None, :] / d
    P = terms / terms.sum(axis=1, keepdims=True)
    rows = np.nonzero(exact.any(axis=1))[0]
    for r in rows:
        P[r] = exact[r].astype(float)
    return P
