import numpy as np
import pytest
import scipy.optimize
from hypothesis import given
from hypothesis import strategies as st

from estconv.errors import PreconditionError, SolverError
from estconv.fem_obstacle import (ObstacleProblem, discrete_energy, estimate_obstacle,
                                  obstacle_energy_surrogate, solve_obstacle)
from estconv.fem_poisson import DiscreteFunction, Load, P1Space, prolong
from estconv.mesh2d import make_initial_mesh, refine_nvb, refine_uniform

Q = 2.0 ** -0.5


def square(times):
    return refine_uniform(make_initial_mesh("unit_square"), times)[0]


def test_zero_load_gives_zero():
    sol, _ = solve_obstacle(square(4), ObstacleProblem(0.0, (0, 0, -1)))
    assert not np.any(sol.u.coefficients)
    assert sol.active.size == 0


def test_strong_load_touches_obstacle_in_the_centre():
    mesh = square(8)
    sol, _ = solve_obstacle(mesh, ObstacleProblem(-20.0))
    assert sol.active.size > 0
    xy = mesh.vertices[sol.u.space.dof_vertices[sol.active]]
    assert np.all(np.abs(xy - 0.5).max(axis=1) < 0.4)
    assert np.all(sol.u.coefficients >= -1 - 1e-12)
    # the unconstrained solution dips below the obstacle
    free, _ = solve_obstacle(mesh, ObstacleProblem(-20.0, (0, 0, -100)))
    assert free.u.coefficients.min() == pytest.approx(-20 * 0.0737, rel=0.02)


def test_matches_bound_constrained_minimizer():
    mesh = square(4)
    prob = ObstacleProblem(-20.0, (0.3, -0.2, -0.9))
    sol, system = solve_obstacle(mesh, prob)
    A = system.matrix.toarray()
    b = system.rhs
    lower = prob.chi_at(mesh.vertices[sol.u.space.dof_vertices])
    res = scipy.optimize.minimize(lambda x: 0.5 * x @ A @ x - b @ x, np.zeros(b.size),
                                  jac=lambda x: A @ x - b, method="L-BFGS-B",
                                  bounds=[(lo, None) for lo in lower],
                                  options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10_000})
    assert np.max(np.abs(res.x - sol.u.coefficients)) < 1e-6
    assert discrete_energy(system, sol.u.coefficients) <= res.fun + 1e-12


def test_energy_below_random_admissible(rng):
    mesh = square(5)
    prob = ObstacleProblem(-20.0)
    sol, system = solve_obstacle(mesh, prob)
    lower = prob.chi_at(mesh.vertices[sol.u.space.dof_vertices])
    e = discrete_energy(system, sol.u.coefficients)
    for _ in range(100):
        v = np.maximum(sol.u.coefficients + rng.normal(scale=10 ** rng.uniform(-6, 0), size=lower.size),
                       lower)
        assert e <= discrete_energy(system, v) + 1e-12


def test_complementarity():
    mesh = square(6)
    prob = ObstacleProblem(-20.0)
    sol, system = solve_obstacle(mesh, prob)
    u = sol.u.coefficients
    lower = prob.chi_at(mesh.vertices[sol.u.space.dof_vertices])
    r = system.matrix @ u - system.rhs
    free = u - lower > 1e-8
    assert np.max(np.abs(r[free])) < 1e-7
    assert np.min(r) > -1e-7


def test_sweep_order_independence(rng):
    mesh = square(5)
    prob = ObstacleProblem(-20.0)
    base, _ = solve_obstacle(mesh, prob, method="psor")
    n = base.u.space.n_dofs
    for _ in range(2):
        other, _ = solve_obstacle(mesh, prob, method="psor", order=rng.permutation(n))
        assert np.max(np.abs(other.u.coefficients - base.u.coefficients)) < 1e-8
    fast, _ = solve_obstacle(mesh, prob)
    assert np.max(np.abs(fast.u.coefficients - base.u.coefficients)) < 1e-8


def test_sweep_cap():
    with pytest.raises(SolverError) as info:
        solve_obstacle(square(6), ObstacleProblem(-20.0), method="psor", max_sweeps=3)
    assert info.value.residual > 0


def test_positive_obstacle_on_boundary_rejected():
    with pytest.raises(PreconditionError):
        solve_obstacle(square(2), ObstacleProblem(1.0, (1.0, 0.0, -0.5)))


def test_estimator_zero_load_zero_solution():
    mesh = square(3)
    u = DiscreteFunction.zero(P1Space(mesh))
    assert estimate_obstacle(mesh, ObstacleProblem(0.0), u).total == 0.0


@pytest.mark.parametrize("c", [1.0, -3.5])
def test_estimator_constant_load_counts_boundary_edges(c):
    mesh = square(3)
    u = DiscreteFunction.zero(P1Space(mesh))
    ind = estimate_obstacle(mesh, ObstacleProblem(c), u)
    nb = np.zeros(mesh.n_elements)
    for e, (a, b) in enumerate(mesh.edge_elements):
        if b < 0:
            nb[a] += 1
    expected = mesh.areas * nb * c**2 * mesh.areas
    assert np.allclose(ind.values**2, expected, rtol=1e-13, atol=0)


def test_estimator_oscillation_term_by_hand():
    # linear f: the interior term equals |T| * ||f - f_E||^2_T, checked with a
    # fine midpoint rule on each element
    mesh = square(1)
    f = Load(func=lambda x, y: x)
    u = DiscreteFunction.zero(P1Space(mesh))
    ind = estimate_obstacle(mesh, ObstacleProblem(f, (0, 0, -1)), u)

    def integrate(tri, g, n=64):
        # centroid rule on the n^2 congruent subtriangles
        a, b, c = mesh.vertices[tri]
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        up = (i + j < n)
        down = (i + j < n - 1)
        cu = np.stack([i[up] + 1 / 3, j[up] + 1 / 3], 1) / n
        cd = np.stack([i[down] + 2 / 3, j[down] + 2 / 3], 1) / n
        st_ = np.vstack([cu, cd])
        pts = a + np.outer(st_[:, 0], b - a) + np.outer(st_[:, 1], c - a)
        area = 0.5 * abs((b - a)[0] * (c - a)[1] - (b - a)[1] * (c - a)[0])
        return area * g(pts).mean()

    expected = np.zeros(mesh.n_elements)
    for k, tri in enumerate(mesh.elements):
        area = mesh.areas[k]
        for e in mesh.element_edges[k]:
            a, b = mesh.edge_elements[e]
            if b < 0:
                expected[k] += area * integrate(tri, lambda p: p[:, 0] ** 2)
            else:
                fe = (integrate(mesh.elements[a], lambda p: p[:, 0])
                      + integrate(mesh.elements[b], lambda p: p[:, 0])) / (mesh.areas[a] + mesh.areas[b])
                expected[k] += area * integrate(tri, lambda p, fe=fe: (p[:, 0] - fe) ** 2)
    assert np.allclose(ind.values**2, expected, rtol=2e-3)


def test_patch_norm_switch_changes_only_oscillation():
    mesh = square(2)
    u = DiscreteFunction.zero(P1Space(mesh))
    prob = ObstacleProblem(3.0)
    a = estimate_obstacle(mesh, prob, u)
    b = estimate_obstacle(mesh, prob, u, patch_norms=True)
    assert np.array_equal(a.values, b.values)
    lin = ObstacleProblem(Load(func=lambda x, y: x + y))
    assert estimate_obstacle(mesh, lin, u, patch_norms=True).total > estimate_obstacle(mesh, lin, u).total


@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=6), st.sampled_from([0.0, -4.0]))
def test_frozen_estimator_on_kept_elements(picks, c):
    mesh = square(3)
    sol, _ = solve_obstacle(mesh, ObstacleProblem(-20.0))
    marked = sorted({p % mesh.n_elements for p in picks})
    fine, rmap = refine_nvb(mesh, marked)
    prob = ObstacleProblem(c)
    eta_H = estimate_obstacle(mesh, prob, sol.u)
    eta_h = estimate_obstacle(fine, prob, prolong(sol.u, rmap, fine))
    kept = rmap.kept
    assert np.allclose(eta_h.values[kept[:, 1]], eta_H.values[kept[:, 0]], rtol=1e-12, atol=1e-15)
    if c == 0.0:
        new = eta_h.subset_total(rmap.new_fine) ** 2
        old = eta_H.subset_total(rmap.refined_coarse) ** 2
        assert new <= Q * old + 1e-12


def test_energy_monotone_under_refinement():
    prob = ObstacleProblem(-20.0)
    mesh = square(2)
    prev = None
    for k in range(5):
        sol, system = solve_obstacle(mesh, prob)
        e = discrete_energy(system, sol.u.coefficients)
        assert obstacle_energy_surrogate(system, sol.u.coefficients) == -2 * e
        if prev is not None:
            assert e <= prev + 1e-9
        prev = e
        mesh, _ = refine_nvb(mesh, np.arange(0, mesh.n_elements, 3))
