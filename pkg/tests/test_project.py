import time

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from liftcal.problem import Integrand, Problem, make_integrand
from liftcal.project import (ProjectionError, apply_K_projection, apply_slice_constraints,
                             constraint_slack, project_epigraph, project_primal)

finite = st.floats(-50, 50, allow_nan=False)
coef_a = st.floats(0.05, 5.0)


def _proj1(qx, qt, a, c):
    px, pt = project_epigraph(np.atleast_2d(qx).T, np.array([qt]), a, c)
    return px[:, 0], pt[0]


def brute_force(qx, qt, a, c):
    """Nearest point of the paraboloid surface by direct minimisation."""
    qx = np.asarray(qx, float)

    def dist(y):
        return np.sum((y - qx) ** 2) + (a * y @ y + c - qt) ** 2

    best = min((minimize(dist, y0, method="BFGS", options=dict(gtol=1e-12))
                for y0 in (qx, np.zeros_like(qx), 0.5 * qx)), key=lambda r: r.fun)
    y = best.x
    return y, a * y @ y + c


@given(st.lists(finite, min_size=1, max_size=2), finite, coef_a, finite)
def test_projection_feasible(qx, qt, a, c):
    px, pt = _proj1(qx, qt, a, c)
    assert pt >= a * px @ px + c - 1e-9 * (1 + abs(pt))


@given(st.lists(finite, min_size=1, max_size=2), finite, coef_a, finite)
def test_projection_idempotent(qx, qt, a, c):
    px, pt = _proj1(qx, qt, a, c)
    px2, pt2 = _proj1(px, pt, a, c)
    scale = 1 + abs(pt) + np.abs(px).max()
    assert np.abs(px2 - px).max() <= 1e-10 * scale and abs(pt2 - pt) <= 1e-10 * scale


@given(st.lists(finite, min_size=2, max_size=2), finite, st.lists(finite, min_size=2, max_size=2),
       finite, coef_a, finite)
def test_projection_nonexpansive(x1, t1, x2, t2, a, c):
    p1x, p1t = _proj1(x1, t1, a, c)
    p2x, p2t = _proj1(x2, t2, a, c)
    before = np.hypot(np.linalg.norm(np.subtract(x1, x2)), t1 - t2)
    after = np.hypot(np.linalg.norm(p1x - p2x), p1t - p2t)
    assert after <= before * (1 + 1e-9) + 1e-9


@given(st.lists(finite, min_size=1, max_size=2), finite, coef_a, finite)
def test_projection_kkt(qx, qt, a, c):
    qx = np.asarray(qx)
    px, pt = _proj1(qx, qt, a, c)
    mu = pt - qt
    assert mu >= -1e-12 * (1 + abs(qt))
    if mu > 0:
        res = np.linalg.norm(qx - px - mu * 2 * a * px)
        assert res <= 1e-8 * (1 + np.linalg.norm(qx) + abs(qt))


def test_feasible_points_unchanged():
    qx = np.array([[0.5, -1.0, 0.0]])
    qt = np.array([1.0, 3.0, 0.0])
    px, pt = project_epigraph(qx, qt, 0.5, -0.1)
    assert np.array_equal(px, qx) and np.array_equal(pt, qt)


def test_vertical_drop_case():
    px, pt = _proj1([0.0], -3.0, 0.5, 1.0)
    assert px[0] == 0.0 and pt == 1.0


def test_brute_force_agreement_100_points():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n = rng.integers(1, 3)
        qx = rng.normal(scale=3.0, size=n)
        a = rng.uniform(0.1, 2.0)
        c = rng.normal()
        qt = a * qx @ qx + c - abs(rng.normal(scale=4.0))
        px, pt = _proj1(qx, qt, a, c)
        bx, bt = brute_force(qx, qt, a, c)
        worst = max(worst, np.abs(px - bx).max(), abs(pt - bt))
    assert worst <= 1e-4
    assert time.perf_counter() - t0 <= 5.0


def _random_sigma(problem, rng, scale=3.0):
    return rng.normal(scale=scale, size=problem.lattice.flux_shape) * problem.lattice.active


@pytest.mark.parametrize("which", ["small_1d", "small_2d", "small_disc"])
def test_lattice_projection(which, request, rng):
    problem = request.getfixturevalue(which)
    s1 = _random_sigma(problem, rng)
    p1 = apply_K_projection(s1, problem)
    assert constraint_slack(p1, problem).min() >= -1e-9
    assert np.abs(apply_K_projection(p1, problem) - p1).max() <= 1e-10
    s2 = _random_sigma(problem, rng)
    p2 = apply_K_projection(s2, problem)
    assert np.linalg.norm(p1 - p2) <= np.linalg.norm(s1 - s2) * (1 + 1e-12)


def test_lattice_projection_leaves_free_faces(small_2d, rng):
    problem = small_2d
    lat = problem.lattice
    sigma = _random_sigma(problem, rng)
    out = apply_K_projection(sigma, problem)
    for d in range(lat.dim):
        free = lat.active[d] & ~lat.paired_faces[d][..., None]
        assert free.any()
        assert np.array_equal(out[d][free], sigma[d][free])


class QuarticIntegrand(Integrand):
    name = "quartic"

    def f(self, t, z):
        return np.sum(np.asarray(z) ** 4, axis=0)


def test_generic_integrand_has_no_projector(small_1d):
    problem = Problem(QuarticIntegrand(), small_1d.lattice, 1.0)
    with pytest.raises(ProjectionError):
        apply_K_projection(small_1d.lattice.zeros_flux(), problem)


def test_two_well_projection_feasible(small_1d, rng):
    problem = Problem(make_integrand("two_well", eps=0.2, lam=0.5), small_1d.lattice, 1.0)
    out = apply_K_projection(_random_sigma(problem, rng), problem)
    assert constraint_slack(out, problem).min() >= -1e-9


def test_slice_constraints(small_1d):
    problem = small_1d
    sigma = problem.lattice.zeros_flux() - 10.0
    out = apply_slice_constraints(sigma, problem)
    N = problem.lattice.dim
    # f(0, 0) = 0 at the bottom plane, f(1, 0) = lam at the top
    assert np.all(out[N][1:-1, 0] == 0.0)
    assert np.all(out[N][1:-1, -1] == -problem.integrand.lam)


def test_project_primal_clips(small_1d, rng):
    v = rng.normal(size=small_1d.lattice.zeros_scalar().shape) * 3
    p = project_primal(v, small_1d)
    assert p.min() >= 0.0 and p.max() <= 1.0
