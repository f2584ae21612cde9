import numpy as np
import pytest
from hypothesis import given, strategies as st

from liftcal.analysis import (calibration_residuals, certified_dual, coarea_check,
                              dual_objective, duality_gap, extract_level, lifted_energy,
                              mid_fraction, monotonicity_defect, primal_energy)
from liftcal.problem import alt_caffarelli_problem
from liftcal.solver import feasible_dual


def indicator(u, problem):
    t = problem.spec.t_centers()
    return (t <= u[..., None] + 1e-12).astype(float)


def layer_profile(heights, problem):
    """Subgraph indicator filling ``heights`` layers per column."""
    return (np.arange(problem.spec.n_t) < np.asarray(heights)[..., None]).astype(float)


def v_shaped_heights(rng, n, n_t):
    """Layer counts rising by 0 or 1 per column away from the centre, full at the ends."""
    c = n // 2
    rise_l = np.concatenate([[0], np.cumsum(rng.integers(0, 2, c))])
    rise_r = np.concatenate([[0], np.cumsum(rng.integers(0, 2, n - 1 - c))])
    bottom = max(0, n_t - min(rise_l[-1], rise_r[-1]))
    h = np.concatenate([rise_l[:0:-1], [0], rise_r[1:]]) + bottom
    return np.minimum(h, n_t)


# extract_level

def test_extract_level_indicator(small_1d):
    P = small_1d
    x = P.spec.cell_centers(0)
    u = 0.2 + 0.6 * x / 2
    v = indicator(u, P)
    for s in (0.1, 0.5, 0.9):
        assert np.abs(extract_level(v, P, s) - u).max() <= P.spec.h_t


def test_extract_level_extremes(small_1d):
    P = small_1d
    zero = P.lattice.zeros_scalar()
    assert np.all(extract_level(zero, P) == 0.0)
    assert np.all(extract_level(zero + 1.0, P) == 1.0)


def test_extract_level_staircase():
    P = alt_caffarelli_problem(1.0, a=1 / 8, h=1 / 8, n_t=10)
    t = P.spec.t_centers()
    col = np.where(t < 0.2, 1.0, np.where(t < 0.5, 0.6, 0.0))
    v = col[None, :]
    u5 = extract_level(v, P, 0.5)[0]
    assert 0.5 - P.spec.h_t <= u5 <= 0.5 + P.spec.h_t
    u7 = extract_level(v, P, 0.7)[0]
    assert abs(u7 - 0.2) <= P.spec.h_t


@given(st.integers(0, 10_000))
def test_extract_level_monotone_in_s(seed):
    P = alt_caffarelli_problem(2.0, a=1.0, h=1 / 8, n_t=7)
    v = np.random.default_rng(seed).random((8, 7))
    levels = [extract_level(v, P, s) for s in (0.2, 0.4, 0.6, 0.8)]
    for a, b in zip(levels, levels[1:]):
        assert np.all(a >= b - 1e-12)


# monotonicity

def test_monotonicity_defect(small_1d):
    P = small_1d
    x = P.spec.cell_centers(0)
    assert monotonicity_defect(indicator(0.5 + 0 * x, P), P) == 0.0
    v = np.broadcast_to(P.spec.t_centers(), P.lattice.zeros_scalar().shape)
    area = P.lattice.area
    assert monotonicity_defect(v, P) == pytest.approx(area, abs=P.spec.h_t * area + 1e-12)


def test_mid_fraction(small_1d):
    P = small_1d
    v = P.lattice.zeros_scalar() + 0.5
    assert mid_fraction(v, P) == 1.0
    assert mid_fraction(np.round(v + 0.1), P) == 0.0


# primal energy

def test_primal_energy_constant():
    P = alt_caffarelli_problem(1.0, a=2.0, h=1 / 32)
    assert primal_energy(np.ones(64), P) == pytest.approx(2.0, rel=1e-14)
    assert primal_energy(np.zeros(64), P) > 0  # boundary layers carry the jump to u0 = 1


def test_primal_energy_two_ramp_profile():
    from liftcal.oracles import oracle_1d_solution
    for h in (1 / 64, 1 / 128):
        P = alt_caffarelli_problem(4.0, a=2.0, h=h)
        u = oracle_1d_solution(2.0, 4.0, "free_boundary", P.spec.cell_centers(0))
        assert primal_energy(u, P) == pytest.approx(4 * np.sqrt(2), rel=8 * h)


# lifted energy

PROFILES = [
    # (name, profile, inverse slope so that h_t = h * slope, exact energy)
    ("constant", lambda x: np.ones_like(x), 1, lambda lam: 2 * lam),
    ("shallow_v", lambda x: 0.5 + np.abs(x - 1) / 2, 2, lambda lam: 0.25 + 2 * lam),
    ("steep_v", lambda x: np.abs(x - 1), 1, lambda lam: 1 + 2 * lam),
    ("flat_bottom", lambda x: np.maximum(np.abs(x - 1), 0.25), 1, lambda lam: 0.75 + 2 * lam),
    ("zero_set", lambda x: np.maximum(1 - 2 * np.minimum(x, 2 - x), 0.0), 0.5,
     lambda lam: 2 + lam),
]


@pytest.mark.parametrize("name,prof,ratio,exact", PROFILES, ids=[p[0] for p in PROFILES])
@pytest.mark.parametrize("lam", [0.5, 4.0])
def test_lifted_matches_primal(name, prof, ratio, exact, lam):
    errs = []
    for h in (1 / 32, 1 / 64):
        P = alt_caffarelli_problem(lam, a=2.0, h=h, n_t=int(round(ratio / h)))
        x = P.spec.cell_centers(0)
        u = prof(x)
        lifted = lifted_energy(indicator(u, P), P)
        primal = primal_energy(u, P)
        assert np.isfinite(lifted)
        assert abs(lifted - primal) <= 4 * h * (1 + lam)
        errs.append(abs(lifted - exact(lam)))
    assert errs[1] <= errs[0] + 1e-12


def test_lifted_square_pyramid():
    lam = 4.7
    for h in (1 / 8, 1 / 16):
        P = alt_caffarelli_problem(lam, shape="square", h=h, n_t=int(round(2 / h)))
        X, Y = np.meshgrid(P.spec.cell_centers(0), P.spec.cell_centers(1), indexing="ij")
        u = 0.5 + np.maximum(np.abs(X), np.abs(Y)) / 2
        lifted = lifted_energy(indicator(u, P), P)
        assert np.isfinite(lifted)
        assert abs(lifted - primal_energy(u, P)) <= 8 * h * (1 + lam)


def test_lifted_infinite_when_increasing(small_1d):
    P = small_1d
    v = np.broadcast_to(P.spec.t_centers(), P.lattice.zeros_scalar().shape).copy()
    assert lifted_energy(v, P) == np.inf


# coarea

@pytest.mark.parametrize("theta", [0.25, 0.5, 0.75])
def test_coarea_homogeneity_exact(theta, rng):
    P = alt_caffarelli_problem(2.0, a=2.0, h=1 / 16, n_t=16)
    v = layer_profile(v_shaped_heights(rng, 32, 16), P)
    lhs, rhs, defect = coarea_check(theta * v, P, n_levels=4, homogeneous=True)
    base = lifted_energy(v, P, homogeneous=True)
    assert np.isfinite(base) and base > 0
    assert abs(lhs - theta * base) <= 1e-12 * base
    assert abs(defect) <= 1e-12 * base
    assert base == pytest.approx(lifted_energy(v, P), rel=1e-14)


def test_coarea_nested_layers(rng):
    P = alt_caffarelli_problem(2.0, a=2.0, h=1 / 16, n_t=16)
    hi = v_shaped_heights(rng, 32, 16)
    lo = np.minimum(hi, v_shaped_heights(rng, 32, 16))
    v = 0.5 * layer_profile(hi, P) + 0.5 * layer_profile(lo, P)
    lhs, rhs, defect = coarea_check(v, P, n_levels=2)
    assert np.isfinite(lhs) and lhs <= rhs + 1e-10


def test_coarea_inequality_random_monotone():
    rng = np.random.default_rng(0)
    P = alt_caffarelli_problem(3.0, a=2.0, h=1 / 8, n_t=8)
    n = 8
    finite = 0
    for _ in range(100):
        layers = [layer_profile(v_shaped_heights(rng, 16, 8), P) for _ in range(n)]
        v = np.mean(layers, axis=0)
        lhs, rhs, _ = coarea_check(v, P, n_levels=n)
        assert lhs <= rhs + 1e-10
        finite += np.isfinite(rhs)
    assert finite == 100


def test_coarea_inequality_2d():
    rng = np.random.default_rng(1)
    P = alt_caffarelli_problem(4.7, shape="square", h=1 / 4, n_t=8)
    X, Y = np.meshgrid(P.spec.cell_centers(0), P.spec.cell_centers(1), indexing="ij")
    r = np.maximum(np.abs(X), np.abs(Y))
    for _ in range(20):
        depth = rng.integers(0, 4, 4)
        layers = [layer_profile(np.clip(8 - d + np.rint(r / 0.25 - 3.5), 0, 8).astype(int), P)
                  for d in depth]
        v = np.mean(layers, axis=0)
        lhs, rhs, _ = coarea_check(v, P, n_levels=4)
        assert lhs <= rhs + 1e-10


# duality

def test_weak_duality_random_feasible(small_1d, rng):
    P = small_1d
    for _ in range(10):
        sigma = feasible_dual(rng.normal(scale=2.0, size=P.lattice.flux_shape), P)
        x = P.spec.cell_centers(0)
        for u in (np.ones_like(x), 0.5 + np.abs(x - 1) / 2):
            v = indicator(u, P)
            lifted = lifted_energy(v, P)
            assert certified_dual(sigma, P) <= lifted + 1e-9


def test_zero_flux_gap(small_1d):
    P = small_1d
    v = indicator(np.ones(P.spec.n_x), P)
    sigma = feasible_dual(P.lattice.zeros_flux(), P)
    gap = duality_gap(v, sigma, P)
    assert gap >= 0
    assert dual_objective(P.lattice.zeros_flux(), P) == 0.0


# calibration residuals

def test_residuals_of_zero_flux():
    P = alt_caffarelli_problem(1.0, a=2.0, h=1 / 32)
    res = calibration_residuals(np.ones(64), P.lattice.zeros_flux(), P)
    assert np.allclose(res["r2"][np.isfinite(res["r2"])], 1.0)
    assert res["r2_linf"] == pytest.approx(1.0)
