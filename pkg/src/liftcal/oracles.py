"""Closed-form reference solutions and calibrations."""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .problem import Problem
from .project import apply_K_projection


def critical_length(lam: float) -> float:
    """Interval length at which the constant and free-boundary profiles tie."""
    return 2.0 * math.sqrt(2.0 / lam)


def oracle_1d_value(a: float, lam: float, rtol: float = 1e-12) -> tuple[float, str]:
    """Minimum of ``int 1/2 u'^2 + lam 1{u > 0}`` on ``(0, a)`` with ``u = 1`` at both ends.

    Returns ``(min(lam a, 2 sqrt(2 lam)), regime)`` with regime
    ``"constant"``, ``"free_boundary"`` or ``"both"`` at the critical length.
    """
    if a <= 0 or lam <= 0:
        raise ValueError("a and lam must be positive")
    const, ramps = lam * a, 2.0 * math.sqrt(2.0 * lam)
    if math.isclose(a, critical_length(lam), rel_tol=rtol):
        return const, "both"
    return (const, "constant") if const < ramps else (ramps, "free_boundary")


def oracle_1d_solution(a: float, lam: float, which: str, x) -> np.ndarray:
    """Evaluate a minimiser on ``(0, a)``.

    ``which="constant"`` gives ``u = 1``. ``which="free_boundary"`` gives two
    ramps of slope ``sqrt(2 lam)`` anchored at the endpoints and zero in
    between; it needs ``a >= 2 sqrt(2 / lam)`` so that the ramps do not overlap.
    """
    x = np.asarray(x, dtype=float)
    if which == "constant":
        return np.ones_like(x)
    if which != "free_boundary":
        raise ValueError(f"unknown profile {which!r}")
    if a < critical_length(lam) * (1 - 1e-12):
        raise ValueError("free-boundary profile needs a >= 2 sqrt(2 / lam)")
    s = math.sqrt(2.0 * lam)
    left = 1.0 - s * x
    right = 1.0 + s * (x - a)
    return np.maximum(np.maximum(left, right), 0.0)


def value_function(x, t, lam: float):
    """Cost of the cheapest path from ``u(0) = 1`` to ``u(x) = t`` for ``t >= 0``.

    Either the straight line, or a ramp down to zero and back up to ``t`` at
    slope ``sqrt(2 lam)``, which needs ``x >= (1 + t) / sqrt(2 lam)``.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    g = math.sqrt(2 * lam)
    direct = 0.5 * (t - 1.0) ** 2 / x + lam * x
    dip = np.where(g * x >= 1.0 + np.abs(t), g * (1.0 + np.abs(t)), np.inf)
    return np.minimum(direct, dip)


def value_function_flux(x, t, lam: float):
    """Rotated gradient ``(d_t V, -d_x V)`` of the value function, ``t >= 0``.

    On the straight-path branch this is ``((t-1)/x, (t-1)^2/(2x^2) - lam)``;
    on the dipping branch it is ``(+-sqrt(2 lam), 0)``. Both saturate the
    constraint ``sigma_t >= sigma_x^2 / 2 - lam 1{t > 0}`` where they apply.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    g = math.sqrt(2 * lam)
    reach = np.where(t > 0, (1 + np.sqrt(np.abs(t))) ** 2, 1 + np.abs(t)) / g
    direct = x <= reach
    sx = np.where(direct, (t - 1) / x, np.where(t > 0, g, -g))
    st = np.where(direct, 0.5 * (t - 1) ** 2 / x ** 2 - lam, 0.0)
    return sx, st


def symmetrized_flux(x, t, lam: float, a: float):
    """Average of the value-function flux and its mirror image about ``x = a/2``.

    The mirror of a field ``(s_x, s_t)`` is ``(-s_x(a - x), s_t(a - x))``, so the
    average is a convex combination of two feasible divergence-free fields.
    """
    sx1, st1 = value_function_flux(x, t, lam)
    sx2, st2 = value_function_flux(a - np.asarray(x, dtype=float), t, lam)
    return 0.5 * (sx1 - sx2), 0.5 * (st1 + st2)


def value_function_field(lam: float, a: float, problem: Problem, margin: int = 2,
                         project: bool = True) -> np.ndarray:
    """Sample the symmetrized value-function flux on the 1D lattice of ``(0, a)``.

    Both components of a constraint node are evaluated at one point: the
    x-position of the face paired with the column (its centre when it has
    none) and the level of its horizontal face. The closed form is feasible
    pointwise for ``t > 0``, so the sampled nodes are too. Free faces are
    sampled at their own midpoints. The field blows up at the endpoints, so
    x-positions closer than ``margin`` cells to ``0`` or ``a`` are clamped to
    that distance. With ``project=True`` the result is passed through the
    constraint projection, which only acts on the bottom plane ``t = 0``
    and inside the margin.
    """
    if problem.lattice.dim != 1:
        raise ValueError("value_function_field is one-dimensional")
    spec, lat = problem.spec, problem.lattice
    I = np.arange(spec.n_x[0] + 1)
    x_face = spec.origin[0] + I * spec.h
    x_node = np.where(lat.fwd[0], x_face, np.where(lat.bwd[0], x_face - spec.h, x_face - 0.5 * spec.h))
    t_face = spec.t_faces()
    t_layer = spec.t_range[0] + (np.arange(spec.n_t + 1) - 0.5) * spec.h_t
    lo, hi = margin * spec.h, a - margin * spec.h

    sigma = lat.zeros_flux()
    X, T = np.meshgrid(np.clip(x_node, lo, hi), t_face, indexing="ij")
    sigma[1] = symmetrized_flux(X, T, lam, a)[1]
    paired = lat.paired_faces[0][:, None]
    X, T = np.meshgrid(np.clip(x_face, lo, hi), t_face, indexing="ij")
    sx_node = symmetrized_flux(X, T, lam, a)[0]
    X, T = np.meshgrid(np.clip(x_face, lo, hi), t_layer, indexing="ij")
    sx_free = symmetrized_flux(X, T, lam, a)[0]
    sigma[0] = np.where(paired, sx_node, sx_free)
    sigma *= lat.active
    return apply_K_projection(sigma, problem) if project else sigma


def critical_lambda_disc(R: float) -> float:
    """Threshold ``2e / R^2`` above which the unit-datum minimiser on a disc has a zero set.

    Below it ``u = 1`` is optimal; above it the radial profile
    ``log(r / rho) / log(R / rho)`` with ``rho = R e^{-1/2}`` competes.
    """
    if R <= 0:
        raise ValueError("radius must be positive")
    return 2.0 * math.e / R ** 2


def quadratic_1d_solution(a: float, x=None):
    """Minimiser and value of ``int 1/2 u'^2 + 1/2 u^2`` on ``(0, a)``, ``u = 1`` at both ends.

    ``u = cosh(x - a/2) / cosh(a/2)`` and the minimum is ``tanh(a/2)``.
    Returns the value, or ``(values at x, value)`` when ``x`` is given.
    """
    value = math.tanh(a / 2)
    if x is None:
        return value
    x = np.asarray(x, dtype=float)
    return np.cosh(x - a / 2) / math.cosh(a / 2), value


def quadratic_1d_discrete(problem: Problem) -> np.ndarray:
    """Minimiser of the discrete energy ``sum 1/2 (D u)^2 + 1/2 u^2`` with ghosts ``u0``.

    Solves the three-point system ``(2 u_i - u_{i-1} - u_{i+1}) / h^2 + u_i = 0``
    whose boundary rows use the same ghost cells as the lattice, so that its
    face differences agree with the lifted gradient up to round-off.
    """
    spec = problem.spec
    if spec.dim != 1:
        raise ValueError("quadratic_1d_discrete is one-dimensional")
    n, h = spec.n_x[0], spec.h
    u0 = float(problem.u0)
    A = sp.diags([-np.ones(n - 1), np.full(n, 2.0 + h * h), -np.ones(n - 1)], [-1, 0, 1],
                 format="csc")
    b = np.zeros(n)
    b[0] = b[-1] = u0
    return spsolve(A, b)


def build_convex_calibration(u_bar: np.ndarray, problem: Problem, project: bool = True) -> np.ndarray:
    """Calibration ``(s(x), f*(u, s) - div s (t - u))`` with ``s = d_z f(u, grad u)``.

    For an integrand with conjugate ``a|z*|^2 + c(t)`` and a minimiser
    ``u_bar`` of the convex problem this field is divergence free, feasible
    and saturates the constraint on the graph. ``s`` is sampled on spatial
    faces from face differences of ``u_bar``; the vertical component uses the
    cell average of ``s`` and the face-difference divergence.
    """
    lat, spec, integ = problem.lattice, problem.spec, problem.integrand
    par = integ.parab(np.asarray(0.0))
    if par is None:
        raise ValueError("convex calibration needs a quadratic conjugate")
    from .analysis import _padded_u  # local import keeps module import order simple

    up = _padded_u(problem, u_bar)
    N = lat.dim
    sigma = lat.zeros_flux()
    s_faces = []
    for d in range(N):
        lo = [slice(0, n + 1) for n in spec.n_x]
        hi = list(lo)
        hi[d] = slice(1, spec.n_x[d] + 2)
        u_face = 0.5 * (up[tuple(hi)] + up[tuple(lo)])
        a_face = integ.parab(u_face)[0]
        s = (up[tuple(hi)] - up[tuple(lo)]) / spec.h / (2 * a_face)
        s_faces.append(s)
        sigma[d] = s[..., None]
    inner = tuple(slice(1, n + 1) for n in spec.n_x)
    u_c = up[inner]
    s_c, div_s = [], 0.0
    for d in range(N):
        hi = list(inner)
        lo = list(inner)
        lo[d] = slice(0, spec.n_x[d])
        s_c.append(0.5 * (s_faces[d][tuple(hi)] + s_faces[d][tuple(lo)]))
        div_s = div_s + (s_faces[d][tuple(hi)] - s_faces[d][tuple(lo)]) / spec.h
    s_c = np.array(s_c)
    t = problem.t_faces
    st = integ.conj(u_c, s_c)[..., None] - div_s[..., None] * (t - u_c[..., None])
    sigma[N][inner] = st
    sigma *= lat.active
    return apply_K_projection(sigma, problem) if project else sigma
