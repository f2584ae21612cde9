"""Projections onto the dual constraint set and the primal box."""

from __future__ import annotations

import numpy as np

from .problem import Problem


class ProjectionError(RuntimeError):
    """The integrand has no closed-form projector."""


def _cubic_root(P, Q):
    """Nonnegative root of ``r^3 + P r - Q = 0`` for ``Q >= 0``.

    Cardano's formula written without cancellation, followed by one Newton
    step. The cubic is increasing past its positive root, so the root is
    unique on ``r >= 0``.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = 0.25 * Q * Q + P * P * P / 27.0
        A = np.cbrt(0.5 * Q + np.sqrt(np.maximum(disc, 0.0)))
        A2 = A * A
        r = np.where(P < 0, A - P / (3 * A), Q / (A2 + P / 3 + P * P / (9 * A2)))
        r = np.where(A > 0, r, 0.0)
        three = disc < 0
        if np.any(three):
            Pt = P[three]
            m = np.sqrt(-Pt / 3)
            arg = np.clip(-1.5 * Q[three] / (Pt * m), -1.0, 1.0)
            r[three] = 2 * m * np.cos(np.arccos(arg) / 3)
        dg = 3 * r * r + P
        r = r - np.where(dg > 0, (r * r * r + P * r - Q) / dg, 0.0)
    return np.maximum(r, 0.0)


def project_epigraph(qx, qt, a, c, where=True):
    """Euclidean projection onto ``{(y, tau): tau >= a |y|^2 + c}``.

    ``qx`` has the spatial components on its first axis; ``qt``, ``a`` and
    ``c`` broadcast against ``qx[0]``. With ``r = |y|`` the optimality
    conditions reduce to ``2 a^2 r^3 + (1 + 2a(c - qt)) r - |qx| = 0``.
    Points outside ``where`` are returned unchanged.
    """
    qx = np.asarray(qx, dtype=float)
    qt = np.asarray(qt, dtype=float)
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    s2 = np.einsum("i...,i...->...", qx, qx)
    bad = (qt < a * s2 + c) & where
    if not np.any(bad):
        return qx.copy(), qt.copy()
    s = np.sqrt(s2)
    k = 0.5 / (a * a)
    r = _cubic_root((1.0 + 2.0 * a * (c - qt)) * k, s * k)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(bad, np.where(s > 0, r / s, 0.0), 1.0)
    return qx * scale, np.where(bad, a * r * r + c, qt)


def _shifted(d: int, ndim: int):
    """Slices selecting index ``i + 1`` and ``i`` along axis ``d``."""
    hi = [slice(None)] * ndim
    lo = [slice(None)] * ndim
    hi[d], lo[d] = slice(1, None), slice(0, -1)
    return tuple(hi), tuple(lo)


def gather_nodes(sigma: np.ndarray, problem: Problem) -> np.ndarray:
    """Group flux components into constraint nodes, in node layout.

    Node ``I`` of an inside column holds its vertical face ``sigma_t[I]`` and,
    per spatial axis, the face the lattice pairs with the column: ``sigma_d[I]``
    (forward) or ``sigma_d[I - e_d]`` (backward). Unpaired slots read as zero.
    """
    lat = problem.lattice
    N = lat.dim
    q = np.empty_like(sigma)
    q[N] = sigma[N]
    for d in range(N):
        fw, bw = lat.fwd_f[d], lat.bwd_f[d]
        hi, lo = _shifted(d, N + 1)
        np.multiply(sigma[d], fw, out=q[d])
        q[d][hi] += sigma[d][lo] * bw[hi]
    return q


def scatter_nodes(sigma: np.ndarray, q: np.ndarray, problem: Problem) -> None:
    """Inverse of ``gather_nodes`` on the slots that belong to a node."""
    lat = problem.lattice
    N = lat.dim
    col = lat.col_f
    sigma[N] = q[N] * col + sigma[N] * (1.0 - col)
    for d in range(N):
        fw, bw = lat.fwd_f[d], lat.bwd_f[d]
        hi, lo = _shifted(d, N + 1)
        keep = 1.0 - fw
        keep[lo] -= bw[hi]
        sigma[d] *= keep
        sigma[d] += q[d] * fw
        sigma[d][lo] += q[d][hi] * bw[hi]


def apply_K_projection(sigma: np.ndarray, problem: Problem) -> np.ndarray:
    """Project every constraint node onto its paraboloid epigraph.

    Spatial faces that are not paired with any inside column (lateral
    boundary faces on the outer side of the pairing) are left unconstrained.
    """
    if problem.parab_a is None:
        raise ProjectionError(f"no projector for integrand {problem.integrand.name!r}")
    q = gather_nodes(sigma, problem)
    N = problem.lattice.dim
    qx, qt = project_epigraph(q[:N], q[N], problem.parab_a, problem.parab_c,
                              where=problem.lattice.col_nodes[..., None])
    q[:N], q[N] = qx, qt
    out = sigma.copy()
    scatter_nodes(out, q, problem)
    return out


def constraint_slack(sigma: np.ndarray, problem: Problem) -> np.ndarray:
    """``sigma_t - conj(t, sigma_x)`` per constraint node; feasible iff >= 0."""
    q = gather_nodes(sigma, problem)
    lat = problem.lattice
    slack = q[lat.dim] - problem.integrand.conj(problem.t_faces, q[:lat.dim])
    return slack[np.broadcast_to(lat.col_nodes[..., None], slack.shape)]


def apply_slice_constraints(sigma: np.ndarray, problem: Problem) -> np.ndarray:
    """Clamp ``sigma_t >= -f(d, 0)`` on the planes ``t = d`` for ``d`` in ``D`` and ``{m, M}``.

    Each level is applied on the nearest horizontal face plane.
    """
    spec, lat = problem.spec, problem.lattice
    m, M = spec.t_range
    levels = sorted({m, M, *[d for d in problem.integrand.disc_set if m <= d <= M]})
    out = sigma.copy()
    N = lat.dim
    St = out[N].reshape(-1, spec.n_t + 1)
    for d in levels:
        k = int(round((d - m) / spec.h_t))
        bound = -float(problem.integrand.f0(np.array(d)))
        St[lat.columns, k] = np.maximum(St[lat.columns, k], bound)
    return out


def project_primal(v: np.ndarray, problem: Problem) -> np.ndarray:
    """Clip to ``[0, 1]`` on inside cells; ghosts live elsewhere and are untouched."""
    return np.clip(v, 0.0, 1.0) * problem.lattice.inside3


def project_neumann_trace(sigma: np.ndarray, problem: Problem) -> np.ndarray:
    """Assign the prescribed normal flux on Neumann faces."""
    if problem.neumann_flux is None:
        return sigma
    lat = problem.lattice
    out = sigma.copy()
    nm = lat.neumann_sign != 0
    out[:lat.dim][nm] = problem.neumann_flux[nm]
    return out
