"""Post-processing of lifted fields: level sets, energies and certificates."""

from __future__ import annotations

import numpy as np

from .grid import build_ghosts, divergence, flux_inner, gradient
from .problem import Problem, h_f
from .project import gather_nodes


def _u0_cells(problem: Problem) -> np.ndarray:
    spec = problem.spec
    if callable(problem.u0):
        X = np.meshgrid(*(spec.cell_centers(d) for d in range(spec.dim)), indexing="ij")
        return np.asarray(problem.u0(*X), dtype=float) * np.ones(spec.n_x)
    return np.full(spec.n_x, float(problem.u0))


def extract_level(v: np.ndarray, problem: Problem, s: float = 0.5) -> np.ndarray:
    """Superlevel boundary ``u_s(x) = sup{t : v(x, t) > s}`` per column.

    ``v`` is first made non-increasing in ``t`` by a running maximum taken
    from the top, then the crossing of ``s`` is located by linear
    interpolation between cell centres. Columns with ``v <= s`` everywhere
    give ``m`` and columns with ``v > s`` everywhere give ``M``. Cells outside
    the domain carry the boundary datum.
    """
    spec = problem.spec
    m, M = spec.t_range
    vm = np.maximum.accumulate(v[..., ::-1], axis=-1)[..., ::-1]
    k = np.sum(vm > s, axis=-1)
    tc = spec.t_centers()
    kk = np.clip(k, 1, spec.n_t - 1)
    v_hi = np.take_along_axis(vm, (kk - 1)[..., None], axis=-1)[..., 0]
    v_lo = np.take_along_axis(vm, kk[..., None], axis=-1)[..., 0]
    den = np.where(v_hi > v_lo, v_hi - v_lo, 1.0)
    u = tc[kk - 1] + np.clip((v_hi - s) / den, 0.0, 1.0) * spec.h_t
    u = np.where(k == 0, m, np.where(k == spec.n_t, M, u))
    return np.where(problem.lattice.mask.inside, u, _u0_cells(problem))


def monotonicity_defect(v: np.ndarray, problem: Problem) -> float:
    """Discrete integral of the positive part of ``d v / d t``."""
    inc = np.maximum(np.diff(v, axis=-1), 0.0) * problem.lattice.inside3[..., 1:]
    return float(inc.sum()) * problem.spec.h ** problem.spec.dim


def mid_fraction(v: np.ndarray, problem: Problem, lo: float = 0.1, hi: float = 0.9) -> float:
    """Volume fraction of inside cells with ``lo < v < hi``."""
    ins = problem.lattice.inside3
    return float(np.sum((v > lo) & (v < hi) & ins)) / float(ins.sum())


def _snap_to_jumps(problem: Problem, u: np.ndarray) -> np.ndarray:
    """Values within ``h_t`` of a jump level of the integrand count as on it."""
    out = np.array(u, dtype=float)
    for d in problem.integrand.disc_set:
        out = np.where(np.abs(out - d) <= problem.spec.h_t, d, out)
    return out


def _padded_u(problem: Problem, u: np.ndarray) -> np.ndarray:
    spec = problem.spec
    shape = tuple(n + 2 for n in spec.n_x)
    if callable(problem.u0):
        xs = [spec.origin[d] + (np.arange(n) - 0.5) * spec.h for d, n in enumerate(shape)]
        X = np.meshgrid(*xs, indexing="ij")
        ghost = np.asarray(problem.u0(*X), dtype=float) * np.ones(shape)
    else:
        ghost = np.full(shape, float(problem.u0))
    inner = tuple(slice(1, -1) for _ in range(spec.dim))
    ghost[inner] = np.where(problem.lattice.mask.inside, u, ghost[inner])
    return ghost


def one_sided_gradients(problem: Problem, u: np.ndarray):
    """Forward and backward differences of ``u`` per cell, Dirichlet ghosts from ``u0``."""
    spec = problem.spec
    up = _padded_u(problem, u)
    fwd, bwd = [], []
    for d in range(spec.dim):
        c = [slice(1, -1)] * spec.dim
        p, q = list(c), list(c)
        p[d] = slice(2, None)
        q[d] = slice(0, -2)
        fd = (up[tuple(p)] - up[tuple(c)]) / spec.h
        bd = (up[tuple(c)] - up[tuple(q)]) / spec.h
        if problem.lattice.has_neumann:
            # no difference across Neumann faces
            nm = problem.lattice.neumann_sign[d][..., -1] != 0
            right = [slice(1, None)] * spec.dim
            left = list(right)
            left[d] = slice(0, -1)
            fd[nm[tuple(right)]] = 0.0
            bd[nm[tuple(left)]] = 0.0
        fwd.append(fd)
        bwd.append(bd)
    return np.array(fwd), np.array(bwd)


def primal_energy(u: np.ndarray, problem: Problem) -> float:
    """Midpoint quadrature of ``f(u, grad u)`` over inside cells.

    The gradient is taken one-sided in both directions and the two
    quadratures are averaged, which keeps the rule symmetric under
    reflections of the domain. Values within ``h_t`` of a jump level of ``f``
    are evaluated on the jump level.
    """
    spec = problem.spec
    fwd, bwd = one_sided_gradients(problem, u)
    us = _snap_to_jumps(problem, u)
    integ = problem.integrand
    dens = 0.5 * (integ.f(us, fwd) + integ.f(us, bwd))
    total = float(np.sum(dens * problem.lattice.mask.inside)) * spec.h ** spec.dim
    if problem.lattice.has_neumann and problem.gamma is not None:
        total += _neumann_boundary_energy(problem, u)
    return total


def _neumann_boundary_energy(problem: Problem, u: np.ndarray) -> float:
    lat, spec = problem.lattice, problem.spec
    total = 0.0
    up = _padded_u(problem, u)
    for d in range(lat.dim):
        sign = lat.neumann_sign[d][..., -1]
        for sgn in (1.0, -1.0):
            idx = np.argwhere(sign == sgn)
            cells = idx.copy()
            if sgn < 0:
                cells[:, d] += 1
            vals = up[tuple(cells.T)]
            total += float(np.sum(problem.gamma(vals)))
    return total * spec.h ** (spec.dim - 1)


def _free_face_mask(problem: Problem) -> np.ndarray:
    """Active spatial faces that belong to no constraint node."""
    lat = problem.lattice
    return np.array([lat.active[d] & ~lat.paired_faces[d][..., None] for d in range(lat.dim)])


def _homogeneous_faces(lat) -> np.ndarray:
    """Faces between two inside cells plus the top faces of inside columns, node layout."""
    ins = np.pad(lat.inside3, 1, constant_values=False)
    lo = tuple(slice(0, n) for n in lat.flux_shape[1:])
    out = np.empty(lat.flux_shape, dtype=bool)
    for d in range(lat.dim + 1):
        hi = list(lo)
        hi[d] = slice(1, lat.flux_shape[1 + d] + 1)
        out[d] = ins[lo] & ins[tuple(hi)]
    out[lat.dim][..., -1] = lat.active[lat.dim][..., -1]
    return out


def neumann_term(v: np.ndarray, problem: Problem) -> float:
    """``sum gamma'(t) (v - 1{t <= 0})`` over Neumann faces, weighted by face area."""
    lat, spec = problem.lattice, problem.spec
    if not lat.has_neumann or problem.gamma_prime is None:
        return 0.0
    t = spec.t_centers()
    gp = np.asarray(problem.gamma_prime(t), dtype=float) * np.ones_like(t)
    ref = (t <= 0).astype(float)
    total = 0.0
    for d in range(lat.dim):
        sign = lat.neumann_sign[d][..., -1]
        for sgn in (1.0, -1.0):
            idx = np.argwhere(sign == sgn)
            cells = idx - 1
            if sgn < 0:
                cells[:, d] += 1
            vals = v[tuple(cells.T)]
            total += float(np.sum(gp * (vals - ref)))
    return total * spec.h ** (spec.dim - 1) * spec.h_t


def lifted_energy(v: np.ndarray, problem: Problem, homogeneous: bool = False,
                  tol: float = 1e-9) -> float:
    """Discrete lifted energy ``sup_{sigma in K_h} L(v, sigma)``.

    Each constraint node contributes the perspective ``h_f`` of its gradient
    group. Active faces outside every node carry no constraint, so a nonzero
    gradient there makes the energy infinite. ``homogeneous=True`` drops the
    lateral and bottom boundary faces and puts zero above the top, so the
    energy is linear-in-``v`` inside ``h_f`` and positively one-homogeneous.
    It agrees with the Dirichlet version on indicators that match the datum
    along the lateral boundary.
    """
    lat, spec = problem.lattice, problem.spec
    if homogeneous:
        g = gradient(lat, v, build_ghosts(lat, None)) * _homogeneous_faces(lat)
    else:
        g = gradient(lat, v, problem.ghosts)
    free = _free_face_mask(problem)
    if np.any(np.abs(g[:lat.dim][free]) > tol):
        return np.inf
    q = gather_nodes(g, problem)
    vals = h_f(problem.integrand, problem.t_faces, q, tol=tol)
    total = float(np.sum(vals)) * spec.cell_volume
    if not homogeneous:
        total += neumann_term(v, problem)
    return total


def coarea_check(v: np.ndarray, problem: Problem, n_levels: int = 64,
                 homogeneous: bool = False):
    """Compare ``E(v)`` with the midpoint-rule average of ``E(1{v > s})``.

    Returns ``(lhs, rhs, defect)``. For ``v`` monotone in ``t`` with values
    on the grid ``{j / n_levels}`` the average reproduces ``v`` exactly and
    convexity gives ``lhs <= rhs``.
    """
    lhs = lifted_energy(v, problem, homogeneous)
    s = (np.arange(n_levels) + 0.5) / n_levels
    rhs = float(np.mean([lifted_energy((v > sk).astype(float), problem, homogeneous)
                         for sk in s]))
    defect = lhs - rhs if np.isfinite(lhs) or np.isfinite(rhs) else 0.0
    return lhs, rhs, defect


def lagrangian_value(v: np.ndarray, sigma: np.ndarray, problem: Problem) -> float:
    """``<sigma, grad v> + sum_{Neumann} gamma'(t) (v - 1{t <= 0})``."""
    g = gradient(problem.lattice, v, problem.ghosts)
    return flux_inner(problem.lattice, sigma, g) + neumann_term(v, problem)


def dual_objective(sigma: np.ndarray, problem: Problem) -> float:
    """Flux of ``sigma`` through the lifted boundary datum, ``L(1{t <= u0}, sigma)``.

    For ``u0 = M`` this is ``-sum sigma_t(x, M) h^N``. It equals the dual
    value when ``div sigma = 0``; see ``certified_dual`` for a bound valid
    for every feasible ``sigma``.
    """
    return lagrangian_value(problem.initial_v(), sigma, problem)


def certified_dual(sigma: np.ndarray, problem: Problem) -> float:
    """``min_{0 <= v <= 1} L(v, sigma)``: a lower bound on the discrete energy.

    Valid for any ``sigma`` in the discrete constraint set. Differs from
    ``dual_objective`` by the volume integral of the divergence defect.
    """
    lat = problem.lattice
    zero = lat.zeros_scalar()
    base = lagrangian_value(zero, sigma, problem)
    d = divergence(lat, sigma)
    return base - float(np.sum(np.maximum(d, 0.0))) * lat.spec.cell_volume


def duality_gap(v: np.ndarray, sigma: np.ndarray, problem: Problem, s: float = 0.5) -> float:
    """Primal energy of ``u_s`` minus the certified dual value."""
    return primal_energy(extract_level(v, problem, s), problem) - certified_dual(sigma, problem)


def _interp_columns(vals: np.ndarray, levels: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Linear interpolation of ``vals[c, :]`` (sampled at ``levels``) at ``t[c]``."""
    dl = levels[1] - levels[0]
    pos = np.clip((t - levels[0]) / dl, 0.0, len(levels) - 1.0)
    k = np.minimum(np.floor(pos).astype(int), len(levels) - 2)
    w = pos - k
    rows = np.arange(vals.shape[0])
    return (1 - w) * vals[rows, k] + w * vals[rows, k + 1]


def calibration_residuals(u: np.ndarray, sigma: np.ndarray, problem: Problem) -> dict:
    """Residuals of the calibration conditions along the graph of ``u``.

    ``r1 = |sigma_x - d_z f(u, grad u)|`` and ``r2 = |sigma_t - f*(u, sigma_x)|``
    on cells away from the jump levels of ``f``; ``r3 = |sigma_t(x, d) + f(d, 0)|``
    on plateaus ``|u - d| <= h_t`` larger than four cells. Flux values are
    interpolated linearly from the faces to the graph points. Returns arrays
    (over inside cells) and their area-weighted L1 and L-infinity norms.
    """
    lat, spec, integ = problem.lattice, problem.spec, problem.integrand
    N, nt1 = lat.dim, spec.n_t + 1
    cells = lat.cells
    uc = u[tuple(cells.T)]
    S = sigma.reshape(N + 1, -1, nt1)
    st_cols = S[N][lat.columns]
    strides = [int(np.prod(lat.snode_shape[d + 1:])) for d in range(N)]
    tc = spec.t_centers()
    sx = []
    for d in range(N):
        # average the column's two faces, skipping faces outside every node
        paired = lat.paired_faces[d].ravel()
        right, left = lat.columns, lat.columns - strides[d]
        wr, wl = paired[right].astype(float), paired[left].astype(float)
        none = (wr + wl) == 0
        wr[none], wl[none] = 1.0, 1.0
        avg = ((wr[:, None] * S[d][right] + wl[:, None] * S[d][left])
               / (wr + wl)[:, None])[:, 1:]
        sx.append(_interp_columns(avg, tc, uc) if spec.n_t > 1 else avg[:, 0])
    sx = np.array(sx)
    st = _interp_columns(st_cols, problem.t_faces, uc)

    fwd, bwd = one_sided_gradients(problem, u)
    grad_u = (0.5 * (fwd + bwd))[(slice(None),) + tuple(cells.T)]
    par = integ.parab(uc)
    a = par[0] if par is not None else None
    near_jump = np.zeros(len(uc), bool)
    for d in integ.disc_set:
        near_jump |= np.abs(uc - d) <= spec.h_t
    us = _snap_to_jumps(problem, uc)
    r1 = np.full(len(uc), np.nan)
    r2 = np.full(len(uc), np.nan)
    keep = ~near_jump
    if a is not None:
        dzf = grad_u / (2 * a)
        r1[keep] = np.sqrt(np.sum((sx - dzf) ** 2, axis=0))[keep]
    r2[keep] = np.abs(st - integ.conj(us, sx))[keep]

    r3 = np.full(len(uc), np.nan)
    for d in integ.disc_set:
        plateau = np.abs(uc - d) <= spec.h_t
        if plateau.sum() > 4:
            std = _interp_columns(st_cols, problem.t_faces, np.full(len(uc), d))
            r3[plateau] = np.abs(std + integ.f0(np.array(d)))[plateau]

    area = spec.h ** spec.dim
    out = {}
    for name, r in (("r1", r1), ("r2", r2), ("r3", r3)):
        ok = np.isfinite(r)
        out[name] = r
        out[name + "_l1"] = float(np.sum(r[ok])) * area
        out[name + "_linf"] = float(np.max(r[ok])) if ok.any() else 0.0
    return out
