"""Integrands, their convex conjugates and the lifted problem description."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import GridSpec, Lattice, box_grid, build_ghosts, make_grid


class ProblemError(ValueError):
    """Invalid problem parameters."""


class Integrand:
    """``f(t, z)`` convex in ``z``, possibly discontinuous in ``t``.

    Subclasses whose conjugate is ``a(t)|z*|^2 + c(t)`` expose it through
    ``parab``; the projection onto the constraint set is then exact.
    """

    name = "generic"
    disc_set: tuple[float, ...] = ()
    slope_bound: float | None = None

    def f(self, t, z):
        raise NotImplementedError

    def conj(self, t, zs):
        """Convex conjugate in ``z``; ``zs`` has the spatial axis first."""
        raise NotImplementedError

    def parab(self, t):
        """``(a, c)`` arrays with ``conj(t, zs) = a|zs|^2 + c``, or ``None``."""
        return None

    def f0(self, t):
        """``f(t, 0)``."""
        t = np.asarray(t, dtype=float)
        return self.f(t, np.zeros((1,) + t.shape))


def _sq(z):
    z = np.asarray(z, dtype=float)
    return np.sum(z * z, axis=0)


@dataclass
class AltCaffarelli(Integrand):
    """``1/2 |z|^2 + lam 1{t > 0}``."""

    lam: float
    name = "alt_caffarelli"
    disc_set = (0.0,)

    def __post_init__(self):
        if not self.lam > 0:
            raise ProblemError("lambda must be positive")

    @property
    def slope_bound(self):
        return float(np.sqrt(2 * self.lam))

    def f(self, t, z):
        return 0.5 * _sq(z) + self.lam * (np.asarray(t) > 0)

    def conj(self, t, zs):
        return 0.5 * _sq(zs) - self.lam * (np.asarray(t) > 0)

    def parab(self, t):
        t = np.asarray(t, dtype=float)
        return np.full(t.shape, 0.5), np.where(t > 0, -self.lam, 0.0)


@dataclass
class QuadraticConvex(Integrand):
    """``1/2 |z|^2 + 1/2 t^2``; used as a convex control case."""

    name = "quadratic_convex"
    slope_bound = 1.0

    def f(self, t, z):
        return 0.5 * _sq(z) + 0.5 * np.asarray(t, dtype=float) ** 2

    def conj(self, t, zs):
        return 0.5 * _sq(zs) - 0.5 * np.asarray(t, dtype=float) ** 2

    def parab(self, t):
        t = np.asarray(t, dtype=float)
        return np.full(t.shape, 0.5), -0.5 * t ** 2


@dataclass
class TwoWell(Integrand):
    """``eps |z|^2 + W(t) - lam t`` with ``W(t) = t^2 (1 - t)^2``."""

    eps: float = 0.1
    lam: float = 0.0
    name = "two_well"

    def __post_init__(self):
        if not self.eps > 0:
            raise ProblemError("eps must be positive")

    def _pot(self, t):
        t = np.asarray(t, dtype=float)
        return t ** 2 * (1 - t) ** 2 - self.lam * t

    def f(self, t, z):
        return self.eps * _sq(z) + self._pot(t)

    def conj(self, t, zs):
        return _sq(zs) / (4 * self.eps) - self._pot(t)

    def parab(self, t):
        t = np.asarray(t, dtype=float)
        return np.full(t.shape, 1 / (4 * self.eps)), -self._pot(t)


def make_integrand(name: str, **params) -> Integrand:
    if name == "alt_caffarelli":
        return AltCaffarelli(float(params.get("lam", params.get("lambda", 1.0))))
    if name == "quadratic_convex":
        return QuadraticConvex()
    if name == "two_well":
        return TwoWell(float(params.get("eps", 0.1)), float(params.get("lam", 0.0)))
    raise ProblemError(f"unknown integrand {name!r}")


@dataclass
class GenericConstraint:
    """Membership test for ``{q_t >= conj(t, q_x)}`` without a closed-form projector."""

    integrand: Integrand
    t: np.ndarray

    def contains(self, q, tol=0.0):
        return q[-1] >= self.integrand.conj(self.t, q[:-1]) - tol


def constraint_params(integrand: Integrand, t):
    """Parameters ``(a, c)`` of the paraboloid at levels ``t`` or a generic handle."""
    p = integrand.parab(t)
    if p is None:
        return GenericConstraint(integrand, np.asarray(t, dtype=float))
    return p


def h_f(integrand: Integrand, t, q, tol: float = 0.0):
    """Perspective ``-q_t f(t, -q_x / q_t)`` of the integrand.

    ``q`` has components on the first axis (spatial, then t). Returns
    ``+inf`` where ``q_t > 0`` or where ``q_t = 0`` and ``q_x != 0``.
    Components within ``tol`` of zero count as zero; the default keeps the
    map exactly one-homogeneous.
    """
    q = np.asarray(q, dtype=float)
    qx, qt = q[:-1], q[-1]
    t = np.broadcast_to(np.asarray(t, dtype=float), qt.shape)
    out = np.full(qt.shape, np.inf)
    neg = qt < -tol
    if np.any(neg):
        s = -qt[neg]
        out[neg] = s * integrand.f(t[neg], qx[:, neg] / s)
    zero = ~neg & (qt <= tol) & (np.sqrt(_sq(qx)) <= tol)
    out[zero] = 0.0
    return out


@dataclass
class Problem:
    """Lifted problem: integrand on ``Omega x [m, M]`` with boundary data.

    ``u0`` is the Dirichlet datum (a constant or a function of the spatial
    coordinates). ``gamma`` is the boundary integrand on the Neumann part of
    the lateral boundary and ``gamma_prime`` its derivative.
    """

    integrand: Integrand
    lattice: Lattice
    u0: float | Callable[..., np.ndarray] = 1.0
    gamma_prime: Callable[[np.ndarray], np.ndarray] | None = None
    gamma: Callable[[np.ndarray], np.ndarray] | None = None
    ghosts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.ghosts = build_ghosts(self.lattice, self.u0)
        spec = self.lattice.spec
        self.t_faces = spec.t_faces()
        a, c = self._parab()
        self.parab_a, self.parab_c = a, c
        self.neumann_flux = self._neumann_flux()

    @property
    def spec(self) -> GridSpec:
        return self.lattice.spec

    @property
    def bounds(self) -> tuple[float, float]:
        return self.spec.t_range

    def _parab(self):
        p = constraint_params(self.integrand, self.t_faces)
        if isinstance(p, GenericConstraint):
            return None, None
        return p

    def _neumann_flux(self) -> np.ndarray | None:
        """Prescribed ``sigma . nu = -gamma'(t)`` on Neumann faces, node layout."""
        lat = self.lattice
        if not lat.has_neumann:
            return None
        gp = self.gamma_prime
        t = self.spec.t_centers()
        vals = np.zeros(self.spec.n_t + 1)
        if gp is not None:
            vals[1:] = np.asarray(gp(t), dtype=float) * np.ones_like(t)
        flux = np.zeros((lat.dim,) + lat.node_shape)
        flux[:] = -lat.neumann_sign * vals
        return flux

    def with_lambda(self, lam: float) -> "Problem":
        return Problem(AltCaffarelli(lam), self.lattice, self.u0, self.gamma_prime, self.gamma)

    def initial_v(self) -> np.ndarray:
        """``1{t <= u0}`` on the inside cells."""
        spec = self.spec
        if callable(self.u0):
            X = np.meshgrid(*(spec.cell_centers(d) for d in range(spec.dim)), indexing="ij")
            u = np.asarray(self.u0(*X), dtype=float) * np.ones(spec.n_x)
        else:
            u = np.full(spec.n_x, float(self.u0))
        v = (spec.t_centers() <= u[..., None] + 1e-12).astype(float)
        return v * self.lattice.inside3


def auto_n_t(integrand: Integrand, h: float, t_range=(0.0, 1.0)) -> int:
    """Layer count with ``h_t`` close to ``slope_bound * h``.

    Lifted indicators of graphs are represented without smearing when the
    graph moves at most one layer per column, so the vertical mesh follows the
    gradient bound of minimisers when the integrand provides one.
    """
    span = t_range[1] - t_range[0]
    G = integrand.slope_bound or 1.0
    n_cells = int(round(span / h))
    return int(min(max(2, round(span / (G * h))), max(n_cells, 2)))


def alt_caffarelli_problem(lam: float, *, shape: str = "interval", a: float = 2.0,
                           h: float = 1 / 128, n_t: int | None = None,
                           pairing: str | None = None, symmetry: str = "none",
                           radius: float = 1.0) -> Problem:
    """Convenience constructor for the benchmark geometries with ``u0 = 1``.

    ``shape`` is ``"interval"`` for ``(0, a)``, ``"square"`` for ``(-1, 1)^2``
    or ``"disc"`` for the disc of radius ``radius`` centred at the origin.
    ``symmetry="quarter"`` keeps only the quadrant ``x, y > 0`` of the square
    or disc, with zero-flux Neumann faces on the symmetry planes; energies
    are then a quarter of the full-domain values.
    """
    integ = AltCaffarelli(lam)
    nt = n_t or auto_n_t(integ, h)
    quarter = symmetry == "quarter"
    if symmetry not in ("none", "quarter"):
        raise ProblemError(f"unknown symmetry {symmetry!r}")
    if quarter and shape == "interval":
        raise ProblemError("quarter symmetry needs a two-dimensional shape")
    pairing = pairing or ("backward" if quarter else "outward")
    if shape == "interval":
        lat = make_grid(box_grid((a,), h, nt), "rectangle", pairing=pairing)
    elif shape in ("square", "disc"):
        R = 1.0 if shape == "square" else float(radius)
        side, origin = (R, (0.0, 0.0)) if quarter else (2 * R, (-R, -R))
        spec = box_grid((side, side), h, nt, origin=origin)
        kw = dict(neumann_sides=("x-", "y-")) if quarter else {}
        if shape == "disc":
            kw.update(center=(0.0, 0.0) if not quarter else None, radius=R)
            if quarter:
                X, Y = np.meshgrid(spec.cell_centers(0), spec.cell_centers(1), indexing="ij")
                lat = make_grid(spec, X ** 2 + Y ** 2 < R ** 2, pairing=pairing,
                                neumann_sides=("x-", "y-"))
            else:
                lat = make_grid(spec, "disc", pairing=pairing, **kw)
        else:
            lat = make_grid(spec, "rectangle", pairing=pairing, **kw)
    else:
        raise ProblemError(f"unknown shape {shape!r}")
    return Problem(integ, lat, 1.0)
