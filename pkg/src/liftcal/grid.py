"""Staggered lattice on the lifted cylinder Omega x [m, M].

Cell-centred scalar fields ``v`` have shape ``(*n_x, n_t)``. Flux fields are
stored in *node layout*: one array of shape ``(N + 1, *(n + 1 for n in n_x),
n_t + 1)`` whose leading index is the component (spatial axes first, ``t``
last). Node ``I`` of component ``d`` is the face between padded cells ``I``
and ``I + e_d``, where the padded array carries one ghost layer on every side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage


class DomainError(ValueError):
    """Invalid domain descriptor or grid parameters."""


@dataclass(frozen=True)
class GridSpec:
    """Box discretisation: ``n_x`` cells per spatial axis, ``n_t`` layers in t."""

    n_x: tuple[int, ...]
    n_t: int
    h: float
    h_t: float
    origin: tuple[float, ...]
    t_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if len(self.n_x) not in (1, 2):
            raise DomainError("only 1 or 2 spatial dimensions are supported")
        if min(self.n_x) < 1 or self.n_t < 1:
            raise DomainError("cell counts must be positive")
        if not (self.h > 0 and self.h_t > 0):
            raise DomainError("mesh sizes must be positive")
        m, M = self.t_range
        if not M > m:
            raise DomainError("empty t-range")
        if abs(self.n_t * self.h_t - (M - m)) > 1e-9 * (M - m):
            raise DomainError("n_t * h_t must equal M - m")

    @property
    def dim(self) -> int:
        return len(self.n_x)

    @property
    def meshes(self) -> tuple[float, ...]:
        return (self.h,) * self.dim + (self.h_t,)

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim * self.h_t

    def cell_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.n_x[axis]) + 0.5) * self.h

    def t_centers(self) -> np.ndarray:
        return self.t_range[0] + (np.arange(self.n_t) + 0.5) * self.h_t

    def t_faces(self) -> np.ndarray:
        """t-levels of the horizontal faces, ``m`` to ``M`` inclusive."""
        return self.t_range[0] + np.arange(self.n_t + 1) * self.h_t


def box_grid(lengths: Sequence[float], h: float, n_t: int | None = None,
             origin: Sequence[float] | None = None,
             t_range: tuple[float, float] = (0.0, 1.0),
             h_t: float | None = None) -> GridSpec:
    """GridSpec for the box ``prod [origin, origin + length]`` with mesh ``h``.

    The vertical resolution is given either as ``n_t`` or as a target ``h_t``
    (rounded to divide ``M - m``); the default is ``h_t = h``.
    """
    lengths = tuple(float(x) for x in lengths)
    if not h > 0 or (h_t is not None and not h_t > 0):
        raise DomainError("mesh sizes must be positive")
    if n_t is not None and n_t < 1:
        raise DomainError("cell counts must be positive")
    n_x = tuple(int(round(L / h)) for L in lengths)
    if any(abs(n * h - L) > 1e-9 * L for n, L in zip(n_x, lengths)):
        raise DomainError("box lengths must be multiples of h")
    span = t_range[1] - t_range[0]
    if n_t is None:
        n_t = max(1, int(round(span / (h_t if h_t else h))))
    origin = tuple(origin) if origin is not None else (0.0,) * len(n_x)
    return GridSpec(n_x, int(n_t), float(h), span / n_t, origin, tuple(t_range))


@dataclass(frozen=True)
class DomainMask:
    """Inside cells and the Neumann part of the lateral boundary.

    ``neumann`` is ``None`` (all of the lateral boundary is Dirichlet) or a
    boolean array per spatial axis in spatial node layout marking the faces
    that belong to the Neumann part.
    """

    inside: np.ndarray
    neumann: tuple[np.ndarray, ...] | None = None


def _check_mask(inside: np.ndarray) -> None:
    if not inside.any():
        raise DomainError("domain mask is empty")
    conn = ndimage.generate_binary_structure(inside.ndim, 1)
    _, n_in = ndimage.label(inside, structure=conn)
    if n_in != 1:
        raise DomainError("domain mask is disconnected")
    if inside.ndim == 1:
        return
    outside = np.pad(~inside, 1, constant_values=True)
    _, n_out = ndimage.label(outside, structure=conn)
    if n_out != 1:
        raise DomainError("domain mask has holes")


def make_mask(spec: GridSpec, shape: str | np.ndarray = "rectangle", *,
              center: Sequence[float] | None = None, radius: float | None = None,
              neumann_sides: Sequence[str] = ()) -> DomainMask:
    """Build the inside mask for ``shape`` in {"rectangle", "disc"} or an array.

    ``neumann_sides`` names box sides such as ``"x-"`` or ``"y+"``; faces of
    inside cells on those sides carry the Neumann condition.
    """
    if isinstance(shape, np.ndarray):
        inside = np.asarray(shape, dtype=bool)
        if inside.shape != spec.n_x:
            raise DomainError(f"mask shape {inside.shape} != grid {spec.n_x}")
    elif shape == "rectangle":
        inside = np.ones(spec.n_x, dtype=bool)
    elif shape == "disc":
        if center is None or radius is None:
            raise DomainError("disc needs center and radius")
        lo = np.asarray(spec.origin)
        hi = lo + np.asarray(spec.n_x) * spec.h
        c = np.asarray(center, dtype=float)
        if np.any(c - radius < lo - 1e-12) or np.any(c + radius > hi + 1e-12):
            raise DomainError("disc does not fit inside the bounding box")
        mesh = np.meshgrid(*(spec.cell_centers(d) for d in range(spec.dim)), indexing="ij")
        r2 = sum((X - ci) ** 2 for X, ci in zip(mesh, c))
        inside = r2 < radius ** 2
    else:
        raise DomainError(f"unknown shape {shape!r}")
    _check_mask(inside)

    neumann = None
    if neumann_sides:
        node_shape = tuple(n + 1 for n in spec.n_x)
        neumann = tuple(np.zeros(node_shape, dtype=bool) for _ in range(spec.dim))
        names = "xy"
        for side in neumann_sides:
            d, sgn = names.index(side[0]), side[1]
            if d >= spec.dim or sgn not in "+-":
                raise DomainError(f"bad side {side!r}")
            idx = [slice(None)] * spec.dim
            idx[d] = 0 if sgn == "-" else spec.n_x[d]
            neumann[d][tuple(idx)] = True
    return DomainMask(inside, neumann)


@dataclass
class Lattice:
    """Grid, mask and every index set the operators need, precomputed once.

    ``pairing`` selects how each spatial face is grouped with a vertical face
    for the pointwise constraint: ``"outward"`` pairs a face with the adjacent
    column closer to the boundary (forward pairing left of the domain centre,
    backward pairing right of it), ``"forward"`` and ``"backward"`` use one
    direction everywhere.
    """

    spec: GridSpec
    mask: DomainMask
    pairing: str = "outward"
    active: np.ndarray = field(init=False, repr=False)
    neumann_sign: np.ndarray = field(init=False, repr=False)
    columns: np.ndarray = field(init=False, repr=False)
    pairs: tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        spec, N = self.spec, self.spec.dim
        if self.pairing not in ("outward", "forward", "backward"):
            raise DomainError(f"unknown pairing {self.pairing!r}")
        self.node_shape = tuple(n + 1 for n in spec.n_x) + (spec.n_t + 1,)
        self.snode_shape = self.node_shape[:-1]
        inside_p = np.pad(self.mask.inside, 1, constant_values=False)
        self.inside_padded = inside_p
        self.inside3 = np.broadcast_to(self.mask.inside[..., None], spec.n_x + (spec.n_t,))

        active = np.zeros((N + 1,) + self.node_shape, dtype=bool)
        nsign = np.zeros((N,) + self.node_shape)
        lo_all = tuple(slice(0, n + 1) for n in spec.n_x)
        for d in range(N):
            lo = inside_p[lo_all]
            hi_idx = list(lo_all)
            hi_idx[d] = slice(1, spec.n_x[d] + 2)
            hi = inside_p[tuple(hi_idx)]
            face = lo | hi
            if self.mask.neumann is not None:
                nm = self.mask.neumann[d] & (lo ^ hi)
                face &= ~nm
                # outward normal is +e_d when the inside cell is the lower one
                nsign[d][nm & lo] = 1.0
                nsign[d][nm & hi] = -1.0
            active[d][..., 1:] = face[..., None]
            active[d][..., 0] = False
        active[N] = inside_p[lo_all][..., None]
        self.active = active
        self.neumann_sign = nsign
        self.has_neumann = bool(np.any(nsign != 0))

        # inside columns as flat indices into the spatial node grid
        cells = np.argwhere(self.mask.inside)
        self.cells = cells
        self.columns = np.ravel_multi_index(tuple((cells + 1).T), self.snode_shape)
        strides = np.array([int(np.prod(self.snode_shape[d + 1:])) for d in range(N)])
        centre = self._pairing_centre()
        pairs = []
        for d in range(N):
            i = cells[:, d]
            if self.pairing == "forward":
                fwd, bwd = np.ones(len(i), bool), np.zeros(len(i), bool)
            elif self.pairing == "backward":
                fwd, bwd = np.zeros(len(i), bool), np.ones(len(i), bool)
            else:
                fwd, bwd = i < centre[d], i > centre[d]
            p = np.full(len(i), -1, dtype=np.int64)
            p[fwd] = self.columns[fwd]
            p[bwd] = self.columns[bwd] - strides[d]
            # faces that are inactive in every layer (Neumann) are not paired
            valid = p >= 0
            act_d = active[d].reshape(-1, spec.n_t + 1)[:, -1]
            valid[valid] &= act_d[p[valid]]
            p[~valid] = -1
            pairs.append(p)
        self.pairs = tuple(pairs)

        # the same pairing as boolean masks on the spatial node grid
        n_sn = int(np.prod(self.snode_shape))
        self.col_nodes = inside_p[lo_all]
        self.fwd, self.bwd, self.paired_faces = [], [], []
        for d, p in enumerate(pairs):
            fw = np.zeros(n_sn, bool)
            bw = np.zeros(n_sn, bool)
            pf = np.zeros(n_sn, bool)
            fw[self.columns[p == self.columns]] = True
            bw[self.columns[(p >= 0) & (p != self.columns)]] = True
            pf[p[p >= 0]] = True
            self.fwd.append(fw.reshape(self.snode_shape))
            self.bwd.append(bw.reshape(self.snode_shape))
            self.paired_faces.append(pf.reshape(self.snode_shape))
        # float versions broadcasting over t, for masked arithmetic
        self.col_f = self.col_nodes[..., None].astype(float)
        self.fwd_f = [m[..., None].astype(float) for m in self.fwd]
        self.bwd_f = [m[..., None].astype(float) for m in self.bwd]

    def _pairing_centre(self) -> np.ndarray:
        """Index of the column that receives no spatial face along each axis."""
        cells = self.cells
        return np.array([(cells[:, d].min() + cells[:, d].max() + 1) // 2
                         for d in range(self.spec.dim)])

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def flux_shape(self) -> tuple[int, ...]:
        return (self.dim + 1,) + self.node_shape

    def zeros_flux(self) -> np.ndarray:
        return np.zeros(self.flux_shape)

    def zeros_scalar(self) -> np.ndarray:
        return np.zeros(self.spec.n_x + (self.spec.n_t,))

    @property
    def n_inside(self) -> int:
        return int(self.mask.inside.sum()) * self.spec.n_t

    @property
    def area(self) -> float:
        return float(self.mask.inside.sum()) * self.spec.h ** self.dim


def make_grid(spec: GridSpec, shape: str | np.ndarray = "rectangle", *,
              pairing: str = "outward", **shape_kw) -> Lattice:
    """Validate the domain descriptor and build the lattice."""
    return Lattice(spec, make_mask(spec, shape, **shape_kw), pairing)


def build_ghosts(lat: Lattice, u0: float | Callable[..., np.ndarray] | None) -> np.ndarray:
    """Padded array of ghost values for the lifted variable.

    Lateral ghosts outside the domain hold ``1{t <= u0(x)}``, the bottom layer
    holds 1 and the top layer 0. ``u0=None`` gives homogeneous (all-zero)
    ghosts, which is the setting in which ``divergence`` is the negative
    adjoint of ``gradient``.
    """
    spec = lat.spec
    shape = tuple(n + 2 for n in spec.n_x) + (spec.n_t + 2,)
    g = np.zeros(shape)
    if u0 is None:
        return g
    t = spec.t_centers()
    if callable(u0):
        xs = [spec.origin[d] + (np.arange(spec.n_x[d] + 2) - 0.5) * spec.h for d in range(spec.dim)]
        X = np.meshgrid(*xs, indexing="ij")
        u = np.asarray(u0(*X), dtype=float) * np.ones(shape[:-1])
    else:
        u = np.full(shape[:-1], float(u0))
    g[..., 1:-1] = (t <= u[..., None] + 1e-12).astype(float)
    g[..., 0] = 1.0
    g[..., -1] = 0.0
    return g


def pad(lat: Lattice, v: np.ndarray, ghosts: np.ndarray) -> np.ndarray:
    """Embed ``v`` (inside cells) into the ghost array."""
    vp = ghosts.copy()
    inner = tuple(slice(1, -1) for _ in range(lat.dim + 1))
    np.copyto(vp[inner], v, where=lat.inside3)
    return vp


def gradient(lat: Lattice, v: np.ndarray, ghosts: np.ndarray | None = None) -> np.ndarray:
    """Forward differences on active faces, in node layout."""
    spec = lat.spec
    if ghosts is None:
        ghosts = build_ghosts(lat, None)
    vp = pad(lat, v, ghosts)
    g = np.empty(lat.flux_shape)
    base = [slice(0, n + 1) for n in spec.n_x] + [slice(0, spec.n_t + 1)]
    for d, mesh in enumerate(spec.meshes):
        hi = list(base)
        hi[d] = slice(1, base[d].stop + 1)
        np.subtract(vp[tuple(hi)], vp[tuple(base)], out=g[d])
        g[d] *= 1.0 / mesh
    g *= lat.active
    return g


def divergence(lat: Lattice, sigma: np.ndarray) -> np.ndarray:
    """Backward differences of node-layout fluxes onto inside cells.

    With homogeneous ghosts this is exactly ``-gradient^T`` in the weighted
    inner products ``<.,.>`` (cell volume on both sides).
    """
    spec = lat.spec
    out = np.zeros(spec.n_x + (spec.n_t,))
    inner = [slice(1, n + 1) for n in spec.n_x] + [slice(1, spec.n_t + 1)]
    for d, mesh in enumerate(spec.meshes):
        lo = list(inner)
        lo[d] = slice(0, inner[d].stop - 1)
        out += (sigma[d][tuple(inner)] - sigma[d][tuple(lo)]) / mesh
    out *= lat.inside3
    return out


def operator_norm_bound(spec: GridSpec) -> float:
    """Upper bound ``2 sqrt(sum 1/mesh^2)`` on the norm of the gradient."""
    return 2.0 * float(np.sqrt(sum(1.0 / m ** 2 for m in spec.meshes)))


def scalar_inner(lat: Lattice, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(a * b * lat.inside3)) * lat.spec.cell_volume


def flux_inner(lat: Lattice, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(a * b * lat.active)) * lat.spec.cell_volume
