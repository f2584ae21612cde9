"""Discrete Laplacian ``div grad`` on the lifted lattice and its inverse.

The lateral boundary is homogeneous Dirichlet (zero ghosts) on the Dirichlet
part and zero-flux on the Neumann part. The bottom and top slabs are either
mirror (``slab="neumann"``) or zero-ghost (``slab="dirichlet"``). The latter
is exactly ``-grad^T grad`` for the lattice gradient, which is the metric the
preconditioned primal-dual iteration needs.

The direct solver diagonalises the t-direction with a DCT-II or DST-I and
solves one sparse spatial system per t-mode with a cached LU factorisation.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, splu

from .grid import Lattice, build_ghosts, divergence, gradient


class PoissonConvergenceError(RuntimeError):
    """Residual above tolerance after the solve."""


def _slab_active(lat: Lattice, slab: str) -> np.ndarray:
    act = lat.active.copy()
    if slab == "neumann":
        act[lat.dim][..., 0] = False
        act[lat.dim][..., -1] = False
    elif slab != "dirichlet":
        raise ValueError(f"unknown slab condition {slab!r}")
    return act


def apply_laplacian(lat: Lattice, w: np.ndarray, slab: str = "neumann") -> np.ndarray:
    """``div grad w`` with homogeneous boundary data."""
    g = gradient(lat, w, build_ghosts(lat, None))
    if slab == "neumann":
        g[lat.dim][..., 0] = 0.0
        g[lat.dim][..., -1] = 0.0
    elif slab != "dirichlet":
        raise ValueError(f"unknown slab condition {slab!r}")
    return divergence(lat, g)


def _t_spectrum(n: int, h_t: float, slab: str) -> np.ndarray:
    if slab == "neumann":
        k = np.arange(n)
        return -(4 / h_t ** 2) * np.sin(np.pi * k / (2 * n)) ** 2
    k = np.arange(1, n + 1)
    return -(4 / h_t ** 2) * np.sin(np.pi * k / (2 * (n + 1))) ** 2


def spatial_laplacian(lat: Lattice) -> sp.csc_matrix:
    """Sparse spatial Laplacian on inside columns (row order of ``lat.cells``)."""
    spec = lat.spec
    n_cols = len(lat.cells)
    index = -np.ones(spec.n_x, dtype=np.int64)
    index[tuple(lat.cells.T)] = np.arange(n_cols)
    rows, cols, vals = [], [], []
    diag = np.zeros(n_cols)
    ih2 = 1.0 / spec.h ** 2
    for d in range(lat.dim):
        # face activity between padded cells I and I + e_d, spatial node layout
        act = lat.active[d][..., -1]
        for step in (-1, 1):
            nb = lat.cells.copy()
            nb[:, d] += step
            # face slot (node index) between the cell and its neighbour
            slot = lat.cells + 1
            if step < 0:
                slot = slot.copy()
                slot[:, d] -= 1
            has_face = act[tuple(slot.T)]
            diag -= ih2 * has_face
            in_box = (nb[:, d] >= 0) & (nb[:, d] < spec.n_x[d])
            j = np.full(n_cols, -1, dtype=np.int64)
            j[in_box] = index[tuple(nb[in_box].T)]
            link = has_face & (j >= 0)
            rows.append(np.nonzero(link)[0])
            cols.append(j[link])
            vals.append(np.full(link.sum(), ih2))
    rows.append(np.arange(n_cols))
    cols.append(np.arange(n_cols))
    vals.append(diag)
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_cols, n_cols))
    return A.tocsc()


def _dirichlet_spectrum(n: int, h: float) -> np.ndarray:
    k = np.arange(1, n + 1)
    return -(4 / h ** 2) * np.sin(np.pi * k / (2 * (n + 1))) ** 2


class LaplaceSolver:
    """Cached direct solver for ``div grad w = rhs`` on one lattice.

    Full boxes with a Dirichlet lateral boundary are diagonalised by sine
    transforms in every direction. Other masks transform in ``t`` only and
    factor one sparse spatial system per t-mode. ``spectral=False`` forces
    the factorised route.
    """

    def __init__(self, lat: Lattice, slab: str = "neumann", spectral: bool | None = None):
        if slab not in ("neumann", "dirichlet"):
            raise ValueError(f"unknown slab condition {slab!r}")
        self.lat, self.slab = lat, slab
        spec = lat.spec
        self.mu = _t_spectrum(spec.n_t, spec.h_t, slab)
        box = bool(lat.mask.inside.all()) and not lat.has_neumann
        if spectral and not box:
            raise ValueError("the spectral route needs a full box without Neumann faces")
        self.spectral = box if spectral is None else bool(spectral)
        self.singular = False
        if self.spectral:
            ndim = lat.dim + 1
            eig = self.mu.reshape((1,) * lat.dim + (-1,))
            for d in range(lat.dim):
                shape = [1] * ndim
                shape[d] = spec.n_x[d]
                eig = eig + _dirichlet_spectrum(spec.n_x[d], spec.h).reshape(shape)
            self.eig = eig
            return
        A = spatial_laplacian(lat)
        eye = sp.identity(A.shape[0], format="csc")
        # all-Neumann lateral boundary with mirror slabs: constants are in the kernel
        self.singular = slab == "neumann" and not np.any(np.asarray(A.sum(axis=1)) < -1e-12)
        self._lu = [None if (self.singular and k == 0) else
                    splu((A + mu * eye).tocsc(), permc_spec="MMD_AT_PLUS_A",
                         options=dict(SymmetricMode=True))
                    for k, mu in enumerate(self.mu)]

    def _forward_t(self, x):
        if self.slab == "neumann":
            return sfft.dct(x, type=2, axis=-1, norm="ortho")
        return sfft.dst(x, type=1, axis=-1, norm="ortho")

    def _inverse_t(self, x):
        if self.slab == "neumann":
            return sfft.idct(x, type=2, axis=-1, norm="ortho")
        return sfft.idst(x, type=1, axis=-1, norm="ortho")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        lat = self.lat
        if self.spectral:
            axes = tuple(range(lat.dim))
            r = self._forward_t(sfft.dstn(rhs, type=1, axes=axes, norm="ortho"))
            return sfft.idstn(self._inverse_t(r / self.eig), type=1, axes=axes, norm="ortho")
        cols = tuple(lat.cells.T)
        r = self._forward_t(rhs[cols])
        w = np.empty_like(r)
        for k, lu in enumerate(self._lu):
            w[:, k] = lu.solve(r[:, k]) if lu is not None else 0.0
        out = lat.zeros_scalar()
        out[cols] = self._inverse_t(w)
        return out


def _cg_solve(lat: Lattice, rhs: np.ndarray, slab: str, tol: float) -> np.ndarray:
    cols = tuple(lat.cells.T)
    shape = (len(lat.cells), lat.spec.n_t)
    n = shape[0] * shape[1]

    def matvec(x):
        w = lat.zeros_scalar()
        w[cols] = x.reshape(shape)
        return -apply_laplacian(lat, w, slab)[cols].ravel()

    # Jacobi preconditioner from the diagonal of the operator
    spec = lat.spec
    A = spatial_laplacian(lat)
    dt = np.full(spec.n_t, 2.0 / spec.h_t ** 2)
    if slab == "neumann":
        dt[0] -= 1.0 / spec.h_t ** 2
        dt[-1] -= 1.0 / spec.h_t ** 2
    diag = (-A.diagonal())[:, None] + dt[None, :]
    M = LinearOperator((n, n), matvec=lambda x: x / diag.ravel())
    op = LinearOperator((n, n), matvec=matvec)
    b = -rhs[cols].ravel()
    maxiter = int(10 * np.sqrt(n)) + 10
    x, info = cg(op, b, rtol=tol, atol=0.0, maxiter=maxiter, M=M)
    out = lat.zeros_scalar()
    out[cols] = x.reshape(shape)
    return out


def solve_dn_laplacian(rhs: np.ndarray, lat: Lattice, *, slab: str = "neumann",
                       method: str = "direct", tol: float = 1e-8,
                       solver: LaplaceSolver | None = None) -> np.ndarray:
    """Solve ``div grad w = rhs`` on inside cells and check the residual.

    ``method`` is ``"direct"`` (separable transform plus sparse LU) or
    ``"cg"`` (Jacobi-preconditioned conjugate gradients, capped at
    ``10 sqrt(cells)`` iterations). Raises ``PoissonConvergenceError`` if the
    relative residual exceeds ``tol``.
    """
    if method == "direct":
        w = (solver or LaplaceSolver(lat, slab)).solve(rhs)
    elif method == "cg":
        w = _cg_solve(lat, rhs, slab, tol * 1e-2)
    else:
        raise ValueError(f"unknown method {method!r}")
    res = apply_laplacian(lat, w, slab) - rhs * lat.inside3
    rel = np.linalg.norm(res) / max(np.linalg.norm(rhs * lat.inside3), 1e-300)
    if rel > tol:
        raise PoissonConvergenceError(f"relative residual {rel:.3e} > {tol:.1e}")
    return w
