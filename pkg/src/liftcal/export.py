"""Field tables, PGM images and streamlines of the flux."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .problem import Problem

AXES = "xy"


def cell_coordinates(problem: Problem) -> list[np.ndarray]:
    spec = problem.spec
    return [spec.cell_centers(d) for d in range(spec.dim)] + [spec.t_centers()]


def flux_at_cells(sigma: np.ndarray, problem: Problem) -> np.ndarray:
    """Average each flux component over the two faces bounding a cell along its axis."""
    lat, spec = problem.lattice, problem.spec
    N = lat.dim
    inner = [slice(1, n + 1) for n in spec.n_x] + [slice(1, spec.n_t + 1)]
    out = np.empty((N + 1,) + spec.n_x + (spec.n_t,))
    for d in range(N + 1):
        lo = list(inner)
        lo[d] = slice(0, inner[d].stop - 1)
        out[d] = 0.5 * (sigma[d][tuple(inner)] + sigma[d][tuple(lo)])
    return out * lat.inside3


def write_field_csv(path, values: np.ndarray, problem: Problem) -> int:
    """Write ``x[,y],t,value`` rows for the inside cells at 17 significant digits."""
    coords = np.meshgrid(*cell_coordinates(problem), indexing="ij")
    ins = problem.lattice.inside3
    cols = [c[ins] for c in coords] + [values[ins]]
    names = list(AXES[:problem.spec.dim]) + ["t", "value"]
    np.savetxt(path, np.column_stack(cols), delimiter=",", fmt="%.17g",
               header=",".join(names), comments="")
    return int(ins.sum())


def read_field_csv(path, problem: Problem) -> np.ndarray:
    """Inverse of ``write_field_csv`` on the same lattice."""
    data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
    spec = problem.spec
    out = problem.lattice.zeros_scalar()
    idx = []
    for d in range(spec.dim):
        idx.append(np.rint((data[:, d] - spec.origin[d]) / spec.h - 0.5).astype(int))
    idx.append(np.rint((data[:, spec.dim] - spec.t_range[0]) / spec.h_t - 0.5).astype(int))
    out[tuple(idx)] = data[:, -1]
    return out


def write_pgm(path, image: np.ndarray) -> tuple[float, float]:
    """Binary 8-bit PGM with the value range in a ``.json`` sidecar.

    Rows of the image run along the first array axis reversed, so that the
    last axis (``t`` or ``y``) points up.
    """
    img = np.asarray(image, dtype=float)
    finite = np.isfinite(img)
    lo = float(img[finite].min()) if finite.any() else 0.0
    hi = float(img[finite].max()) if finite.any() else 0.0
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    data = np.clip(np.rint((np.where(finite, img, lo) - lo) * scale), 0, 255).astype(np.uint8)
    data = data.T[::-1]
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())
    path.with_suffix(".json").write_text(json.dumps({"min": lo, "max": hi}))
    return lo, hi


def read_pgm(path) -> np.ndarray:
    """Pixel array of a P5 file, in file row order."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][:w * h], dtype=np.uint8).reshape(h, w)


def streamlines(sigma: np.ndarray, problem: Problem, n_seeds: int = 32, seed: int = 0,
                step: float | None = None, max_steps: int = 2000) -> list[np.ndarray]:
    """Trace unit-speed streamlines of the cell-averaged flux with midpoint (RK2) steps.

    Seeds are drawn uniformly in the bounding box of the lattice from a
    generator seeded with ``seed``. A line stops when it leaves the box or
    meets a vanishing field.
    """
    spec = problem.spec
    coords = cell_coordinates(problem)
    comps = flux_at_cells(sigma, problem)
    interp = [RegularGridInterpolator(coords, c, bounds_error=False, fill_value=None)
              for c in comps]
    lo = np.array([c[0] for c in coords])
    hi = np.array([c[-1] for c in coords])
    ds = step or 0.5 * min(spec.meshes)
    rng = np.random.default_rng(seed)
    lines = []

    def direction(p):
        v = np.array([f(p[None])[0] for f in interp])
        nrm = np.linalg.norm(v)
        return v / nrm if nrm > 1e-14 else None

    for p in lo + rng.random((n_seeds, len(lo))) * (hi - lo):
        pts = [p]
        for _ in range(max_steps):
            k1 = direction(p)
            if k1 is None:
                break
            k2 = direction(p + 0.5 * ds * k1)
            if k2 is None:
                break
            p = p + ds * k2
            if np.any(p < lo) or np.any(p > hi):
                break
            pts.append(p)
        lines.append(np.array(pts))
    return lines


def write_streamlines_csv(path, lines: list[np.ndarray], dim: int) -> int:
    rows = [np.column_stack([np.full(len(L), i), np.arange(len(L)), L])
            for i, L in enumerate(lines)]
    data = np.vstack(rows) if rows else np.empty((0, dim + 3))
    names = ["line", "step"] + list(AXES[:dim]) + ["t"]
    np.savetxt(path, data, delimiter=",", fmt="%.17g", header=",".join(names), comments="")
    return len(data)
