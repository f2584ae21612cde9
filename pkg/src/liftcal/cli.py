"""Command-line front end: solve, sweep-lambda, verify, export.

Configuration files hold ``key = value`` lines with ``#`` comments. Keys are
either dotted (``problem.lambda = 4``) or grouped under ``[problem]`` style
section headers. Exit codes: 0 success, 2 bad configuration or usage, 3 NaN
in the iterates, 4 no convergence within ``solver.max_iters`` (artifacts are
still written), 5 lambda bracket does not straddle the threshold, 6 missing
run artifacts.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, export
from .grid import DomainError, box_grid, make_grid
from .problem import Problem, ProblemError, alt_caffarelli_problem, auto_n_t, make_integrand
from .solver import NumericalError, SolverConfig, SolverError, run

log = logging.getLogger("liftcal")

DEFAULTS = {
    "problem.integrand": "alt_caffarelli",
    "problem.lambda": 1.0,
    "problem.eps": 0.1,
    "grid.shape": "interval",
    "grid.length": 2.0,
    "grid.radius": 1.0,
    "grid.nx": 256,
    "grid.nt": "auto",
    "grid.symmetry": "none",
    "grid.pairing": "auto",
    "solver.algorithm": "proj",
    "solver.alpha": "auto",
    "solver.beta": "auto",
    "solver.max_iters": 5000,
    "solver.tol": 1e-5,
    "solver.check_every": 100,
    "solver.slab": "dirichlet",
    "output.dir": "run",
    "output.levels": "0.5",
    "sweep.lo": 3.5,
    "sweep.hi": 6.5,
    "sweep.tol": 0.1,
    "sweep.threshold": 0.05,
    "verify.r1_tol": 0.25,
    "verify.r2_tol": 0.25,
    "verify.gap_tol": 0.05,
    "export.seeds": 32,
    "seed": 0,
}


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""


class ArtifactError(FileNotFoundError):
    """A run directory lacks the files a command needs."""


class BracketError(ValueError):
    """Both ends of a lambda bracket fall in the same regime."""


class NotConverged(RuntimeError):
    """Raised after artifacts are written when the solver hit its iteration cap."""


def _coerce(key: str, raw):
    default = DEFAULTS[key]
    if isinstance(raw, str):
        raw = raw.strip()
    if isinstance(default, bool):
        return str(raw).lower() in ("1", "true", "yes")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if default == "auto" and str(raw) != "auto":
        try:
            return int(raw) if key == "grid.nt" else float(raw)
        except ValueError as e:
            raise ConfigError(f"{key}: expected a number or 'auto'") from e
    return raw


def parse_config(text: str, overrides: dict | None = None) -> dict:
    """Parse config text into a flat dict with defaults filled in."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None,
                                       default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string("[__root__]\n" + text)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse config: {e}") from e
    flat = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            name = key if section == "__root__" else f"{section}.{key}"
            flat[name] = value
    flat.update(overrides or {})
    cfg = dict(DEFAULTS)
    for key, value in flat.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        try:
            cfg[key] = _coerce(key, value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{key}: bad value {value!r}") from e
    return cfg


def load_config(path, overrides: dict | None = None) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text, overrides)


def dump_config(cfg: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.items())


def build_problem(cfg: dict, lam: float | None = None) -> Problem:
    """Problem described by a parsed config (``lam`` overrides ``problem.lambda``)."""
    lam = cfg["problem.lambda"] if lam is None else lam
    shape, nx, nt = cfg["grid.shape"], cfg["grid.nx"], cfg["grid.nt"]
    pairing = None if cfg["grid.pairing"] == "auto" else cfg["grid.pairing"]
    integ = make_integrand(cfg["problem.integrand"], lam=lam, eps=cfg["problem.eps"])
    if shape == "interval":
        a = cfg["grid.length"]
        h = a / nx
    elif shape in ("square", "disc"):
        side = 2.0 if shape == "square" else 2.0 * cfg["grid.radius"]
        h = side / nx
    else:
        raise ConfigError(f"unknown grid.shape {shape!r}")
    n_t = auto_n_t(integ, h) if nt == "auto" else int(nt)
    if cfg["problem.integrand"] == "alt_caffarelli":
        return alt_caffarelli_problem(lam, shape=shape, a=cfg["grid.length"], h=h, n_t=n_t,
                                      pairing=pairing, symmetry=cfg["grid.symmetry"],
                                      radius=cfg["grid.radius"])
    if shape != "interval":
        raise ConfigError("non-default integrands are supported on intervals only")
    lat = make_grid(box_grid((cfg["grid.length"],), h, n_t), "rectangle",
                    pairing=pairing or "outward")
    return Problem(integ, lat, 1.0)


def solver_config(cfg: dict, max_iters: int | None = None) -> SolverConfig:
    alpha = None if cfg["solver.alpha"] == "auto" else float(cfg["solver.alpha"])
    beta = None if cfg["solver.beta"] == "auto" else float(cfg["solver.beta"])
    return SolverConfig(cfg["solver.algorithm"], alpha, beta,
                        max_iters or cfg["solver.max_iters"], cfg["solver.tol"],
                        cfg["solver.check_every"], None, cfg["solver.slab"])


def _levels(cfg) -> list[float]:
    return [float(s) for s in str(cfg["output.levels"]).split(",") if s.strip()]


def energy_scale(cfg: dict) -> float:
    """Factor turning energies of the simulated domain into full-domain energies."""
    return 4.0 if cfg["grid.symmetry"] == "quarter" else 1.0


def zero_fraction(u: np.ndarray, problem: Problem) -> float:
    """Area fraction of inside cells where the profile is below one half."""
    ins = problem.lattice.mask.inside
    return float(np.sum((u < 0.5) & ins)) / float(ins.sum())


def _grid_summary(problem: Problem, cfg: dict) -> dict:
    spec = problem.spec
    return {"n_x": list(spec.n_x), "n_t": spec.n_t, "h": spec.h, "h_t": spec.h_t,
            "shape": cfg["grid.shape"], "symmetry": cfg["grid.symmetry"],
            "pairing": problem.lattice.pairing}


def write_profiles(path, v, problem, levels):
    spec = problem.spec
    coords = np.meshgrid(*(spec.cell_centers(d) for d in range(spec.dim)), indexing="ij")
    ins = problem.lattice.mask.inside
    cols = [c[ins] for c in coords]
    names = list(export.AXES[:spec.dim])
    for s in levels:
        cols.append(analysis.extract_level(v, problem, s)[ins])
        names.append(f"u_{s:g}")
    np.savetxt(path, np.column_stack(cols), delimiter=",", fmt="%.17g",
               header=",".join(names), comments="")


def cmd_solve(cfg: dict, out_dir=None) -> dict:
    """Run the solver and write summary, history, fields, profiles and images."""
    out = Path(out_dir or cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    problem = build_problem(cfg)
    t0 = time.perf_counter()
    state, report = run(problem, solver_config(cfg))
    u = analysis.extract_level(state.v_bar, problem, 0.5)
    k = energy_scale(cfg)
    summary = {
        "primal": k * report.primal, "dual": k * report.dual, "gap": k * report.gap,
        "flux_dual": k * report.flux_dual, "iters": report.iters,
        "converged": report.converged, "wall_ms": 1e3 * (time.perf_counter() - t0),
        "grid": _grid_summary(problem, cfg), "lambda": cfg["problem.lambda"],
        "algorithm": report.algorithm, "integrand": cfg["problem.integrand"],
        "mid_fraction": analysis.mid_fraction(state.v_bar, problem),
        "zero_fraction": zero_fraction(u, problem), "gap_floor": report.gap_floor,
        "min_gap": k * min(report.gap_history), "energy_scale": k,
    }
    (out / "config.ini").write_text(dump_config(cfg))
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    history = {k: getattr(report, k) for k in ("checkpoints", "residual_history", "dual_history",
                                                "flux_dual_history", "primal_history",
                                                "gap_history")}
    (out / "history.json").write_text(json.dumps(history))
    np.savez(out / "fields.npz", v=state.v, v_bar=state.v_bar, sigma=state.sigma)
    write_profiles(out / "profiles.csv", state.v_bar, problem, _levels(cfg))
    if problem.spec.dim == 1:
        export.write_pgm(out / "v_bar.pgm", state.v_bar)
    else:
        export.write_pgm(out / "u_0.5.pgm", np.where(problem.lattice.mask.inside, u, np.nan))
    log.info("solve: primal %.6f dual %.6f iters %d converged %s", summary["primal"],
             summary["dual"], summary["iters"], summary["converged"])
    if not report.converged:
        raise NotConverged(f"no convergence in {report.iters} iterations")
    return summary


def _detect(cfg: dict, lam: float) -> dict:
    problem = build_problem(cfg, lam)
    state, report = run(problem, solver_config(cfg))
    u = analysis.extract_level(state.v_bar, problem, 0.5)
    z = zero_fraction(u, problem)
    k = energy_scale(cfg)
    return {"lambda": lam, "zero_fraction": z, "free_boundary": z > cfg["sweep.threshold"],
            "iters": report.iters, "converged": report.converged, "dual": k * report.dual,
            "primal": k * report.primal, "min_gap": k * min(report.gap_history),
            "h": problem.spec.h, "wall_ms": report.wall_ms}


def cmd_sweep_lambda(cfg: dict, lo: float | None = None, hi: float | None = None,
                     tol: float | None = None, out_dir=None) -> dict:
    """Bisect for the smallest lambda at which ``u_0.5`` has a zero set.

    The detector is ``|{u_0.5 < 1/2}| > threshold |Omega|``. Raises
    ``BracketError`` when both ends of the bracket agree.
    """
    lo = cfg["sweep.lo"] if lo is None else lo
    hi = cfg["sweep.hi"] if hi is None else hi
    tol = cfg["sweep.tol"] if tol is None else tol
    t0 = time.perf_counter()
    evals = [_detect(cfg, lo), _detect(cfg, hi)]
    if evals[0]["free_boundary"] or not evals[1]["free_boundary"]:
        raise BracketError(f"bracket [{lo}, {hi}] does not straddle the threshold")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        e = _detect(cfg, mid)
        evals.append(e)
        lo, hi = (lo, mid) if e["free_boundary"] else (mid, hi)
        log.info("sweep: lambda %.4f zero fraction %.3f -> [%.4f, %.4f]", mid,
                 e["zero_fraction"], lo, hi)
    result = {"lambda_star": 0.5 * (lo + hi), "bracket": [lo, hi], "evaluations": evals,
              "wall_ms": 1e3 * (time.perf_counter() - t0)}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.json").write_text(json.dumps(result, indent=2))
    return result


def load_run(run_dir):
    run_dir = Path(run_dir)
    need = [run_dir / "config.ini", run_dir / "fields.npz"]
    missing = [str(p) for p in need if not p.exists()]
    if missing:
        raise ArtifactError(f"missing artifacts: {', '.join(missing)}")
    cfg = load_config(run_dir / "config.ini")
    problem = build_problem(cfg)
    fields = dict(np.load(run_dir / "fields.npz"))
    return cfg, problem, fields


def cmd_verify(run_dir, sigma_override: np.ndarray | None = None) -> dict:
    """Calibration residuals, duality gap, monotonicity defect and coarea check for a run."""
    cfg, problem, fields = load_run(run_dir)
    v = fields["v_bar"]
    sigma = fields["sigma"] if sigma_override is None else sigma_override
    u = analysis.extract_level(v, problem, 0.5)
    res = analysis.calibration_residuals(u, sigma, problem)
    gap = analysis.duality_gap(v, sigma, problem)
    primal = analysis.primal_energy(u, problem)
    # coarea on the monotone envelope quantized to the level grid
    n_levels = 32
    vc = np.minimum.accumulate(np.clip(v, 0.0, 1.0), axis=-1)
    vc = np.rint(vc * n_levels) / n_levels
    lhs, rhs, defect = analysis.coarea_check(vc, problem, n_levels=n_levels)
    mass = float(np.sum(vc * problem.lattice.inside3)) * problem.spec.cell_volume
    report = {k: res[k] for k in ("r1_l1", "r1_linf", "r2_l1", "r2_linf", "r3_l1", "r3_linf")}
    scale = problem.lattice.area
    report.update({
        "gap": gap, "relative_gap": gap / max(abs(primal), 1e-12),
        "monotonicity_defect": analysis.monotonicity_defect(v, problem),
        "mass": mass, "coarea_lhs": lhs, "coarea_rhs": rhs, "coarea_defect": defect,
    })
    report["calibrated"] = bool(
        res["r1_l1"] <= cfg["verify.r1_tol"] * scale
        and res["r2_l1"] <= cfg["verify.r2_tol"] * scale
        and abs(report["relative_gap"]) <= cfg["verify.gap_tol"])
    (Path(run_dir) / "verify.json").write_text(json.dumps(report, indent=2))
    return report


def cmd_export(run_dir, fmt: str = "all") -> dict:
    """Write CSV tables, PGM heatmaps and/or streamlines for a finished run."""
    if fmt not in ("csv", "pgm", "streamlines", "all"):
        raise ConfigError(f"unknown export format {fmt!r}")
    cfg, problem, fields = load_run(run_dir)
    out = Path(run_dir) / "export"
    out.mkdir(exist_ok=True)
    v, sigma = fields["v_bar"], fields["sigma"]
    written = {}
    N = problem.spec.dim
    names = list(export.AXES[:N]) + ["t"]
    if fmt in ("csv", "all"):
        written["v_bar.csv"] = export.write_field_csv(out / "v_bar.csv", v, problem)
        cells = export.flux_at_cells(sigma, problem)
        for d in range(N + 1):
            name = f"sigma_{names[d]}.csv"
            written[name] = export.write_field_csv(out / name, cells[d], problem)
    if fmt in ("pgm", "all"):
        u = analysis.extract_level(v, problem, 0.5)
        if N == 1:
            export.write_pgm(out / "v_bar.pgm", v)
            written["v_bar.pgm"] = 1
        else:
            for k in range(problem.spec.n_t):
                export.write_pgm(out / f"v_bar_t{k:03d}.pgm", v[..., k])
            written["v_bar_slices"] = problem.spec.n_t
            export.write_pgm(out / "u_0.5.pgm", np.where(problem.lattice.mask.inside, u, np.nan))
    if fmt in ("streamlines", "all"):
        lines = export.streamlines(sigma, problem, n_seeds=cfg["export.seeds"], seed=cfg["seed"])
        written["streamlines.csv"] = export.write_streamlines_csv(out / "streamlines.csv", lines, N)
    return written


def format_table(report: dict) -> str:
    width = max(len(k) for k in report)
    rows = [f"{k:<{width}}  {v:.6g}" if isinstance(v, float) else f"{k:<{width}}  {v}"
            for k, v in report.items()]
    return "\n".join(rows)


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="liftcal", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("solve", help="run the primal-dual solver")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p = sub.add_parser("sweep-lambda", help="bisect for the free-boundary threshold")
    p.add_argument("config")
    p.add_argument("--lo", type=float)
    p.add_argument("--hi", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--out")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p = sub.add_parser("verify", help="check calibration conditions of a run")
    p.add_argument("run_dir")
    p = sub.add_parser("export", help="export fields, images and streamlines of a run")
    p.add_argument("run_dir")
    p.add_argument("--format", default="all")
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.cmd == "solve":
            cfg = load_config(args.config, _overrides(args.set))
            result = cmd_solve(cfg, args.out)
        elif args.cmd == "sweep-lambda":
            cfg = load_config(args.config, _overrides(args.set))
            result = cmd_sweep_lambda(cfg, args.lo, args.hi, args.tol,
                                      args.out or cfg["output.dir"])
        elif args.cmd == "verify":
            result = cmd_verify(args.run_dir)
            print(format_table(result), file=sys.stderr)
        else:
            result = cmd_export(args.run_dir, args.format)
    except (ConfigError, DomainError, ProblemError, SolverError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NotConverged as e:
        print(f"warning: {e}", file=sys.stderr)
        return 4
    except BracketError as e:
        print(f"error: {e}", file=sys.stderr)
        return 5
    except ArtifactError as e:
        print(f"error: {e}", file=sys.stderr)
        return 6
    print(json.dumps(result, indent=2, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
