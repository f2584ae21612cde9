import json

import numpy as np
import pytest

from liftcal import cli, export
from liftcal.problem import alt_caffarelli_problem


def write_config(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def solve(tmp_path, text, *extra):
    cfg = write_config(tmp_path, text)
    out = tmp_path / "out"
    return cli.main(["solve", str(cfg), "--out", str(out), *extra]), out


SMALL = """
# one-dimensional run
[problem]
lambda = 1.0
[grid]
nx = 32
[solver]
max_iters = 2000
[output]
levels = 0.25, 0.5
"""


def test_parse_config_sections_and_dotted_keys():
    a = cli.parse_config("[problem]\nlambda = 3\n[grid]\nnx = 16  # comment\n")
    b = cli.parse_config("problem.lambda = 3\ngrid.nx = 16\n")
    assert a == b
    assert a["problem.lambda"] == 3.0 and a["grid.nx"] == 16 and a["grid.nt"] == "auto"
    assert cli.parse_config("grid.nt = 12")["grid.nt"] == 12


@pytest.mark.parametrize("text", ["problem.lambda = big", "nonsense = 1", "[grid\nnx=3",
                                  "solver.max_iters = 1.5"])
def test_malformed_config_exit_2_without_artifacts(tmp_path, text):
    code, out = solve(tmp_path, text)
    assert code == 2
    assert not out.exists()


def test_solve_verify_export(tmp_path):
    code, out = solve(tmp_path, SMALL)
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    for key in ("primal", "dual", "gap", "iters", "converged", "wall_ms", "grid", "lambda",
                "algorithm"):
        assert key in summary
    assert summary["dual"] == pytest.approx(2.0, rel=0.02)
    prof = np.loadtxt(out / "profiles.csv", delimiter=",", skiprows=1)
    assert prof.shape == (32, 3)
    assert (out / "profiles.csv").read_text().splitlines()[0] == "x,u_0.25,u_0.5"

    assert cli.main(["verify", str(out)]) == 0
    report = json.loads((out / "verify.json").read_text())
    assert report["calibrated"] is True
    assert report["relative_gap"] <= 0.02
    assert report["coarea_lhs"] <= report["coarea_rhs"] + 1e-10

    assert cli.main(["export", str(out), "--format", "all"]) == 0
    ex = out / "export"
    problem = cli.build_problem(cli.load_config(out / "config.ini"))
    fields = np.load(out / "fields.npz")
    rows = (ex / "v_bar.csv").read_text().splitlines()
    assert rows[0] == "x,t,value"
    assert len(rows) - 1 == problem.lattice.inside3.sum()
    back = export.read_field_csv(ex / "v_bar.csv", problem)
    assert np.array_equal(back, fields["v_bar"])
    pgm = export.read_pgm(ex / "v_bar.pgm")
    assert pgm.shape == (problem.spec.n_t, problem.spec.n_x[0])
    header = (ex / "v_bar.pgm").read_bytes()[:2]
    assert header == b"P5"
    assert "min" in json.loads((ex / "v_bar.json").read_text())
    lines = np.loadtxt(ex / "streamlines.csv", delimiter=",", skiprows=1)
    assert lines.shape[1] == 4


def test_verify_negative_control(tmp_path):
    code, out = solve(tmp_path, SMALL)
    assert code == 0
    problem = cli.build_problem(cli.load_config(out / "config.ini"))
    report = cli.cmd_verify(out, sigma_override=problem.lattice.zeros_flux())
    assert report["r2_linf"] >= 0.9
    assert report["calibrated"] is False


def test_nan_exit_3(tmp_path):
    code, _ = solve(tmp_path, SMALL, "--set", "solver.alpha=nan")
    assert code == 3


def test_not_converged_exit_4_keeps_artifacts(tmp_path):
    code, out = solve(tmp_path, SMALL, "--set", "solver.max_iters=3")
    assert code == 4
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] is False and summary["iters"] == 3
    assert (out / "fields.npz").exists()


def test_sweep_bracket_not_straddling_exit_5(tmp_path):
    cfg = write_config(tmp_path, "grid.shape = square\ngrid.symmetry = quarter\ngrid.nx = 16\n"
                                 "solver.max_iters = 300\n")
    assert cli.main(["sweep-lambda", str(cfg), "--lo", "0.1", "--hi", "0.2",
                     "--out", str(tmp_path / "sw")]) == 5


def test_verify_missing_artifacts_exit_6(tmp_path):
    assert cli.main(["verify", str(tmp_path / "nowhere")]) == 6
    assert cli.main(["export", str(tmp_path / "nowhere")]) == 6


def test_unknown_export_format(tmp_path):
    code, out = solve(tmp_path, SMALL)
    assert cli.main(["export", str(out), "--format", "svg"]) == 2


def test_usage_error():
    assert cli.main(["frobnicate"]) == 2


def test_lambda_two_three_clusters(tmp_path):
    code, out = solve(tmp_path, "problem.lambda = 2\ngrid.nx = 128\nsolver.max_iters = 3000\n")
    assert code in (0, 4)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["dual"] == pytest.approx(4.0, rel=0.02)
    v = np.load(out / "fields.npz")["v_bar"]
    # 1 under the ramps, a plateau between the ramps and t = 1, and 0 above t = 1 (the datum)
    top = v >= 0.95
    mid = (v > 0.1) & (v < 0.9)
    assert top.mean() > 0.05 and mid.mean() > 0.1
    plateau = np.median(v[mid])
    assert np.mean(np.abs(v[mid] - plateau) < 0.05) > 0.9
    assert np.mean(v < 0.05) == 0.0


def test_square_run_has_zero_region(tmp_path):
    code, out = solve(tmp_path, "problem.lambda = 5.43656365691809\ngrid.shape = square\n"
                                "grid.symmetry = quarter\ngrid.nx = 32\nsolver.max_iters = 1500\n")
    assert code in (0, 4)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["zero_fraction"] > 0.05
    assert (out / "u_0.5.pgm").exists()


# export helpers

def test_field_csv_round_trip_2d(tmp_path, rng):
    P = alt_caffarelli_problem(4.7, shape="disc", h=1 / 8, n_t=5)
    v = rng.random(P.lattice.zeros_scalar().shape) * P.lattice.inside3
    n = export.write_field_csv(tmp_path / "v.csv", v, P)
    assert n == P.lattice.inside3.sum()
    assert np.array_equal(export.read_field_csv(tmp_path / "v.csv", P), v)


def test_pgm_dimensions_and_sidecar(tmp_path):
    img = np.arange(12.0).reshape(4, 3)
    lo, hi = export.write_pgm(tmp_path / "a.pgm", img)
    data = export.read_pgm(tmp_path / "a.pgm")
    assert data.shape == (3, 4)
    assert data.max() == 255 and data.min() == 0
    assert (lo, hi) == (0.0, 11.0)


def test_streamlines_of_constant_field_are_straight(small_2d):
    P = small_2d
    sigma = P.lattice.zeros_flux()
    sigma[0] = 1.0
    sigma[2] = 0.5
    lines = export.streamlines(sigma, P, n_seeds=8, seed=3)
    direction = np.array([1.0, 0.0, 0.5]) / np.linalg.norm([1.0, 0.0, 0.5])
    for line in lines:
        if len(line) < 3:
            continue
        steps = np.diff(line, axis=0)
        steps /= np.linalg.norm(steps, axis=1, keepdims=True)
        assert np.allclose(steps, direction, atol=1e-12)


def test_streamline_seed_reproducible(small_2d, rng):
    sigma = rng.normal(size=small_2d.lattice.flux_shape) * small_2d.lattice.active
    a = export.streamlines(sigma, small_2d, n_seeds=4, seed=7)
    b = export.streamlines(sigma, small_2d, n_seeds=4, seed=7)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
