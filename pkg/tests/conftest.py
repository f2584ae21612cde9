import numpy as np
import pytest
from hypothesis import settings

from liftcal.grid import box_grid, make_grid
from liftcal.problem import Problem, alt_caffarelli_problem, make_integrand

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_1d():
    return alt_caffarelli_problem(4.0, a=2.0, h=1 / 16, n_t=8)


@pytest.fixture
def small_2d():
    return alt_caffarelli_problem(4.7, shape="square", h=1 / 4, n_t=6)


@pytest.fixture
def small_disc():
    return alt_caffarelli_problem(5.0, shape="disc", h=1 / 6, n_t=5)


def quadratic_problem(h=1 / 32, n_t=None, pairing="outward"):
    integ = make_integrand("quadratic_convex")
    lat = make_grid(box_grid((2.0,), h, n_t or int(round(1 / h))), "rectangle", pairing=pairing)
    return Problem(integ, lat, 1.0)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
