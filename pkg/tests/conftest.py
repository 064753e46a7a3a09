import numba
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from crowdmfg import CostParams, DensityField, Grid2D, HjbOptions, KernelParams, ModelParams, TimeGrid
from crowdmfg.core import MeasureCurve
from crowdmfg.hjb import solve_hjb_backward

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

numba.set_num_threads(1)


def lq_model(eps=0.1):
    return ModelParams(KernelParams(kappa=0.0), CostParams(eps_run=eps, terminal="quadratic", c_T=1.0))


def uniform_curve(grid, tg):
    n = grid.n
    return MeasureCurve.constant(DensityField(grid, np.full((n, n), 1.0 / n**2)), tg)


def lq_solution(n, n_t, L=3.0, scheme="corrected"):
    grid, tg = Grid2D(L, n), TimeGrid(1.0, n_t)
    return solve_hjb_backward(uniform_curve(grid, tg), lq_model(), grid, tg, options=HjbOptions(scheme=scheme))


@pytest.fixture(scope="session")
def lq128():
    return lq_solution(128, 100)


@pytest.fixture(scope="session")
def lq64():
    return lq_solution(64, 50)


ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """Record the pass/fail line of an acceptance criterion (printed in the terminal summary)."""

    def record(num: int, ok: bool, detail: str) -> None:
        line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[ACCEPTANCE][num] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for num in sorted(lines):
            terminalreporter.write_line(lines[num])
