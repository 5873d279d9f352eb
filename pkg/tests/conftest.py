import numpy as np
import pytest

from hessian_lab.domain import DomainSpec, GridFunction, build_grid


@pytest.fixture(scope='session')
def disc():
    return build_grid(DomainSpec('ball', 1, 1), 65)


@pytest.fixture(scope='session')
def disc129():
    return build_grid(DomainSpec('ball', 1, 1), 129)


@pytest.fixture(scope='session')
def ball2():
    return build_grid(DomainSpec('ball', 2, 2), 17)


@pytest.fixture(scope='session')
def ball2_m1():
    return build_grid(DomainSpec('ball', 2, 1), 17)


def sample(grid, fn, where='defined'):
    return GridFunction.from_callable(grid, fn, where=where)


def norm2(z):
    return np.sum(np.abs(z) ** 2, axis=1)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get('test_acceptance')
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section('acceptance criteria')
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
