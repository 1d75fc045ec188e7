import numpy as np
import pytest

from srkit import kernels
from srkit.model import builtin_model

BUILTINS = ("flat", "heisenberg", "martinet")


@pytest.fixture(params=BUILTINS)
def model(request):
    return builtin_model(request.param)


@pytest.fixture
def heis():
    return builtin_model("heisenberg")


@pytest.fixture
def flat():
    return builtin_model("flat")


@pytest.fixture
def martinet():
    return builtin_model("martinet")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def python_backend():
    kernels.set_backend("python")
    yield
    kernels.set_backend("auto")


_ACCEPTANCE_KEY = pytest.StashKey[dict]()
N_CRITERIA = 12


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = {}


@pytest.fixture
def record(request):
    """Record one acceptance line: ``record(number, ok, detail)``."""
    store = request.config.stash[_ACCEPTANCE_KEY]

    def _record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        store[number] = line
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(store.get(number, f"criterion {number:2d}: FAIL  (not run or errored)"))
