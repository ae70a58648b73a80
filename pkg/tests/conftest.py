import numpy as np
import pytest

from freedomrec._backend import available_backends
from freedomrec.sparse_core import CsrMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(available_backends()))
def backend(request):
    return available_backends()[request.param]


def random_sparse(rng, rows, cols, density=0.4, nonneg=True):
    dense = rng.random((rows, cols)) if nonneg else rng.standard_normal((rows, cols))
    dense[rng.random((rows, cols)) > density] = 0.0
    return dense, CsrMatrix.from_dense(dense)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL/SKIP line for an acceptance criterion.

    Call ``verdict(ok, detail)``; a test that errors before calling it is
    recorded as FAIL.
    """
    name = request.node.name
    recorded = []

    def record(ok, detail="", status=None):
        status = status or ("PASS" if ok else "FAIL")
        line = f"{status}  {name}: {detail}"
        recorded.append(line)
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    yield record
    if not recorded:
        _ACCEPTANCE_LINES.append(f"FAIL  {name}: error before a verdict was reached")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
