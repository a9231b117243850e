import pytest

from fastresume import _purepy

try:
    from fastresume import _speedups
except ImportError:  # extension not built
    _speedups = None

BACKENDS = [pytest.param(_purepy, id="python")]
if _speedups is not None:
    BACKENDS.append(pytest.param(_speedups, id="cython"))


@pytest.fixture(params=BACKENDS)
def kernels(request):
    return request.param


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[number])
