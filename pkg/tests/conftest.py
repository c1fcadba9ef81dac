import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

import clgpn.kernels  # noqa: E402

_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record a one-line PASS/FAIL verdict for an acceptance criterion."""

    def _report(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


BACKENDS = ["python"] + (["cython"] if clgpn.kernels.cython_backend is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param
