import os
import sys

import pytest

HERE = os.path.dirname(__file__)
sys.path.insert(0, HERE)

DATA = os.path.join(HERE, "data")


def data_path(*parts):
    return os.path.join(DATA, *parts)


@pytest.fixture
def real_file():
    def read(*parts):
        path = data_path(*parts)
        with open(path, "rb") as fh:
            return fh.read()
    return read


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
