import numpy as np
import pytest
from hypothesis import settings

from dvpnet import nn

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _float64():
    # every test starts in 64-bit mode regardless of what the last one did
    nn.set_default_dtype(np.float64)
    yield
    nn.set_default_dtype(np.float64)


ACCEPTANCE = []


def record_acceptance(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE.append(line)
    print("\n" + line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
