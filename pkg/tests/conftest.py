import numpy as np
import pytest

from ftn.nn import Param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def p64(arr):
    """Trainable float64 leaf."""
    return Param(np.asarray(arr, dtype=np.float64), dtype=np.float64)


def set_dtype64(module):
    """Cast every parameter and buffer of a module tree to float64 in place."""
    for p in module.parameters():
        p.data = p.data.astype(np.float64)
        p.adam_m = np.zeros_like(p.data)
        p.adam_v = np.zeros_like(p.data)
    for m in module.modules():
        for k, v in getattr(m, "_buffers", {}).items():
            m._buffers[k] = v.astype(np.float64)
    return module


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
