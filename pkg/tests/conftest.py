import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20241016)


def random_orthonormal(rng, p, r):
    q, _ = np.linalg.qr(rng.standard_normal((p, r)))
    return q


def random_spd(rng, p, shift=1.0):
    a = rng.standard_normal((p, p))
    return a.T @ a + shift * np.eye(p)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
