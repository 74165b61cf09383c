import numpy as np
import pytest

from hybridci.field_model import FieldModel

ACCEPTANCE_LINES: list[str] = []


def random_spd(rng: np.random.Generator, n: int, floor: float = 0.1) -> np.ndarray:
    g = rng.standard_normal((n, n))
    return g @ g.T / n + floor * np.eye(n)


def static_model(n: int, q: float = 0.0) -> FieldModel:
    """Identity dynamics, so prediction only adds ``q * I``."""
    return FieldModel(A=np.eye(n), B=np.zeros((n, 0)), Qproc=q * np.eye(n))


def random_model(rng: np.random.Generator, n: int) -> FieldModel:
    A = rng.standard_normal((n, n))
    A *= 0.95 / max(abs(np.linalg.eigvals(A)))
    return FieldModel(A=A, B=np.zeros((n, 0)), Qproc=random_spd(rng, n))


def record_acceptance(line: str) -> None:
    print(line)
    ACCEPTANCE_LINES.append(line)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
