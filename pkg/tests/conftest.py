import itertools

import numpy as np
import pytest

from gpt_tomo.core import GptModel
from gpt_tomo.synth import octahedron_points, qubit_model


def cube_vertices(r=1.0):
    return r * np.array(list(itertools.product([-1.0, 1.0], repeat=3)))


def cross_vertices(r=1.0):
    return r * np.vstack([np.eye(3), -np.eye(3)])


def octahedral_model():
    """Pauli eigenstates against the six Pauli projectors."""
    d = octahedron_points()
    return qubit_model(d, d)


def classical_bit_model():
    """Two deterministic states against the effects 0, u and the two indicator effects.

    Coordinates ``s = (1, x)`` with ``x = +-1``; indicator effects ``(1/2, +-1/2)``.
    """
    S = np.array([[1.0, 1.0], [1.0, -1.0]])
    E = np.array([[1.0, 0.5, 0.5, 0.0], [0.0, 0.5, -0.5, 0.0]])
    return GptModel(S, E)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE = []


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
