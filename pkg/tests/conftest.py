from __future__ import annotations

from functools import reduce

import numpy as np
import pytest

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}


def kron_op(ops_by_qubit: dict[int, np.ndarray], num_qubits: int) -> np.ndarray:
    """Dense operator with qubit 0 as the least significant (rightmost) factor."""
    mats = [ops_by_qubit.get(q, I2) for q in reversed(range(num_qubits))]
    return reduce(np.kron, mats)


def dense_pauli(x: int, z: int, num_qubits: int) -> np.ndarray:
    ops = {}
    for q in range(num_qubits):
        bx, bz = (x >> q) & 1, (z >> q) & 1
        if bx or bz:
            ops[q] = Y if (bx and bz) else (X if bx else Z)
    return kron_op(ops, num_qubits)


def dense_sum(op, num_qubits: int) -> np.ndarray:
    out = np.zeros((1 << num_qubits,) * 2, dtype=complex)
    for (x, z), c in op.terms.items():
        out += c * dense_pauli(x, z, num_qubits)
    return out


def random_state(rng: np.random.Generator, num_qubits: int) -> np.ndarray:
    v = rng.normal(size=1 << num_qubits) + 1j * rng.normal(size=1 << num_qubits)
    return v / np.linalg.norm(v)


@pytest.fixture(scope="session")
def h2():
    from qedyn.system import MolecularSystem

    return MolecularSystem.load("h2_sto3g")


@pytest.fixture(scope="session")
def h2_cap():
    from qedyn.system import MolecularSystem

    return MolecularSystem.load("h2_sto3g", cap_d=50.0)


@pytest.fixture(scope="session")
def lih():
    from qedyn.system import MolecularSystem

    return MolecularSystem.load("lih_sto3g")


# one summary line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
