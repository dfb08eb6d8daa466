"""Hadamard-test estimation of the dipole moment through exp(-i mu dx).

The ancilla is the most significant qubit of the composite register (index
``M`` for an ``M``-qubit system). With the phase gate S^dagger inserted the
ancilla <Z> equals Im<U>, and ``<mu> ~ -Im<U> / dx``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .qsim import (
    HADAMARD,
    S_DAG,
    PauliSum,
    PauliTerm,
    QubitRegister,
    apply_controlled_pauli_rotation,
    apply_one_qubit_gate,
    expectation_pauli_term,
    make_rng,
    sample_plus_minus,
)


@dataclass(frozen=True)
class HadamardPlan:
    delta_x: float
    shots: int
    part: str = "imaginary"
    trotter_order_for_u: int = 1
    restart_mode: str = "cached-register"
    axis: int = 2
    batch_shots: int = 0  # honest-restart batch size; 0 means one batch

    def __post_init__(self):
        if self.delta_x == 0:
            raise ValueError("delta_x must be non-zero")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.part not in ("real", "imaginary"):
            raise ValueError("part must be 'real' or 'imaginary'")
        if self.trotter_order_for_u not in (1, 2):
            raise ValueError("trotter_order_for_u must be 1 or 2")
        if self.restart_mode not in ("cached-register", "honest-restart"):
            raise ValueError("restart_mode must be 'cached-register' or 'honest-restart'")


def controlled_unitary_apply(
    reg: QubitRegister, ancilla: int, mu: PauliSum, delta_x: float, order: int = 1
) -> QubitRegister:
    """Controlled exp(-i mu dx) as a Trotter product of controlled rotations."""
    if not mu.is_hermitian():
        raise ValueError("mu must have real coefficients")
    terms = list(mu)
    for t in terms:
        if (t.support >> ancilla) & 1:
            raise ValueError(f"ancilla {ancilla} collides with the operator support")
    if order == 1:
        for t in terms:
            apply_controlled_pauli_rotation(reg, ancilla, t, delta_x)
    else:
        for t in terms[:-1]:
            apply_controlled_pauli_rotation(reg, ancilla, t, delta_x / 2)
        if terms:
            apply_controlled_pauli_rotation(reg, ancilla, terms[-1], delta_x)
        for t in reversed(terms[:-1]):
            apply_controlled_pauli_rotation(reg, ancilla, t, delta_x / 2)
    return reg


def with_ancilla(system: QubitRegister) -> QubitRegister:
    amps = np.concatenate([system.amplitudes, np.zeros_like(system.amplitudes)])
    return QubitRegister(system.num_qubits + 1, amps)


def ancilla_expectation(system: QubitRegister, mu: PauliSum, plan: HadamardPlan) -> float:
    """Exact ancilla <Z> after the Hadamard-test circuit (the shots -> inf limit)."""
    m = system.num_qubits
    reg = with_ancilla(system)
    apply_one_qubit_gate(reg, m, HADAMARD)
    if plan.part == "imaginary":
        apply_one_qubit_gate(reg, m, S_DAG)
    controlled_unitary_apply(reg, m, mu, plan.delta_x, plan.trotter_order_for_u)
    apply_one_qubit_gate(reg, m, HADAMARD)
    return expectation_pauli_term(reg, 0, 1 << m).real


def hadamard_test(
    system_state_preparer: Callable[[], QubitRegister],
    mu: PauliSum,
    plan: HadamardPlan,
    seed: int,
    time_index: int = 0,
) -> float:
    """Shot estimate of Re or Im <psi|exp(-i mu dx)|psi>.

    In cached-register mode the preparer is called once; in honest-restart
    mode it is called again for every shot batch, as hardware would require.
    """
    if plan.restart_mode == "cached-register":
        z = ancilla_expectation(system_state_preparer(), mu, plan)
        return sample_plus_minus(z, plan.shots, make_rng(seed, time_index, 0))
    batch = plan.batch_shots or plan.shots
    done, total = 0, 0.0
    k = 0
    while done < plan.shots:
        n = min(batch, plan.shots - done)
        z = ancilla_expectation(system_state_preparer(), mu, plan)
        total += n * sample_plus_minus(z, n, make_rng(seed, time_index, k))
        done += n
        k += 1
    return total / plan.shots


def estimate_dipole(estimate: float, delta_x: float) -> float:
    """Dipole from the imaginary part: -Im<exp(-i mu dx)> / dx (bias O(dx^2 <mu^3>))."""
    if abs(estimate) > 1 + 1e-12:
        raise ValueError("a Hadamard-test estimate lies in [-1, 1]")
    return -estimate / delta_x


def binomial_dipole_error(estimate: float, shots: int, delta_x: float) -> float:
    """Predicted standard error of :func:`estimate_dipole` for one estimate."""
    return float(np.sqrt(max(0.0, 1.0 - estimate**2) / shots) / abs(delta_x))


def split_constant(mu: PauliSum) -> tuple[float, PauliSum]:
    """Separate the identity coefficient (added back classically)."""
    return mu.constant().real, mu.without_constant()


class HadamardDipoleObserver:
    """Observer for :func:`qedyn.qdyn.propagate_quantum` recording Hadamard dipoles.

    By default the state preparer hands back the cached register at each
    recording time. ``preparer(t, reg)`` may instead return a zero-argument
    callable that rebuilds the state (honest restarts). The identity part of
    mu is added classically; only the rest goes through the controlled unitary.
    """

    def __init__(self, mu: PauliSum, plan: HadamardPlan, seed: int, inner=None, preparer=None):
        self.const, self.mu = split_constant(mu)
        self.plan = plan
        self.seed = seed
        self.inner = inner
        self.preparer = preparer
        self.k = 0
        self.raw: list[float] = []
        self.exact: list[float] = []

    def __call__(self, t: float, reg: QubitRegister) -> dict:
        out = dict(self.inner(t, reg)) if self.inner else {}
        prepare = self.preparer(t, reg) if self.preparer else (lambda: reg)
        est = hadamard_test(prepare, self.mu, self.plan, self.seed, self.k)
        self.exact.append(ancilla_expectation(reg, self.mu, self.plan))
        self.raw.append(est)
        self.k += 1
        out["hadamard_dipole"] = self.const + estimate_dipole(est, self.plan.delta_x)
        return out
