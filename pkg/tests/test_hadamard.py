from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg

from conftest import dense_sum, random_state
from qedyn.hadamard import (
    HadamardDipoleObserver,
    HadamardPlan,
    ancilla_expectation,
    binomial_dipole_error,
    controlled_unitary_apply,
    estimate_dipole,
    hadamard_test,
    split_constant,
    with_ancilla,
)
from qedyn.pulse import LaserPulse
from qedyn.qdyn import PopulationObserver, PropagationConfig, propagate_quantum
from qedyn.qsim import PauliSum, PauliTerm, QubitRegister, init_register, make_rng, register_from_amplitudes, sample_plus_minus
from qedyn.refdyn import CIWavepacket, tdci_propagate
from qedyn.series import common_time_indices

H2_PULSE = LaserPulse((0.0, 0.0, 0.0108), 0.9673, 250.0, 250.0)


def psum(*terms):
    return PauliSum.from_terms(PauliTerm.from_factors(f, c) for f, c in terms)


def ground_register(system):
    return register_from_amplitudes(system.register_vector(np.eye(len(system.eigenbasis))[0]), normalize=False)


# --- plan ------------------------------------------------------------------------------------


@pytest.mark.parametrize("kw", [dict(delta_x=0.0), dict(shots=0), dict(part="both"), dict(restart_mode="x")])
def test_plan_validation(kw):
    args = dict(delta_x=0.5, shots=10) | kw
    with pytest.raises(ValueError):
        HadamardPlan(**args)


# --- controlled unitary -----------------------------------------------------------------------


def test_ancilla_zero_leaves_system(h2):
    rng = np.random.default_rng(0)
    psi = random_state(rng, 4)
    reg = with_ancilla(register_from_amplitudes(psi))
    controlled_unitary_apply(reg, 4, h2.dipole_pauli[2], 0.5)
    assert np.max(np.abs(reg.amplitudes[:16] - psi)) < 1e-12
    assert np.max(np.abs(reg.amplitudes[16:])) < 1e-12


@pytest.mark.parametrize("m", [1, 2, 3])
def test_single_term_controlled_dense_oracle(m):
    rng = np.random.default_rng(m)
    labels = "XYZ"
    factors = {q: labels[rng.integers(3)] for q in range(m)}
    mu = psum((factors, 0.8))
    dx = 0.37
    u = scipy.linalg.expm(-1j * dx * dense_sum(mu, m))
    big = scipy.linalg.block_diag(np.eye(1 << m), u)
    psi = random_state(rng, m + 1)
    reg = controlled_unitary_apply(register_from_amplitudes(psi), m, mu, dx)
    assert np.allclose(reg.amplitudes, big @ psi, atol=1e-12)


def test_identity_mu_is_controlled_phase():
    reg = register_from_amplitudes(np.array([1, 0, 1, 0], dtype=complex) / np.sqrt(2))
    controlled_unitary_apply(reg, 1, psum(({}, 0.6)), 0.5)
    assert reg.amplitudes[0] == pytest.approx(1 / np.sqrt(2))
    assert reg.amplitudes[2] == pytest.approx(np.exp(-0.3j) / np.sqrt(2))


def test_ancilla_collision():
    reg = init_register(3)
    with pytest.raises(ValueError):
        controlled_unitary_apply(reg, 1, psum(({1: "X"}, 1.0)), 0.1)


def test_complex_mu_rejected():
    with pytest.raises(ValueError):
        controlled_unitary_apply(init_register(2), 1, psum(({0: "X"}, 1j)), 0.1)


# --- Hadamard test ---------------------------------------------------------------------------


def test_identity_real_part_exact():
    plan = HadamardPlan(0.5, 17, part="real")
    for seed in range(5):
        assert hadamard_test(lambda: init_register(2, 1), PauliSum(), plan, seed) == 1.0


@pytest.mark.parametrize("basis_index", [0, 1, 2, 3])
def test_eigenstate_phase_kickback(basis_index):
    mu = psum(({0: "Z"}, 0.7), ({1: "Z"}, 0.2))
    z = [1 - 2 * ((basis_index >> q) & 1) for q in range(2)]
    m = 0.7 * z[0] + 0.2 * z[1]
    shots, dx = 5000, 0.9
    re = hadamard_test(lambda: init_register(2, basis_index), mu, HadamardPlan(dx, shots, "real"), 1)
    im = hadamard_test(lambda: init_register(2, basis_index), mu, HadamardPlan(dx, shots, "imaginary"), 1)
    assert abs(re - np.cos(m * dx)) < 3 / np.sqrt(shots)
    assert abs(im + np.sin(m * dx)) < 3 / np.sqrt(shots)


def test_h2_ground_imaginary_part(h2):
    reg = ground_register(h2)
    mu = h2.dipole_pauli[2]
    sin = scipy.linalg.sinm(0.5 * dense_sum(mu, 4))
    exact = -np.vdot(reg.amplitudes, sin @ reg.amplitudes).real
    est = hadamard_test(lambda: reg, mu, HadamardPlan(0.5, 20000), 20240101)
    assert abs(est - exact) < 3 / np.sqrt(20000)


@pytest.mark.parametrize("part", ["real", "imaginary"])
def test_exact_limit_matches_dense_trotter_product(part):
    # non-commuting mu: compare with the dense product of the same first-order factors
    mu = psum(({0: "X", 1: "Z"}, 0.6), ({0: "Z"}, -0.4), ({1: "Y", 2: "X"}, 0.3), ({0: "Y", 2: "Z"}, 0.8), ({}, 0.2))
    dx = 0.45
    u = np.eye(8, dtype=complex)
    for t in mu:
        u = scipy.linalg.expm(-1j * dx * dense_sum(PauliSum.from_terms([t]), 3)) @ u
    psi = random_state(np.random.default_rng(4), 3)
    val = np.vdot(psi, u @ psi)
    z = ancilla_expectation(register_from_amplitudes(psi), mu, HadamardPlan(dx, 1, part))
    assert z == pytest.approx(val.real if part == "real" else val.imag, abs=1e-10)


def test_deterministic_per_seed(h2):
    reg = ground_register(h2)
    plan = HadamardPlan(0.5, 1000)
    a = hadamard_test(lambda: reg, h2.dipole_pauli[2], plan, 7, 3)
    b = hadamard_test(lambda: reg, h2.dipole_pauli[2], plan, 7, 3)
    c = hadamard_test(lambda: reg, h2.dipole_pauli[2], plan, 7, 4)
    assert a == b and a != c


def test_honest_restart_single_batch_equals_cached(h2):
    reg = ground_register(h2)
    calls = []

    def prepare():
        calls.append(1)
        return reg.copy()

    cached = hadamard_test(prepare, h2.dipole_pauli[2], HadamardPlan(0.5, 4000), 11, 2)
    honest = hadamard_test(prepare, h2.dipole_pauli[2], HadamardPlan(0.5, 4000, restart_mode="honest-restart"), 11, 2)
    assert cached == honest
    batched = hadamard_test(prepare, h2.dipole_pauli[2], HadamardPlan(0.5, 4000, restart_mode="honest-restart", batch_shots=1000), 11, 2)
    assert len(calls) == 2 + 4
    assert abs(batched - cached) < 6 / np.sqrt(4000)


# --- dipole recovery ---------------------------------------------------------------------------


def test_estimate_dipole_zero():
    assert estimate_dipole(0.0, 0.3) == 0.0


def test_estimate_dipole_sine_series():
    d = estimate_dipole(-np.sin(0.1), 0.1)
    assert d == pytest.approx(0.998334, abs=1e-6)
    assert abs(d - 1.0) < 0.1**2 / 6


def test_estimate_dipole_out_of_range():
    with pytest.raises(ValueError):
        estimate_dipole(1.5, 0.1)


def test_binomial_error():
    assert binomial_dipole_error(0.0, 10000, 0.5) == pytest.approx(0.02)


def test_split_constant():
    c, rest = split_constant(psum(({}, 1.5), ({0: "Z"}, 0.2)))
    assert c == 1.5 and (0, 0) not in rest.terms


def test_bias_bound_over_pi_pulse(h2):
    # exact readout along the trajectory; bias bounded by dx^2/6 max|m|^3
    mu = h2.dipole_pauli[2]
    dx = 0.5
    bound = dx**2 / 6 * np.max(np.abs(np.linalg.eigvalsh(dense_sum(mu, 4)))) ** 3
    mu_dense = dense_sum(mu, 4)

    def check(t, reg):
        true = np.vdot(reg.amplitudes, mu_dense @ reg.amplitudes).real
        got = estimate_dipole(ancilla_expectation(reg, mu, HadamardPlan(dx, 1)), dx)
        assert abs(got - true) <= bound
        return {}

    propagate_quantum(ground_register(h2), h2.h_pauli, h2.dipole_pauli, H2_PULSE, PropagationConfig(0.2, 500.0, 2, 25), check)


def test_observer_adds_constant(h2):
    mu = h2.dipole_pauli[2] + psum(({}, 0.75))
    obs = HadamardDipoleObserver(mu, HadamardPlan(0.5, 100), 1)
    out = obs(0.0, ground_register(h2))
    assert abs(out["hadamard_dipole"] - 0.75) < 5 * 2 / np.sqrt(100)
    assert obs.const == 0.75


def test_observer_preparer_used(h2):
    seen = []
    trial = init_register(4, 0b0101)

    def preparer(t, reg):
        seen.append(t)
        return lambda: trial

    obs = HadamardDipoleObserver(h2.dipole_pauli[2], HadamardPlan(0.5, 10, restart_mode="honest-restart"), 1, preparer=preparer)
    obs(1.5, ground_register(h2))
    assert seen == [1.5]


def test_noise_scaling_vs_reference(h2):
    """RMS error of the dipole trace against TD-CI falls as 1/sqrt(shots) over 5k, 20k, 80k."""
    dx = 0.5
    obs = HadamardDipoleObserver(h2.dipole_pauli[2], HadamardPlan(dx, 1), 0,
                                 inner=PopulationObserver(h2.eigenbasis, h2.basis, h2.dipole_states))
    q = propagate_quantum(ground_register(h2), h2.h_pauli, h2.dipole_pauli, H2_PULSE, PropagationConfig(0.2, 500.0, 2, 5), obs)
    r = tdci_propagate(h2.eigenbasis, h2.dipole_states, H2_PULSE, 1.0, 500.0, CIWavepacket.eigenstate(4))
    iq, ir = common_time_indices(q.times, r.times)
    z = np.array(obs.exact)[iq]
    ref = r.dipole[ir, 2]
    shots = np.array([5000, 20000, 80000])
    rms = []
    for n in shots:
        per_seed = []
        for seed in range(4):
            est = np.array([sample_plus_minus(v, n, make_rng(seed, k, int(n))) for k, v in enumerate(z)])
            per_seed.append(np.sqrt(np.mean((-est / dx - ref) ** 2)))
        rms.append(np.mean(per_seed))
    s = np.polyfit(np.log(shots), np.log(rms), 1)[0]
    assert s == pytest.approx(-0.5, abs=0.1), f"slope {s:.3f}, rms {np.round(rms, 4)}"


def test_noise_scaling_vs_exact_estimator(h2):
    # the statistical part alone: RMS against the shots -> inf Hadamard trace
    dx = 0.5
    obs = HadamardDipoleObserver(h2.dipole_pauli[2], HadamardPlan(dx, 1), 0)
    propagate_quantum(ground_register(h2), h2.h_pauli, h2.dipole_pauli, H2_PULSE, PropagationConfig(0.2, 500.0, 2, 5), obs)
    z = np.array(obs.exact)
    shots = np.array([5000, 20000, 80000])
    rms = []
    for n in shots:
        est = np.concatenate([[sample_plus_minus(v, n, make_rng(seed, k, int(n))) for k, v in enumerate(z)] for seed in range(4)])
        rms.append(np.sqrt(np.mean(((est - np.tile(z, 4)) / dx) ** 2)))
    assert np.polyfit(np.log(shots), np.log(rms), 1)[0] == pytest.approx(-0.5, abs=0.1)
