from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg

from conftest import dense_sum
from qedyn.pulse import LaserPulse
from qedyn.qdyn import PopulationObserver, PropagationConfig, propagate_quantum
from qedyn.qite import (
    QiteDomain,
    QiteSolveError,
    QiteStepRecord,
    apply_qite_step,
    measure_domain,
    norm_factor,
    propagate_with_cap,
    solve_qite_coefficients,
    split_hamiltonian,
)
from qedyn.qsim import PauliSum, PauliTerm, apply_pauli_rotation, init_register, make_rng, register_from_amplitudes

H2_PULSE = LaserPulse((0.0, 0.0, 0.0108), 0.9673, 250.0, 250.0)
DTS = np.array([0.4, 0.2, 0.1, 0.05])


def number_op(p, gamma):
    # -(i/2) gamma n_p with n_p = (1 - Z_p) / 2
    return PauliSum.from_terms([PauliTerm(-0.25j * gamma, 0, 0), PauliTerm(0.25j * gamma, 0, 1 << p)])


def state(system, b):
    return register_from_amplitudes(system.register_vector(np.asarray(b, dtype=complex)), normalize=False)


def mixed_state(system):
    b = np.array([0.8, 0.0, 0.6, 0.0], dtype=complex)
    b[2] *= np.exp(0.4j)
    return state(system, b)


def renormalized_target(psi, factors, dt, m):
    k = sum(dense_sum(f * 1j, m) for f in factors)
    out = scipy.linalg.expm(-k * dt) @ psi
    return out / np.linalg.norm(out)


def qite_steps(reg, factors, dt, domain, delta):
    for f in factors:
        apply_qite_step(reg, solve_qite_coefficients(reg, f, dt, domain, delta), domain, dt)
    return reg


# --- domain ----------------------------------------------------------------------------------


def test_domain_basis():
    d = QiteDomain((0, 2), 3)
    assert len(d.pauli_basis) == 16 == len(set(d.pauli_basis))
    assert d.pauli_basis[0] == (0, 0)
    assert all(((x | z) & 0b010) == 0 for x, z in d.pauli_basis)
    assert d.covers(PauliSum.from_terms([PauliTerm(1.0, 0b101, 0b001)]))
    assert not d.covers(PauliSum.from_terms([PauliTerm(1.0, 0b010, 0)]))
    assert len(QiteDomain.full(4).pauli_basis) == 256


@pytest.mark.parametrize("q", [(0, 0), (5,), tuple(range(7))])
def test_domain_validation(q):
    with pytest.raises(ValueError):
        QiteDomain(q, 8 if len(q) == 7 else 3)


def test_product_table():
    d = QiteDomain.full(2)
    idx, ph = d.product_table
    keys = d.pauli_basis
    for i in (3, 7, 11):
        for j in (2, 5, 14):
            lhs = dense_sum(PauliSum.from_terms([PauliTerm(1.0, *keys[i])]), 2) @ dense_sum(PauliSum.from_terms([PauliTerm(1.0, *keys[j])]), 2)
            rhs = ph[i, j] * dense_sum(PauliSum.from_terms([PauliTerm(1.0, *keys[idx[i, j]])]), 2)
            assert np.allclose(lhs, rhs)


def test_measure_domain_exact_and_sampled(h2):
    d = QiteDomain.full(4)
    reg = mixed_state(h2)
    ev = measure_domain(reg, d)
    for k in (5, 77, 200):
        op = dense_sum(PauliSum.from_terms([PauliTerm(1.0, *d.pauli_basis[k])]), 4)
        assert ev[k] == pytest.approx(np.vdot(reg.amplitudes, op @ reg.amplitudes).real, abs=1e-12)
    shots = 10000
    sampled = measure_domain(reg, d, "sampled", shots, make_rng(1))
    assert sampled[0] == ev[0]
    assert np.all(np.abs(sampled - ev) <= 5 * np.sqrt(np.maximum(1 - ev**2, 1e-12) / shots) + 1e-12)
    with pytest.raises(ValueError):
        measure_domain(reg, d, "sampled", shots)


# --- split ----------------------------------------------------------------------------------


def test_split_hermitian_only(h2):
    herm, nonherm = split_hamiltonian(h2.h_pauli)
    assert nonherm == [] and herm.terms == h2.h_pauli.simplify().terms


def test_split_cap_all_imaginary(h2_cap):
    herm, nonherm = split_hamiltonian(h2_cap.cap_pauli)
    assert len(herm) == 0 and len(nonherm) == len(h2_cap.cap_pauli)
    assert all(abs(t.coefficient.real) == 0 for t in nonherm)


def test_split_mixed_conserves_terms(h2_cap):
    total = (h2_cap.h_pauli + h2_cap.cap_pauli).simplify()
    herm, nonherm = split_hamiltonian(total)
    mixed = sum(1 for c in total.terms.values() if abs(c.real) > 1e-12 and abs(c.imag) > 1e-12)
    assert len(herm) + len(nonherm) == len(total) + mixed
    back = (herm + PauliSum.from_terms(nonherm)).simplify()
    assert set(back.terms) == set(total.terms)
    for k, v in total.terms.items():
        assert back.terms[k] == pytest.approx(v)


# --- norm factor ------------------------------------------------------------------------------


def test_norm_factor_zero_expectation():
    reg = register_from_amplitudes(np.ones(2, dtype=complex))
    assert norm_factor(reg, PauliTerm(-0.3j, 0, 1), 0.2) == pytest.approx(1.0, abs=1e-14)


def test_norm_factor_occupied_orbital():
    g, dt = 0.04, 0.2
    assert norm_factor(init_register(3, 0b100), number_op(2, g), dt) == pytest.approx(1 - g * dt, abs=1e-14)
    assert norm_factor(init_register(3, 0b011), number_op(2, g), dt) == pytest.approx(1.0, abs=1e-14)


def test_norm_factor_rejects_real_term():
    with pytest.raises(ValueError):
        norm_factor(init_register(1), PauliTerm(0.5, 0, 1), 0.1)


def test_norm_factor_sampled(h2_cap):
    reg = mixed_state(h2_cap)
    f = h2_cap.cap_factors[1]
    exact = norm_factor(reg, f, 0.2)
    got = [norm_factor(reg, f, 0.2, "sampled", 10**4, s) for s in range(6)]
    assert got[0] == norm_factor(reg, f, 0.2, "sampled", 10**4, 0)
    assert np.all(np.abs(np.array(got) - exact) < 5 * 0.2 * 0.02 / 100)


def test_norm_factor_matches_lifetime(h2_cap):
    eig = h2_cap.eigenbasis
    ex = eig.singlets[1]
    reg = state(h2_cap, np.eye(4)[ex])
    dev = []
    for dt in DTS:
        c2 = np.prod([norm_factor(reg, f, dt) for f in h2_cap.cap_factors])
        dev.append(abs(c2 - (1 - eig.lifetime_shifts[ex] * dt)))
        assert dev[-1] < 0.1 * dt**2
    assert np.polyfit(np.log(DTS), np.log(dev), 1)[0] == pytest.approx(2.0, abs=0.2)


# --- solve ----------------------------------------------------------------------------------


def test_zero_term_gives_zero_step(h2):
    reg = mixed_state(h2)
    d = QiteDomain.full(4)
    rec = solve_qite_coefficients(reg, number_op(1, 0.0).simplify(), 0.2, d)
    assert np.all(rec.a_coefficients == 0) and rec.c_squared == 1.0
    before = reg.amplitudes.copy()
    apply_qite_step(reg, rec, d, 0.2)
    assert np.array_equal(reg.amplitudes, before)


def test_two_level_closed_form():
    g, dt = 0.3, 0.1
    psi = np.array([1, 1], dtype=complex) / np.sqrt(2)
    d = QiteDomain.full(1)
    reg = register_from_amplitudes(psi)
    h = number_op(0, g)
    rec = solve_qite_coefficients(reg, h, dt, d, delta=0.0)
    apply_qite_step(reg, rec, d, dt)
    target = np.array([1, np.exp(-g * dt / 2)]) / np.sqrt(1 + np.exp(-g * dt))
    assert np.linalg.norm(reg.amplitudes - target * np.exp(1j * np.angle(np.vdot(target, reg.amplitudes)))) < dt**2
    assert rec.c_squared == pytest.approx(1 - g * dt / 2)


def two_level_errors(delta):
    g = 0.3
    psi = np.array([1, 1], dtype=complex) / np.sqrt(2)
    d = QiteDomain.full(1)
    errs = []
    for dt in DTS:
        reg = qite_steps(register_from_amplitudes(psi), [number_op(0, g)], dt, d, delta)
        tgt = renormalized_target(psi, [number_op(0, g)], dt, 1)
        errs.append(np.linalg.norm(reg.amplitudes - tgt))
    return np.array(errs)


def test_first_order_consistency(h2_cap):
    # one QITE step against the dense renormalized target; small delta so its O(delta dt) term stays out
    d = QiteDomain.full(4)
    psi = mixed_state(h2_cap).amplitudes
    err = []
    for dt in DTS:
        out = qite_steps(register_from_amplitudes(psi), h2_cap.cap_factors, dt, d, 1e-6).amplitudes
        err.append(np.linalg.norm(out - renormalized_target(psi, h2_cap.cap_factors, dt, 4)))
    assert np.polyfit(np.log(DTS), np.log(err), 1)[0] == pytest.approx(2.0, abs=0.3)


def test_two_level_at_least_second_order():
    err = two_level_errors(0.0)
    assert np.polyfit(np.log(DTS), np.log(err), 1)[0] >= 1.7


def test_delta_to_zero_reduction():
    errs = [two_level_errors(delta)[1] for delta in (1e-1, 1e-2, 1e-3, 0.0)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] - errs[3] < 2e-3 * 0.2
    assert errs[3] < 0.2**2


def test_h2_step_residual_and_determinism(h2_cap):
    d = QiteDomain.full(4)
    reg = mixed_state(h2_cap)
    recs = [solve_qite_coefficients(reg, f, 0.2, d, 0.1) for f in h2_cap.cap_factors]
    again = [solve_qite_coefficients(reg, f, 0.2, d, 0.1) for f in h2_cap.cap_factors]
    for r, s in zip(recs, again):
        assert r.residual < 1e-3 and np.isfinite(r.residual)
        assert np.array_equal(r.a_coefficients, s.a_coefficients)
        assert 0 < r.c_squared <= 1 + 1e-8
    s1 = solve_qite_coefficients(reg, h2_cap.cap_factors[1], 0.2, d, 0.1, "sampled", 10**6, 5)
    s2 = solve_qite_coefficients(reg, h2_cap.cap_factors[1], 0.2, d, 0.1, "sampled", 10**6, 5)
    assert np.array_equal(s1.a_coefficients, s2.a_coefficients)


def test_residual_matches_dense_distance(h2_cap):
    d = QiteDomain.full(4)
    reg = mixed_state(h2_cap)
    f = h2_cap.cap_factors[1]
    dt = 0.2
    rec = solve_qite_coefficients(reg, f, dt, d, 1e-6)
    out = apply_qite_step(reg.copy(), rec, d, dt).amplitudes
    dense = np.linalg.norm(out - renormalized_target(reg.amplitudes, [f], dt, 4))
    assert dense < 1e-3
    assert rec.residual == pytest.approx(dense, abs=dt**2 * 1e-2)


def test_singular_system_reports_condition():
    with pytest.raises(QiteSolveError) as info:
        solve_qite_coefficients(init_register(2), PauliTerm(-0.5j, 0, 1), 0.1, QiteDomain.full(2), 0.0)
    assert info.value.condition_estimate > 1e14


def test_solve_rejects_uncovered_and_negative_delta():
    with pytest.raises(ValueError):
        solve_qite_coefficients(init_register(3), PauliTerm(-0.5j, 0, 4), 0.1, QiteDomain((0, 1), 3))
    with pytest.raises(ValueError):
        solve_qite_coefficients(init_register(1), PauliTerm(-0.5j, 0, 1), 0.1, QiteDomain.full(1), -1.0)


# --- apply ----------------------------------------------------------------------------------


def test_apply_single_coefficient_is_rotation():
    d = QiteDomain.full(2)
    a = np.zeros(15)
    k = 6
    a[k - 1] = 0.7
    rec = QiteStepRecord(1.0, a, 0.0, 1.0)
    psi = np.array([0.5, 0.5j, -0.5, 0.5], dtype=complex)
    got = apply_qite_step(register_from_amplitudes(psi), rec, d, 0.3)
    ref = apply_pauli_rotation(register_from_amplitudes(psi), PauliTerm(0.7, *d.pauli_basis[k]), 0.3)
    assert np.allclose(got.amplitudes, ref.amplitudes, atol=1e-14)


def test_apply_rejects_wrong_length():
    with pytest.raises(ValueError):
        apply_qite_step(init_register(2), QiteStepRecord(1.0, np.zeros(3), 0.0, 1.0), QiteDomain.full(2), 0.1)


def test_h2_ionization_step_fidelity(h2_cap):
    d = QiteDomain.full(4)
    psi = mixed_state(h2_cap).amplitudes
    infid = []
    for dt in DTS:
        out = qite_steps(register_from_amplitudes(psi), h2_cap.cap_factors, dt, d, 0.1).amplitudes
        tgt = renormalized_target(psi, h2_cap.cap_factors, dt, 4)
        infid.append(1 - abs(np.vdot(tgt, out)) ** 2)
        assert infid[-1] <= dt**2
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)


# --- propagation ----------------------------------------------------------------------------


def test_zero_cap_reduces_to_qdyn(h2):
    obs = PopulationObserver(h2.eigenbasis, h2.basis, h2.dipole_states)
    cfg = PropagationConfig(0.2, 40.0, 2, 5)
    p = LaserPulse((0.0, 0.0, 0.05), 0.9673, 20.0, 20.0)
    reg = state(h2, np.eye(4)[0])
    a = propagate_with_cap(reg, h2.h_pauli, h2.dipole_pauli, PauliSum(), p, cfg, observer=obs)
    b = propagate_quantum(reg, h2.h_pauli, h2.dipole_pauli, p, cfg, obs)
    assert np.max(np.abs(a.populations - b.populations)) < 1e-10
    assert np.all(a.norm == 1.0)


def test_zero_gamma_factors_reduce_to_qdyn(h2):
    obs = PopulationObserver(h2.eigenbasis, h2.basis, h2.dipole_states)
    cfg = PropagationConfig(0.2, 10.0, 2, 5)
    p = LaserPulse((0.0, 0.0, 0.05), 0.9673, 5.0, 5.0)
    reg = state(h2, np.eye(4)[0])
    zero = [number_op(q, 1e-30) for q in range(4)]
    a = propagate_with_cap(reg, h2.h_pauli, h2.dipole_pauli, zero, p, cfg, observer=obs)
    b = propagate_quantum(reg, h2.h_pauli, h2.dipole_pauli, p, cfg, obs)
    assert np.max(np.abs(a.populations - b.populations)) < 1e-10


@pytest.fixture(scope="module")
def h2_cap_run(h2_cap):
    obs = PopulationObserver(h2_cap.eigenbasis, h2_cap.basis, h2_cap.dipole_states)
    records = []
    series = propagate_with_cap(state(h2_cap, np.eye(4)[0]), h2_cap.h_pauli, h2_cap.dipole_pauli, h2_cap.cap_factors,
                                H2_PULSE, PropagationConfig(0.2, 500.0, 2, 5), observer=obs, records=records)
    return series, records


def test_register_stays_normalized(h2_cap_run):
    series, _ = h2_cap_run
    assert np.max(np.abs(series.extra["register_norm"] - 1)) < 1e-10


def test_norm_non_increasing_and_is_c2_product(h2_cap_run, h2_cap):
    series, records = h2_cap_run
    assert np.all(np.diff(series.norm) <= 1e-15)
    assert series.norm[-1] == pytest.approx(np.prod([r.c_squared for _, _, r in records]), rel=1e-12)
    assert len(records) == 2500 * len(h2_cap.cap_factors)
    assert all(0 < r.c_squared <= 1 + 1e-8 for _, _, r in records)


def test_populations_norm_weighted(h2_cap_run):
    series, _ = h2_cap_run
    assert np.allclose(series.populations.sum(axis=1), series.norm, atol=1e-10)


def test_mode_validation(h2):
    with pytest.raises(ValueError):
        propagate_with_cap(init_register(4, 3), h2.h_pauli, h2.dipole_pauli, PauliSum(), H2_PULSE,
                           PropagationConfig(0.2, 1.0), mode="noisy")
