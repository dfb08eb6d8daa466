"""Unitary replacement of non-Hermitian Trotter factors (QITE-style).

A factor ``exp(-i h dt)`` with ``h = -i K`` and ``K`` Hermitian is replaced by
``exp(-i A dt)`` with ``A = sum_I a_I sigma_I`` fitted so that, to first order
in ``dt``, it maps the register onto the renormalized state
``c^-1 exp(-K dt)|psi>``. The lost norm ``c^2 = 1 - 2 dt <K>`` is kept as a
classical number.

Fit: minimize ``|| -i A psi - Delta ||`` with ``Delta = -(K - <K>) psi``,
which gives ``(2 Re S + delta 1) a = b`` with ``S_IJ = <sigma_I sigma_J>`` and
``b_I = -2 Im <K sigma_I>``. Everything is built from the ``4^m`` expectation
values ``<sigma_K>`` on the domain, so the same table serves exact and
shot-sampled readout.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .pulse import LaserPulse
from .qdyn import DrivenHamiltonian, PropagationConfig, TrotterEngine, _Rows
from .qsim import (
    PRUNE_TOL,
    PauliSum,
    PauliTerm,
    QubitRegister,
    _string_phases,
    expectation_pauli_term,
    make_rng,
    pauli_product,
    sample_pauli_expectation,
)
from .series import TimeSeries

MAX_DOMAIN_QUBITS = 6
C2_TOL = 1e-8


class QiteSolveError(RuntimeError):
    def __init__(self, message: str, condition_estimate: float):
        super().__init__(f"{message} (condition estimate {condition_estimate:.3e})")
        self.condition_estimate = condition_estimate


@dataclass(frozen=True)
class QiteStepRecord:
    c_squared: float
    a_coefficients: np.ndarray
    residual: float
    condition_estimate: float


def _subset_masks(qubits: Sequence[int], digits: Sequence[int]) -> tuple[int, int]:
    # digit 0..3 -> I, X, Y, Z on the matching qubit
    x = z = 0
    for q, d in zip(qubits, digits):
        if d in (1, 2):
            x |= 1 << q
        if d in (2, 3):
            z |= 1 << q
    return x, z


@dataclass(frozen=True)
class QiteDomain:
    """All ``4^m`` Pauli strings on ``qubit_subset``, identity first, sorted."""

    qubit_subset: tuple[int, ...]
    num_qubits: int
    max_qubits: int = MAX_DOMAIN_QUBITS

    def __post_init__(self):
        q = tuple(int(v) for v in self.qubit_subset)
        if len(set(q)) != len(q):
            raise ValueError("qubit_subset has repeated qubits")
        if any(v < 0 or v >= self.num_qubits for v in q):
            raise ValueError("qubit_subset lies outside the register")
        if len(q) > self.max_qubits:
            raise ValueError(
                f"domain of {len(q)} qubits exceeds the cap of {self.max_qubits} (4^m strings)"
            )
        object.__setattr__(self, "qubit_subset", q)

    @classmethod
    def full(cls, num_qubits: int, max_qubits: int = MAX_DOMAIN_QUBITS) -> QiteDomain:
        return cls(tuple(range(num_qubits)), num_qubits, max_qubits)

    @cached_property
    def pauli_basis(self) -> list[tuple[int, int]]:
        m = len(self.qubit_subset)
        keys = set()
        for code in range(4**m):
            digits = [(code >> (2 * i)) & 3 for i in range(m)]
            keys.add(_subset_masks(self.qubit_subset, digits))
        return sorted(keys)

    @property
    def mask(self) -> int:
        return sum(1 << q for q in self.qubit_subset)

    def covers(self, op: PauliSum) -> bool:
        return all(((x | z) & ~self.mask) == 0 for x, z in op.terms)

    @cached_property
    def index(self) -> dict[tuple[int, int], int]:
        return {k: i for i, k in enumerate(self.pauli_basis)}

    @cached_property
    def product_table(self) -> tuple[np.ndarray, np.ndarray]:
        """``sigma_I sigma_J = phase[I, J] sigma_{idx[I, J]}``."""
        keys = self.pauli_basis
        n = len(keys)
        idx = np.empty((n, n), dtype=np.int64)
        phase = np.empty((n, n), dtype=complex)
        pos = self.index
        for i, (x1, z1) in enumerate(keys):
            for j, (x2, z2) in enumerate(keys):
                ph, x, z = pauli_product(x1, z1, x2, z2)
                idx[i, j] = pos[(x, z)]
                phase[i, j] = ph
        return idx, phase

    @cached_property
    def readout_kernel(self) -> tuple[np.ndarray, np.ndarray]:
        """Gather indices and phases so that ``<sigma_K> = sum_b conj(psi_b) ph[K,b] psi[src[K,b]]``."""
        b = np.arange(1 << self.num_qubits)
        src = np.array([b ^ x for x, _ in self.pauli_basis])
        ph = np.array(
            [_string_phases(x, z, self.num_qubits)[b ^ x] for x, z in self.pauli_basis]
        )
        return src, ph

    @cached_property
    def engine(self) -> TrotterEngine:
        return TrotterEngine(self.pauli_basis[1:], self.num_qubits)


def split_hamiltonian(h: PauliSum) -> tuple[PauliSum, list[PauliTerm]]:
    """Partition into the Hermitian part and purely imaginary terms.

    A term with sizeable real and imaginary parts contributes to both sides.
    """
    herm = PauliSum()
    nonherm: list[PauliTerm] = []
    for (x, z), c in sorted(h.terms.items()):
        if abs(c.real) > PRUNE_TOL or abs(c.imag) <= PRUNE_TOL:
            herm.add_term(complex(c.real), x, z)
        if abs(c.imag) > PRUNE_TOL:
            nonherm.append(PauliTerm(1j * c.imag, x, z))
    return herm.simplify(), nonherm


def _as_sum(h_j: PauliTerm | PauliSum | Sequence[PauliTerm]) -> PauliSum:
    if isinstance(h_j, PauliSum):
        op = h_j
    elif isinstance(h_j, PauliTerm):
        op = PauliSum.from_terms([h_j])
    else:
        op = PauliSum.from_terms(list(h_j))
    for c in op.terms.values():
        if abs(c.real) > PRUNE_TOL:
            raise ValueError("non-Hermitian factor must have purely imaginary coefficients")
    return op


def _k_coefficients(op: PauliSum) -> dict[tuple[int, int], float]:
    # h = -i K  ->  K = i h, real coefficients
    return {k: float((1j * c).real) for k, c in op.terms.items()}


def norm_factor(
    reg: QubitRegister,
    h_j: PauliTerm | PauliSum,
    dt: float,
    mode: str = "exact",
    shots: int = 10**6,
    seed=0,
) -> float:
    """``c_j^2 = 1 - 2 i dt <h_j>``, real for a purely imaginary ``h_j``."""
    op = _as_sum(h_j)
    seed = seed if isinstance(seed, tuple) else (seed,)
    k_exp = 0.0
    for n, ((x, z), kc) in enumerate(sorted(_k_coefficients(op).items())):
        if (x, z) == (0, 0):
            k_exp += kc * reg.norm_squared()
        elif mode == "exact":
            k_exp += kc * expectation_pauli_term(reg, x, z).real
        elif mode == "sampled":
            k_exp += kc * sample_pauli_expectation(reg, PauliTerm(1.0, x, z), shots, (*seed, n))
        else:
            raise ValueError("mode must be 'exact' or 'sampled'")
    return 1.0 - 2.0 * dt * k_exp


def measure_domain(
    reg: QubitRegister, domain: QiteDomain, mode: str = "exact", shots: int = 10**6, rng=None
) -> np.ndarray:
    """``<sigma_K>`` for every domain string, exact or shot-sampled."""
    src, ph = domain.readout_kernel
    psi = reg.amplitudes
    exact = np.einsum("b,kb->k", psi.conj(), ph * psi[src]).real
    if mode == "exact":
        return exact
    if mode != "sampled":
        raise ValueError("mode must be 'exact' or 'sampled'")
    if rng is None:
        raise ValueError("sampled readout needs an rng")
    p = np.clip(0.5 * (1.0 + exact[1:]), 0.0, 1.0)
    out = np.empty_like(exact)
    out[0] = exact[0]
    out[1:] = 2.0 * rng.binomial(shots, p) / shots - 1.0
    return out


def _solve_from_table(
    ev: np.ndarray, k_coef: dict, dt: float, domain: QiteDomain, delta: float
) -> QiteStepRecord:
    idx, phase = domain.product_table
    pos = domain.index
    # Re <sigma_I sigma_J>, identity dropped; the phases are +-1 or +-i
    s = phase.real[1:, 1:] * ev[idx[1:, 1:]]
    rows = np.array([pos[key] for key in k_coef], dtype=np.int64)
    kc = np.array(list(k_coef.values()), dtype=float)
    k_sigma = kc @ (phase[rows] * ev[idx[rows]])  # <K sigma_I>
    b = -2.0 * k_sigma.imag[1:]
    k_mean = float(kc @ ev[rows])
    k2 = float((k_sigma[rows] @ kc).real)
    c2 = 1.0 - 2.0 * dt * k_mean
    m = 2.0 * s
    m.flat[:: len(s) + 1] += delta
    anorm = np.abs(m).sum(axis=0).max()
    try:
        cf = scipy.linalg.cho_factor(m, lower=False, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        raise QiteSolveError("QITE normal equations are singular", float(np.linalg.cond(m))) from None
    rcond, _ = scipy.linalg.lapack.dpocon(cf[0], anorm)
    cond = float(np.inf if rcond == 0 else 1.0 / rcond)
    if not np.isfinite(cond) or cond > 1e14:
        raise QiteSolveError("QITE normal equations are numerically singular", cond)
    a = scipy.linalg.cho_solve(cf, b, check_finite=False)
    fit = max(0.0, k2 - k_mean**2 + a @ s @ a - a @ b)
    return QiteStepRecord(c2, a, float(dt * np.sqrt(fit)), cond)


def solve_qite_coefficients(
    reg: QubitRegister,
    h_j: PauliTerm | PauliSum,
    dt: float,
    domain: QiteDomain,
    delta: float = 0.1,
    mode: str = "exact",
    shots: int = 10**6,
    seed=0,
) -> QiteStepRecord:
    """Fit the real ``a_I`` of ``exp(-i A dt)`` replacing ``c^-1 exp(-i h_j dt)``.

    ``residual`` is ``dt * ||-i A psi - Delta||``, the first-order distance
    between the unitary step and the renormalized target.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    op = _as_sum(h_j)
    if not domain.covers(op):
        raise ValueError("domain does not cover the support of h_j")
    seed = seed if isinstance(seed, tuple) else (seed,)
    rng = make_rng(*seed) if mode == "sampled" else None
    ev = measure_domain(reg, domain, mode, shots, rng)
    return _solve_from_table(ev, _k_coefficients(op), dt, domain, delta)


def apply_qite_step(reg: QubitRegister, rec: QiteStepRecord, domain: QiteDomain, dt: float) -> QubitRegister:
    """Product of ``exp(-i a_I dt sigma_I)`` in canonical string order."""
    a = np.asarray(rec.a_coefficients, dtype=float)
    if len(a) != len(domain.pauli_basis) - 1:
        raise ValueError("coefficient vector does not match the domain")
    if not np.any(a):
        return reg
    return domain.engine.step(reg, a, dt, order=1)


def _factor_list(cap) -> tuple[PauliSum, list[PauliSum]]:
    """Hermitian remainder and the non-Hermitian factors of ``cap``.

    A single PauliSum is one factor; a sequence gives one factor per entry.
    """
    parts = [cap] if isinstance(cap, PauliSum) else list(cap)
    herm = PauliSum()
    factors = []
    for part in parts:
        h, nh = split_hamiltonian(part)
        herm = herm + h
        if nh:
            factors.append(PauliSum.from_terms(nh))
    return herm.simplify(), factors


class _QiteMiddle:
    def __init__(self, factors, domain, dt, delta, mode, shots, seed, records):
        self.factors = [_k_coefficients(f) for f in factors]
        self.domain, self.dt, self.delta = domain, dt, delta
        self.mode, self.shots, self.seed = mode, shots, seed
        self.norm = 1.0
        self.step_index = 0
        self.records = records

    def __call__(self, reg: QubitRegister) -> None:
        for j, k_coef in enumerate(self.factors):
            rng = make_rng(self.seed, self.step_index, j) if self.mode == "sampled" else None
            ev = measure_domain(reg, self.domain, self.mode, self.shots, rng)
            rec = _solve_from_table(ev, k_coef, self.dt, self.domain, self.delta)
            if not (0.0 < rec.c_squared <= 1.0 + C2_TOL) and self.mode == "exact":
                raise RuntimeError(f"norm factor {rec.c_squared} outside (0, 1]")
            apply_qite_step(reg, rec, self.domain, self.dt)
            self.norm *= rec.c_squared
            if self.records is not None:
                self.records.append((self.step_index, j, rec))


def propagate_with_cap(
    reg0: QubitRegister,
    h_el: PauliSum,
    dipoles: Sequence[PauliSum],
    cap,
    pulse: LaserPulse,
    cfg: PropagationConfig,
    mode: str = "exact",
    shots: int = 10**6,
    seed: int = 0,
    delta: float = 0.1,
    domain: QiteDomain | None = None,
    observer: Callable[[float, QubitRegister], dict] | None = None,
    records: list | None = None,
) -> TimeSeries:
    """Trotter propagation with QITE replacements for the CAP factors.

    The non-Hermitian factors sit at the centre of each order-2 step. The
    ``norm`` column is the running product of all ``c_j^2``; ``populations``
    from the observer are multiplied by it. If ``records`` is a list, every
    ``(step, factor, QiteStepRecord)`` is appended to it.
    """
    if mode not in ("exact", "sampled"):
        raise ValueError("mode must be 'exact' or 'sampled'")
    reg = reg0.copy()
    herm_cap, factors = _factor_list(cap)
    h_total = (h_el + herm_cap).simplify() if herm_cap.terms else h_el
    drive = DrivenHamiltonian(h_total, dipoles, pulse, reg.num_qubits)
    domain = domain or QiteDomain.full(reg.num_qubits)
    for f in factors:
        if not domain.covers(f):
            raise ValueError("QITE domain does not cover the CAP support")
    mid = _QiteMiddle(factors, domain, cfg.dt, delta, mode, shots, seed, records)
    middle = mid if factors else None

    def observe(t: float, r: QubitRegister) -> dict:
        out = dict(observer(t, r)) if observer else {}
        if "populations" in out:
            out["populations"] = mid.norm * np.asarray(out["populations"]) / r.norm_squared()
        out["norm"] = mid.norm
        out["register_norm"] = r.norm_squared()
        return out

    rec = _Rows(pulse)
    rec.add(0.0, observe(0.0, reg))
    n = cfg.n_steps
    for step in range(1, n + 1):
        t = (step - 1) * cfg.dt
        mid.step_index = step
        drive.engine.step(
            reg, drive.coefficients(t + cfg.dt / 2), cfg.dt, cfg.trotter_order, cfg.cycles, middle
        )
        if step % cfg.record_every == 0 or step == n:
            rec.add(step * cfg.dt, observe(step * cfg.dt, reg))
    series = rec.series()
    series.final_state = reg
    return series
