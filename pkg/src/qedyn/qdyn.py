"""Trotterized real-time propagation of the qubit register.

Term order inside a step is the canonical sort of ``(x, z)`` masks. All
Z-only terms sort first; they commute, so they are fused into one exact
diagonal phase without changing the product.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .pulse import LaserPulse, pulse_field
from .qsim import PRUNE_TOL, PauliSum, QubitRegister, _parity_table, _string_phases
from .refdyn import CIEigenbasis, DeterminantBasis
from .series import TimeSeries

__all__ = [
    "LaserPulse",
    "PropagationConfig",
    "TrotterEngine",
    "assemble_step_hamiltonian",
    "populations_from_register",
    "propagate_quantum",
    "pulse_field",
    "trotter_step",
]


@dataclass(frozen=True)
class PropagationConfig:
    dt: float
    t_final: float
    trotter_order: int = 2
    record_every: int = 1
    cycles: int = 1  # repeated first-order cycles per step

    def __post_init__(self):
        if self.dt == 0:
            raise ValueError("dt must be non-zero")
        if abs(self.t_final) < abs(self.dt) - 1e-12:
            raise ValueError("t_final must be at least one time step")
        if self.trotter_order not in (1, 2):
            raise ValueError("trotter_order must be 1 or 2")
        if self.record_every < 1 or self.cycles < 1:
            raise ValueError("record_every and cycles must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


def assemble_step_hamiltonian(
    h_el: PauliSum, dipoles: Sequence[PauliSum], p: LaserPulse, t_mid: float
) -> PauliSum:
    """H_el + sum_a F_a(t_mid) mu_a, identity terms kept."""
    f = pulse_field(p, t_mid)
    out = PauliSum(dict(h_el.terms))
    for fa, mu in zip(f, dipoles):
        if fa != 0.0:
            for (x, z), c in mu.terms.items():
                out.add_term(fa * c, x, z)
    return out.simplify()


class TrotterEngine:
    """Precompiled per-term kernels for a fixed set of Pauli strings."""

    def __init__(self, keys, num_qubits: int):
        self.num_qubits = num_qubits
        keys = sorted(set(keys))
        self.diag_keys = [k for k in keys if k[0] == 0 and k != (0, 0)]
        self.off_keys = [k for k in keys if k[0] != 0]
        self.has_identity = (0, 0) in keys
        idx = np.arange(1 << num_qubits)
        par = _parity_table(num_qubits)
        self._diag = np.array([par[idx & z] for _, z in self.diag_keys], dtype=float).reshape(
            len(self.diag_keys), 1 << num_qubits
        )
        self._src = []
        self._phase = []
        for x, z in self.off_keys:
            src = idx ^ x
            self._src.append(src)
            self._phase.append(-1j * _string_phases(x, z, num_qubits)[src])
        self._pos = {k: i for i, k in enumerate(keys)}
        self.keys = keys

    def coefficients(self, h: PauliSum) -> np.ndarray:
        c = np.zeros(len(self.keys))
        for k, v in h.terms.items():
            if abs(v.imag) > PRUNE_TOL:
                raise ValueError("Trotter step needs a Hermitian (real-coefficient) Pauli sum")
            try:
                c[self._pos[k]] = v.real
            except KeyError:
                raise ValueError(f"Pauli string {k} was not compiled into this engine") from None
        return c

    def _split(self, coeffs: np.ndarray):
        off0 = len(self.keys) - len(self.off_keys)
        diag_c = coeffs[int(self.has_identity):off0]
        const = coeffs[0] if self.has_identity else 0.0
        return const, diag_c, coeffs[off0:]

    def _apply_diag(self, psi, const, diag_c, tau):
        if len(diag_c):
            psi *= np.exp(-1j * tau * (const + diag_c @ self._diag))
        elif const:
            psi *= np.exp(-1j * tau * const)

    def _apply_off(self, psi, j, angle):
        p_psi = self._phase[j] * psi[self._src[j]]
        psi *= np.cos(angle)
        psi += np.sin(angle) * p_psi

    def step(
        self,
        reg: QubitRegister,
        coeffs: np.ndarray,
        dt: float,
        order: int = 2,
        cycles: int = 1,
        middle: Callable[[QubitRegister], None] | None = None,
    ):
        """One step; ``middle`` (if given) is applied once, at the centre of an
        order-2 sequence or at the end of an order-1 one."""
        if reg.num_qubits != self.num_qubits:
            raise ValueError("register size does not match the compiled engine")
        psi = reg.amplitudes
        const, diag_c, off_c = self._split(coeffs)
        live = [j for j in range(len(off_c)) if off_c[j] != 0.0]
        if order == 1:
            tau = dt / cycles
            for _ in range(cycles):
                self._apply_diag(psi, const, diag_c, tau)
                for j in live:
                    self._apply_off(psi, j, off_c[j] * tau)
            if middle is not None:
                middle(reg)
        elif order == 2:
            tau = dt / cycles
            centre = cycles // 2
            for c in range(cycles):
                self._apply_diag(psi, const, diag_c, tau / 2)
                for j in live[:-1]:
                    self._apply_off(psi, j, off_c[j] * tau / 2)
                if middle is not None and c == centre and cycles % 2 == 1:
                    if live:
                        self._apply_off(psi, live[-1], off_c[live[-1]] * tau / 2)
                    middle(reg)
                    if live:
                        self._apply_off(psi, live[-1], off_c[live[-1]] * tau / 2)
                elif live:
                    self._apply_off(psi, live[-1], off_c[live[-1]] * tau)
                for j in reversed(live[:-1]):
                    self._apply_off(psi, j, off_c[j] * tau / 2)
                self._apply_diag(psi, const, diag_c, tau / 2)
                if middle is not None and cycles % 2 == 0 and c == centre - 1:
                    middle(reg)
        else:
            raise ValueError("order must be 1 or 2")
        return reg


_engine_cache: dict = {}


def trotter_step(reg: QubitRegister, h: PauliSum, dt: float, order: int = 2, cycles: int = 1) -> QubitRegister:
    """One Trotterized step exp(-i h dt) on the register.

    ``order=1`` with ``cycles=N`` is the repeated first-order product of N
    sub-steps; ``order=2`` is the symmetric (Strang) sequence.
    """
    if not h.is_hermitian():
        raise ValueError("Trotter step needs a Hermitian (real-coefficient) Pauli sum")
    keys = tuple(sorted(h.terms))
    ck = (keys, reg.num_qubits)
    eng = _engine_cache.get(ck)
    if eng is None:
        if len(_engine_cache) > 64:
            _engine_cache.clear()
        eng = _engine_cache[ck] = TrotterEngine(keys, reg.num_qubits)
    return eng.step(reg, eng.coefficients(h), dt, order, cycles)


class DrivenHamiltonian:
    """H_el + F(t).mu with the coefficient vector assembled in O(terms) per step."""

    def __init__(self, h_el: PauliSum, dipoles: Sequence[PauliSum], pulse: LaserPulse, num_qubits: int):
        keys = set(h_el.terms)
        active = [a for a in range(3) if pulse.f0[a] != 0.0]
        for a in active:
            keys |= set(dipoles[a].terms)
        self.engine = TrotterEngine(keys, num_qubits)
        self.base = self.engine.coefficients(h_el)
        self.mu = {a: self.engine.coefficients(dipoles[a]) for a in active}
        self.pulse = pulse

    def coefficients(self, t_mid: float) -> np.ndarray:
        c = self.base.copy()
        f = pulse_field(self.pulse, t_mid)
        for a, m in self.mu.items():
            if f[a] != 0.0:
                c += f[a] * m
        return c


Observer = Callable[[float, QubitRegister], dict]


def propagate_quantum(
    reg0: QubitRegister,
    h_el: PauliSum,
    dipoles: Sequence[PauliSum],
    pulse: LaserPulse,
    cfg: PropagationConfig,
    observer: Observer | None = None,
    t0: float = 0.0,
    copy: bool = True,
) -> TimeSeries:
    """Propagate ``reg0`` with H(t + dt/2) each step; observe on the recording grid.

    The observer returns a dict with optional ``populations``, ``dipole`` and
    ``norm`` entries and must not modify the register.
    """
    reg = reg0.copy() if copy else reg0
    drive = DrivenHamiltonian(h_el, dipoles, pulse, reg.num_qubits)
    observer = observer or norm_observer
    rec = _Rows(pulse)
    rec.add(t0, observer(t0, reg))
    n = cfg.n_steps
    for step in range(1, n + 1):
        t = t0 + (step - 1) * cfg.dt
        drive.engine.step(reg, drive.coefficients(t + cfg.dt / 2), cfg.dt, cfg.trotter_order, cfg.cycles)
        if step % cfg.record_every == 0 or step == n:
            rec.add(t0 + step * cfg.dt, observer(t0 + step * cfg.dt, reg))
    series = rec.series()
    series.final_state = reg
    return series


def norm_observer(t: float, reg: QubitRegister) -> dict:
    return {"norm": reg.norm_squared()}


class _Rows:
    def __init__(self, pulse: LaserPulse):
        self.pulse = pulse
        self.rows = []

    def add(self, t: float, obs: dict) -> None:
        self.rows.append((t, obs))

    def series(self) -> TimeSeries:
        times = np.array([t for t, _ in self.rows])
        fields = np.array([pulse_field(self.pulse, t) for t in times])
        first = self.rows[0][1]
        pops = np.array([o.get("populations", np.zeros(0)) for _, o in self.rows])
        if pops.ndim == 1:
            pops = pops.reshape(len(times), -1)
        dip = np.array([o.get("dipole", np.full(3, np.nan)) for _, o in self.rows])
        norm = np.array([o.get("norm", 1.0) for _, o in self.rows])
        labels = list(first.get("labels", range(pops.shape[1])))
        extra = {
            k: np.array([o[k] for _, o in self.rows])
            for k in first
            if k not in ("populations", "dipole", "norm", "labels")
        }
        return TimeSeries(times, fields, pops, dip, norm, labels, extra)


def populations_from_register(
    reg: QubitRegister, eig: CIEigenbasis, basis: DeterminantBasis, weight: float = 1.0
) -> np.ndarray:
    """P_i = weight * |sum_D C_Di^* amp(D)|^2 (simulator-privileged readout)."""
    amps = reg.amplitudes[np.asarray(basis.determinants)]
    b = eig.coefficients.conj().T @ amps
    return weight * np.abs(b) ** 2


class PopulationObserver:
    """Reads CI populations and the dipole vector straight from the state vector."""

    def __init__(self, eig: CIEigenbasis, basis: DeterminantBasis, dipole_states: np.ndarray):
        self.eig, self.basis = eig, basis
        self.mu = dipole_states
        self.dets = np.asarray(basis.determinants)

    def coefficients(self, reg: QubitRegister) -> np.ndarray:
        return self.eig.coefficients.conj().T @ reg.amplitudes[self.dets]

    def __call__(self, t: float, reg: QubitRegister, weight: float = 1.0) -> dict:
        b = self.coefficients(reg)
        p = np.abs(b) ** 2
        inside = float(p.sum())
        dip = np.array([np.vdot(b, m @ b).real for m in self.mu]) / inside
        return {"populations": weight * p, "dipole": dip, "norm": weight * reg.norm_squared()}
