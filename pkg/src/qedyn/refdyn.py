"""Exact classical reference: FCI in a determinant basis and TD-CI propagation.

The state is propagated as CI coefficients ``B_i(t)`` with a symmetric
split step per ``dt``::

    exp(-i (H + V_cap) dt/2)  exp(-i mu.F(t + dt/2) dt)  exp(-i (H + V_cap) dt/2)

Both factors are applied through eigendecompositions computed once.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np
import scipy.linalg

from .fermion import FermionOperator, spin_orbital
from .pulse import LaserPulse
from .series import TimeSeries

DEGENERACY_TOL = 1e-9
SINGLET_TOL = 1e-6


class UnsupportedConfiguration(ValueError):
    pass


@dataclass(frozen=True)
class DeterminantBasis:
    determinants: tuple[int, ...]
    num_spin_orbitals: int

    def __post_init__(self):
        object.__setattr__(self, "_index", {d: i for i, d in enumerate(self.determinants)})

    @property
    def index_of(self) -> dict[int, int]:
        return self._index

    def __len__(self) -> int:
        return len(self.determinants)


def enumerate_determinants(k: int, n: int) -> DeterminantBasis:
    """All Sz = 0 determinants of ``n`` electrons in ``k`` spatial orbitals."""
    if n % 2:
        raise UnsupportedConfiguration("only even electron counts (Sz = 0) are supported")
    if n > 2 * k or n < 0:
        raise UnsupportedConfiguration(f"{n} electrons do not fit in {k} spatial orbitals")
    half = n // 2
    dets = []
    for alpha in combinations(range(k), half):
        for beta in combinations(range(k), half):
            mask = 0
            for p in alpha:
                mask |= 1 << spin_orbital(p, 0)
            for p in beta:
                mask |= 1 << spin_orbital(p, 1)
            dets.append(mask)
    return DeterminantBasis(tuple(sorted(dets)), 2 * k)


def _apply_product(product, det: int) -> tuple[int, int] | None:
    """Apply ladder operators (rightmost first) to a determinant; (sign, det) or None."""
    sign = 1
    for idx, creator in reversed(product):
        bit = 1 << idx
        occupied = det & bit
        if creator == bool(occupied):
            return None
        if bin(det & (bit - 1)).count("1") % 2:
            sign = -sign
        det ^= bit
    return sign, det


def build_matrix(op: FermionOperator, basis: DeterminantBasis) -> np.ndarray:
    """Matrix of ``<D_a|op|D_b>`` in the determinant basis."""
    n = len(basis)
    mat = np.zeros((n, n), dtype=complex)
    idx = basis.index_of
    for product, coeff in op.terms.items():
        for b, det in enumerate(basis.determinants):
            res = _apply_product(product, det)
            if res is None:
                continue
            sign, out = res
            a = idx.get(out)
            if a is not None:
                mat[a, b] += sign * coeff
    mat += op.constant * np.eye(n)
    return mat


@dataclass
class CIEigenbasis:
    energies: np.ndarray
    coefficients: np.ndarray  # (determinant, state)
    s2_values: np.ndarray
    lifetime_shifts: np.ndarray
    basis: DeterminantBasis | None = None
    cap_matrix: np.ndarray | None = None  # CAP in the CI-state basis
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.energies)

    @property
    def singlets(self) -> list[int]:
        return [i for i, s in enumerate(self.s2_values) if abs(s) < SINGLET_TOL]

    def to_states(self, mat: np.ndarray) -> np.ndarray:
        """Transform a determinant-basis matrix into the CI-state basis."""
        c = self.coefficients
        return c.conj().T @ mat @ c

    def state_vector(self, i: int) -> np.ndarray:
        return self.coefficients[:, i]


def _degenerate_blocks(energies: np.ndarray, tol: float) -> list[list[int]]:
    blocks, cur = [], [0]
    for i in range(1, len(energies)):
        if abs(energies[i] - energies[cur[0]]) < tol:
            cur.append(i)
        else:
            blocks.append(cur)
            cur = [i]
    blocks.append(cur)
    return blocks


def _fix_sign(vec: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(vec) > np.abs(vec).max() - 1e-8))
    return vec if vec[k].real >= 0 else -vec


def diagonalize_ci(
    h: np.ndarray,
    basis: DeterminantBasis,
    s2_operator: np.ndarray | FermionOperator,
    dipoles: np.ndarray | None = None,
    tol: float = DEGENERACY_TOL,
) -> CIEigenbasis:
    """Dense FCI with spin-pure, orientation-labelled degenerate states.

    Inside each degenerate block the states are first rotated onto S^2
    eigenstates; blocks that are still degenerate within one S^2 value are
    rotated so the transition dipoles from the ground state point along x,
    then y, then z (``dipoles`` are the determinant-basis axis matrices).
    """
    if not np.allclose(h, h.conj().T, atol=1e-10):
        raise ValueError("CI matrix is not Hermitian")
    s2 = build_matrix(s2_operator, basis) if isinstance(s2_operator, FermionOperator) else s2_operator
    real = np.allclose(h.imag, 0) and np.allclose(np.asarray(s2).imag, 0)
    hm = h.real if real else h
    energies, vecs = np.linalg.eigh(hm)
    vecs = vecs.astype(complex) if not real else vecs
    s2m = s2.real if real else s2
    for block in _degenerate_blocks(energies, tol):
        if len(block) > 1:
            sub = vecs[:, block]
            w, u = np.linalg.eigh(sub.conj().T @ s2m @ sub)
            vecs[:, block] = sub @ u
    s2_vals = np.einsum("di,de,ei->i", vecs.conj(), s2m, vecs).real
    if dipoles is not None:
        gs = vecs[:, 0]
        for block in _degenerate_blocks(energies, tol):
            for spin_block in _group_by(block, s2_vals):
                if len(spin_block) < 2:
                    continue
                sub = vecs[:, spin_block]
                # rows: states in the block, columns: axes
                t = np.stack([sub.conj().T @ (d @ gs) for d in dipoles], axis=1)
                if real:
                    t = t.real
                basis_vecs = []
                for a in range(t.shape[1]):
                    col = t[:, a].copy()
                    for v in basis_vecs:
                        col -= v * (v.conj() @ col)
                    nrm = np.linalg.norm(col)
                    if nrm > 1e-8 and len(basis_vecs) < len(spin_block):
                        basis_vecs.append(col / nrm)
                if basis_vecs:
                    q = _complete_basis(np.stack(basis_vecs, axis=1))
                    vecs[:, spin_block] = sub @ q
    for i in range(vecs.shape[1]):
        vecs[:, i] = _fix_sign(vecs[:, i])
    return CIEigenbasis(
        energies=energies,
        coefficients=vecs,
        s2_values=s2_vals,
        lifetime_shifts=np.zeros_like(energies),
        basis=basis,
    )


def _group_by(block: list[int], values: np.ndarray, tol: float = 1e-6) -> list[list[int]]:
    groups: list[list[int]] = []
    for i in block:
        for g in groups:
            if abs(values[g[0]] - values[i]) < tol:
                g.append(i)
                break
        else:
            groups.append([i])
    return groups


def _complete_basis(q: np.ndarray) -> np.ndarray:
    """Extend orthonormal columns to a full orthonormal square matrix."""
    n, m = q.shape
    if m == n:
        return q
    full, _ = np.linalg.qr(np.hstack([q, np.eye(n, dtype=q.dtype)]))
    full[:, :m] = q
    return full


def add_cap_shifts(eig: CIEigenbasis, cap: FermionOperator | np.ndarray, basis: DeterminantBasis | None = None) -> CIEigenbasis:
    """Attach the CAP and the per-state inverse lifetimes Gamma_n.

    The complex-symmetric matrix ``diag(E) + V_cap`` (CI-state basis) is
    diagonalized once; each mode is assigned to the CI state it overlaps most
    and ``Gamma_n = -2 Im(lambda_n)``.
    """
    basis = basis or eig.basis
    v = build_matrix(cap, basis) if isinstance(cap, FermionOperator) else np.asarray(cap, dtype=complex)
    v_states = eig.to_states(v)
    lam, modes = scipy.linalg.eig(np.diag(eig.energies) + v_states)
    gamma = np.zeros(len(eig))
    owner = np.argmax(np.abs(modes), axis=0)
    for j, i in enumerate(owner):
        gamma[i] = -2.0 * lam[j].imag
    return replace(eig, lifetime_shifts=gamma, cap_matrix=v_states)


def field_free_propagator(eig: CIEigenbasis, dt: float) -> np.ndarray:
    """exp(-i (diag(E) + V_cap) dt) in the CI-state basis."""
    if eig.cap_matrix is None or not np.any(eig.cap_matrix):
        return np.diag(np.exp(-1j * eig.energies * dt))
    lam, modes = scipy.linalg.eig(np.diag(eig.energies) + eig.cap_matrix)
    return modes @ np.diag(np.exp(-1j * lam * dt)) @ np.linalg.inv(modes)


class FieldCoupling:
    """exp(-i s mu_f dt) for the fixed polarization mu_f = sum_a f0_a mu_a."""

    def __init__(self, dipoles_states: np.ndarray, pulse: LaserPulse):
        mu_f = np.tensordot(pulse.direction, dipoles_states, axes=1)
        if not np.allclose(mu_f, mu_f.conj().T, atol=1e-10):
            raise ValueError("dipole matrices must be Hermitian")
        self.w, self.v = np.linalg.eigh(mu_f)
        self.pulse = pulse

    def apply(self, b: np.ndarray, t_mid: float, dt: float) -> np.ndarray:
        s = self.pulse.envelope(t_mid)
        if s == 0.0:
            return b
        return self.v @ (np.exp(-1j * self.w * s * dt) * (self.v.conj().T @ b))


@dataclass
class CIWavepacket:
    b: np.ndarray
    time: float = 0.0

    @classmethod
    def eigenstate(cls, n_states: int, k: int = 0) -> CIWavepacket:
        b = np.zeros(n_states, dtype=complex)
        b[k] = 1.0
        return cls(b)


def observables(b: np.ndarray, op: np.ndarray | None = None):
    """Return (expectation, populations, norm); expectation is normalized by the norm."""
    b = np.asarray(b)
    pops = np.abs(b) ** 2
    norm = float(pops.sum())
    if op is None:
        return None, pops, norm
    val = np.vdot(b, op @ b)
    return float(val.real) / norm, pops, norm


def tdci_propagate(
    eig: CIEigenbasis,
    dipoles_states: np.ndarray,
    pulse: LaserPulse,
    dt: float,
    t_final: float,
    b0: CIWavepacket,
    record_every: int = 1,
) -> TimeSeries:
    """Split-operator TD-CI propagation; observables recorded at step ends."""
    if dt <= 0:
        raise ValueError("time step must be positive")
    n_steps = int(round(t_final / dt))
    if n_steps < 1:
        raise ValueError("t_final must cover at least one step")
    half = field_free_propagator(eig, dt / 2)
    coupling = FieldCoupling(dipoles_states, pulse)
    b = np.array(b0.b, dtype=complex)
    t0 = b0.time
    rec = _Recorder(dipoles_states, pulse)
    rec.record(t0, b)
    for step in range(1, n_steps + 1):
        t = t0 + (step - 1) * dt
        b = half @ b
        b = coupling.apply(b, t + dt / 2, dt)
        b = half @ b
        if step % record_every == 0 or step == n_steps:
            rec.record(t0 + step * dt, b)
    return rec.series(list(range(len(eig))))


class _Recorder:
    def __init__(self, dipoles_states: np.ndarray, pulse: LaserPulse):
        self.mu = dipoles_states
        self.pulse = pulse
        self.rows: list[tuple] = []

    def record(self, t: float, b: np.ndarray) -> None:
        pops = np.abs(b) ** 2
        norm = float(pops.sum())
        dip = np.array([np.vdot(b, m @ b).real for m in self.mu]) / norm
        self.rows.append((t, self.pulse.direction * self.pulse.envelope(t), pops, dip, norm))

    def series(self, labels: list[int]) -> TimeSeries:
        t, f, p, d, n = zip(*self.rows)
        return TimeSeries(np.array(t), np.array(f), np.array(p), np.array(d), np.array(n), labels)
