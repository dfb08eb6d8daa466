"""Error-free statevector simulator.

Qubit ``q`` is bit ``q`` of the basis index (qubit 0 is the least significant
bit). Pauli strings are stored as a pair of integer masks ``(x, z)``: qubit
``q`` carries X if only bit ``q`` of ``x`` is set, Z if only bit ``q`` of ``z``
is set, and Y if both are set.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

PRUNE_TOL = 1e-12
_UNITARY_TOL = 1e-10

_AXIS_BITS = {"X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_I_POWERS = (1.0 + 0j, 1j, -1.0 + 0j, -1j)


def _popcount(v: int) -> int:
    return bin(v).count("1")


def pauli_product(x1: int, z1: int, x2: int, z2: int) -> tuple[complex, int, int]:
    """Multiply two Pauli strings, returning ``(phase, x, z)``."""
    x, z = x1 ^ x2, z1 ^ z2
    k = _popcount(x1 & z1) + _popcount(x2 & z2) - _popcount(x & z)
    k += 2 * _popcount(z1 & x2)
    return _I_POWERS[k % 4], x, z


def paulis_commute(x1: int, z1: int, x2: int, z2: int) -> bool:
    return (_popcount(x1 & z2) + _popcount(z1 & x2)) % 2 == 0


@dataclass(frozen=True)
class PauliTerm:
    """A coefficient times a tensor product of single-qubit Pauli operators."""

    coefficient: complex
    x: int = 0
    z: int = 0

    @classmethod
    def from_factors(cls, factors: Mapping[int, str] | str, coefficient: complex = 1.0) -> PauliTerm:
        """Build from ``{qubit: "X"|"Y"|"Z"}`` or a string like ``"X0 Z1 Y3"``."""
        if isinstance(factors, str):
            items = [(int(tok[1:]), tok[0]) for tok in factors.split()]
        else:
            items = list(factors.items())
        x = z = 0
        seen = set()
        for q, axis in items:
            if q in seen:
                raise ValueError(f"qubit {q} listed twice")
            if q < 0:
                raise ValueError(f"negative qubit index {q}")
            seen.add(q)
            bx, bz = _AXIS_BITS[axis.upper()]
            x |= bx << q
            z |= bz << q
        return cls(complex(coefficient), x, z)

    @property
    def key(self) -> tuple[int, int]:
        return (self.x, self.z)

    @property
    def support(self) -> int:
        """Bitmask of qubits acted on non-trivially."""
        return self.x | self.z

    @property
    def factors(self) -> dict[int, str]:
        out = {}
        s = self.support
        q = 0
        while s >> q:
            if (s >> q) & 1:
                bx, bz = (self.x >> q) & 1, (self.z >> q) & 1
                out[q] = "Y" if bx and bz else ("X" if bx else "Z")
            q += 1
        return out

    def is_identity(self) -> bool:
        return self.x == 0 and self.z == 0

    def label(self) -> str:
        return " ".join(f"{a}{q}" for q, a in self.factors.items()) or "I"

    def __repr__(self) -> str:
        return f"PauliTerm({self.coefficient:.6g}, {self.label()})"


@dataclass
class PauliSum:
    """Canonical linear combination of Pauli strings keyed by ``(x, z)``."""

    terms: dict[tuple[int, int], complex] = field(default_factory=dict)

    @classmethod
    def from_terms(cls, terms: Iterable[PauliTerm]) -> PauliSum:
        out = cls()
        for t in terms:
            out.add_term(t.coefficient, t.x, t.z)
        return out.simplify()

    @classmethod
    def identity(cls, coefficient: complex = 1.0) -> PauliSum:
        return cls({(0, 0): complex(coefficient)}).simplify()

    def add_term(self, coefficient: complex, x: int, z: int) -> None:
        self.terms[(x, z)] = self.terms.get((x, z), 0j) + coefficient

    def simplify(self, tol: float = PRUNE_TOL) -> PauliSum:
        self.terms = {k: complex(c) for k, c in self.terms.items() if abs(c) >= tol}
        return self

    def __iter__(self):
        for (x, z), c in sorted(self.terms.items()):
            yield PauliTerm(c, x, z)

    def __len__(self) -> int:
        return len(self.terms)

    def __add__(self, other: PauliSum) -> PauliSum:
        out = PauliSum(dict(self.terms))
        for (x, z), c in other.terms.items():
            out.add_term(c, x, z)
        return out.simplify()

    def __sub__(self, other: PauliSum) -> PauliSum:
        return self + other * -1.0

    def __mul__(self, other):
        if isinstance(other, PauliSum):
            out = PauliSum()
            for (x1, z1), c1 in self.terms.items():
                for (x2, z2), c2 in other.terms.items():
                    ph, x, z = pauli_product(x1, z1, x2, z2)
                    out.add_term(ph * c1 * c2, x, z)
            return out.simplify()
        return PauliSum({k: c * other for k, c in self.terms.items()}).simplify()

    __rmul__ = __mul__

    def commutator(self, other: PauliSum) -> PauliSum:
        return self * other - other * self

    def adjoint(self) -> PauliSum:
        return PauliSum({k: c.conjugate() for k, c in self.terms.items()})

    def max_qubit(self) -> int:
        """Highest qubit index touched, or -1 for a pure constant."""
        s = 0
        for x, z in self.terms:
            s |= x | z
        return s.bit_length() - 1

    def max_abs_coefficient(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def is_hermitian(self, tol: float = PRUNE_TOL) -> bool:
        return all(abs(c.imag) < tol for c in self.terms.values())

    def constant(self) -> complex:
        return self.terms.get((0, 0), 0j)

    def without_constant(self) -> PauliSum:
        return PauliSum({k: c for k, c in self.terms.items() if k != (0, 0)})

    def to_dense(self, num_qubits: int) -> np.ndarray:
        """Dense matrix via the bit-mask action (not an independent oracle)."""
        dim = 1 << num_qubits
        out = np.zeros((dim, dim), dtype=complex)
        idx = np.arange(dim)
        for (x, z), c in self.terms.items():
            out[idx ^ x, idx] += c * _string_phases(x, z, num_qubits)
        return out


class QubitRegister:
    """Dense amplitude vector over ``2**num_qubits`` basis states."""

    def __init__(self, num_qubits: int, amplitudes: np.ndarray | None = None):
        if num_qubits < 1:
            raise ValueError("a register needs at least one qubit")
        self.num_qubits = num_qubits
        dim = 1 << num_qubits
        if amplitudes is None:
            amplitudes = np.zeros(dim, dtype=complex)
            amplitudes[0] = 1.0
        amplitudes = np.asarray(amplitudes, dtype=complex)
        if amplitudes.shape != (dim,):
            raise ValueError(f"expected {dim} amplitudes, got shape {amplitudes.shape}")
        self.amplitudes = amplitudes

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def copy(self) -> QubitRegister:
        return QubitRegister(self.num_qubits, self.amplitudes.copy())

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def __repr__(self) -> str:
        return f"QubitRegister(num_qubits={self.num_qubits})"


def init_register(num_qubits: int, basis_index: int = 0) -> QubitRegister:
    dim = 1 << num_qubits
    if not 0 <= basis_index < dim:
        raise ValueError(f"basis index {basis_index} out of range for {num_qubits} qubits")
    amps = np.zeros(dim, dtype=complex)
    amps[basis_index] = 1.0
    return QubitRegister(num_qubits, amps)


def register_from_amplitudes(amplitudes, normalize: bool = True) -> QubitRegister:
    """Load an arbitrary state vector (simulator-privileged state preparation)."""
    amps = np.asarray(amplitudes, dtype=complex).copy()
    n = amps.shape[0].bit_length() - 1
    if amps.ndim != 1 or (1 << n) != amps.shape[0]:
        raise ValueError("amplitude count must be a power of two")
    if normalize:
        nrm = np.linalg.norm(amps)
        if nrm == 0:
            raise ValueError("cannot normalize the zero vector")
        amps /= nrm
    return QubitRegister(n, amps)


def _check_qubit(reg: QubitRegister, q: int) -> None:
    if not 0 <= q < reg.num_qubits:
        raise ValueError(f"qubit {q} out of range for {reg.num_qubits}-qubit register")


def _check_mask(reg: QubitRegister, mask: int) -> None:
    if mask >> reg.num_qubits:
        raise ValueError(f"Pauli support exceeds {reg.num_qubits}-qubit register")


def apply_one_qubit_gate(reg: QubitRegister, qubit: int, u) -> QubitRegister:
    _check_qubit(reg, qubit)
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2) or not np.allclose(u.conj().T @ u, np.eye(2), atol=_UNITARY_TOL, rtol=0):
        raise ValueError("gate matrix is not a 2x2 unitary")
    psi = reg.amplitudes.reshape(-1, 2, 1 << qubit)
    a0 = psi[:, 0, :].copy()
    a1 = psi[:, 1, :]
    psi[:, 0, :] = u[0, 0] * a0 + u[0, 1] * a1
    psi[:, 1, :] = u[1, 0] * a0 + u[1, 1] * a1
    return reg


HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
S_GATE = np.array([[1, 0], [0, 1j]], dtype=complex)
S_DAG = S_GATE.conj().T


_parity_cache: dict[int, np.ndarray] = {}


def _parity_table(num_qubits: int) -> np.ndarray:
    """``(-1)**popcount(b)`` for every basis index ``b``."""
    tab = _parity_cache.get(num_qubits)
    if tab is None:
        tab = np.ones(1, dtype=np.float64)
        for _ in range(num_qubits):
            tab = np.concatenate([tab, -tab])
        _parity_cache[num_qubits] = tab
    return tab


def _string_phases(x: int, z: int, num_qubits: int) -> np.ndarray:
    """``f[b]`` such that ``sigma(x, z)|b> = f[b] |b ^ x>``."""
    idx = np.arange(1 << num_qubits)
    return _I_POWERS[_popcount(x & z) % 4] * _parity_table(num_qubits)[idx & z]


def apply_pauli_string(psi: np.ndarray, x: int, z: int, num_qubits: int) -> np.ndarray:
    """Return ``sigma(x, z) @ psi`` as a new array."""
    idx = np.arange(psi.shape[0])
    src = idx ^ x
    return _string_phases(x, z, num_qubits)[src] * psi[src]


def _check_real_term(term: PauliTerm) -> float:
    if abs(term.coefficient.imag) > PRUNE_TOL:
        raise ValueError(
            "Pauli rotation needs a real coefficient; non-Hermitian terms go through qite"
        )
    return term.coefficient.real


def apply_pauli_rotation(reg: QubitRegister, term: PauliTerm, theta: float) -> QubitRegister:
    """Multiply the register by ``exp(-i * theta * coefficient * P)``.

    The coefficient is absorbed into the angle so a Hamiltonian term ``c P``
    over a time step ``dt`` is ``apply_pauli_rotation(reg, term, dt)``.
    """
    angle = theta * _check_real_term(term)
    _check_mask(reg, term.support)
    if term.is_identity():
        reg.amplitudes *= np.exp(-1j * angle)
        return reg
    p_psi = apply_pauli_string(reg.amplitudes, term.x, term.z, reg.num_qubits)
    reg.amplitudes *= np.cos(angle)
    reg.amplitudes += -1j * np.sin(angle) * p_psi
    return reg


def apply_controlled_pauli_rotation(
    reg: QubitRegister, control: int, term: PauliTerm, theta: float
) -> QubitRegister:
    """Rotation applied only on the subspace where ``control`` is 1.

    An identity term becomes a phase gate on the control qubit.
    """
    angle = theta * _check_real_term(term)
    _check_qubit(reg, control)
    _check_mask(reg, term.support)
    if (term.support >> control) & 1:
        raise ValueError(f"control qubit {control} lies inside the rotation support")
    on = (np.arange(reg.dim) >> control) & 1 == 1
    if term.is_identity():
        reg.amplitudes[on] *= np.exp(-1j * angle)
        return reg
    p_psi = apply_pauli_string(reg.amplitudes, term.x, term.z, reg.num_qubits)
    new_on = np.cos(angle) * reg.amplitudes[on] - 1j * np.sin(angle) * p_psi[on]
    reg.amplitudes[on] = new_on
    return reg


def rotation_gate_count(term: PauliTerm) -> dict[str, int]:
    """Gate counts of the textbook CNOT-ladder compilation of one rotation."""
    f = term.factors
    weight = len(f)
    basis = sum(2 for a in f.values() if a != "Z")
    return {
        "cnot": max(0, 2 * (weight - 1)),
        "rz": 1 if weight else 0,
        "basis_change": basis,
    }


def expectation_pauli_term(reg: QubitRegister, x: int, z: int) -> complex:
    _check_mask(reg, x | z)
    if x == 0 and z == 0:
        return complex(reg.norm_squared())
    return complex(np.vdot(reg.amplitudes, apply_pauli_string(reg.amplitudes, x, z, reg.num_qubits)))


def expectation_pauli_sum(reg: QubitRegister, op: PauliSum) -> complex:
    """Exact ``<psi|op|psi>`` read from the state vector."""
    return sum(
        (c * expectation_pauli_term(reg, x, z) for (x, z), c in op.terms.items()),
        0j,
    )


def amplitude(reg: QubitRegister, basis_index: int) -> complex:
    if not 0 <= basis_index < reg.dim:
        raise ValueError(f"basis index {basis_index} out of range")
    return complex(reg.amplitudes[basis_index])


def make_rng(seed, *counters: int) -> np.random.Generator:
    """Independent stream keyed by ``(seed, *counters)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, counters)]))


def sample_plus_minus(expectation: float, shots: int, rng: np.random.Generator) -> float:
    """Mean of ``shots`` +/-1 draws whose mean is ``expectation``."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    p = min(1.0, max(0.0, 0.5 * (1.0 + expectation)))
    k = rng.binomial(shots, p)
    return 2.0 * k / shots - 1.0


def sample_pauli_expectation(reg: QubitRegister, term: PauliTerm, shots: int, seed) -> float:
    """Shot-sampled estimate of ``<term>`` from the exact outcome distribution.

    The register is not collapsed; every shot sees the same prepared state.
    ``seed`` may be an int or a tuple of ints (see :func:`make_rng`).
    """
    coeff = _check_real_term(term)
    if shots < 1:
        raise ValueError("shots must be >= 1")
    exact = expectation_pauli_term(reg, term.x, term.z).real
    rng = make_rng(*seed) if isinstance(seed, tuple) else make_rng(seed)
    return coeff * sample_plus_minus(exact, shots, rng)
