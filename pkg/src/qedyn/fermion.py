"""Second-quantized operators from molecular integrals and their JW images.

Spin orbital ordering is interleaved: spatial orbital ``p`` with spin alpha is
spin orbital (and qubit) ``2p``, spin beta is ``2p + 1``.

A Slater determinant with occupation bitmask ``b`` is the state
``(a+_0)^b0 (a+_1)^b1 ... |vac>`` with creators in ascending index order from
left to right. Under this convention its JW image is exactly the basis state
``|b>`` with no extra sign.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .qsim import PRUNE_TOL, PauliSum

AXES = ("x", "y", "z")


class FCIDumpError(ValueError):
    """Malformed integral file; the message carries the offending line."""


@dataclass
class MolecularIntegrals:
    num_spatial_orbitals: int
    num_electrons: int
    core_energy: float
    one_body: np.ndarray
    two_body: np.ndarray
    dipole_one_body: np.ndarray | None = None  # (3, K, K), electronic -r integrals
    nuclear_dipole: np.ndarray | None = None
    orbital_energies: np.ndarray | None = None
    ms2: int = 0

    @property
    def num_spin_orbitals(self) -> int:
        return 2 * self.num_spatial_orbitals

    def check(self, tol: float = 1e-8) -> None:
        h, g = self.one_body, self.two_body
        k = self.num_spatial_orbitals
        if h.shape != (k, k) or g.shape != (k, k, k, k):
            raise ValueError("integral array shapes do not match NORB")
        if not np.allclose(h, h.T, atol=tol):
            raise ValueError("one-body integrals are not symmetric")
        for perm in [(1, 0, 2, 3), (0, 1, 3, 2), (2, 3, 0, 1)]:
            if not np.allclose(g, g.transpose(perm), atol=tol):
                raise ValueError("two-body integrals lack 8-fold symmetry")
        if 2 * k < self.num_electrons:
            raise ValueError("more electrons than spin orbitals")


def spin_orbital(p: int, spin: int) -> int:
    """Index of spatial orbital ``p`` with spin 0 (alpha) or 1 (beta)."""
    return 2 * p + spin


# ---------------------------------------------------------------------------
# FCIDUMP and sidecar reading

def _read_text(src: str | Path | TextIO) -> str:
    if hasattr(src, "read"):
        return src.read()
    return Path(src).read_text()


def _split_header(text: str) -> tuple[dict[str, str], list[tuple[int, str]]]:
    lines = text.splitlines()
    if not lines or "&FCI" not in lines[0].upper():
        raise FCIDumpError("line 1: FCIDUMP must start with an &FCI namelist")
    header_parts = []
    end = None
    for n, line in enumerate(lines):
        stripped = line.strip()
        if n > 0 and (stripped.upper().startswith("&END") or stripped == "/"):
            end = n
            break
        header_parts.append(line)
        if n == 0 and stripped.upper().endswith(("&END", "/")):
            end = n
            break
    if end is None:
        raise FCIDumpError("unterminated &FCI namelist (no &END or /)")
    header = " ".join(header_parts)
    header = re.sub(r"&FCI", "", header, flags=re.I)
    header = re.sub(r"&END|/", "", header, flags=re.I)
    parts = re.split(r"([A-Za-z_][A-Za-z0-9_]*)\s*=", header)
    keys = {
        name.upper(): value.strip().strip(",").strip()
        for name, value in zip(parts[1::2], parts[2::2])
    }
    body = [(n + 1, lines[n]) for n in range(end + 1, len(lines))]
    return keys, body


def _parse_rows(body: Iterable[tuple[int, str]], width: int, source: str):
    for lineno, line in body:
        toks = line.split()
        if not toks:
            continue
        if len(toks) != width + 1:
            raise FCIDumpError(f"{source} line {lineno}: expected {width + 1} fields, got {len(toks)}")
        try:
            val = float(toks[0].replace("D", "E").replace("d", "e"))
            idx = [int(t) for t in toks[1:]]
        except ValueError as exc:
            raise FCIDumpError(f"{source} line {lineno}: {exc}") from None
        yield lineno, val, idx


def parse_fcidump(
    text: str | Path | TextIO,
    dipoles: dict[str, str | Path | TextIO] | None = None,
    orbital_energies: str | Path | TextIO | None = None,
    require_sidecars: bool = False,
) -> MolecularIntegrals:
    """Read an FCIDUMP plus optional dipole and orbital-energy sidecars.

    ``dipoles`` maps axis name to a file with lines ``value i j`` (electronic
    dipole integral) and one ``value 0 0`` line (nuclear dipole component).
    Symmetry-unique entries are expanded to the full tensors.
    """
    raw = _read_text(text)
    keys, body = _split_header(raw)
    try:
        norb = int(keys["NORB"])
        nelec = int(keys["NELEC"])
    except KeyError as exc:
        raise FCIDumpError(f"line 1: header is missing {exc.args[0]}") from None
    except ValueError as exc:
        raise FCIDumpError(f"line 1: bad header value ({exc})") from None
    ms2 = int(keys.get("MS2", "0") or 0)
    h = np.zeros((norb, norb))
    g = np.zeros((norb, norb, norb, norb))
    core = 0.0
    for lineno, val, (i, j, k, l) in _parse_rows(body, 4, "FCIDUMP"):
        if not all(0 <= v <= norb for v in (i, j, k, l)):
            raise FCIDumpError(f"FCIDUMP line {lineno}: orbital index out of range 1..{norb}")
        if i == j == k == l == 0:
            core = val
        elif k == 0 and l == 0:
            if i == 0 or j == 0:
                # orbital-energy records (value i 0 0 0) carry no integral
                continue
            h[i - 1, j - 1] = h[j - 1, i - 1] = val
        else:
            if 0 in (i, j, k, l):
                raise FCIDumpError(f"FCIDUMP line {lineno}: zero index inside a two-body record")
            p, q, r, s = i - 1, j - 1, k - 1, l - 1
            for a, b, c, d in ((p, q, r, s), (q, p, r, s), (p, q, s, r), (q, p, s, r)):
                g[a, b, c, d] = val
                g[c, d, a, b] = val
    mi = MolecularIntegrals(norb, nelec, core, h, g, ms2=ms2)
    if dipoles is not None:
        mats = np.zeros((3, norb, norb))
        nuc = np.zeros(3)
        for axis in AXES:
            if axis not in dipoles:
                raise FCIDumpError(f"missing dipole sidecar for axis {axis}")
            src = f"dipole_{axis}"
            for lineno, val, (i, j) in _parse_rows(
                enumerate(_read_text(dipoles[axis]).splitlines(), 1), 2, src
            ):
                if not (0 <= i <= norb and 0 <= j <= norb):
                    raise FCIDumpError(f"{src} line {lineno}: orbital index out of range")
                if i == 0 and j == 0:
                    nuc[AXES.index(axis)] = val
                elif i == 0 or j == 0:
                    raise FCIDumpError(f"{src} line {lineno}: half-zero index pair")
                else:
                    mats[AXES.index(axis), i - 1, j - 1] = val
                    mats[AXES.index(axis), j - 1, i - 1] = val
        mi.dipole_one_body, mi.nuclear_dipole = mats, nuc
    elif require_sidecars:
        raise FCIDumpError("dipole sidecars are required but were not supplied")
    if orbital_energies is not None:
        eps = np.full(norb, np.nan)
        for lineno, val, (p,) in _parse_rows(
            enumerate(_read_text(orbital_energies).splitlines(), 1), 1, "orbital_energies"
        ):
            if not 1 <= p <= norb:
                raise FCIDumpError(f"orbital_energies line {lineno}: orbital index out of range")
            eps[p - 1] = val
        if np.isnan(eps).any():
            raise FCIDumpError("orbital_energies: not every orbital has an energy")
        mi.orbital_energies = eps
    elif require_sidecars:
        raise FCIDumpError("orbital-energy sidecar is required but was not supplied")
    mi.check()
    return mi


def load_molecule(fcidump_path: str | Path) -> MolecularIntegrals:
    """Load ``X.FCIDUMP`` with sidecars ``X.dipole_{x,y,z}`` and ``X.orbital_energies``."""
    path = Path(fcidump_path)
    stem = path.with_suffix("")
    dip = {a: stem.with_name(f"{stem.name}.dipole_{a}") for a in AXES}
    missing = [str(p) for p in dip.values() if not p.exists()]
    eps = stem.with_name(f"{stem.name}.orbital_energies")
    if not eps.exists():
        missing.append(str(eps))
    if missing:
        raise FCIDumpError(f"missing sidecar file(s): {', '.join(missing)}")
    return parse_fcidump(path, dipoles=dip, orbital_energies=eps)


# ---------------------------------------------------------------------------
# Fermion operators

Ladder = tuple[int, bool]  # (spin orbital, is_creator)


@dataclass
class FermionOperator:
    """Sum of coefficient-weighted ladder-operator products plus a constant."""

    terms: dict[tuple[Ladder, ...], complex] = field(default_factory=dict)
    constant: complex = 0j
    hermitian: bool = False

    @classmethod
    def ladder(cls, index: int, creator: bool, coeff: complex = 1.0) -> FermionOperator:
        return cls({((index, creator),): complex(coeff)})

    @classmethod
    def number(cls, index: int) -> FermionOperator:
        return cls({((index, True), (index, False)): 1.0 + 0j}, hermitian=True)

    def add(self, product: tuple[Ladder, ...], coeff: complex) -> None:
        if not product:
            self.constant += coeff
            return
        self.terms[product] = self.terms.get(product, 0j) + coeff

    def __add__(self, other: FermionOperator) -> FermionOperator:
        out = FermionOperator(dict(self.terms), self.constant + other.constant)
        for prod, c in other.terms.items():
            out.add(prod, c)
        out.hermitian = self.hermitian and other.hermitian
        return out

    def __mul__(self, other):
        if isinstance(other, FermionOperator):
            out = FermionOperator(constant=self.constant * other.constant)
            left = dict(self.terms)
            right = dict(other.terms)
            if self.constant:
                for p, c in right.items():
                    out.add(p, self.constant * c)
            if other.constant:
                for p, c in left.items():
                    out.add(p, c * other.constant)
            for p1, c1 in left.items():
                for p2, c2 in right.items():
                    out.add(p1 + p2, c1 * c2)
            return out
        s = complex(other)
        return FermionOperator(
            {p: c * s for p, c in self.terms.items()},
            self.constant * s,
            self.hermitian and s.imag == 0,
        )

    __rmul__ = __mul__

    def adjoint(self) -> FermionOperator:
        out = FermionOperator(constant=self.constant.conjugate(), hermitian=self.hermitian)
        for prod, c in self.terms.items():
            out.add(tuple((i, not cr) for i, cr in reversed(prod)), c.conjugate())
        return out

    def max_index(self) -> int:
        return max((i for prod in self.terms for i, _ in prod), default=-1)

    def prune(self, tol: float = PRUNE_TOL) -> FermionOperator:
        self.terms = {p: c for p, c in self.terms.items() if abs(c) >= tol}
        return self


def build_electronic_hamiltonian(mi: MolecularIntegrals, tol: float = PRUNE_TOL) -> FermionOperator:
    """E_core + sum h_pq a+_ps a_qs + 1/2 sum (pq|rs) a+_ps a+_rt a_st a_qs."""
    k = mi.num_spatial_orbitals
    op = FermionOperator(constant=complex(mi.core_energy), hermitian=True)
    for p in range(k):
        for q in range(k):
            if abs(mi.one_body[p, q]) < tol:
                continue
            for s in (0, 1):
                op.add(((spin_orbital(p, s), True), (spin_orbital(q, s), False)), mi.one_body[p, q])
    g = mi.two_body
    for p, q, r, s in zip(*np.nonzero(np.abs(g) >= tol)):
        val = 0.5 * g[p, q, r, s]
        for sig in (0, 1):
            for tau in (0, 1):
                ps, qs = spin_orbital(p, sig), spin_orbital(q, sig)
                rt, st = spin_orbital(r, tau), spin_orbital(s, tau)
                if ps == rt or qs == st:
                    continue
                op.add(((ps, True), (rt, True), (st, False), (qs, False)), val)
    return op


def one_body_operator(mat: np.ndarray, constant: float = 0.0, tol: float = PRUNE_TOL) -> FermionOperator:
    """Spin-free sum_pq,s m_pq a+_ps a_qs + constant."""
    op = FermionOperator(constant=complex(constant), hermitian=bool(np.allclose(mat, mat.conj().T)))
    k = mat.shape[0]
    for p in range(k):
        for q in range(k):
            if abs(mat[p, q]) >= tol:
                for s in (0, 1):
                    op.add(((spin_orbital(p, s), True), (spin_orbital(q, s), False)), mat[p, q])
    return op


def build_dipole_operator(mi: MolecularIntegrals, axis: str | int) -> FermionOperator:
    if mi.dipole_one_body is None or mi.nuclear_dipole is None:
        raise ValueError("dipole integrals were not loaded")
    a = AXES.index(axis) if isinstance(axis, str) else int(axis)
    return one_body_operator(mi.dipole_one_body[a], mi.nuclear_dipole[a])


def cap_rates(orbital_energies: np.ndarray, d: float) -> np.ndarray:
    """Per-orbital escape rates 1/(d sqrt(2 eps)), zero for eps <= 0."""
    if d <= 0:
        raise ValueError("escape length d must be positive")
    eps = np.asarray(orbital_energies, dtype=float)
    gamma = np.zeros_like(eps)
    pos = eps > 0
    gamma[pos] = 1.0 / (d * np.sqrt(2.0 * eps[pos]))
    return gamma


def build_cap_operator(mi: MolecularIntegrals, d: float) -> FermionOperator:
    """Anti-Hermitian -(i/2) sum_p gamma_p n_p over both spins."""
    if mi.orbital_energies is None:
        raise ValueError("orbital energies were not loaded")
    gamma = cap_rates(mi.orbital_energies, d)
    return one_body_operator(np.diag(-0.5j * gamma))


def cap_factor_operators(mi: MolecularIntegrals, d: float) -> list[FermionOperator]:
    """The CAP split into one -(i/2) gamma_p n_ps per absorbing spin orbital."""
    if mi.orbital_energies is None:
        raise ValueError("orbital energies were not loaded")
    gamma = cap_rates(mi.orbital_energies, d)
    out = []
    for p, g in enumerate(gamma):
        if g > 0:
            for spin in (0, 1):
                out.append(FermionOperator.number(spin_orbital(p, spin)) * (-0.5j * g))
    return out


def s_squared_operator(num_spatial_orbitals: int) -> FermionOperator:
    """Total spin S^2 = S- S+ + Sz (Sz + 1)."""
    k = num_spatial_orbitals
    s_plus = FermionOperator()
    sz = FermionOperator(hermitian=True)
    for p in range(k):
        a, b = spin_orbital(p, 0), spin_orbital(p, 1)
        s_plus.add(((a, True), (b, False)), 1.0)
        sz.add(((a, True), (a, False)), 0.5)
        sz.add(((b, True), (b, False)), -0.5)
    s2 = s_plus.adjoint() * s_plus + sz * sz + sz
    s2.hermitian = True
    return s2


# ---------------------------------------------------------------------------
# Jordan-Wigner

def _jw_ladder(index: int, creator: bool) -> PauliSum:
    # |1> = occupied: a+ = (X - iY)/2, a = (X + iY)/2, with a Z string below.
    zstring = (1 << index) - 1
    bit = 1 << index
    y_sign = -0.5j if creator else 0.5j
    return PauliSum({(bit, zstring): 0.5 + 0j, (bit, zstring | bit): y_sign})


def jordan_wigner(op: FermionOperator) -> PauliSum:
    """Map a fermion operator to qubits under the interleaved ordering."""
    cache: dict[Ladder, PauliSum] = {}
    out = PauliSum()
    if op.constant:
        out.add_term(op.constant, 0, 0)
    for prod, coeff in op.terms.items():
        acc = PauliSum({(0, 0): complex(coeff)})
        for lad in prod:
            if lad not in cache:
                cache[lad] = _jw_ladder(*lad)
            acc = acc * cache[lad]
        for (x, z), c in acc.terms.items():
            out.add_term(c, x, z)
    return out.simplify()
