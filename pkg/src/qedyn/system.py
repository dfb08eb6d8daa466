"""One molecule's operators in both representations, built once."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .fermion import (
    AXES,
    FermionOperator,
    MolecularIntegrals,
    build_cap_operator,
    cap_factor_operators,
    build_dipole_operator,
    build_electronic_hamiltonian,
    jordan_wigner,
    load_molecule,
    s_squared_operator,
)
from .qsim import PauliSum
from .refdyn import (
    CIEigenbasis,
    DeterminantBasis,
    add_cap_shifts,
    build_matrix,
    diagonalize_ci,
    enumerate_determinants,
)

BUNDLED = ("h2_sto3g", "lih_sto3g")


def fixture_dir() -> Path:
    return Path(str(resources.files("qedyn") / "data" / "fixtures"))


def verify_fixture_checksums(names: list[str] | None = None) -> None:
    """Raise if a bundled fixture file no longer matches its recorded sha256."""
    d = fixture_dir()
    sums = json.loads((d / "checksums.json").read_text())
    for fname, digest in sums.items():
        if names is not None and not any(fname.startswith(n + ".") for n in names):
            continue
        actual = hashlib.sha256((d / fname).read_bytes()).hexdigest()
        if actual != digest:
            raise RuntimeError(f"fixture {fname} failed its checksum")


def fixture_checksums(path: Path) -> dict[str, str]:
    stem = path.with_suffix("")
    files = [path] + [stem.with_name(f"{stem.name}.dipole_{a}") for a in AXES]
    files.append(stem.with_name(f"{stem.name}.orbital_energies"))
    return {f.name: hashlib.sha256(f.read_bytes()).hexdigest() for f in files}


def resolve_molecule(name: str) -> Path:
    if name in BUNDLED:
        return fixture_dir() / f"{name}.FCIDUMP"
    path = Path(name)
    if not path.exists():
        raise FileNotFoundError(f"unknown molecule {name!r}: not bundled and no such file")
    return path


@dataclass
class MolecularSystem:
    integrals: MolecularIntegrals
    name: str = ""
    cap_d: float | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def load(cls, name: str, cap_d: float | None = None, verify: bool = True) -> MolecularSystem:
        if verify and name in BUNDLED:
            verify_fixture_checksums([name])
        return cls(load_molecule(resolve_molecule(name)), name=name, cap_d=cap_d)

    @property
    def num_qubits(self) -> int:
        return self.integrals.num_spin_orbitals

    @cached_property
    def hamiltonian(self) -> FermionOperator:
        return build_electronic_hamiltonian(self.integrals)

    @cached_property
    def dipole_ops(self) -> list[FermionOperator]:
        return [build_dipole_operator(self.integrals, a) for a in AXES]

    @cached_property
    def cap(self) -> FermionOperator | None:
        if self.cap_d is None:
            return None
        return build_cap_operator(self.integrals, self.cap_d)

    @cached_property
    def basis(self) -> DeterminantBasis:
        return enumerate_determinants(self.integrals.num_spatial_orbitals, self.integrals.num_electrons)

    @cached_property
    def h_matrix(self) -> np.ndarray:
        return build_matrix(self.hamiltonian, self.basis)

    @cached_property
    def dipole_matrices(self) -> np.ndarray:
        """(3, n_det, n_det) determinant-basis dipole matrices."""
        return np.stack([build_matrix(op, self.basis) for op in self.dipole_ops])

    @cached_property
    def eigenbasis(self) -> CIEigenbasis:
        s2 = s_squared_operator(self.integrals.num_spatial_orbitals)
        eig = diagonalize_ci(self.h_matrix, self.basis, s2, dipoles=self.dipole_matrices)
        if self.cap is not None:
            eig = add_cap_shifts(eig, self.cap, self.basis)
        return eig

    @cached_property
    def dipole_states(self) -> np.ndarray:
        """Dipole matrices in the CI-state basis."""
        return np.stack([self.eigenbasis.to_states(m) for m in self.dipole_matrices])

    @cached_property
    def h_pauli(self) -> PauliSum:
        return jordan_wigner(self.hamiltonian)

    @cached_property
    def dipole_pauli(self) -> list[PauliSum]:
        return [jordan_wigner(op) for op in self.dipole_ops]

    @cached_property
    def cap_pauli(self) -> PauliSum | None:
        return None if self.cap is None else jordan_wigner(self.cap)

    @cached_property
    def cap_factors(self) -> list[PauliSum]:
        """JW images of the per-spin-orbital CAP factors (the QITE units)."""
        if self.cap_d is None:
            return []
        return [jordan_wigner(op) for op in cap_factor_operators(self.integrals, self.cap_d)]

    def register_vector(self, b: np.ndarray) -> np.ndarray:
        """Map CI-state coefficients onto the 2^M register amplitudes."""
        dets = np.array(self.basis.determinants)
        amps = np.zeros(1 << self.num_qubits, dtype=complex)
        amps[dets] = self.eigenbasis.coefficients @ b
        return amps

    def spectrum(self) -> dict:
        """Energies, spins and dipoles of the singlet states."""
        eig = self.eigenbasis
        mu = self.dipole_states.real
        sing = eig.singlets
        g = sing[0]
        rows = []
        for rank, i in enumerate(sing):
            rows.append(
                {
                    "singlet": rank,
                    "state": i,
                    "energy": float(eig.energies[i]),
                    "excitation": float(eig.energies[i] - eig.energies[g]),
                    "s2": float(eig.s2_values[i]),
                    "transition_dipole": [float(mu[a, g, i]) for a in range(3)],
                    "permanent_dipole": [float(mu[a, i, i]) for a in range(3)],
                    "gamma": float(eig.lifetime_shifts[i]),
                }
            )
        return {
            "molecule": self.name,
            "num_determinants": len(self.basis),
            "num_singlets": len(sing),
            "num_pauli_terms": len(self.h_pauli),
            "states": rows,
        }
