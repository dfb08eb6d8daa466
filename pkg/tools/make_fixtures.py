"""Regenerate the bundled STO-3G integral fixtures.

Needs pyscf, which is not a runtime dependency of the package. Run once:

    python tools/make_fixtures.py src/qedyn/data/fixtures
"""
from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import numpy as np
from pyscf import ao2mo, gto, scf
from pyscf.tools import fcidump

MOLECULES = {
    "h2_sto3g": "H 0 0 -0.70; H 0 0 0.70",
    "lih_sto3g": "Li 0 0 0; H 0 0 3.01",
}


def write_fixture(name: str, atom: str, outdir: Path) -> None:
    mol = gto.M(atom=atom, basis="sto-3g", unit="Bohr", verbose=0)
    mf = scf.RHF(mol).run()
    c = mf.mo_coeff
    fcidump.from_mo(mol, str(outdir / f"{name}.FCIDUMP"), c, tol=1e-12)
    r = mol.intor("int1e_r")
    nuc = np.einsum("i,ix->x", mol.atom_charges(), mol.atom_coords())
    norb = c.shape[1]
    for axis, label in enumerate("xyz"):
        d = -c.T @ r[axis] @ c
        with open(outdir / f"{name}.dipole_{label}", "w") as f:
            for i in range(norb):
                for j in range(i + 1):
                    if abs(d[i, j]) > 1e-12:
                        f.write(f"{d[i, j]: .16e} {i + 1} {j + 1}\n")
            f.write(f"{nuc[axis]: .16e} 0 0\n")
    with open(outdir / f"{name}.orbital_energies", "w") as f:
        for p, e in enumerate(mf.mo_energy):
            f.write(f"{e: .16e} {p + 1}\n")


def main(outdir: str) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name, atom in MOLECULES.items():
        write_fixture(name, atom, out)
    sums = {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(out.iterdir())
        if p.name != "checksums.json"
    }
    (out / "checksums.json").write_text(json.dumps(sums, indent=2) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/qedyn/data/fixtures")
