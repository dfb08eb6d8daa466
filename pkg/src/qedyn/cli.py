"""Command-line front end: ``run``, ``scan-dt`` and ``spectrum``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .hadamard import HadamardDipoleObserver
from .qdyn import PopulationObserver, PropagationConfig, propagate_quantum
from .qite import propagate_with_cap
from .qsim import register_from_amplitudes
from .refdyn import CIWavepacket, tdci_propagate
from .scenario import ENGINES, Scenario, ScenarioError, load_scenario
from .series import TimeSeries, common_time_indices
from .system import MolecularSystem, fixture_checksums, resolve_molecule

log = logging.getLogger("qedyn")


@dataclass
class RunResult:
    scenario: Scenario
    series: TimeSeries
    reference: TimeSeries | None = None
    deviation: dict | None = None
    qite_records: list = field(default_factory=list)
    files: dict[str, Path] = field(default_factory=dict)


def initial_coefficients(system: MolecularSystem, initial_state: str) -> np.ndarray:
    eig = system.eigenbasis
    if initial_state == "ground":
        b = np.zeros(len(eig), dtype=complex)
        b[0] = 1.0
        return b
    k = int(initial_state)
    if k >= len(system.basis):
        raise ScenarioError(
            f"[system] initial_state: determinant index {k} out of range (0..{len(system.basis) - 1})"
        )
    return eig.coefficients.conj().T[:, k].astype(complex)


def load_system(sc: Scenario) -> MolecularSystem:
    return MolecularSystem.load(sc.molecule, cap_d=sc.cap.d if sc.cap else None)


def run_reference(sc: Scenario, system: MolecularSystem) -> TimeSeries:
    b0 = initial_coefficients(system, sc.initial_state)
    return tdci_propagate(
        system.eigenbasis,
        system.dipole_states,
        sc.pulse,
        sc.reference_dt,
        sc.config.t_final,
        CIWavepacket(b0),
        record_every=sc.reference_record_every(),
    )


def run_engine(sc: Scenario, system: MolecularSystem, records: list | None = None) -> TimeSeries:
    if sc.engine == "tdci":
        return run_reference(sc, system)
    b0 = initial_coefficients(system, sc.initial_state)
    # the prepared initial state is loaded directly into the register
    reg0 = register_from_amplitudes(system.register_vector(b0))
    pops = PopulationObserver(system.eigenbasis, system.basis, system.dipole_states)
    if sc.engine == "qdyn":
        return propagate_quantum(reg0, system.h_pauli, system.dipole_pauli, sc.pulse, sc.config, pops)
    if sc.engine == "hadamard":
        plan = sc.hadamard_plan
        preparer = None
        if plan.restart_mode == "honest-restart":
            preparer = _restart_preparer(reg0, system, sc)
        obs = HadamardDipoleObserver(
            system.dipole_pauli[plan.axis], plan, sc.seed, inner=pops, preparer=preparer
        )
        return propagate_quantum(reg0, system.h_pauli, system.dipole_pauli, sc.pulse, sc.config, obs)
    if sc.engine == "qite":
        cap = sc.cap
        return propagate_with_cap(
            reg0,
            system.h_pauli,
            system.dipole_pauli,
            system.cap_factors,
            sc.pulse,
            sc.config,
            mode=cap.mode,
            shots=cap.shots,
            seed=sc.seed,
            delta=cap.delta,
            observer=pops,
            records=records,
        )
    raise ScenarioError(f"[propagation] engine: unknown engine {sc.engine!r}")


def _restart_preparer(reg0, system: MolecularSystem, sc: Scenario):
    """Re-propagate from t = 0 for every shot batch, as hardware would."""

    def factory(t: float, _reg):
        def prepare():
            cfg = sc.config
            n = int(round(t / cfg.dt))
            if n == 0:
                return reg0.copy()
            sub = PropagationConfig(cfg.dt, n * cfg.dt, cfg.trotter_order, n, cfg.cycles)
            return propagate_quantum(reg0, system.h_pauli, system.dipole_pauli, sc.pulse, sub).final_state

        return prepare

    return factory


def deviation_report(series: TimeSeries, ref: TimeSeries, dipole_axis: int = 2) -> dict:
    ia, ib = common_time_indices(series.times, ref.times)
    labels = [s for s in series.state_labels if s in ref.state_labels]
    ca = [series.state_labels.index(s) for s in labels]
    cb = [ref.state_labels.index(s) for s in labels]
    dp = np.abs(series.populations[np.ix_(ia, ca)] - ref.populations[np.ix_(ib, cb)])
    per_step = dp.max(axis=1)
    d_dip = series.dipole[ia, dipole_axis] - ref.dipole[ib, dipole_axis]
    out = {
        "compared_times": int(len(ia)),
        "max_population_deviation": float(per_step.max()),
        "dipole_rms_deviation": float(np.sqrt(np.mean(d_dip**2))),
        "final_norm_deviation": float(series.norm[ia[-1]] - ref.norm[ib[-1]]),
        "per_step": [
            {"time": float(series.times[i]), "max_population_deviation": float(v)}
            for i, v in zip(ia, per_step)
        ],
    }
    if "hadamard_dipole" in series.extra:
        dh = series.extra["hadamard_dipole"][ia] - ref.dipole[ib, dipole_axis]
        out["hadamard_dipole_rms_deviation"] = float(np.sqrt(np.mean(dh**2)))
    return out


def _tracked(series: TimeSeries, ref: TimeSeries | None, threshold: float) -> list[int]:
    labels = {series.state_labels[i] for i in series.tracked_states(threshold)}
    if ref is not None:
        labels |= {ref.state_labels[i] for i in ref.tracked_states(threshold)}
    return [series.state_labels.index(s) for s in sorted(labels) if s in series.state_labels]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _records_table(records: list) -> str:
    lines = ["step\tfactor\tc_squared\tresidual\tcondition_estimate\tmax_abs_a"]
    for step, j, rec in records:
        amax = float(np.max(np.abs(rec.a_coefficients))) if len(rec.a_coefficients) else 0.0
        lines.append(
            f"{step}\t{j}\t{rec.c_squared:.12e}\t{rec.residual:.12e}\t"
            f"{rec.condition_estimate:.12e}\t{amax:.12e}"
        )
    return "\n".join(lines) + "\n"


def run_scenario(
    sc: Scenario,
    out_dir: str | Path | None = None,
    compare: str | None = None,
    argv: list[str] | None = None,
) -> RunResult:
    """Run one scenario and write its artifacts atomically into ``out_dir``.

    All files are staged in a temporary directory and moved into place only
    after every engine succeeded, so a failed run leaves nothing behind.
    """
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    system = load_system(sc)
    records: list | None = [] if (sc.cap and sc.cap.dump_records) else None
    series = run_engine(sc, system, records)
    ref = dev = None
    if compare is not None:
        if compare != "tdci":
            raise ScenarioError(f"--compare: only 'tdci' is supported, got {compare!r}")
        ref = series if sc.engine == "tdci" else run_reference(sc, system)
        dev = deviation_report(series, ref, sc.dipole_axis)
    elapsed = time.perf_counter() - t0
    result = RunResult(sc, series, ref, dev, records or [])
    if out_dir is None:
        return result

    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".qedyn-", dir=out.parent))
    try:
        cols = _tracked(series, ref, sc.threshold)
        staged = {"timeseries": stage / "timeseries.tsv"}
        staged["timeseries"].write_text(series.to_table(states=cols, dipole_axis=sc.dipole_axis))
        if ref is not None:
            rcols = [ref.state_labels.index(series.state_labels[c]) for c in cols]
            staged["reference"] = stage / "reference.tsv"
            staged["reference"].write_text(ref.to_table(states=rcols, dipole_axis=sc.dipole_axis))
            staged["deviation"] = stage / "deviation.json"
            staged["deviation"].write_text(json.dumps(dev, indent=2, sort_keys=True) + "\n")
        if records:
            staged["qite_records"] = stage / "qite_records.tsv"
            staged["qite_records"].write_text(_records_table(records))
        manifest = {
            "software": {"package": "qedyn", "version": __version__, "python": platform.python_version(),
                         "numpy": np.__version__},
            "scenario": sc.to_dict(),
            "scenario_source": sc.source,
            "seed": sc.seed,
            "compare": compare,
            "fixture_checksums": fixture_checksums(resolve_molecule(sc.molecule)),
            "outputs": {k: {"file": p.name, "sha256": _sha256(p)} for k, p in staged.items()},
            "command": argv,
            "wall_clock": {"started": started.isoformat(), "elapsed_seconds": round(elapsed, 3)},
        }
        staged["manifest"] = stage / "manifest.json"
        staged["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
        out.mkdir(parents=True, exist_ok=True)
        for key, p in staged.items():
            target = out / p.name
            os.replace(p, target)
            result.files[key] = target
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return result


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (tuple, set)):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def parse_grid(text: str) -> list[float]:
    """``"1,0.5,0.2"`` or ``"log:0.01:1:7"`` (n log-spaced values, largest first)."""
    if text.startswith("log:"):
        try:
            _, lo, hi, n = text.split(":")
            vals = np.geomspace(float(hi), float(lo), int(n))
        except ValueError:
            raise ValueError(f"bad log grid {text!r}; expected log:LO:HI:N") from None
        return [float(f"{v:.6g}") for v in vals]
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"bad dt grid {text!r}; expected comma-separated numbers") from None
    if not vals or any(v <= 0 for v in vals):
        raise ValueError("dt grid values must be positive")
    return vals


def scan_dt(sc: Scenario, grid: list[float]) -> list[dict]:
    """Quantum-vs-TD-CI deviation for each dt (every step recorded)."""
    engine = "qite" if sc.engine == "qite" else "qdyn"
    base = sc.with_engine(engine)
    system = load_system(base)
    ref_sc = base
    ref = tdci_propagate(
        system.eigenbasis,
        system.dipole_states,
        ref_sc.pulse,
        ref_sc.reference_dt,
        ref_sc.config.t_final,
        CIWavepacket(initial_coefficients(system, sc.initial_state)),
    )
    rows = []
    for dt in grid:
        n = sc.config.t_final / dt
        if abs(n - round(n)) > 1e-6:
            raise ScenarioError(f"--grid: dt = {dt} does not divide t_final = {sc.config.t_final}")
        sub = base.with_dt(dt)
        t = time.perf_counter()
        series = run_engine(sub, system)
        dev = deviation_report(series, ref, sc.dipole_axis)
        rows.append(
            {
                "dt": dt,
                "steps": sub.config.n_steps,
                "max_population_deviation": dev["max_population_deviation"],
                "dipole_rms_deviation": dev["dipole_rms_deviation"],
                "final_norm": float(series.norm[-1]),
                "seconds": round(time.perf_counter() - t, 3),
            }
        )
    return rows


def _print_spectrum(spec: dict, stream) -> None:
    stream.write(
        f"# {spec['molecule']}: {spec['num_determinants']} determinants, "
        f"{spec['num_singlets']} singlets, {spec['num_pauli_terms']} Pauli terms\n"
    )
    stream.write(
        "singlet\tstate\tenergy\texcitation\ts2\tmu0i_x\tmu0i_y\tmu0i_z\tmuii_x\tmuii_y\tmuii_z\tgamma\n"
    )
    for r in spec["states"]:
        vals = [r["energy"], r["excitation"], r["s2"], *r["transition_dipole"], *r["permanent_dipole"], r["gamma"]]
        stream.write(f"{r['singlet']}\t{r['state']}\t" + "\t".join(f"{round(v, 6) + 0.0:.6f}" for v in vals) + "\n")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qedyn", description="Laser-driven electron dynamics on a simulated quantum computer.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file (or a bundled scenario name)")
    r.add_argument("scenario")
    r.add_argument("--engine", choices=ENGINES)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory (default: [output] dir or runs/<scenario>)")
    r.add_argument("--compare", choices=["tdci"])

    s = sub.add_parser("scan-dt", help="quantum vs TD-CI deviation over a grid of time steps")
    s.add_argument("scenario")
    s.add_argument("--grid", required=True, help="e.g. 1,0.5,0.2,0.1 or log:0.01:1:7")
    s.add_argument("--out", help="directory for scan.tsv")

    p = sub.add_parser("spectrum", help="CI energies, <S^2> and dipoles of the singlet states")
    p.add_argument("molecule", help="h2_sto3g, lih_sto3g or a path to an FCIDUMP with sidecars")
    p.add_argument("--cap-d", type=float, help="escape length d; adds CAP widths gamma")
    p.add_argument("--json", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            sc = load_scenario(args.scenario)
            if args.engine:
                sc = sc.with_engine(args.engine)
            if args.seed is not None:
                sc = sc.with_seed(args.seed)
            out = args.out or sc.out_dir or str(Path("runs") / sc.name)
            res = run_scenario(sc, out, args.compare, argv)
            for key, path in res.files.items():
                print(f"{key}: {path}")
            if res.deviation is not None:
                print(f"max population deviation: {res.deviation['max_population_deviation']:.3e}")
                print(f"dipole RMS deviation: {res.deviation['dipole_rms_deviation']:.3e}")
        elif args.command == "scan-dt":
            sc = load_scenario(args.scenario)
            rows = scan_dt(sc, parse_grid(args.grid))
            keys = list(rows[0])
            text = "\t".join(keys) + "\n" + "".join(
                "\t".join(f"{r[k]:.6e}" if isinstance(r[k], float) else str(r[k]) for k in keys) + "\n"
                for r in rows
            )
            sys.stdout.write(text)
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                (Path(args.out) / "scan.tsv").write_text(text)
        elif args.command == "spectrum":
            system = MolecularSystem.load(args.molecule, cap_d=args.cap_d)
            spec = system.spectrum()
            if args.json:
                print(json.dumps(spec, indent=2))
            else:
                _print_spectrum(spec, sys.stdout)
    except (ScenarioError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
