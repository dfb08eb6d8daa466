"""Scenario files: INI-style sections of ``key = value`` lines.

See ``docs/scenario_keys.md`` for the full key list. Every value is
validated here, so engines can trust a :class:`Scenario`.
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

from .hadamard import HadamardPlan
from .pulse import LaserPulse
from .qdyn import PropagationConfig

ENGINES = ("tdci", "qdyn", "hadamard", "qite")
_AXIS = {"x": 0, "y": 1, "z": 2}


class ScenarioError(ValueError):
    """Invalid scenario; the message names the offending section and key."""


@dataclass(frozen=True)
class CapSettings:
    d: float
    mode: str = "exact"
    shots: int = 10**6
    delta: float = 0.1
    dump_records: bool = False


@dataclass(frozen=True)
class Scenario:
    name: str
    molecule: str
    initial_state: str  # "ground" or a determinant index
    pulse: LaserPulse
    engine: str
    config: PropagationConfig
    reference_dt: float
    seed: int = 0
    hadamard_plan: HadamardPlan | None = None
    cap: CapSettings | None = None
    threshold: float = 0.01
    dipole_axis: int = 2
    out_dir: str = ""
    source: str = field(default="", compare=False)

    def with_engine(self, engine: str) -> Scenario:
        return _validated(_replace(self, engine=engine))

    def with_seed(self, seed: int) -> Scenario:
        return _replace(self, seed=seed)

    def with_dt(self, dt: float) -> Scenario:
        cfg = self.config
        cfg = PropagationConfig(dt, cfg.t_final, cfg.trotter_order, 1, cfg.cycles)
        return _replace(self, config=cfg)

    @property
    def record_interval(self) -> float:
        return self.config.dt * self.config.record_every

    def reference_record_every(self) -> int:
        k = self.record_interval / self.reference_dt
        if abs(k - round(k)) > 1e-9 or round(k) < 1:
            raise ScenarioError(
                "[propagation] reference_dt must divide the recording interval dt * record_every"
            )
        return int(round(k))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("source")
        return d


def _replace(sc: Scenario, **kw) -> Scenario:
    return replace(sc, **kw)


# section -> key -> (parser, required)
_SCHEMA: dict[str, dict[str, tuple]] = {
    "system": {"molecule": (str, True), "initial_state": (str, False)},
    "pulse": {
        "f0": ("vec3", True),
        "omega": (float, True),
        "t_p": (float, False),
        "sigma": (float, True),
    },
    "propagation": {
        "engine": (str, False),
        "dt": (float, True),
        "t_final": (float, False),
        "trotter_order": (int, False),
        "cycles": (int, False),
        "record_every": (int, False),
        "reference_dt": (float, False),
    },
    "hadamard": {
        "delta_x": (float, True),
        "shots": (int, True),
        "part": (str, False),
        "trotter_order_for_u": (int, False),
        "restart_mode": (str, False),
        "batch_shots": (int, False),
    },
    "cap": {
        "d": (float, True),
        "mode": (str, False),
        "shots": (int, False),
        "delta": (float, False),
        "dump_records": ("bool", False),
    },
    "output": {"threshold": (float, False), "dipole_axis": (str, False), "dir": (str, False)},
    "run": {"seed": (int, False)},
}
_REQUIRED_SECTIONS = ("system", "pulse", "propagation")


def _convert(section: str, key: str, raw: str, kind):
    where = f"[{section}] {key}"
    try:
        if kind == "vec3":
            vals = [float(v) for v in raw.replace(",", " ").split()]
            if len(vals) != 3:
                raise ValueError("expected three numbers")
            return tuple(vals)
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError("expected true or false")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ScenarioError(f"{where}: cannot parse {raw!r} ({exc})") from None


def parse_scenario(text: str, name: str = "scenario", source: str = "") -> Scenario:
    cp = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), comment_prefixes=("#", ";")
    )
    cp.optionxform = str
    try:
        cp.read_string(text, source=source or name)
    except configparser.Error as exc:
        raise ScenarioError(f"malformed scenario file: {exc}") from None
    vals: dict[str, dict] = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ScenarioError(f"[{section}]: unknown section")
        vals[section] = {}
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ScenarioError(f"[{section}] {key}: unknown key")
            vals[section][key] = _convert(section, key, raw, _SCHEMA[section][key][0])
    for section in _REQUIRED_SECTIONS:
        if section not in vals:
            raise ScenarioError(f"[{section}]: missing required section")
    for section, keys in vals.items():
        for key, (_, required) in _SCHEMA[section].items():
            if required and key not in keys:
                raise ScenarioError(f"[{section}] {key}: missing required key")
    return _validated(_build(vals, name, source))


def _positive(section: str, key: str, v: float) -> float:
    if not v > 0:
        raise ScenarioError(f"[{section}] {key}: must be positive, got {v}")
    return v


def _build(vals: dict, name: str, source: str) -> Scenario:
    sysv, pv, prop = vals["system"], vals["pulse"], vals["propagation"]
    sigma = _positive("pulse", "sigma", pv["sigma"])
    t_p = pv.get("t_p", sigma)
    pulse = LaserPulse(pv["f0"], pv["omega"], t_p, sigma)
    dt = _positive("propagation", "dt", prop["dt"])
    t_final = _positive("propagation", "t_final", prop.get("t_final", t_p + sigma))
    order = prop.get("trotter_order", 2)
    if order not in (1, 2):
        raise ScenarioError(f"[propagation] trotter_order: must be 1 or 2, got {order}")
    for key in ("cycles", "record_every"):
        if prop.get(key, 1) < 1:
            raise ScenarioError(f"[propagation] {key}: must be >= 1")
    steps = t_final / dt
    if abs(steps - round(steps)) > 1e-6:
        raise ScenarioError("[propagation] dt: must divide t_final into whole steps")
    cfg = PropagationConfig(dt, t_final, order, prop.get("record_every", 1), prop.get("cycles", 1))
    ref_dt = _positive("propagation", "reference_dt", prop.get("reference_dt", dt))

    initial = sysv.get("initial_state", "ground")
    if initial != "ground":
        try:
            if int(initial) < 0:
                raise ValueError
        except ValueError:
            raise ScenarioError(
                f"[system] initial_state: expected 'ground' or a determinant index, got {initial!r}"
            ) from None

    plan = None
    if "hadamard" in vals:
        hv = vals["hadamard"]
        try:
            plan = HadamardPlan(
                hv["delta_x"],
                hv["shots"],
                hv.get("part", "imaginary"),
                hv.get("trotter_order_for_u", 1),
                hv.get("restart_mode", "cached-register"),
                _axis(vals),
                hv.get("batch_shots", 0),
            )
        except ValueError as exc:
            raise ScenarioError(f"[hadamard]: {exc}") from None

    cap = None
    if "cap" in vals:
        cv = vals["cap"]
        mode = cv.get("mode", "exact")
        if mode not in ("exact", "sampled"):
            raise ScenarioError(f"[cap] mode: must be 'exact' or 'sampled', got {mode!r}")
        if cv.get("shots", 1) < 1:
            raise ScenarioError("[cap] shots: must be >= 1")
        if cv.get("delta", 0.1) < 0:
            raise ScenarioError("[cap] delta: must be >= 0")
        cap = CapSettings(
            _positive("cap", "d", cv["d"]),
            mode,
            cv.get("shots", 10**6),
            cv.get("delta", 0.1),
            cv.get("dump_records", False),
        )

    out = vals.get("output", {})
    threshold = out.get("threshold", 0.01)
    if not 0 <= threshold <= 1:
        raise ScenarioError(f"[output] threshold: must lie in [0, 1], got {threshold}")
    return Scenario(
        name=name,
        molecule=sysv["molecule"],
        initial_state=initial,
        pulse=pulse,
        engine=prop.get("engine", "qdyn"),
        config=cfg,
        reference_dt=ref_dt,
        seed=vals.get("run", {}).get("seed", 0),
        hadamard_plan=plan,
        cap=cap,
        threshold=threshold,
        dipole_axis=_axis(vals),
        out_dir=out.get("dir", ""),
        source=source,
    )


def _axis(vals: dict) -> int:
    a = vals.get("output", {}).get("dipole_axis", "z")
    if a not in _AXIS:
        raise ScenarioError(f"[output] dipole_axis: must be x, y or z, got {a!r}")
    return _AXIS[a]


def _validated(sc: Scenario) -> Scenario:
    if sc.engine not in ENGINES:
        raise ScenarioError(f"[propagation] engine: must be one of {', '.join(ENGINES)}, got {sc.engine!r}")
    if sc.engine == "hadamard" and sc.hadamard_plan is None:
        raise ScenarioError("[hadamard]: section required by engine 'hadamard'")
    if sc.engine == "qite" and sc.cap is None:
        raise ScenarioError("[cap]: section required by engine 'qite'")
    if sc.engine in ("qdyn", "hadamard") and sc.cap is not None:
        raise ScenarioError(
            f"[cap]: engine {sc.engine!r} is unitary and cannot carry a CAP; use 'qite' or 'tdci'"
        )
    return sc


def load_scenario(path: str | Path) -> Scenario:
    """Read a scenario file, or a bundled scenario by name (e.g. ``h2_pi_pulse``)."""
    p = Path(path)
    if not p.exists():
        bundled = bundled_scenario_path(str(path))
        if bundled is None:
            raise FileNotFoundError(f"no scenario file {path!r} and no bundled scenario of that name")
        p = bundled
    return parse_scenario(p.read_text(), name=p.stem, source=str(p))


def bundled_scenario_path(name: str) -> Path | None:
    p = Path(str(resources.files("qedyn") / "data" / "scenarios" / f"{name}.ini"))
    return p if p.exists() else None


def bundled_scenarios() -> list[str]:
    d = Path(str(resources.files("qedyn") / "data" / "scenarios"))
    return sorted(p.stem for p in d.glob("*.ini"))
