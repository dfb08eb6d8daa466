"""Recorded observables of one propagation and their text-table form."""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .fermion import AXES


@dataclass
class TimeSeries:
    times: np.ndarray
    fields: np.ndarray  # (n, 3)
    populations: np.ndarray  # (n, n_states)
    dipole: np.ndarray  # (n, 3)
    norm: np.ndarray
    state_labels: list[int] = field(default_factory=list)
    extra: dict[str, np.ndarray] = field(default_factory=dict)
    final_state: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.times)
        for name in ("fields", "populations", "dipole", "norm"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has {len(getattr(self, name))} rows, expected {n}")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")
        if not self.state_labels:
            self.state_labels = list(range(self.populations.shape[1]))

    def __len__(self) -> int:
        return len(self.times)

    def tracked_states(self, threshold: float = 0.01) -> list[int]:
        """Column positions whose peak population reaches ``threshold``."""
        peak = self.populations.max(axis=0)
        return [i for i in range(peak.shape[0]) if peak[i] >= threshold]

    def to_table(
        self, threshold: float = 0.01, states: list[int] | None = None, dipole_axis: int = 2
    ) -> str:
        """Tab-separated table: time, field_x/y/z, norm, dipole (along
        ``dipole_axis``), the tracked P_i, then dipole_x/y/z and any extras."""
        cols = states if states is not None else self.tracked_states(threshold)
        header = ["time", "field_x", "field_y", "field_z", "norm", "dipole"]
        header += [f"P_{self.state_labels[i]}" for i in cols]
        header += [f"dipole_{a}" for a in AXES]
        header += list(self.extra)
        data = np.column_stack(
            [self.times, self.fields, self.norm, self.dipole[:, dipole_axis], self.populations[:, cols], self.dipole]
            + [np.asarray(v, dtype=float) for v in self.extra.values()]
        )
        buf = io.StringIO()
        buf.write("\t".join(header) + "\n")
        for row in data:
            buf.write("\t".join(f"{v:.12e}" for v in row) + "\n")
        return buf.getvalue()


def read_table(text: str) -> dict[str, np.ndarray]:
    lines = text.strip().splitlines()
    header = lines[0].split("\t")
    data = np.array([[float(v) for v in ln.split("\t")] for ln in lines[1:]])
    return {h: data[:, i] for i, h in enumerate(header)}


def max_population_deviation(a: TimeSeries, b: TimeSeries, atol: float = 1e-9) -> float:
    """Max |P_i^a - P_i^b| over times present in both series."""
    ia, ib = common_time_indices(a.times, b.times, atol)
    labels = [s for s in a.state_labels if s in b.state_labels]
    ca = [a.state_labels.index(s) for s in labels]
    cb = [b.state_labels.index(s) for s in labels]
    return float(np.max(np.abs(a.populations[np.ix_(ia, ca)] - b.populations[np.ix_(ib, cb)])))


def common_time_indices(ta: np.ndarray, tb: np.ndarray, atol: float = 1e-9):
    ia, ib = [], []
    j = 0
    for i, t in enumerate(ta):
        while j < len(tb) and tb[j] < t - atol:
            j += 1
        if j < len(tb) and abs(tb[j] - t) <= atol:
            ia.append(i)
            ib.append(j)
    if not ia:
        raise ValueError("time grids share no sample points")
    return np.array(ia), np.array(ib)
