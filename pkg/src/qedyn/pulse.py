"""cos^2-enveloped laser pulse."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LaserPulse:
    """F(t) = f0 sin(omega (t - t_p)) cos^2(pi (t - t_p) / (2 sigma)), zero for |t - t_p| > sigma."""

    f0: tuple[float, float, float]
    omega: float
    t_p: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("pulse width sigma must be positive")
        object.__setattr__(self, "f0", tuple(float(v) for v in self.f0))
        if len(self.f0) != 3:
            raise ValueError("f0 must be a 3-vector")

    @classmethod
    def off(cls) -> LaserPulse:
        return cls((0.0, 0.0, 0.0), 0.0, 0.0, 1.0)

    def envelope(self, t: float) -> float:
        """Scalar shape s(t) with F(t) = f0 * s(t)."""
        tau = t - self.t_p
        if abs(tau) > self.sigma:
            return 0.0
        return float(np.sin(self.omega * tau) * np.cos(np.pi * tau / (2.0 * self.sigma)) ** 2)

    @property
    def direction(self) -> np.ndarray:
        return np.asarray(self.f0)

    def is_off(self) -> bool:
        return not any(self.f0)


def pulse_field(p: LaserPulse, t: float) -> np.ndarray:
    return np.asarray(p.f0) * p.envelope(t)
