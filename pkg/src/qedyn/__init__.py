"""Laser-driven electron dynamics with simulated fault-tolerant quantum algorithms.

Modules: ``qsim`` (state-vector simulator and Pauli algebra), ``fermion``
(integrals, second quantization, Jordan-Wigner), ``refdyn`` (classical TD-CI
reference), ``qdyn`` (Trotterized propagation), ``hadamard`` (Hadamard-test
dipoles), ``qite`` (non-Hermitian CAP factors) and ``cli``.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .pulse import LaserPulse, pulse_field  # noqa: E402
from .system import MolecularSystem  # noqa: E402

__all__ = ["LaserPulse", "MolecularSystem", "pulse_field", "__version__"]
