"""Electron-controlled nuclear-spin dynamics for one electron and one nuclear spin-1/2."""

from .model import SpinParams, derive, build_hamiltonian, diagonalizer, resonance_offset
from .pulses import PulseSpec, pulse_propagator
from .sequence import Delay, Dephase, Pulse, Sample, SamplingGrid, Sequence, Trace, run
from .spincore import MHZ, build_operator

__version__ = "0.1.0"

__all__ = [
    "MHZ",
    "Delay",
    "Dephase",
    "Pulse",
    "PulseSpec",
    "Sample",
    "SamplingGrid",
    "Sequence",
    "SpinParams",
    "Trace",
    "build_hamiltonian",
    "build_operator",
    "derive",
    "diagonalizer",
    "pulse_propagator",
    "resonance_offset",
    "run",
    "__version__",
]
