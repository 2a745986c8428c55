"""Propagators for free evolution, microwave pulses and the dephasing channel.

Ideal pulses are built in the eigenbasis of H0 and rotated back to the product
basis with the diagonaliser, so they stay well defined for arbitrary mixing.
Finite pulses are rectangular and integrate the full rotating-frame
Hamiltonian over the pulse length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DOUBLETS, SpinParams, build_hamiltonian, derive, diagonalizer, doublet_transitions
from .spincore import as_cmat4, build_operator, exp_hermitian

TRANSITIONS = ("12", "34", "13", "24")
PULSE_KINDS = ("ideal_selective", "ideal_semiselective", "finite")


@dataclass(frozen=True)
class PulseSpec:
    """A microwave (or, for 12/34, radio-frequency) pulse.

    ``phase`` 0 rotates about the rotating-frame y axis; pi/2 about x.
    ``omega1`` (rad/ns) and ``duration`` (ns) are used by finite pulses only.
    """

    kind: str
    target: str
    angle: float
    phase: float = 0.0
    omega1: float | None = None
    duration: float | None = None

    def __post_init__(self):
        if self.kind not in PULSE_KINDS:
            raise ValueError(f"unknown pulse kind {self.kind!r}")
        if not math.isfinite(self.angle) or not math.isfinite(self.phase):
            raise ValueError("pulse angle and phase must be finite")
        if self.kind == "ideal_selective" and self.target not in TRANSITIONS:
            raise ValueError(f"selective pulses take a transition {TRANSITIONS}, got {self.target!r}")
        if self.kind in ("ideal_semiselective", "finite") and self.target not in DOUBLETS:
            raise ValueError(f"{self.kind} pulses take a doublet {DOUBLETS}, got {self.target!r}")
        if self.kind == "finite":
            if self.omega1 is None or self.duration is None:
                raise ValueError("finite pulses need omega1 and duration")
            if not (self.duration > 0 and math.isfinite(self.duration)):
                raise ValueError(f"finite pulse duration must be > 0, got {self.duration!r}")
            if not math.isfinite(self.omega1):
                raise ValueError("finite pulse omega1 must be finite")

    @property
    def elapsed(self) -> float:
        """Simulated time the pulse consumes; ideal pulses are instantaneous."""
        return self.duration if self.kind == "finite" else 0.0


def free_propagator(p: SpinParams, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError(f"free evolution time must be >= 0, got {t!r}")
    return exp_hermitian(build_hamiltonian(p), t)


def _eigen_to_product(p: SpinParams, generator_eig: np.ndarray, angle: float) -> np.ndarray:
    u = diagonalizer(p)
    return u.conj().T @ exp_hermitian(generator_eig, angle) @ u


def _two_level_generator(j: int, k: int, phase: float) -> np.ndarray:
    # cos(phase) * Y_jk + sin(phase) * X_jk on levels j < k (1-based)
    g = np.zeros((4, 4), dtype=complex)
    g[j - 1, k - 1] = 0.5 * (-1j * math.cos(phase) + math.sin(phase))
    g[k - 1, j - 1] = np.conj(g[j - 1, k - 1])
    return g


def effective_angle(p: SpinParams, target: str, angle: float) -> float:
    """Rotation angle actually produced on an eigenbasis transition.

    Allowed EPR transitions (13, 24) are scaled by ``cos(eta)``; nuclear
    transitions (12, 34) rotate by the nominal angle.
    """
    if target in ("13", "24"):
        return angle * math.cos(derive(p).eta)
    if target in ("12", "34"):
        return angle
    raise ValueError(f"invalid selective-pulse target {target!r}; expected one of {TRANSITIONS}")


def ideal_selective_pulse(p: SpinParams, target: str, angle: float, phase: float = 0.0) -> np.ndarray:
    """Transition-selective rotation ``exp(-i angle cos(eta) S_y^{jk})`` in the eigenbasis."""
    if target not in TRANSITIONS:
        raise ValueError(f"invalid selective-pulse target {target!r}; expected one of {TRANSITIONS}")
    j, k = int(target[0]), int(target[1])
    return _eigen_to_product(p, _two_level_generator(j, k, phase), effective_angle(p, target, angle))


def semiselective_generator(p: SpinParams, doublet: str, phase: float = 0.0) -> np.ndarray:
    """Eigenbasis generator of a pulse exciting both lines of a doublet.

    The eigenbasis image of ``Sy cos(phase) + Sx sin(phase)`` with every
    element outside the doublet's two transitions removed, scaled so the
    shared level couples with norm 1/2 (a nominal pi inverts it).
    """
    pairs = doublet_transitions(doublet)
    u = diagonalizer(p)
    drive = math.cos(phase) * build_operator("Sy") + math.sin(phase) * build_operator("Sx")
    full = u @ drive @ u.conj().T
    g = np.zeros((4, 4), dtype=complex)
    for i, j in pairs:
        g[i - 1, j - 1] = full[i - 1, j - 1]
        g[j - 1, i - 1] = full[j - 1, i - 1]
    shared = pairs[0][0] - 1
    norm = float(np.linalg.norm(g[shared]))
    if norm == 0.0:
        raise ValueError(f"doublet {doublet} has no transition strength for these parameters")
    return g * (0.5 / norm)


def ideal_semiselective(p: SpinParams, doublet: str, angle: float, phase: float = 0.0) -> np.ndarray:
    if doublet not in DOUBLETS:
        raise ValueError(f"invalid doublet {doublet!r}; expected one of {DOUBLETS}")
    return _eigen_to_product(p, semiselective_generator(p, doublet, phase), angle)


def finite_pulse(p: SpinParams, omega1: float, duration: float, phase: float = 0.0) -> np.ndarray:
    """Rectangular pulse of strength ``omega1`` (rad/ns) and length ``duration`` (ns).

    The carrier frame is the one fixed by ``p.omega_S_offset``.
    """
    if not duration > 0:
        raise ValueError(f"pulse duration must be > 0, got {duration!r}")
    drive = math.cos(phase) * build_operator("Sy") + math.sin(phase) * build_operator("Sx")
    return exp_hermitian(build_hamiltonian(p) + omega1 * drive, duration)


def pulse_propagator(p: SpinParams, spec: PulseSpec) -> np.ndarray:
    if spec.kind == "ideal_selective":
        return ideal_selective_pulse(p, spec.target, spec.angle, spec.phase)
    if spec.kind == "ideal_semiselective":
        return ideal_semiselective(p, spec.target, spec.angle, spec.phase)
    # a finite pulse's nominal angle is fixed by omega1 * duration; spec.angle is a label
    return finite_pulse(p, spec.omega1, spec.duration, spec.phase)


def dephase(rho, p: SpinParams, basis: str = "eigen") -> np.ndarray:
    """Remove all coherences, keeping populations.

    ``basis="eigen"`` zeroes off-diagonal elements in the eigenbasis of H0
    (the state left after complete transverse relaxation). ``basis="product"``
    zeroes them in the product basis instead.
    """
    rho = as_cmat4(rho, name="density matrix")
    if basis == "product":
        return np.diag(np.diag(rho))
    if basis != "eigen":
        raise ValueError(f"dephasing basis must be 'eigen' or 'product', got {basis!r}")
    u = diagonalizer(p)
    r_eig = u @ rho @ u.conj().T
    return u.conj().T @ np.diag(np.diag(r_eig)) @ u
