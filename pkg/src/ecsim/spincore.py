"""Dense 4x4 algebra for one electron spin S=1/2 coupled to one nuclear spin I=1/2.

Basis ordering is fixed throughout the package::

    |1> = |alpha alpha>,  |2> = |alpha beta>,  |3> = |beta alpha>,  |4> = |beta beta>

with the electron quantum number first. Electron operators are
``kron(sigma/2, 1)`` and nuclear operators ``kron(1, sigma/2)``.

Frequencies are angular frequencies in rad/ns, times are in ns, so every
exponent ``H * t`` is dimensionless.
"""

from __future__ import annotations

import numpy as np

STRUCT_TOL = 1e-12
NUM_TOL = 1e-10

# MHz (ordinary frequency) -> rad/ns
MHZ = 2.0 * np.pi * 1e-3

_SX = np.array([[0.0, 0.5], [0.5, 0.0]], dtype=complex)
_SY = np.array([[0.0, -0.5j], [0.5j, 0.0]], dtype=complex)
_SZ = np.array([[0.5, 0.0], [0.0, -0.5]], dtype=complex)
_E2 = np.eye(2, dtype=complex)


def _electron(m):
    return np.kron(m, _E2)


def _nuclear(m):
    return np.kron(_E2, m)


def _make_operators():
    ops = {
        "identity": np.eye(4, dtype=complex),
        "Sx": _electron(_SX),
        "Sy": _electron(_SY),
        "Sz": _electron(_SZ),
        "Ix": _nuclear(_SX),
        "Iy": _nuclear(_SY),
        "Iz": _nuclear(_SZ),
    }
    ops["SzIz"] = ops["Sz"] @ ops["Iz"]
    ops["SzIx"] = ops["Sz"] @ ops["Ix"]
    ops["SyIz"] = ops["Sy"] @ ops["Iz"]
    ops["Sy24"] = 0.5 * ops["Sy"] - ops["SyIz"]
    for m in ops.values():
        m.setflags(write=False)
    return ops


_OPERATORS = _make_operators()
OPERATOR_NAMES = tuple(_OPERATORS)


def build_operator(name: str) -> np.ndarray:
    """Return the product-basis matrix of a named spin operator.

    Recognised names are ``Sx Sy Sz Ix Iy Iz SzIz SzIx SyIz Sy24 identity``.
    A fresh writable copy is returned.
    """
    try:
        return _OPERATORS[name].copy()
    except KeyError:
        raise ValueError(
            f"unknown spin operator {name!r}; expected one of {', '.join(OPERATOR_NAMES)}"
        ) from None


def as_cmat4(m, *, name: str = "matrix") -> np.ndarray:
    """Validate shape and finiteness and return ``m`` as a complex 4x4 array."""
    a = np.asarray(m, dtype=complex)
    if a.shape != (4, 4):
        raise ValueError(f"{name} must be 4x4, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")
    return a


def hermiticity_error(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - m.conj().T)))


def unitarity_error(u: np.ndarray) -> float:
    return float(np.max(np.abs(u @ u.conj().T - np.eye(u.shape[0]))))


def check_hermitian(m, *, tol: float = STRUCT_TOL, name: str = "matrix") -> np.ndarray:
    a = as_cmat4(m, name=name)
    err = hermiticity_error(a)
    if err > tol:
        raise ValueError(f"{name} is not Hermitian (max |H - H^dagger| = {err:.3e})")
    return a


def check_unitary(u, *, tol: float = NUM_TOL, name: str = "propagator") -> np.ndarray:
    a = as_cmat4(u, name=name)
    err = unitarity_error(a)
    if err > tol:
        raise ValueError(f"{name} is not unitary (max |U U^dagger - 1| = {err:.3e})")
    return a


def exp_hermitian(h, t: float) -> np.ndarray:
    """Propagator ``exp(-i h t)`` for Hermitian ``h`` (rad/ns) and time ``t`` (ns).

    Uses the eigendecomposition of ``h``, which is exact up to rounding and keeps
    the result unitary to ~1e-15.
    """
    h = check_hermitian(h, name="Hamiltonian")
    if not np.isfinite(t):
        raise ValueError(f"time must be finite, got {t!r}")
    # symmetrise so eigh sees an exactly Hermitian matrix
    w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def evolve(rho, u, *, tol: float = NUM_TOL) -> np.ndarray:
    """Conjugate a density matrix by a unitary: ``u @ rho @ u^dagger``."""
    rho = as_cmat4(rho, name="density matrix")
    u = check_unitary(u, tol=tol)
    return u @ rho @ u.conj().T


def expectation(rho, op) -> float:
    """Real expectation value ``Tr(rho op)`` of a Hermitian observable.

    Raises if the trace carries an imaginary part above 1e-10, which happens
    only for non-Hermitian input.
    """
    rho = as_cmat4(rho, name="density matrix")
    op = check_hermitian(op, name="observable")
    val = np.trace(rho @ op)
    if abs(val.imag) >= NUM_TOL:
        raise ValueError(f"expectation value has imaginary part {val.imag:.3e}")
    return float(val.real)


def populations(rho) -> np.ndarray:
    """Product-basis populations ``p1..p4``."""
    return np.real(np.diag(as_cmat4(rho, name="density matrix"))).copy()


def projector(level: int) -> np.ndarray:
    """Pure-state density matrix ``|k><k|`` for level ``k`` in 1..4."""
    if level not in (1, 2, 3, 4):
        raise ValueError(f"level must be 1..4, got {level!r}")
    rho = np.zeros((4, 4), dtype=complex)
    rho[level - 1, level - 1] = 1.0
    return rho


_STATE_LEVELS = {"aa": 1, "ab": 2, "ba": 3, "bb": 4}


def named_state(name: str) -> np.ndarray:
    """Initial states by short name.

    ``thermal`` is the deviation matrix ``-Sz``; ``aa``, ``ab``, ``ba`` and ``bb``
    are the pure product states (electron label first).
    """
    if name == "thermal":
        return -build_operator("Sz")
    try:
        return projector(_STATE_LEVELS[name])
    except KeyError:
        raise ValueError(
            f"unknown state {name!r}; expected thermal, aa, ab, ba or bb"
        ) from None


def gate_fidelity(v, w) -> float:
    """Phase-insensitive overlap ``|Tr(v^dagger w)| / 4`` of two 4x4 unitaries."""
    v = as_cmat4(v, name="reference unitary")
    w = as_cmat4(w, name="unitary")
    return float(abs(np.trace(v.conj().T @ w)) / 4.0)
