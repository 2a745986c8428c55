"""Spin Hamiltonian, its analytic diagonalisation and the exact-cancellation geometry.

The rotating-frame Hamiltonian is::

    H0 = Omega_S Sz + omega_I Iz + A SzIz + B SzIx

which is block diagonal in the two electron manifolds. Each block is a nuclear
spin in an effective field tilted by ``eta_alpha`` (m_S=+1/2) or ``eta_beta``
(m_S=-1/2) away from z. Exact cancellation (``A = 2 omega_I``) tilts the
beta-manifold field into the transverse plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.constants import physical_constants
from scipy.spatial.transform import Rotation

from .spincore import MHZ, STRUCT_TOL, build_operator

PROTON_GAMMA_MHZ_PER_T = physical_constants["proton gyromag. ratio in MHz/T"][0]

DOUBLETS = ("2324", "1314")


@dataclass(frozen=True)
class SpinParams:
    """Hamiltonian coefficients in rad/ns.

    A negative pseudo-secular coupling is folded to ``B >= 0`` on construction
    and remembered in ``b_negative``; the two signs are related by a nuclear
    z-rotation and give identical populations.
    """

    omega_S_offset: float
    omega_I: float
    A: float
    B: float
    b_negative: bool = False

    def __post_init__(self):
        for name in ("omega_S_offset", "omega_I", "A", "B"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")
        if self.B < 0:
            object.__setattr__(self, "B", -self.B)
            object.__setattr__(self, "b_negative", not self.b_negative)

    @classmethod
    def from_mhz(cls, omega_I_MHz, A_MHz, B_MHz, offset_MHz=0.0):
        return cls(offset_MHz * MHZ, omega_I_MHz * MHZ, A_MHz * MHZ, B_MHz * MHZ)

    @property
    def weak_coupling(self) -> bool:
        return abs(self.A) < 2 * abs(self.omega_I)

    def with_offset(self, omega_S_offset: float) -> "SpinParams":
        return SpinParams(omega_S_offset, self.omega_I, self.A, self.B, self.b_negative)

    def to_mhz(self) -> dict:
        return {
            "offset_MHz": self.omega_S_offset / MHZ,
            "omega_I_MHz": self.omega_I / MHZ,
            "A_MHz": self.A / MHZ,
            "B_MHz": self.B / MHZ,
            "B_sign_flipped": self.b_negative,
        }


@dataclass(frozen=True)
class DerivedQuantities:
    omega12: float
    omega34: float
    eta_alpha: float
    eta_beta: float
    eta: float
    cancellation_mismatch: float
    sin_eta_beta: float
    degenerate: bool = False


def mixing_angles(omega_I: float, A: float, B: float) -> tuple[float, float]:
    """Signed mixing angles ``(eta_alpha, eta_beta)`` in radians.

    Quadrant-aware so the diagonaliser always orders each manifold's lower
    level first, i.e. ``omega12 <= 0`` and ``omega34 <= 0``. In the proton,
    weak-coupling regime this is the principal arctangent of ``-B/(A +- 2 omega_I)``.
    """
    eta_alpha = math.atan2(B, -(A + 2.0 * omega_I))
    eta_beta = math.atan2(-B, A - 2.0 * omega_I)
    return eta_alpha, eta_beta


def derive(p: SpinParams, *, tol: float = STRUCT_TOL) -> DerivedQuantities:
    """Nuclear transition frequencies, mixing angles and the cancellation mismatch."""
    wI, A, B = p.omega_I, p.A, p.B
    omega12 = -math.hypot(wI + A / 2.0, B / 2.0)
    omega34 = -math.hypot(wI - A / 2.0, B / 2.0)
    mismatch = abs(A - 2.0 * wI)
    degenerate = B <= tol and mismatch <= tol
    eta_alpha, eta_beta = mixing_angles(wI, A, B)
    if degenerate:
        eta_beta = 0.0
    return DerivedQuantities(
        omega12=omega12,
        omega34=omega34,
        eta_alpha=eta_alpha,
        eta_beta=eta_beta,
        eta=(eta_alpha - eta_beta) / 2.0,
        cancellation_mismatch=mismatch,
        sin_eta_beta=math.sin(eta_beta),
        degenerate=degenerate,
    )


def build_hamiltonian(p: SpinParams) -> np.ndarray:
    h = (
        p.omega_S_offset * build_operator("Sz")
        + p.omega_I * build_operator("Iz")
        + p.A * build_operator("SzIz")
        + p.B * build_operator("SzIx")
    )
    return h


def diagonalizer(p: SpinParams) -> np.ndarray:
    """Real orthogonal ``U`` with ``U H0 U^dagger`` diagonal.

    Each 2x2 block is a rotation by half the manifold's mixing angle.
    """
    d = derive(p)
    u = np.zeros((4, 4), dtype=complex)
    for k, eta in ((0, d.eta_alpha), (2, d.eta_beta)):
        c, s = math.cos(eta / 2.0), math.sin(eta / 2.0)
        u[k : k + 2, k : k + 2] = [[c, -s], [s, c]]
    return u


def level_energies(p: SpinParams) -> np.ndarray:
    """Eigenvalues of H0 in level order 1..4 (rad/ns)."""
    u = diagonalizer(p)
    return np.real(np.diag(u @ build_hamiltonian(p) @ u.conj().T)).copy()


def doublet_transitions(doublet: str) -> tuple[tuple[int, int], tuple[int, int]]:
    """The two EPR transitions (1-based level pairs) of a semi-selective doublet."""
    if doublet == "2324":
        return (2, 3), (2, 4)
    if doublet == "1314":
        return (1, 3), (1, 4)
    raise ValueError(f"unknown doublet {doublet!r}; expected one of {DOUBLETS}")


def resonance_offset(p: SpinParams, doublet: str = "2324") -> float:
    """Electron offset that centres the doublet's two EPR lines on the carrier.

    Returns Omega_S (rad/ns) such that the two rotating-frame transition
    frequencies of ``doublet`` are symmetric about zero. Any offset already in
    ``p`` is ignored.
    """
    pairs = doublet_transitions(doublet)
    e = level_energies(p.with_offset(0.0))
    mean = np.mean([e[i - 1] - e[j - 1] for i, j in pairs])
    # every EPR transition frequency moves one-for-one with Omega_S
    return float(-mean)


@dataclass(frozen=True)
class HyperfineTensor:
    """Hyperfine tensor with principal values in MHz and a principal-to-lab rotation.

    ``euler`` holds intrinsic z-y'-z'' Euler angles in radians.
    """

    principal_values: tuple[float, float, float]
    euler: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def rotation(self) -> np.ndarray:
        return Rotation.from_euler("ZYZ", self.euler).as_matrix()

    @property
    def matrix(self) -> np.ndarray:
        r = self.rotation
        return r @ np.diag(self.principal_values) @ r.T


EXAMPLE_TENSOR = HyperfineTensor((-29.0, -91.0, -61.0))


def hyperfine_from_orientation(tensor: HyperfineTensor, field_dir) -> tuple[float, float]:
    """Secular and pseudo-secular couplings (MHz) for a static-field direction."""
    n = np.asarray(field_dir, dtype=float)
    if n.shape != (3,) or not np.all(np.isfinite(n)):
        raise ValueError("field direction must be a finite 3-vector")
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise ValueError(f"field direction must be a unit vector (|n| = {np.linalg.norm(n):.12g})")
    a_vec = tensor.matrix @ n
    A = float(n @ a_vec)
    B = math.sqrt(max(float(a_vec @ a_vec) - A * A, 0.0))
    return A, B


def proton_larmor_mhz(b0_mT: float) -> float:
    """Signed proton Zeeman frequency (MHz) at field ``b0_mT``."""
    return -PROTON_GAMMA_MHZ_PER_T * b0_mT * 1e-3


@dataclass(frozen=True)
class ScanGrid:
    """Orientation x field grid for :func:`cancellation_scan`.

    Either an explicit list of ``directions`` or a polar grid with the given
    step sizes (degrees). Polar rows at theta = 0 and 180 have a single phi.
    """

    b0_mT: tuple[float, ...] = (343.7,)
    theta_step_deg: float = 10.0
    phi_step_deg: float = 10.0
    directions: tuple[tuple[float, float, float], ...] | None = None

    def direction_list(self) -> list[np.ndarray]:
        if self.directions is not None:
            return [np.asarray(d, dtype=float) for d in self.directions]
        if self.theta_step_deg <= 0 or self.phi_step_deg <= 0:
            raise ValueError("grid steps must be positive")
        out = []
        n_theta = int(round(180.0 / self.theta_step_deg))
        n_phi = int(round(360.0 / self.phi_step_deg))
        for i in range(n_theta + 1):
            theta = math.radians(min(i * self.theta_step_deg, 180.0))
            phis = [0.0] if i in (0, n_theta) else [j * self.phi_step_deg for j in range(n_phi)]
            for phi_deg in phis:
                phi = math.radians(phi_deg)
                out.append(
                    np.array(
                        [math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)]
                    )
                )
        return out

    def points(self) -> list[tuple[np.ndarray, float]]:
        return [(d, b0) for b0 in self.b0_mT for d in self.direction_list()]


@dataclass(frozen=True)
class ScanRow:
    direction: tuple[float, float, float]
    b0_mT: float
    mismatch_MHz: float
    sin_eta_beta: float
    A_MHz: float = field(default=0.0, compare=False)
    B_MHz: float = field(default=0.0, compare=False)
    index: int = field(default=0, compare=False)


def scan_point(tensor, omega_I_fn, direction, b0_mT, index=0) -> ScanRow:
    A, B = hyperfine_from_orientation(tensor, direction)
    wI = omega_I_fn(b0_mT)
    d = derive(SpinParams.from_mhz(wI, A, B))
    return ScanRow(
        direction=tuple(float(x) for x in direction),
        b0_mT=float(b0_mT),
        mismatch_MHz=abs(A - 2.0 * wI),
        sin_eta_beta=d.sin_eta_beta,
        A_MHz=A,
        B_MHz=B,
        index=index,
    )


def cancellation_scan(
    tensor: HyperfineTensor,
    omega_I_fn: Callable[[float], float] = proton_larmor_mhz,
    grid: ScanGrid | Iterable[tuple[Sequence[float], float]] = ScanGrid(),
    *,
    workers: int | None = None,
) -> list[ScanRow]:
    """Evaluate the cancellation mismatch ``|A - 2 omega_I|`` over a grid.

    ``omega_I_fn`` maps a field in mT to the signed nuclear Zeeman frequency in
    MHz. Rows come back sorted by mismatch, ties broken by grid index.
    """
    pts = grid.points() if isinstance(grid, ScanGrid) else [(np.asarray(d, float), b) for d, b in grid]
    if not pts:
        raise ValueError("cancellation scan needs a non-empty grid")
    jobs = [(tensor, omega_I_fn, d, b0, i) for i, (d, b0) in enumerate(pts)]
    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(lambda j: scan_point(*j), jobs))
    else:
        rows = [scan_point(*j) for j in jobs]
    return sorted(rows, key=lambda r: (r.mismatch_MHz, r.index))
