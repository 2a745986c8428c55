"""Event sequences and the experiments built from them.

A :class:`Sequence` is an ordered list of pulses, delays, dephasing steps and
explicit samples. :func:`run` applies it to a density matrix and records
observables; the remaining functions assemble the lock/release, detection,
pseudopure-preparation and three-pulse ESEEM experiments.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .model import SpinParams, build_hamiltonian, derive
from .pulses import (
    PulseSpec,
    dephase,
    finite_pulse,
    ideal_selective_pulse,
    ideal_semiselective,
    pulse_propagator,
)
from .spincore import MHZ, NUM_TOL, as_cmat4, build_operator, check_unitary, exp_hermitian

OBSERVABLES = ("Iz", "Sx", "Sz", "p1", "p2", "p3", "p4")
_EPS_NS = 1e-9


class SequenceError(ValueError):
    """A malformed sequence; ``index`` is the offending event (or None)."""

    def __init__(self, index: int | None, message: str):
        self.index = index
        where = f"event {index}: " if index is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class Pulse:
    spec: PulseSpec


@dataclass(frozen=True)
class Delay:
    duration: float
    sample_every: float | None = None


@dataclass(frozen=True)
class Dephase:
    pass


@dataclass(frozen=True)
class Sample:
    label: str


Event = Pulse | Delay | Dephase | Sample


@dataclass(frozen=True)
class SamplingGrid:
    start: float
    step: float
    count: int

    def times(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.count)


@dataclass(frozen=True)
class Sequence:
    events: tuple
    sampling: SamplingGrid | None = None

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))

    @property
    def duration(self) -> float:
        total = 0.0
        for ev in self.events:
            if isinstance(ev, Delay):
                total += ev.duration
            elif isinstance(ev, Pulse):
                total += ev.spec.elapsed
        return total

    def validate(self) -> None:
        if not self.events:
            raise SequenceError(None, "sequence has no events")
        for i, ev in enumerate(self.events):
            if isinstance(ev, Delay):
                if not (math.isfinite(ev.duration) and ev.duration >= 0):
                    raise SequenceError(i, f"delay must be finite and >= 0, got {ev.duration!r}")
                if ev.sample_every is not None and not (
                    math.isfinite(ev.sample_every) and ev.sample_every > 0
                ):
                    raise SequenceError(i, f"sampling step must be > 0, got {ev.sample_every!r}")
            elif isinstance(ev, Pulse):
                if not isinstance(ev.spec, PulseSpec):
                    raise SequenceError(i, "pulse event without a PulseSpec")
            elif not isinstance(ev, (Dephase, Sample)):
                raise SequenceError(i, f"unknown event type {type(ev).__name__}")
        g = self.sampling
        if g is not None:
            if g.count < 1 or not g.step > 0 or g.start < 0:
                raise SequenceError(None, "sampling grid needs start >= 0, step > 0 and count >= 1")
            if g.start + g.step * (g.count - 1) > self.duration + _EPS_NS:
                raise SequenceError(None, "sampling grid extends past the end of the sequence")


@dataclass
class Trace:
    """Sampled observables; every list in ``values`` is as long as ``times``."""

    times: np.ndarray
    values: dict[str, np.ndarray]
    labels: list = field(default_factory=list)

    def __len__(self):
        return len(self.times)

    def column(self, name: str) -> np.ndarray:
        return self.values[name]


def observe(rho: np.ndarray) -> dict[str, float]:
    pops = np.real(np.diag(rho))
    out = {
        "Iz": float(np.real(np.trace(rho @ build_operator("Iz")))),
        "Sx": float(np.real(np.trace(rho @ build_operator("Sx")))),
        "Sz": float(np.real(np.trace(rho @ build_operator("Sz")))),
    }
    for k in range(4):
        out[f"p{k + 1}"] = float(pops[k])
    return out


class _Recorder:
    def __init__(self, extra):
        self.extra = dict(extra or {})
        self.times: list[float] = []
        self.labels: list = []
        self.rows: list[dict] = []

    def __call__(self, t, rho, label=None):
        row = observe(rho)
        for name, fn in self.extra.items():
            row[name] = float(fn(rho))
        self.times.append(float(t))
        self.labels.append(label)
        self.rows.append(row)

    def trace(self) -> Trace:
        names = list(OBSERVABLES) + list(self.extra)
        values = {n: np.array([r[n] for r in self.rows], dtype=float) for n in names}
        return Trace(np.array(self.times, dtype=float), values, self.labels)


def _segment_offsets(duration, every, grid_times, t0, *, include_end):
    offs = set()
    if every is not None:
        n = int(math.floor(duration / every + 1e-9))
        offs.update(k * every for k in range(n + 1))
    for tg in grid_times:
        off = tg - t0
        if -_EPS_NS <= off < duration - _EPS_NS or (include_end and abs(off - duration) <= _EPS_NS):
            offs.add(min(max(off, 0.0), duration))
    return sorted(offs)


def run(
    rho0,
    p: SpinParams,
    seq: Sequence,
    *,
    extra: Mapping[str, Callable[[np.ndarray], float]] | None = None,
    tol: float = NUM_TOL,
) -> tuple[np.ndarray, Trace]:
    """Apply ``seq`` to ``rho0`` and record the observables.

    Ideal pulses take no time; finite pulses advance the clock by their length.
    ``extra`` adds named scalar probes evaluated on every recorded state.
    """
    seq.validate()
    rho = as_cmat4(rho0, name="initial density matrix").copy()
    rec = _Recorder(extra)
    grid_times = seq.sampling.times() if seq.sampling is not None else np.empty(0)
    total = seq.duration
    h0 = build_hamiltonian(p)
    w0, v0 = np.linalg.eigh(h0)
    cache: dict[PulseSpec, np.ndarray] = {}
    t = 0.0
    last_timed = max(
        (i for i, ev in enumerate(seq.events) if isinstance(ev, Delay) or (isinstance(ev, Pulse) and ev.spec.elapsed > 0)),
        default=-1,
    )
    for i, ev in enumerate(seq.events):
        try:
            if isinstance(ev, Pulse):
                spec = ev.spec
                if spec.kind == "finite" and len(grid_times):
                    offs = _segment_offsets(spec.duration, None, grid_times, t, include_end=(i == last_timed))
                    for off in offs:
                        rec(t + off, _conj(finite_pulse(p, spec.omega1, off, spec.phase) if off > 0 else np.eye(4), rho))
                u = cache.get(spec)
                if u is None:
                    u = cache[spec] = check_unitary(pulse_propagator(p, spec), tol=tol)
                rho = u @ rho @ u.conj().T
                t += spec.elapsed
            elif isinstance(ev, Delay):
                offs = _segment_offsets(ev.duration, ev.sample_every, grid_times, t, include_end=(i == last_timed))
                for off in offs:
                    u = (v0 * np.exp(-1j * w0 * off)) @ v0.conj().T
                    rec(t + off, u @ rho @ u.conj().T)
                u = (v0 * np.exp(-1j * w0 * ev.duration)) @ v0.conj().T
                rho = u @ rho @ u.conj().T
                t += ev.duration
            elif isinstance(ev, Dephase):
                rho = dephase(rho, p)
            elif isinstance(ev, Sample):
                rec(t, rho, ev.label)
        except SequenceError:
            raise
        except ValueError as exc:
            raise SequenceError(i, str(exc)) from exc
    if abs(t - total) > _EPS_NS:  # pragma: no cover - bookkeeping guard
        raise SequenceError(None, "internal clock mismatch")
    return rho, rec.trace()


def _conj(u, rho):
    return u @ rho @ u.conj().T


def closed_form_evolution(p: SpinParams, t: float) -> np.ndarray:
    """Analytic state at time ``t`` of free evolution started from |beta alpha>."""
    d = derive(p)
    eb, w = d.eta_beta, d.omega34
    rho = np.zeros((4, 4), dtype=complex)
    one_minus_cos = 1.0 - math.cos(w * t)
    rho[2, 2] = 1.0 - 0.5 * math.sin(eb) ** 2 * one_minus_cos
    rho[3, 3] = 0.5 * math.sin(eb) ** 2 * one_minus_cos
    re = -0.5 * math.sin(2 * eb) * math.sin(w * t / 2.0) ** 2
    im = 0.5 * math.sin(eb) * math.sin(w * t)
    rho[2, 3] = re - 1j * im
    rho[3, 2] = re + 1j * im
    return rho


def nutation_period(p: SpinParams) -> float:
    """Beta-manifold nuclear period ``2 pi / |omega34|`` in ns."""
    return 2.0 * math.pi / abs(derive(p).omega34)


# --- pseudopure preparation -------------------------------------------------


def pseudopure_cos2phi(eta_alpha: float) -> float:
    """cos(2 phi) that equalises levels 2, 3 and 4 after the selective 24 pulse.

    Exact at cancellation (``sin eta_beta = -1``) after product-basis dephasing.
    """
    s2 = math.sin(eta_alpha / 2.0) ** 2
    c2 = math.cos(eta_alpha / 2.0) ** 2
    return -(1.0 + 2.0 * s2) / (1.0 + 2.0 * c2)


def pseudopure_cos2phi_variant(eta_alpha: float) -> float:
    """Variant closed form ``(-1 + 2 sin^2(eta_a/2)) / (2 cos^2(eta_a/2) + 1)``.

    It agrees with :func:`pseudopure_cos2phi` only at ``eta_alpha = 0`` and is
    kept for comparison with the small-angle approximation.
    """
    s2 = math.sin(eta_alpha / 2.0) ** 2
    c2 = math.cos(eta_alpha / 2.0) ** 2
    return (-1.0 + 2.0 * s2) / (2.0 * c2 + 1.0)


def pseudopure_cos2phi_small_angle(eta_alpha: float) -> float:
    """Small-angle approximation ``-1/3 + eta_alpha^2 / 6``."""
    return -1.0 / 3.0 + eta_alpha**2 / 6.0


@dataclass(frozen=True)
class Preparation:
    rho: np.ndarray
    fidelity: float
    cos2phi: float
    nominal_angle: float
    target: str


_TARGET_LEVEL = {"aa": 1, "ba": 3}


def pseudopure_fidelity(rho, level: int) -> float:
    """Share of the deviation matrix carried by ``|level><level|``.

    The uniform background (mean of the other three populations) is removed
    first; 1.0 means a perfect pseudopure state.
    """
    rho = as_cmat4(rho, name="density matrix")
    pops = np.real(np.diag(rho))
    others = [pops[k] for k in range(4) if k != level - 1]
    shifted = rho - np.mean(others) * np.eye(4)
    norm = np.linalg.norm(shifted)
    if norm == 0:
        return 0.0
    return float(abs(shifted[level - 1, level - 1]) / norm)


def prepare_pseudopure(
    p: SpinParams,
    target: str = "ba",
    *,
    cos2phi: float | None = None,
    dephase_basis: str = "product",
    cancel_tol: float = 1e-3,
) -> Preparation:
    """Microwave-only preparation of a pseudopure state from ``-Sz``.

    A selective 24 pulse with effective angle ``2 phi = arccos(cos2phi)``,
    loss of coherences during the waiting time, then (for ``target="ba"``) a
    semi-selective pi pulse on the 13/14 doublet. ``cos2phi`` defaults to
    :func:`pseudopure_cos2phi`.
    """
    if target not in _TARGET_LEVEL:
        raise ValueError(f"pseudopure target must be 'aa' or 'ba', got {target!r}")
    d = derive(p)
    if d.cancellation_mismatch > cancel_tol * max(abs(p.omega_I), 1e-300):
        warnings.warn(
            f"parameters are {d.cancellation_mismatch / MHZ:.4g} MHz away from exact cancellation; "
            "the prepared state is only approximately pseudopure",
            stacklevel=2,
        )
    if cos2phi is None:
        cos2phi = pseudopure_cos2phi(d.eta_alpha)
    two_phi = math.acos(cos2phi)
    nominal = two_phi / math.cos(d.eta)
    rho = -build_operator("Sz")
    u = ideal_selective_pulse(p, "24", nominal)
    rho = dephase(u @ rho @ u.conj().T, p, basis=dephase_basis)
    if target == "ba":
        u = ideal_semiselective(p, "1314", math.pi)
        rho = u @ rho @ u.conj().T
    return Preparation(rho, pseudopure_fidelity(rho, _TARGET_LEVEL[target]), cos2phi, nominal, target)


# --- echo detection and the lock/release experiment ------------------------


def detection_tau(p: SpinParams, m: int = 1) -> float:
    if m < 1:
        raise ValueError(f"detection multiple m must be >= 1, got {m!r}")
    return m * nutation_period(p)


def detect_popdiff(rho, p: SpinParams, *, m: int = 1, tau: float | None = None) -> float:
    """Echo read-out ``(pi/2)_2324 - tau - (pi)_2324 - tau`` returning <Sx>.

    The refocusing pulse is applied about x so the echo has the sign of the
    2-4 population difference. ``tau`` defaults to ``m`` beta-manifold
    nutation periods; other values trigger a warning.
    """
    period = nutation_period(p)
    if tau is None:
        tau = detection_tau(p, m)
    else:
        ratio = tau / period
        if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            warnings.warn(
                f"detection delay {tau:g} ns is not a multiple of the nutation period {period:.6g} ns",
                stacklevel=2,
            )
    rho = as_cmat4(rho, name="density matrix")
    p90 = ideal_semiselective(p, "2324", math.pi / 2)
    p180 = ideal_semiselective(p, "2324", math.pi, phase=math.pi / 2)
    f = exp_hermitian(build_hamiltonian(p), tau)
    for u in (p90, f, p180, f):
        rho = u @ rho @ u.conj().T
    return float(np.real(np.trace(rho @ build_operator("Sx"))))


def lock_release_sequence(schedule, *, step: float | None = None) -> Sequence:
    """(pi)_2324, then the delays of ``schedule`` separated by (pi)_2324 pulses.

    With ``step`` the whole sequence is sampled on a uniform grid from t = 0.
    """
    lock = Pulse(PulseSpec("ideal_semiselective", "2324", math.pi))
    events: list = [lock]
    for k, tau in enumerate(schedule):
        if k:
            events.append(lock)
        events.append(Delay(float(tau)))
    grid = None
    if step is not None:
        total = float(sum(schedule))
        grid = SamplingGrid(0.0, step, int(math.floor(total / step + 1e-9)) + 1)
    return Sequence(tuple(events), grid)


def lock_release_experiment(
    p: SpinParams,
    schedule,
    *,
    step: float = 8.0,
    m: int = 1,
) -> Trace:
    """Detected 2-4 population difference versus detection start time.

    The state after (pi)_2324 evolves through ``schedule``; consecutive
    intervals are separated by further (pi)_2324 pulses, which alternately
    lock and release the nuclear nutation. Every ``step`` ns the current
    state is read out with :func:`detect_popdiff` (column ``signal``).
    """
    schedule = [float(x) for x in schedule]
    if not schedule or any(not (x >= 0 and math.isfinite(x)) for x in schedule):
        raise ValueError("schedule needs at least one finite non-negative delay")
    seq = lock_release_sequence(schedule, step=step)
    _, trace = run(-build_operator("Sz"), p, seq, extra={"signal": lambda r: detect_popdiff(r, p, m=m)})
    return trace


# --- three-pulse ESEEM ------------------------------------------------------

ESEEM_OMEGA1 = 15.6 * MHZ
ESEEM_PULSE_NS = 16.0


def _electron_coherence_filter(rho):
    out = rho.copy()
    out[:2, 2:] = 0.0
    out[2:, :2] = 0.0
    return out


def eseem_3pulse(
    p: SpinParams,
    tau: float = 200.0,
    T_start: float = 56.0,
    dt: float = 8.0,
    n: int = 512,
    *,
    omega1: float = ESEEM_OMEGA1,
    pulse_length: float = ESEEM_PULSE_NS,
    ideal: bool = False,
    coherence_filter: bool = True,
) -> Trace:
    """Stimulated-echo modulation ``V(T)`` for ``pi/2 - tau - pi/2 - T - pi/2 - tau``.

    Pulses are rectangular (``omega1``, ``pulse_length``) in the frame set by
    ``p.omega_S_offset`` unless ``ideal`` asks for instantaneous
    ``exp(-i pi/2 Sy)`` rotations. With ``coherence_filter`` electron
    coherences are dropped at the start of the mixing time T, keeping only the
    stimulated-echo pathway.
    """
    if n < 2:
        raise ValueError(f"ESEEM trace needs n >= 2 points, got {n}")
    if not dt > 0:
        raise ValueError(f"ESEEM step dt must be > 0, got {dt!r}")
    if tau < 0 or T_start < 0:
        raise ValueError("tau and T_start must be >= 0")
    h0 = build_hamiltonian(p)
    if ideal:
        pulse = exp_hermitian(build_operator("Sy"), math.pi / 2)
    else:
        pulse = finite_pulse(p, omega1, pulse_length)
    f_tau = exp_hermitian(h0, tau)
    rho = -build_operator("Sz")
    for u in (pulse, f_tau, pulse):
        rho = u @ rho @ u.conj().T
    if coherence_filter:
        rho = _electron_coherence_filter(rho)
    # read-out map: Tr(Sx * R rho R^dagger) = Tr(R^dagger Sx R * rho)
    read = f_tau @ pulse
    sx_back = read.conj().T @ build_operator("Sx") @ read
    w, v = np.linalg.eigh(h0)
    rho_e = v.conj().T @ rho @ v
    sx_e = v.conj().T @ sx_back @ v
    times = T_start + dt * np.arange(n)
    # free evolution over T is diagonal in the eigenbasis of H0
    phase = np.exp(-1j * np.subtract.outer(w, w)[None, :, :] * times[:, None, None])
    vals = np.real(np.einsum("kij,ji->k", phase * rho_e[None], sx_e))
    return Trace(times, {"V": vals}, [None] * n)
