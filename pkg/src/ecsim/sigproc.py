"""ESEEM trace processing: baseline correction, apodisation, zero-filling, |DFT|, peaks.

Times are in ns and frequencies in MHz, so ``df = 1000 / (n_fft * dt)``.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

MIN_SAMPLES = 8
BASELINE_MODELS = ("biexp", "polyexp")


@dataclass(frozen=True)
class RealTrace:
    t0: float
    dt: float
    samples: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"trace step dt must be > 0, got {self.dt!r}")
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1 or not np.all(np.isfinite(s)):
            raise ValueError("trace samples must be a finite 1-D sequence")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.samples))

    def with_samples(self, samples, **meta) -> "RealTrace":
        return RealTrace(self.t0, self.dt, samples, {**self.meta, **meta})


@dataclass(frozen=True)
class Spectrum:
    df: float
    magnitudes: np.ndarray
    n_fft: int

    @property
    def freqs(self) -> np.ndarray:
        return self.df * np.arange(len(self.magnitudes))


def _require(trace: RealTrace, what: str):
    if len(trace.samples) < MIN_SAMPLES:
        raise ValueError(f"{what} needs at least {MIN_SAMPLES} samples, got {len(trace.samples)}")


# --- baseline ---------------------------------------------------------------


def _exp_design(t, rates):
    cols = [np.ones_like(t)] + [np.exp(-k * (t - t[0])) for k in rates]
    return np.column_stack(cols)


def _project(t, y, rates):
    """Best linear coefficients for the given decay rates, and the residual."""
    m = _exp_design(t, rates)
    coef, *_ = np.linalg.lstsq(m, y, rcond=None)
    return coef, y - m @ coef


def _bic(rss, n, k):
    return n * math.log(max(rss, 1e-300) / n) + k * math.log(n)


def _fit_exp(t, y, order, rng):
    """Least-squares ``c0 + sum_j a_j exp(-k_j t)`` with ``order`` rates."""
    span = max(t[-1] - t[0], 1e-12)
    grid = np.geomspace(0.1 / span, 50.0 / span, 12)
    cands = [(k,) for k in grid] if order == 1 else [(a, b) for i, a in enumerate(grid) for b in grid[i + 1 :]]
    best = min(cands, key=lambda ks: float(np.sum(_project(t, y, ks)[1] ** 2)))
    seeds = [np.log(best)] + [np.log(best) + rng.normal(0.0, 0.3, order) for _ in range(2)]

    lo, hi = math.log(1e-3 / span), math.log(1e3 / span)

    def resid(x):
        return _project(t, y, np.exp(np.clip(x, lo, hi)))[1]

    sols = []
    for x0 in seeds:
        try:
            sol = least_squares(resid, x0, method="lm", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=400)
        except (ValueError, np.linalg.LinAlgError):
            continue
        if np.all(np.isfinite(sol.x)):
            sols.append(sol)
    rates = np.exp(np.clip(min(sols, key=lambda s: s.cost).x, lo, hi)) if sols else np.asarray(best)
    coef, r = _project(t, y, rates)
    # nearly equal rates with huge opposite amplitudes fit oscillations, not backgrounds
    if not np.all(np.isfinite(coef)) or np.max(np.abs(coef[1:])) > 10.0 * (np.ptp(y) + 1e-300):
        return None
    return rates, coef, r


def _fit_biexp(t, y, rng):
    """Biexponential-plus-constant background with nested model selection.

    The constant, one- and two-exponential models are compared by the
    Bayesian information criterion so an already-flat trace is left alone
    (which makes the correction idempotent).
    """
    n = len(y)
    mean = float(np.mean(y))
    models = [((), np.array([mean]), y - mean)]
    for order in (1, 2):
        fit = _fit_exp(t, y, order, rng)
        if fit is not None:
            models.append(fit)
    scores = [_bic(float(r @ r), n, 1 + 2 * len(ks)) for ks, _, r in models]
    rates, coef, r = models[int(np.argmin(scores))]
    info = {"model": "biexp", "c0": float(coef[0])}
    for j, (k, a) in enumerate(zip(rates, coef[1:]), start=1):
        info[f"a{j}"] = float(a)
        info[f"t{j}_ns"] = float(1.0 / k)
    return y - r, info


def _fit_polyexp(t, y):
    # y ~ c + exp(p0 + p1 t + p2 t^2): offset by a constant so the log exists
    shift = float(np.min(y)) - 1e-3 * (float(np.ptp(y)) + 1.0)

    def resid(x):
        c, p0, p1, p2 = x
        return c + np.exp(np.clip(p0 + p1 * t + p2 * t * t, -700, 700)) - y

    tt = t - t[0]
    z = np.log(y - shift)
    p = np.polyfit(tt, z, 2)[::-1]
    x0 = np.array([shift, p[0] - p[1] * t[0] + p[2] * t[0] ** 2, p[1] - 2 * p[2] * t[0], p[2]])
    sol = least_squares(resid, x0, method="lm", max_nfev=2000)
    if not np.all(np.isfinite(sol.x)):
        raise RuntimeError("poly-exponent fit diverged")
    return y + resid(sol.x), {"model": "polyexp", "params": [float(v) for v in sol.x]}


def baseline_correct(trace: RealTrace, *, model: str = "biexp", seed: int = 0) -> RealTrace:
    """Subtract a fitted slowly varying background.

    ``model="biexp"`` fits ``c0 + a1 exp(-t/t1) + a2 exp(-t/t2)``: the two rates
    are optimised (grid seeded, then Levenberg-Marquardt) while the linear
    coefficients are solved exactly at every step. ``model="polyexp"`` fits
    ``c + exp(p0 + p1 t + p2 t^2)`` instead. If the fit fails a quadratic
    polynomial is subtracted and ``meta["baseline_fallback"]`` is set.
    """
    _require(trace, "baseline correction")
    if model not in BASELINE_MODELS:
        raise ValueError(f"baseline model must be one of {BASELINE_MODELS}, got {model!r}")
    y = np.asarray(trace.samples, dtype=float)
    t = trace.times
    fallback = False
    try:
        with np.errstate(all="ignore"):
            if model == "biexp":
                baseline, info = _fit_biexp(t, y, np.random.default_rng(seed))
            else:
                baseline, info = _fit_polyexp(t, y)
        if not np.all(np.isfinite(baseline)):
            raise RuntimeError("non-finite baseline")
    except (RuntimeError, ValueError, np.linalg.LinAlgError, FloatingPointError):
        fallback = True
        coef = np.polyfit(t - t[0], y, 2)
        baseline = np.polyval(coef, t - t[0])
        info = {"model": "poly2", "coefficients": [float(c) for c in coef]}
    return trace.with_samples(y - baseline, baseline_fallback=fallback, baseline=info)


# --- window, transform, peaks ----------------------------------------------


def apodize(trace: RealTrace, sigma_fraction: float = 0.4) -> RealTrace:
    """Multiply by the start-anchored Gaussian ``exp(-k^2 / (2 (sigma_fraction n)^2))``."""
    if not (sigma_fraction > 0):
        raise ValueError(f"sigma_fraction must be > 0, got {sigma_fraction!r}")
    if sigma_fraction > 1:
        warnings.warn(f"sigma_fraction {sigma_fraction:g} clamped to 1", stacklevel=2)
        sigma_fraction = 1.0
    n = len(trace.samples)
    k = np.arange(n)
    window = np.exp(-0.5 * (k / (sigma_fraction * max(n, 1))) ** 2)
    return trace.with_samples(trace.samples * window, apodization=sigma_fraction)


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def default_fft_size(n: int) -> int:
    return 1 << max(int(2 * n - 1).bit_length(), 0)


def spectrum(trace: RealTrace, zero_fill_to: int | None = None) -> Spectrum:
    """Absolute-value spectrum of the zero-filled trace at non-negative frequencies."""
    _require(trace, "spectrum")
    n = len(trace.samples)
    n_fft = default_fft_size(n) if zero_fill_to is None else int(zero_fill_to)
    if not _is_power_of_two(n_fft):
        raise ValueError(f"zero-fill target must be a power of two, got {zero_fill_to!r}")
    if n_fft < n:
        raise ValueError(f"zero-fill target {n_fft} is shorter than the trace ({n} samples)")
    mags = np.abs(np.fft.rfft(trace.samples, n_fft))
    return Spectrum(df=1e3 / (n_fft * trace.dt), magnitudes=mags, n_fft=n_fft)


def peak_pick(spec: Spectrum, threshold_fraction: float = 0.1) -> list[tuple[float, float]]:
    """Local maxima above ``threshold_fraction * max``, parabolically interpolated.

    Returns ``(frequency_MHz, magnitude)`` pairs, strongest first; equal
    magnitudes are ordered by frequency.
    """
    if not 0 < threshold_fraction < 1:
        raise ValueError(f"threshold_fraction must be in (0, 1), got {threshold_fraction!r}")
    m = np.asarray(spec.magnitudes, dtype=float)
    if m.size == 0 or not np.max(m) > 0:
        return []
    floor = threshold_fraction * float(np.max(m))
    peaks = []
    for i in range(m.size):
        left = m[i - 1] if i > 0 else -np.inf
        right = m[i + 1] if i + 1 < m.size else -np.inf
        if not (m[i] > floor and m[i] > left and m[i] >= right):
            continue
        delta, height = 0.0, m[i]
        if 0 < i < m.size - 1:
            denom = left - 2 * m[i] + right
            if denom < 0:
                delta = float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))
                height = m[i] - 0.25 * (left - right) * delta
        peaks.append(((i + delta) * spec.df, float(height)))
    peaks.sort(key=lambda fm: (-fm[1], fm[0]))
    return peaks


def process(
    trace: RealTrace,
    *,
    baseline: bool = True,
    baseline_model: str = "biexp",
    apodize_fraction: float | None = 0.4,
    zero_fill_to: int | None = None,
    seed: int = 0,
) -> tuple[RealTrace, Spectrum]:
    """The full chain: baseline, window, zero-fill and magnitude transform."""
    out = baseline_correct(trace, model=baseline_model, seed=seed) if baseline else trace
    if apodize_fraction is not None:
        out = apodize(out, apodize_fraction)
    return out, spectrum(out, zero_fill_to)


# --- CSV --------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def trace_to_csv(trace: RealTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_ns", "value"])
    for t, v in zip(trace.times, trace.samples):
        w.writerow([_fmt(t), _fmt(v)])
    return buf.getvalue()


def spectrum_to_csv(spec: Spectrum) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["freq_MHz", "magnitude"])
    for f, m in zip(spec.freqs, spec.magnitudes):
        w.writerow([_fmt(f), _fmt(m)])
    return buf.getvalue()


def read_trace_csv(path) -> RealTrace:
    """Read a ``time_ns,value`` CSV written on a uniform time grid."""
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["time_ns", "value"]:
        raise ValueError(f"{path}: expected header 'time_ns,value'")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if len(data) < 2:
        raise ValueError(f"{path}: need at least two samples")
    steps = np.diff(data[:, 0])
    dt = float(steps[0])
    if not np.allclose(steps, dt, rtol=1e-9, atol=1e-9):
        raise ValueError(f"{path}: time column is not uniformly spaced")
    return RealTrace(float(data[0, 0]), dt, data[:, 1])
