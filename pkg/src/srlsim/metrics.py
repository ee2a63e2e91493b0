"""Smoothness, peak-force and tracking metrics over recorded signals."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .errors import MetricsError

DEFAULT_CUTOFF_HZ = 20.0
FILTER_ORDER = 2  # doubled by the forward-backward pass


@dataclass(frozen=True)
class SignalWindow:
    """A uniformly sampled signal and the ``[t1, t2]`` span to evaluate.

    ``values[i]`` is sampled at ``t0 + i * dt``.  Samples outside the window
    still take part in filtering, which keeps edge effects out of the result.
    """

    values: np.ndarray
    dt: float
    t1: float
    t2: float
    t0: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        object.__setattr__(self, "values", v)
        if not self.dt > 0:
            raise MetricsError("dt must be > 0")
        end = self.t0 + (v.size - 1) * self.dt
        tol = 1e-9 * max(1.0, abs(end))
        if not (self.t0 - tol <= self.t1 < self.t2 <= end + tol):
            raise MetricsError(f"window [{self.t1}, {self.t2}] is not inside the sampled span [{self.t0}, {end}]")
        if self.indices().size < 5:
            raise MetricsError("window holds fewer than 5 samples")

    @classmethod
    def whole(cls, values, dt: float) -> "SignalWindow":
        values = np.asarray(values, dtype=float)
        return cls(values, dt, 0.0, (values.size - 1) * dt)

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.size)

    def indices(self) -> np.ndarray:
        i1 = math.ceil((self.t1 - self.t0) / self.dt - 1e-9)
        i2 = math.floor((self.t2 - self.t0) / self.dt + 1e-9)
        return np.arange(max(i1, 0), min(i2, self.values.size - 1) + 1)


def lowpass(values: np.ndarray, dt: float, cutoff_hz: float | None) -> np.ndarray:
    """Zero-phase Butterworth low-pass; a no-op when the cutoff is unset or above Nyquist."""
    values = np.asarray(values, dtype=float)
    if cutoff_hz is None or cutoff_hz <= 0 or cutoff_hz >= 0.5 / dt:
        return values
    sos = butter(FILTER_ORDER, cutoff_hz, fs=1.0 / dt, output="sos")
    # pad by a few cutoff periods so the start-up transient settles before real data
    padlen = min(values.size - 1, max(3 * (2 * len(sos) + 1), int(round(3.0 / (cutoff_hz * dt)))))
    return sosfiltfilt(sos, values, padlen=padlen)


def second_derivative(values: np.ndarray, dt: float) -> np.ndarray:
    """Fourth-order central differences inside, second-order one-sided at the ends."""
    f = np.asarray(values, dtype=float)
    n = f.size
    if n < 5:
        raise MetricsError("need at least 5 samples to differentiate")
    d2 = np.empty(n)
    d2[2:-2] = (-f[:-4] + 16 * f[1:-3] - 30 * f[2:-2] + 16 * f[3:-1] - f[4:]) / (12 * dt * dt)
    d2[1] = (f[0] - 2 * f[1] + f[2]) / (dt * dt)
    d2[-2] = (f[-3] - 2 * f[-2] + f[-1]) / (dt * dt)
    d2[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / (dt * dt)
    d2[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / (dt * dt)
    return d2


def rmsj(w: SignalWindow, cutoff_hz: float | None = DEFAULT_CUTOFF_HZ) -> float:
    """sqrt(1/(t2 - t1) * integral |d^2 s/dt^2|^2 dt) over the window."""
    d2 = second_derivative(lowpass(w.values, w.dt, cutoff_hz), w.dt)
    idx = w.indices()
    span = (idx[-1] - idx[0]) * w.dt
    integral = np.trapezoid(d2[idx] ** 2, dx=w.dt)
    return float(math.sqrt(integral / span))


def peak_force(w: SignalWindow) -> float:
    return float(np.max(w.values[w.indices()]))


def rms_tracking_error(q_s, q_d, window=None) -> float:
    q_s = np.asarray(q_s, dtype=float)
    q_d = np.asarray(q_d, dtype=float)
    if q_s.shape != q_d.shape:
        raise MetricsError(f"length mismatch: {q_s.shape} vs {q_d.shape}")
    err = q_s - q_d
    if window is not None:
        err = err[window]
    if err.size == 0:
        raise MetricsError("empty window")
    return float(np.sqrt(np.mean(err**2)))


def stance_intervals(grf: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Index pairs (rise, fall) where the force crosses ``threshold`` upward then downward.

    Stances already loaded at the first sample or still loaded at the last one
    are incomplete and skipped.
    """
    above = np.asarray(grf) >= threshold
    edges = np.diff(above.astype(np.int8))
    rises = np.flatnonzero(edges == 1) + 1
    falls = np.flatnonzero(edges == -1) + 1
    out = []
    for r in rises:
        later = falls[falls > r]
        if later.size:
            out.append((int(r), int(later[0])))
    return out


def rising_phase_windows(
    grf: np.ndarray, dt: float, threshold: float, cutoff_hz: float | None = DEFAULT_CUTOFF_HZ
) -> list[tuple[int, int]]:
    """From the contact-threshold crossing to the first local maximum of the filtered force."""
    smooth = lowpass(grf, dt, cutoff_hz)
    out = []
    for rise, fall in stance_intervals(grf, threshold):
        seg = smooth[rise:fall]
        peak = None
        for k in range(1, seg.size - 1):
            if seg[k] >= seg[k - 1] and seg[k] > seg[k + 1]:
                peak = rise + k
                break
        if peak is None:
            peak = rise + int(np.argmax(seg))
        if peak - rise >= 4:
            out.append((rise, peak))
    return out


@dataclass(frozen=True)
class RunMetrics:
    rmsj: float
    peak_force: float
    rms_err: float
    n_steps: int
    cutoff_hz: float | None


def run_metrics(
    t: np.ndarray,
    grf: np.ndarray,
    q_hip: np.ndarray,
    qd_hip: np.ndarray,
    contact_threshold: float,
    cutoff_hz: float | None = DEFAULT_CUTOFF_HZ,
    settle_time: float = 0.0,
) -> RunMetrics:
    """Per-run summary: mean rising-phase RMSJ, mean per-step peak force, hip RMS error.

    Steps that begin before ``settle_time`` are ignored.
    """
    dt = float(t[1] - t[0])
    grf = np.asarray(grf, dtype=float)
    steps = [(a, b) for a, b in stance_intervals(grf, contact_threshold) if t[a] >= settle_time]
    rising = [(a, b) for a, b in rising_phase_windows(grf, dt, contact_threshold, cutoff_hz) if t[a] >= settle_time]
    jerks = [rmsj(SignalWindow(grf, dt, t[a], t[b], t0=t[0]), cutoff_hz) for a, b in rising]
    peaks = [peak_force(SignalWindow(grf, dt, t[a], t[b - 1], t0=t[0])) for a, b in steps if b - a >= 5]
    mask = t >= settle_time
    return RunMetrics(
        rmsj=float(np.mean(jerks)) if jerks else math.nan,
        peak_force=float(np.mean(peaks)) if peaks else 0.0,
        rms_err=rms_tracking_error(q_hip, qd_hip, mask),
        n_steps=len(steps),
        cutoff_hz=cutoff_hz,
    )
