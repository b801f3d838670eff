"""Fixed-step RK4 simulation with SCR events, and oscillation post-processing."""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import signal as sps
from scipy.fft import rfft

from .errors import ConfigError, NumericError
from .observability import logger
from .params import scr_to_line
from .plant import NonlinearModel, state_scale, with_line

DIVERGENCE_PU = 1e6
MIN_WINDOW_S = 0.25
NOISE_FLOOR_RATIO = 3.0
ZERO_PAD = 8
MIN_FREQ_HZ = 1.0
ENVELOPE_FLOOR = 1e-6


@dataclass(frozen=True)
class Event:
    """Instantaneous change of grid strength."""
    time: float
    scr: float


@dataclass(frozen=True)
class SimConfig:
    dt: float = 20e-6
    t_end: float = 1.0
    record_decimation: int = 10
    events: tuple[Event, ...] = ()

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.t_end > self.dt:
            raise ConfigError(f"t_end must exceed dt, got {self.t_end}")
        if int(self.record_decimation) != self.record_decimation or self.record_decimation < 1:
            raise ConfigError("record_decimation must be an integer >= 1")
        previous = 0.0
        for event in self.events:
            if not (previous < event.time < self.t_end):
                raise ConfigError(
                    f"event times must be strictly increasing inside (0, {self.t_end}), got {event.time}"
                )
            previous = event.time
            self.event_step(event)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def event_step(self, event: Event) -> int:
        """Step index at which an event fires; dt must divide the event time."""
        k = int(round(event.time / self.dt))
        if abs(k * self.dt - event.time) > 1e-9 * self.dt:
            raise ConfigError(f"dt = {self.dt} does not divide event time {event.time}")
        return k


@dataclass
class SimTrace:
    """Recorded states and signals on a uniform time grid."""
    times: np.ndarray
    states: np.ndarray
    state_labels: tuple[str, ...]
    signals: dict[str, np.ndarray] = field(default_factory=dict)
    scales: dict[str, float] = field(default_factory=dict)
    diverged_at: Optional[float] = None
    event_steps: tuple[int, ...] = ()
    dt: float = 0.0
    steps: int = 0

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    @property
    def event_times(self) -> tuple[float, ...]:
        return tuple(k * self.dt for k in self.event_steps)

    def state(self, label: str) -> np.ndarray:
        return self.states[:, self.state_labels.index(label)]

    def signal(self, name: str) -> np.ndarray:
        """A recorded signal or state column by name."""
        if name in self.signals:
            return self.signals[name]
        if name in self.state_labels:
            return self.state(name)
        raise KeyError(name)

    def scale_of(self, name: str) -> float:
        """SI value of 1 p.u. for a column (1.0 when unscaled)."""
        return self.scales.get(name, 1.0)


@dataclass(frozen=True)
class OscillationMetrics:
    freq: float
    sigma: float
    amplitude: float
    window: tuple[float, float]

    @property
    def oscillating(self) -> bool:
        return self.freq > 0


class OdeSystem:
    """Adapter giving a plain ẋ = f(x) callable the model interface."""

    def __init__(self, fun: Callable[[np.ndarray], np.ndarray], n_states: int):
        self._fun = fun
        self.state_labels = tuple(f"x{k}" for k in range(n_states))

    def derivatives(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._fun(x), dtype=float)


def rk4_step(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step."""
    k1 = fun(x)
    k2 = fun(x + 0.5 * dt * k1)
    k3 = fun(x + 0.5 * dt * k2)
    k4 = fun(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


SIGNAL_COLUMNS = ("p", "q", "omega")


def simulate(
    m: Union[NonlinearModel, OdeSystem, Callable[[np.ndarray], np.ndarray]],
    x0: Sequence[float],
    cfg: SimConfig,
) -> SimTrace:
    """
    Integrate a model with fixed-step RK4.

    `m` is a NonlinearModel, an OdeSystem or a bare callable f(x). At an SCR
    event the line inductance is swapped and integration continues from the
    same state, so every inductor current stays continuous. Integration
    stops early, keeping the partial trace, when a state leaves ±10⁶ p.u. or
    turns non-finite.

    Raises:
        ConfigError: events on a model without a grid line.
        NumericError: non-finite initial state.
    """
    x = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NumericError("initial state is not finite")
    if not isinstance(m, (NonlinearModel, OdeSystem)):
        m = OdeSystem(m, len(x))

    is_plant = isinstance(m, NonlinearModel)
    if cfg.events and not is_plant:
        raise ConfigError("SCR events need an inverter model")

    scale = state_scale(m) if is_plant else np.ones(len(x))
    pending = {cfg.event_step(e): e for e in cfg.events}
    decimation = int(cfg.record_decimation)

    times = [0.0]
    states = [x.copy()]
    diverged_at = None
    model = m
    step = 0

    for step in range(1, cfg.n_steps + 1):
        try:
            x = rk4_step(model.derivatives, x, cfg.dt)
        except NumericError:
            x = np.full_like(x, np.nan)
        t = step * cfg.dt

        if not np.all(np.isfinite(x)) or np.max(np.abs(x / scale)) > DIVERGENCE_PU:
            diverged_at = t
            logger.warning(f"Simulation diverged at t = {t:.4f} s")
            break

        if step % decimation == 0:
            times.append(t)
            states.append(x.copy())

        if step in pending:
            event = pending[step]
            l_g, z_pu = scr_to_line(event.scr, model.sys.r_g, model.sys.bases)
            model = with_line(model, l_g)
            logger.info(f"t = {t:.4f} s: SCR -> {event.scr} (Z_g = {z_pu:.4f} p.u., L_g = {l_g * 1e3:.3f} mH)")

    trace = SimTrace(
        times=np.array(times),
        states=np.array(states),
        state_labels=tuple(m.state_labels),
        scales=dict(zip(m.state_labels, (float(s) for s in scale))),
        diverged_at=diverged_at,
        event_steps=tuple(sorted(pending)),
        dt=cfg.dt,
        steps=step,
    )
    if is_plant:
        trace.signals = _record_signals(m, trace)
        trace.scales.update(p=m.sys.s_base, q=m.sys.s_base, omega=m.sys.omega_star)
    return trace


def _record_signals(m: NonlinearModel, trace: SimTrace) -> dict[str, np.ndarray]:
    # Power and frequency do not depend on the line, so the initial model serves
    columns = {name: np.empty(len(trace.times)) for name in SIGNAL_COLUMNS}
    for k, x in enumerate(trace.states):
        s = m.outputs(x)
        columns["p"][k] = s.p
        columns["q"][k] = s.q
        columns["omega"][k] = s.omega_ctrl
    return columns


def linear_window(trace: SimTrace, signal: str, t0: float, limit_pu: float = 0.2) -> float:
    """
    End of the small-amplitude part of a signal after t0.

    The deviation from the last value recorded before t0 is compared with
    limit_pu in the signal's own per-unit scale; the first recorded time
    exceeding it is returned, or the trace end when none does.
    """
    values = trace.signal(signal)
    after = np.flatnonzero(trace.times >= t0)
    if len(after) == 0:
        raise ConfigError(f"window start {t0} s is beyond the trace")
    start = after[0]
    reference = values[max(start - 1, 0)]
    deviation = np.abs(values[start:] - reference) / trace.scale_of(signal)
    over = np.flatnonzero(deviation > limit_pu)
    if len(over) == 0:
        return float(trace.times[-1])
    return float(trace.times[start + over[0]])


def oscillation_metrics(
    trace: SimTrace,
    signal: str,
    window: tuple[float, float],
) -> OscillationMetrics:
    """Dominant oscillation frequency and growth rate of a signal in a window."""
    t0, t1 = window
    mask = (trace.times >= t0) & (trace.times <= t1)
    return oscillation_metrics_from_samples(trace.times[mask], trace.signal(signal)[mask])


def oscillation_metrics_from_samples(times: np.ndarray, values: np.ndarray) -> OscillationMetrics:
    """
    Frequency by Hann-windowed FFT with parabolic peak interpolation; growth
    rate by a least-squares line through the log of the half peak-to-peak
    envelope.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(times) < 4 or times[-1] - times[0] < MIN_WINDOW_S:
        raise ConfigError(
            f"window too short for a 1 Hz resolution estimate: need at least {MIN_WINDOW_S} s"
        )
    window = (float(times[0]), float(times[-1]))
    dt = float(np.mean(np.diff(times)))
    fs = 1.0 / dt

    y = sps.detrend(values, type="linear")
    taper = sps.windows.hann(len(y))
    n_fft = int(2 ** math.ceil(math.log2(len(y) * ZERO_PAD)))
    spectrum = np.abs(rfft(y * taper, n=n_fft))
    spectrum[: int(math.ceil(MIN_FREQ_HZ * n_fft / fs))] = 0.0

    k = int(np.argmax(spectrum))
    peak = spectrum[k]
    amplitude_floor = 1e-9 * max(1.0, float(np.max(np.abs(values))))
    if (
        peak <= NOISE_FLOOR_RATIO * float(np.median(spectrum))
        or 2.0 * peak / taper.sum() < amplitude_floor
    ):
        return OscillationMetrics(freq=0.0, sigma=0.0, amplitude=0.0, window=window)

    # Parabolic interpolation on log magnitude
    if 0 < k < len(spectrum) - 1:
        a, b, c = np.log(spectrum[k - 1: k + 2] + 1e-300)
        denom = a - 2.0 * b + c
        offset = 0.5 * (a - c) / denom if denom != 0 else 0.0
    else:
        offset = 0.0
    freq = float((k + offset) * fs / n_fft)

    sigma, amplitude = _envelope_fit(times, y, freq, fs)
    return OscillationMetrics(freq=freq, sigma=sigma, amplitude=amplitude, window=window)


def _envelope_fit(times: np.ndarray, y: np.ndarray, freq: float, fs: float) -> tuple[float, float]:
    """Growth rate and initial amplitude from consecutive extrema."""
    distance = max(1, int(0.4 * fs / freq))
    maxima, _ = sps.find_peaks(y, distance=distance)
    minima, _ = sps.find_peaks(-y, distance=distance)
    extrema = np.sort(np.concatenate([maxima, minima]))
    if len(extrema) < 4:
        return math.nan, float(np.max(np.abs(y)))

    half_p2p = np.abs(np.diff(y[extrema])) / 2.0
    mid_times = (times[extrema[:-1]] + times[extrema[1:]]) / 2.0
    # Rising and falling swings alternate; pairing them cancels residual drift
    half_p2p = (half_p2p[:-1] + half_p2p[1:]) / 2.0
    mid_times = (mid_times[:-1] + mid_times[1:]) / 2.0
    keep = half_p2p > ENVELOPE_FLOOR * half_p2p.max()
    if np.count_nonzero(keep) < 2:
        return math.nan, float(np.max(np.abs(y)))
    slope, intercept = np.polyfit(mid_times[keep], np.log(half_p2p[keep]), 1)
    return float(slope), float(math.exp(intercept + slope * times[0]))
