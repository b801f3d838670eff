"""Tests for the RK4 simulator and oscillation post-processing."""

import math

import numpy as np
import pytest

from invstab.equilibrium import default_target, solve
from invstab.errors import ConfigError, NumericError
from invstab.params import ControlMode, reference_control_params, reference_system_params, scr_to_line
from invstab.plant import PortKind, assemble, state_scale, stored_energy, with_line, with_options
from invstab.smallsignal import dominant_mode, eigenvalues, state_eigenvalues
from invstab.timedomain import (
    Event,
    OdeSystem,
    SimConfig,
    SimTrace,
    linear_window,
    oscillation_metrics,
    oscillation_metrics_from_samples,
    rk4_step,
    simulate,
)


def _exponential_error(dt: float) -> float:
    trace = simulate(lambda x: -x, [1.0], SimConfig(dt=dt, t_end=1.0, record_decimation=1))
    return abs(trace.states[-1, 0] - math.exp(-1.0))


@pytest.fixture
def hybrid_pll_eq(hybrid_pll_model):
    return solve(hybrid_pll_model, default_target(hybrid_pll_model))


class TestSimConfig:
    """Tests for SimConfig validation."""

    def test_defaults(self):
        cfg = SimConfig()
        assert (cfg.dt, cfg.record_decimation) == (20e-6, 10)
        assert cfg.n_steps == 50000

    def test_event_step(self):
        cfg = SimConfig(dt=20e-6, t_end=2.0, events=(Event(1.0, 1.2),))
        assert cfg.event_step(cfg.events[0]) == 50000

    def test_dt_must_divide_event(self):
        with pytest.raises(ConfigError, match="does not divide"):
            SimConfig(dt=3e-5, t_end=1.0, events=(Event(0.1, 1.2),))

    @pytest.mark.parametrize("times", [(0.5, 0.4), (0.0,), (1.0,), (0.3, 0.3)])
    def test_event_order(self, times):
        with pytest.raises(ConfigError):
            SimConfig(dt=1e-4, t_end=1.0, events=tuple(Event(t, 1.2) for t in times))

    @pytest.mark.parametrize("kwargs", [{"dt": 0.0}, {"dt": 1.0, "t_end": 0.5}, {"record_decimation": 0}])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            SimConfig(**kwargs)


class TestRk4:
    """Tests for the integrator on analytic systems."""

    def test_exponential(self):
        assert _exponential_error(1e-4) < 1e-10

    def test_order(self):
        factor = _exponential_error(0.1) / _exponential_error(0.05)
        assert 12 <= factor <= 20

    def test_single_step(self):
        x = rk4_step(lambda x: np.zeros_like(x) + 1.0, np.array([0.0]), 0.5)
        assert x[0] == pytest.approx(0.5)

    def test_ode_system_adapter(self):
        system = OdeSystem(lambda x: -2 * x, 1)
        trace = simulate(system, [1.0], SimConfig(dt=1e-3, t_end=0.5, record_decimation=100))
        assert trace.state_labels == ("x0",)
        assert trace.times.tolist() == pytest.approx([0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
        assert trace.states[-1, 0] == pytest.approx(math.exp(-1.0), rel=1e-9)

    def test_divergence_keeps_partial_trace(self):
        trace = simulate(lambda x: 10 * x, [1.0], SimConfig(dt=1e-3, t_end=3.0, record_decimation=1))
        assert trace.diverged
        assert trace.diverged_at == pytest.approx(math.log(1e6) / 10, abs=0.01)
        assert trace.times[-1] < trace.diverged_at
        assert np.all(np.isfinite(trace.states))

    def test_nan_is_divergence(self):
        trace = simulate(lambda x: x * math.nan, [1.0], SimConfig(dt=1e-3, t_end=0.1))
        assert trace.diverged_at == pytest.approx(1e-3)

    def test_non_finite_start(self):
        with pytest.raises(NumericError):
            simulate(lambda x: -x, [math.inf], SimConfig(dt=1e-3, t_end=0.1))

    def test_events_need_inverter(self):
        cfg = SimConfig(dt=1e-3, t_end=1.0, events=(Event(0.5, 1.2),))
        with pytest.raises(ConfigError):
            simulate(lambda x: -x, [1.0], cfg)


class TestInverterSimulation:
    """Tests on the closed-loop model."""

    def test_equilibrium_hold(self, hybrid_pll_eq):
        m = hybrid_pll_eq.model
        trace = simulate(m, hybrid_pll_eq.x_star, SimConfig(dt=20e-6, t_end=5.0, record_decimation=500))
        assert trace.times[-1] == pytest.approx(5.0)
        drift = np.abs(trace.states - hybrid_pll_eq.x_star) / state_scale(m)
        assert not trace.diverged
        assert np.max(drift) < 1e-8
        assert np.ptp(trace.signal("p")) / m.sys.s_base < 1e-8

    def test_deterministic(self, hybrid_pll_eq):
        cfg = SimConfig(dt=20e-6, t_end=0.05, events=(Event(0.01, 1.2),))
        a = simulate(hybrid_pll_eq.model, hybrid_pll_eq.x_star, cfg)
        b = simulate(hybrid_pll_eq.model, hybrid_pll_eq.x_star, cfg)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.signal("omega"), b.signal("omega"))

    def test_lc_ring_down(self, hybrid_pll_model):
        m = with_options(
            hybrid_pll_model,
            port=PortKind.CURRENT_DRIVEN,
            freeze_controller=True,
            v_i_hold=(0.0, 0.0),
            frame_coupling=False,
            freeze_sync=True,
        )
        x0 = np.zeros(m.n_states)
        x0[m.index("v_cd")] = 10.0
        trace = simulate(m, x0, SimConfig(dt=20e-6, t_end=0.3, record_decimation=1))
        metrics = oscillation_metrics(trace, "v_cd", (0.0, 0.3))
        expected = 1.0 / (2 * math.pi * math.sqrt(m.sys.l_f * m.sys.c_f))
        assert metrics.freq == pytest.approx(expected, abs=1.0 / 0.3)
        assert metrics.sigma == pytest.approx(-m.sys.r_f / (2 * m.sys.l_f), rel=0.1)

    def test_event_continuity(self, hybrid_pll_eq):
        m = hybrid_pll_eq.model
        cfg = SimConfig(dt=20e-6, t_end=0.02, record_decimation=1, events=(Event(0.01, 1.2),))
        trace = simulate(m, hybrid_pll_eq.x_star, cfg)
        k = trace.event_steps[0]
        assert trace.event_times[0] == pytest.approx(0.01)

        steps = np.linalg.norm(np.diff(trace.states, axis=0) / state_scale(m), axis=1)
        assert steps[k] <= 10 * steps[k + 1]
        assert steps[k] > 0

    def test_energy_balance(self, hybrid_pll_eq):
        m = hybrid_pll_eq.model
        cfg = SimConfig(dt=20e-6, t_end=0.06, record_decimation=1, events=(Event(0.01, 1.2),))
        trace = simulate(m, hybrid_pll_eq.x_star, cfg)
        assert not trace.diverged

        l_g, _ = scr_to_line(1.2, m.sys.r_g, m.sys.bases)
        after = with_line(m, l_g)
        # skip the current-loop transient, which decays within a few steps
        start = trace.event_steps[0] + 50
        xs = trace.states[start:]
        energy = np.array([stored_energy(after, x) for x in xs])
        energy_rate = np.gradient(energy, trace.dt)

        sys = after.sys
        residuals = []
        for x, rate in zip(xs[1:-1], energy_rate[1:-1]):
            s = after.outputs(x)
            p_conv = 1.5 * (s.v_i[0] * s.i_l[0] + s.v_i[1] * s.i_l[1])
            p_grid = 1.5 * (s.v_g[0] * s.i_g[0] + s.v_g[1] * s.i_g[1])
            losses = 1.5 * (sys.r_f * (s.i_l[0] ** 2 + s.i_l[1] ** 2) + sys.r_g * (s.i_g[0] ** 2 + s.i_g[1] ** 2))
            residuals.append(p_conv - p_grid - losses - rate)
        assert np.max(np.abs(residuals)) < 1e-3 * sys.s_base

    def test_growth_matches_linearization(self):
        sys = reference_system_params(scr=1 / 0.7875)
        mode = ControlMode.GFL_PLL
        m = assemble(mode, sys, reference_control_params(mode, bases=sys.bases))
        eq = solve(m, default_target(m))
        info = dominant_mode(state_eigenvalues(eq.model, eq))
        assert info.sigma > 0 and info.freq > 0

        x0 = eq.x_star.copy()
        x0[m.index("v_cq")] += 1e-3 * sys.bases.v_peak
        trace = simulate(eq.model, x0, SimConfig(dt=20e-6, t_end=0.6, record_decimation=1))
        assert not trace.diverged
        metrics = oscillation_metrics(trace, "p", (0.1, 0.6))
        assert metrics.freq == pytest.approx(info.freq, rel=0.05)
        assert metrics.sigma == pytest.approx(info.sigma, rel=0.15)

    def test_signal_scales(self, hybrid_pll_eq):
        trace = simulate(hybrid_pll_eq.model, hybrid_pll_eq.x_star, SimConfig(dt=20e-6, t_end=0.01))
        assert trace.scale_of("p") == hybrid_pll_eq.model.sys.s_base
        assert trace.scale_of("v_cd") == pytest.approx(hybrid_pll_eq.model.sys.bases.v_peak)
        with pytest.raises(KeyError):
            trace.signal("nope")


class TestOscillationMetrics:
    """Tests for oscillation_metrics on constructed signals."""

    def test_growing(self):
        t = np.arange(0, 2.0, 1e-4)
        m = oscillation_metrics_from_samples(t, np.exp(0.8 * t) * np.sin(2 * math.pi * 38.1 * t))
        assert m.freq == pytest.approx(38.1, abs=0.1)
        assert m.sigma == pytest.approx(0.8, abs=0.05)
        assert m.oscillating

    def test_decaying(self):
        t = np.arange(0, 3.0, 1e-4)
        m = oscillation_metrics_from_samples(t, np.exp(-2.0 * t) * np.sin(2 * math.pi * 4.4 * t))
        assert m.freq == pytest.approx(4.4, abs=0.1)
        assert m.sigma == pytest.approx(-2.0, abs=0.1)

    def test_dc(self):
        t = np.arange(0, 1.0, 1e-3)
        m = oscillation_metrics_from_samples(t, np.full_like(t, 3.0))
        assert not m.oscillating
        assert m.freq == 0.0

    def test_window_too_short(self):
        t = np.arange(0, 0.1, 1e-4)
        with pytest.raises(ConfigError, match="too short"):
            oscillation_metrics_from_samples(t, np.sin(2 * math.pi * 50 * t))

    def test_trace_window(self):
        t = np.arange(0, 2.0, 1e-3)
        values = np.where(t < 1.0, 0.0, np.sin(2 * math.pi * 20 * t))
        trace = SimTrace(times=t, states=values[:, None], state_labels=("y",))
        m = oscillation_metrics(trace, "y", (1.0, 2.0))
        assert m.window == (pytest.approx(1.0), pytest.approx(1.999))
        assert m.freq == pytest.approx(20.0, abs=0.1)
        assert m.sigma == pytest.approx(0.0, abs=0.05)


class TestLinearCrossCheck:
    """RK4 trace metrics against the eigenvalues of a known linear system."""

    SIGMA, FREQ = 1.5, 38.8

    @pytest.fixture
    def a(self):
        w = 2 * math.pi * self.FREQ
        block = np.zeros((3, 3))
        block[:2, :2] = [[self.SIGMA, w], [-w, self.SIGMA]]
        block[2, 2] = -200.0
        q = np.array([[1.0, 0.2, 0.5], [-0.3, 1.0, 0.1], [0.4, 0.0, 1.0]])
        return q @ block @ np.linalg.inv(q)

    def test_fft_and_envelope_match_dominant_mode(self, a):
        info = dominant_mode(eigenvalues(a))
        assert info.freq == pytest.approx(self.FREQ)

        system = OdeSystem(lambda x: a @ x, 3)
        trace = simulate(system, [1e-3, 0.0, 1e-3], SimConfig(dt=1e-4, t_end=1.0, record_decimation=1))
        metrics = oscillation_metrics(trace, "x0", (0.1, 1.0))
        assert metrics.oscillating
        assert metrics.freq == pytest.approx(info.freq, rel=0.05)
        assert metrics.sigma == pytest.approx(info.sigma, rel=0.15)

    def test_stable_system_settles(self, a):
        system = OdeSystem(lambda x: (a - 3.0 * self.SIGMA * np.eye(3)) @ x, 3)
        trace = simulate(system, [1e-3, 0.0, 1e-3], SimConfig(dt=1e-4, t_end=1.0, record_decimation=1))
        metrics = oscillation_metrics(trace, "x0", (0.1, 1.0))
        assert metrics.freq == pytest.approx(self.FREQ, rel=0.05)
        assert metrics.sigma == pytest.approx(-2.0 * self.SIGMA, rel=0.15)


class TestLinearWindow:
    """Tests for linear_window."""

    @pytest.fixture
    def trace(self):
        t = np.arange(0, 2.0, 1e-3)
        y = np.where(t < 1.0, 1.0, 1.0 + 0.01 * np.exp(5 * (t - 1.0)))
        return SimTrace(times=t, states=y[:, None], state_labels=("y",), scales={"y": 1.0})

    def test_limit(self, trace):
        end = linear_window(trace, "y", 1.0, limit_pu=0.2)
        assert end == pytest.approx(math.log(20) / 5 + 1.0, abs=2e-3)

    def test_never_exceeded(self, trace):
        assert linear_window(trace, "y", 1.0, limit_pu=100.0) == pytest.approx(1.999)

    def test_beyond_trace(self, trace):
        with pytest.raises(ConfigError):
            linear_window(trace, "y", 5.0)
