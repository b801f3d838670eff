"""
Analyses behind the `run` command.

Each command takes a resolved Scenario and returns the CSV tables it
produces plus a small summary for the manifest. Commands are synchronous;
the runner moves them off the event loop.
"""

import math
from contextlib import nullcontext
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .artifacts import CsvTable, read_guess
from .equilibrium import Equilibrium, closure_unknowns, solve
from .errors import ConfigError, EquilibriumError, NumericError
from .observability import MetricsLogger, logger
from .params import with_scr
from .plant import assemble
from .scenario import AdmittanceSpec, AnalysisKind, PolesSpec, Scenario, SimulateSpec
from .smallsignal import dominant_mode, eigenvalues, linearize, pole_sweep, port_admittance
from .timedomain import MIN_WINDOW_S, SimTrace, linear_window, oscillation_metrics, simulate

REFERENCE_COLUMNS = ("v_cd_ref", "i_ld_ref", "i_lq_ref", "p_ref")


@dataclass
class AnalysisResult:
    tables: list[CsvTable] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _solve(scenario: Scenario, metrics: Optional[MetricsLogger], guess_path: Optional[Path] = None) -> Equilibrium:
    model = assemble(scenario.mode, scenario.system, scenario.control)
    guess, refs = None, None
    if guess_path is not None:
        guess, refs = read_guess(guess_path, model.state_labels, closure_unknowns(scenario.mode))
        logger.info(f"Using initial guess from {guess_path}")
    eq = solve(model, scenario.operating, guess=guess, references=refs)
    if metrics:
        metrics.record_newton(eq.iterations)
    return eq


# Equilibrium ---------------------------------------------------------------------


def cmd_equilibrium(
    scenario: Scenario,
    metrics: Optional[MetricsLogger] = None,
    guess_path: Optional[Path] = None,
) -> AnalysisResult:
    """One-row table of the solved operating point."""
    with _stage(metrics, "equilibrium"):
        eq = _solve(scenario, metrics, guess_path)

    labels = eq.model.state_labels
    table = CsvTable(
        name="equilibrium.csv",
        columns=["mode", *labels, *REFERENCE_COLUMNS, "p_w", "q_var", "freq_hz", "residual_inf"],
    )
    s, ctrl = eq.signals, eq.model.ctrl
    table.add(
        scenario.mode.value,
        *eq.x_star,
        *(getattr(ctrl, name) for name in REFERENCE_COLUMNS),
        s.p, s.q, s.omega_ctrl / (2.0 * math.pi), eq.residual_inf,
    )
    logger.info(f"Equilibrium: residual {eq.residual_inf:.3e}, delta = {s.delta:.4f} rad, p = {s.p:.2f} W")
    return AnalysisResult(
        tables=[table],
        summary={"residual_inf": eq.residual_inf, "iterations": eq.iterations, "delta_rad": s.delta},
    )


# Pole maps ------------------------------------------------------------------------


def cmd_poles(scenario: Scenario, metrics: Optional[MetricsLogger] = None) -> AnalysisResult:
    """Eigenvalues per sweep point; infeasible points get a single flagged row."""
    spec = scenario.analysis
    assert isinstance(spec, PolesSpec)
    with _stage(metrics, "pole_sweep"):
        pole_map = pole_sweep(
            scenario.mode, scenario.system, scenario.control, scenario.operating, spec.zg_values, metrics
        )

    table = CsvTable(
        name="poles.csv",
        columns=["zg_pu", "scr", "eig_index", "re_rad_s", "im_rad_s", "freq_hz", "stable_flag"],
    )
    points = list(zip(pole_map.sweep_values, pole_map.eig_sets, pole_map.stability_flags, pole_map.dominant))
    first_unstable = next(((z_g, info) for z_g, _, flag, info in points if flag is False), None)

    # Rows by ascending zg; eigenvalues already come by descending real part
    for z_g, eigs, flag, _ in sorted(points, key=lambda point: point[0]):
        if flag is None:
            table.add(z_g, 1.0 / z_g, None, None, None, None, "infeasible")
            continue
        for k, eig in enumerate(eigs):
            table.add(z_g, 1.0 / z_g, k, eig.real, eig.imag, abs(eig.imag) / (2.0 * math.pi), flag)

    summary = {
        "points": len(pole_map.sweep_values),
        "infeasible": pole_map.stability_flags.count(None),
        "all_stable": all(flag is True for flag in pole_map.stability_flags),
        "first_unstable_zg_pu": first_unstable[0] if first_unstable else None,
        "first_unstable_freq_hz": first_unstable[1].freq if first_unstable else None,
    }
    return AnalysisResult(tables=[table], summary=summary)


# Port admittance --------------------------------------------------------------------


def cmd_admittance(scenario: Scenario, metrics: Optional[MetricsLogger] = None) -> AnalysisResult:
    """2×2 dq admittance with its complex-vector magnitudes, one row per frequency."""
    spec = scenario.analysis
    assert isinstance(spec, AdmittanceSpec)
    with _stage(metrics, "admittance"):
        response = port_admittance(
            scenario.mode, scenario.system, scenario.control, scenario.operating, spec.freqs, passive=spec.passive
        )

    table = CsvTable(
        name="admittance.csv",
        columns=[
            "freq_hz",
            "y_dd_re", "y_dd_im", "y_dq_re", "y_dq_im",
            "y_qd_re", "y_qd_im", "y_qq_re", "y_qq_im",
            "y_plus_abs", "y_minus_abs", "y_plus_abs_pu", "y_minus_abs_pu",
            "flag",
        ],
    )
    for k, f in enumerate(response.freqs):
        y = response.y_dq[k]
        y_plus, y_minus = response.y_pm[k]
        table.add(
            f,
            y[0, 0].real, y[0, 0].imag, y[0, 1].real, y[0, 1].imag,
            y[1, 0].real, y[1, 0].imag, y[1, 1].real, y[1, 1].imag,
            abs(y_plus), abs(y_minus),
            abs(y_plus) / response.y_base, abs(y_minus) / response.y_base,
            "singular" if response.singular[k] else "",
        )
        if metrics:
            metrics.record_sweep_point(feasible=not response.singular[k])

    summary = {
        "points": len(response.freqs),
        "singular": int(np.count_nonzero(response.singular)),
        "y_base_s": response.y_base,
    }
    for f in (-1.0, 1.0):
        hits = np.flatnonzero(response.freqs == f)
        if len(hits):
            summary[f"y_plus_abs_at_{f:+g}hz"] = float(abs(response.y_pm[hits[0], 0]))
    return AnalysisResult(tables=[table], summary=summary)


# Simulation ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EventAssessment:
    """Oscillation metrics after the last event with the linearized cross-check."""
    status: str
    window: tuple[float, float]
    freq: float
    sigma: float
    amplitude: float
    eig_freq: Optional[float]
    eig_sigma: Optional[float]
    eig_point: str


def cmd_simulate(scenario: Scenario, metrics: Optional[MetricsLogger] = None) -> AnalysisResult:
    """Trace from the pre-event equilibrium, plus post-event oscillation metrics."""
    spec = scenario.analysis
    assert isinstance(spec, SimulateSpec)

    with _stage(metrics, "equilibrium"):
        eq = _solve(scenario, metrics)
    with _stage(metrics, "simulate"):
        trace = simulate(eq.model, eq.x_star, spec.sim)
    if metrics:
        metrics.record_steps(trace.steps)
    try:
        trace.signal(spec.signal)
    except KeyError:
        raise ConfigError(f"unknown signal '{spec.signal}' for mode {scenario.mode.value}") from None

    trace_table = CsvTable(
        name="trace.csv",
        columns=["t_s", *trace.state_labels, "p_w", "q_var", "freq_hz"],
    )
    freq_hz = trace.signals["omega"] / (2.0 * math.pi)
    for k, t in enumerate(trace.times):
        trace_table.add(t, *trace.states[k], trace.signals["p"][k], trace.signals["q"][k], freq_hz[k])

    with _stage(metrics, "metrics"):
        assessment = assess_events(scenario, eq, trace)

    metrics_table = CsvTable(
        name="metrics.csv",
        columns=[
            "signal", "t0_s", "t1_s", "status", "freq_hz", "sigma_per_s", "amplitude",
            "diverged_at_s", "eig_freq_hz", "eig_sigma_per_s", "eig_point",
        ],
    )
    metrics_table.add(
        spec.signal, *assessment.window, assessment.status,
        assessment.freq, assessment.sigma, assessment.amplitude,
        trace.diverged_at, assessment.eig_freq, assessment.eig_sigma, assessment.eig_point,
    )
    logger.info(
        f"Post-event: {assessment.status}, {assessment.freq:.2f} Hz, sigma = {assessment.sigma:.3f} 1/s "
        f"(linearized: {assessment.eig_freq} Hz, {assessment.eig_sigma} 1/s)"
    )
    summary = {
        "diverged_at_s": trace.diverged_at,
        "status": assessment.status,
        "freq_hz": assessment.freq,
        "sigma_per_s": assessment.sigma,
        "eig_freq_hz": assessment.eig_freq,
        "eig_sigma_per_s": assessment.eig_sigma,
    }
    return AnalysisResult(tables=[trace_table, metrics_table], summary=summary)


def assess_events(scenario: Scenario, eq: Equilibrium, trace: SimTrace) -> EventAssessment:
    """
    Oscillation metrics of the configured signal after the last event.

    The window opens window_delay after the event. For a diverging trace it
    closes where the signal leaves the small-signal range, so the growth
    rate is measured before saturation sets in. The linearized dominant mode
    is taken at the post-event equilibrium, or at the window-start state when
    that equilibrium does not exist.

    Raises:
        NumericError: if a spectral peak has no fittable envelope while the
            linearized dominant mode says the window should oscillate.
    """
    spec = scenario.analysis
    assert isinstance(spec, SimulateSpec)
    t_event = trace.event_times[-1] if trace.event_times else 0.0
    t0 = t_event + spec.window_delay
    t1 = float(trace.times[-1])
    if trace.diverged:
        t_linear = linear_window(trace, spec.signal, t_event, spec.linear_limit_pu)
        if t_linear - t0 >= MIN_WINDOW_S:
            t1 = t_linear

    eig_freq, eig_sigma, eig_point = _linearized_mode(scenario, eq, trace, t0)

    try:
        osc = oscillation_metrics(trace, spec.signal, (t0, t1))
    except ConfigError as exc:
        logger.warning(f"No oscillation metrics: {exc}")
        return EventAssessment(
            status="window_too_short", window=(t0, t1), freq=math.nan, sigma=math.nan, amplitude=math.nan,
            eig_freq=eig_freq, eig_sigma=eig_sigma, eig_point=eig_point,
        )

    if osc.oscillating and math.isnan(osc.sigma):
        if eig_freq:
            raise NumericError(
                f"no growth rate for the {osc.freq:.2f} Hz peak in {spec.signal} over "
                f"[{t0:.4f}, {t1:.4f}] s while the linearized mode oscillates at {eig_freq:.2f} Hz"
            )
        logger.warning(f"Spectral peak at {osc.freq:.2f} Hz has too few swings to fit, treating as no oscillation")
        osc = replace(osc, freq=0.0, sigma=0.0)

    if trace.diverged:
        status = "diverged"
    elif not osc.oscillating:
        status = "no_oscillation"
    else:
        status = "settled" if osc.sigma < 0 else "oscillating"
    return EventAssessment(
        status=status, window=osc.window, freq=osc.freq, sigma=osc.sigma, amplitude=osc.amplitude,
        eig_freq=eig_freq, eig_sigma=eig_sigma, eig_point=eig_point,
    )


def _linearized_mode(
    scenario: Scenario, eq: Equilibrium, trace: SimTrace, t0: float
) -> tuple[Optional[float], Optional[float], str]:
    events = scenario.analysis.sim.events
    system = with_scr(scenario.system, events[-1].scr) if events else scenario.system
    model = assemble(scenario.mode, system, eq.model.ctrl)
    try:
        post = solve(model, scenario.operating, guess=eq.x_star)
        a = linearize(post.model, post).a
        point = "equilibrium"
    except (EquilibriumError, NumericError) as exc:
        logger.warning(f"No post-event equilibrium, linearizing along the trace: {exc}")
        k = int(np.searchsorted(trace.times, t0))
        if k >= len(trace.times):
            return None, None, "none"
        try:
            a = linearize(model, trace.states[k]).a
        except NumericError:
            return None, None, "none"
        point = "trace"
    info = dominant_mode(eigenvalues(a))
    return info.freq, info.sigma, point


# Dispatch -------------------------------------------------------------------------------


def run_analysis(
    scenario: Scenario,
    metrics: Optional[MetricsLogger] = None,
    guess_path: Optional[Path] = None,
) -> AnalysisResult:
    kind = scenario.analysis.kind
    if kind is AnalysisKind.EQUILIBRIUM:
        return cmd_equilibrium(scenario, metrics, guess_path)
    if guess_path is not None:
        raise ConfigError("--guess applies to equilibrium analyses only")
    if kind is AnalysisKind.POLES:
        return cmd_poles(scenario, metrics)
    if kind is AnalysisKind.ADMITTANCE:
        return cmd_admittance(scenario, metrics)
    return cmd_simulate(scenario, metrics)


def _stage(metrics: Optional[MetricsLogger], name: str):
    return metrics.track_stage(name) if metrics else nullcontext()
