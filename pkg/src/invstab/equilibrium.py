"""Steady-state operating points by damped Newton iteration."""

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import EquilibriumError, NumericError
from .observability import logger
from .params import ControlMode, from_pu, Quantity
from .plant import NonlinearModel, SignalSet, state_scale, with_control, wrap_angle
from .smallsignal import jacobian

TOL = 1e-10
MAX_ITERATIONS = 60
MIN_STEP = 2.0 ** -20
BRANCH_RETRY_DELTA = 0.1


@dataclass(frozen=True)
class OperatingTarget:
    """Operating point requested from the closure."""
    p_target: float
    q_target: float = 0.0

    @classmethod
    def per_unit(cls, p_pu: float, q_pu: float, s_base: float) -> "OperatingTarget":
        return cls(p_target=p_pu * s_base, q_target=q_pu * s_base)


@dataclass(frozen=True)
class Equilibrium:
    """A solved operating point."""
    x_star: np.ndarray
    residual_inf: float
    signals: SignalSet
    converged: bool
    iterations: int
    model: NonlinearModel  # references closed by the solve


def closure_unknowns(mode: ControlMode) -> tuple[str, ...]:
    """Control references solved alongside the states."""
    if mode is ControlMode.GFL_PLL:
        return ("i_ld_ref", "i_lq_ref")
    return ()


def residual(m: NonlinearModel, x: Sequence[float]) -> float:
    """∞-norm of f(x) in per-unit rate units (1/s)."""
    return float(np.max(np.abs(m.derivatives(np.asarray(x, dtype=float)) / state_scale(m))))


def flat_start(m: NonlinearModel, target: OperatingTarget, delta0: Optional[float] = None) -> np.ndarray:
    """
    Initial guess from a phasor power-flow estimate.

    The capacitor voltage sits at its reference on the d-axis, the line
    current carries the target power, and δ is read off the grid voltage
    that this implies. Hybrid-PLL takes its line current from the q-axis
    reference instead (see reference_line_current).
    """
    sys, ctrl = m.sys, m.ctrl
    w = sys.omega_star
    v_cd = ctrl.v_cd_ref if ctrl.v_cd_ref > 0 else sys.v_grid_peak
    v_cq = 0.0
    i_gd = target.p_target / (1.5 * v_cd)
    i_gq = -target.q_target / (1.5 * v_cd)
    if m.mode is ControlMode.HYBRID_PLL:
        i_gd, i_gq = reference_line_current(m, v_cd) or (i_gd, i_gq)
    i_ld = i_gd - w * sys.c_f * v_cq
    i_lq = i_gq + w * sys.c_f * v_cd

    # Grid voltage behind the line, in the controller frame
    v_gd = v_cd - sys.r_g * i_gd + w * sys.l_g * i_gq
    v_gq = v_cq - sys.r_g * i_gq - w * sys.l_g * i_gd
    delta = math.atan2(-v_gq, v_gd) if delta0 is None else delta0

    v_id = v_cd + sys.r_f * i_ld - w * sys.l_f * i_lq
    v_iq = v_cq + sys.r_f * i_lq + w * sys.l_f * i_ld
    if ctrl.frame_decoupling:
        v_id += w * sys.l_f * i_lq
        v_iq -= w * sys.l_f * i_ld

    values = {
        "i_ld": i_ld, "i_lq": i_lq, "v_cd": v_cd, "v_cq": v_cq, "i_gd": i_gd, "i_gq": i_gq,
        "xi_vd": i_ld / ctrl.kiv_d if ctrl.kiv_d else 0.0,
        "xi_vq": i_lq / ctrl.kiv_q if ctrl.kiv_q else 0.0,
        "xi_id": v_id / ctrl.kii_d if ctrl.kii_d else 0.0,
        "xi_iq": v_iq / ctrl.kii_q if ctrl.kii_q else 0.0,
        "xi_pll": 0.0,
        "p_f": target.p_target,
        "delta": delta,
        "x_del_d": v_id,
        "x_del_q": v_iq,
    }
    return np.array([values[label] for label in m.state_labels])


def reference_line_current(m: NonlinearModel, v_cd: float) -> Optional[tuple[float, float]]:
    """
    Line current (i_gd, i_gq) implied by v_cd on the d-axis and the passthrough i*_lq.

    The q-axis current is fixed by the reference less the capacitor current;
    the d-axis current then follows from |v_g| = V_g across the line. Of the
    two roots the smaller one is returned, the low-angle branch. None when the
    line cannot carry that q-axis current at this voltage.
    """
    sys = m.sys
    w = sys.omega_star
    r, x = sys.r_g, w * sys.l_g
    i_gq = m.ctrl.i_lq_ref - w * sys.c_f * v_cd
    z2 = r * r + x * x
    c = (v_cd + x * i_gq) ** 2 + (r * i_gq) ** 2 - sys.v_grid_peak ** 2
    disc = (r * v_cd) ** 2 - z2 * c
    if disc < 0:
        return None
    return (r * v_cd - math.sqrt(disc)) / z2, i_gq


def _close_references(m: NonlinearModel, target: OperatingTarget) -> NonlinearModel:
    if m.mode.uses_droop:
        return with_control(m, replace(m.ctrl, p_ref=target.p_target))
    return m


def solve(
    m: NonlinearModel,
    target: OperatingTarget,
    guess: Optional[Sequence[float]] = None,
    tol: float = TOL,
    references: Optional[dict[str, float]] = None,
) -> Equilibrium:
    """
    Solve f(x) = 0 with the mode's operating-target closure.

    Droop modes take p_ref = p_target. GFL augments (i*_ld, i*_lq) with the
    constraints p = p_target and q = q_target. Hybrid-PLL passes i*_lq through
    unchanged and ignores the target: its power is whatever the line carries
    at v*_cd and that q-axis current. An equilibrium with δ outside (−π/2, π/2) is rejected and
    the solve is retried from a flat start with δ₀ = 0.1 rad.

    `references` seeds the closure unknowns for the guess; a guess that
    already meets the tolerance is returned unchanged.

    Raises:
        EquilibriumError: if Newton fails or only the high-angle branch exists.
    """
    m = _close_references(m, target)
    starts = []
    if guess is not None:
        starts.append((np.asarray(guess, dtype=float), references))
    starts.append((flat_start(m, target), None))
    starts.append((flat_start(m, target, delta0=BRANCH_RETRY_DELTA), None))

    last_error: Optional[EquilibriumError] = None
    for x0, refs in starts:
        try:
            eq = _newton(m, target, x0, tol, refs)
        except EquilibriumError as exc:
            logger.debug(f"Newton start failed: {exc}")
            last_error = exc
            continue
        if abs(eq.signals.delta) < math.pi / 2:
            return eq
        logger.debug(f"Rejected high-angle branch at delta = {eq.signals.delta:.4f} rad")
        last_error = EquilibriumError(
            f"only the high-angle branch (delta = {eq.signals.delta:.4f} rad) was found",
            residual=eq.residual_inf,
            iterate=eq.x_star,
            iterations=eq.iterations,
        )
    assert last_error is not None
    raise last_error


def _newton(
    m: NonlinearModel,
    target: OperatingTarget,
    x0: np.ndarray,
    tol: float,
    references: Optional[dict[str, float]] = None,
) -> Equilibrium:
    unknowns = closure_unknowns(m.mode)
    n = m.n_states
    s_base = m.sys.s_base
    scale = np.concatenate([state_scale(m), np.full(len(unknowns), m.sys.bases.i_peak)])

    def close(refs: Sequence[float]) -> NonlinearModel:
        if not unknowns:
            return m
        return with_control(m, replace(m.ctrl, **{name: float(v) for name, v in zip(unknowns, refs)}))

    def split(z: np.ndarray) -> tuple[np.ndarray, NonlinearModel]:
        values = z * scale
        return values[:n], close(values[n:])

    def fun_at(x: np.ndarray, model: NonlinearModel) -> np.ndarray:
        f = model.derivatives(x) / scale[:n]
        if not unknowns:
            return f
        s = model.outputs(x)
        extra = [(s.p - target.p_target) / s_base]
        if len(unknowns) == 2:
            extra.append((s.q - target.q_target) / s_base)
        return np.concatenate([f, extra])

    def fun(z: np.ndarray) -> np.ndarray:
        return fun_at(*split(z))

    if references:
        refs0 = [references[name] for name in unknowns]
    else:
        # Current references start from the flat-start inductor currents
        refs0 = [x0[m.index("i_ld")] if name == "i_ld_ref" else x0[m.index("i_lq")] for name in unknowns]

    x, model = np.array(x0, dtype=float), close(refs0)
    try:
        f = fun_at(x, model)
    except NumericError as exc:
        raise EquilibriumError(str(exc), residual=math.inf, iterate=x0) from exc
    norm = float(np.max(np.abs(f)))
    z = np.concatenate([x0, refs0]) / scale
    iterations = 0

    while norm >= tol:
        if iterations >= MAX_ITERATIONS:
            raise EquilibriumError("iteration limit reached", residual=norm, iterate=x, iterations=iterations)
        iterations += 1

        jac = jacobian(fun, z, np.ones_like(z))
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            raise EquilibriumError("singular Jacobian", residual=norm, iterate=x, iterations=iterations) from None

        t = 1.0
        while True:
            trial = z + t * step
            try:
                f_trial = fun(trial)
                trial_norm = float(np.max(np.abs(f_trial)))
            except NumericError:
                trial_norm = math.inf
            if trial_norm < norm or trial_norm < tol:
                break
            t *= 0.5
            if t < MIN_STEP:
                raise EquilibriumError("line search stalled", residual=norm, iterate=x, iterations=iterations)
        z, f, norm = trial, f_trial, trial_norm
        x, model = split(z)
        logger.debug(f"Newton iteration {iterations}: residual {norm:.3e}, step {t:g}")

    x = x.copy()
    k = model.index("delta")
    x[k] = wrap_angle(x[k])
    return Equilibrium(
        x_star=x,
        residual_inf=residual(model, x),
        signals=model.outputs(x),
        converged=True,
        iterations=iterations,
        model=model,
    )


def default_target(m: NonlinearModel, p_pu: float = 0.5, q_pu: float = 0.0) -> OperatingTarget:
    """Desk-scale operating point: 0.5 p.u. active power, zero reactive power."""
    s_base = from_pu(1.0, Quantity.W, m.sys.bases)
    return OperatingTarget.per_unit(p_pu, q_pu, s_base)
