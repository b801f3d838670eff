"""
Numerical linearization, eigenvalues, pole sweeps and port admittance.

Linear models are obtained by central differences around an operating point
and kept in SI units. Frequency responses are evaluated as
C(jωI − A)⁻¹B + D.
"""

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Optional, Sequence, Union

import numpy as np
from scipy import linalg

from .errors import NumericError
from .observability import logger
from .params import ControlMode, ControlParams, SystemParams, with_scr
from .plant import (
    INPUT_INDEX,
    INPUT_LABELS,
    ModelOptions,
    NonlinearModel,
    PortKind,
    assemble,
    input_scale,
    state_scale,
    with_options,
)

if TYPE_CHECKING:
    from .equilibrium import Equilibrium, OperatingTarget

OSCILLATORY_MIN_HZ = 0.5
REL_STEP = 1e-6
ABS_STEP_PU = 1e-8


def jacobian(
    fun: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    scale: np.ndarray,
    step_factor: float = 1.0,
) -> np.ndarray:
    """
    Central-difference Jacobian of fun at x.

    The step for entry j is max(1e-6·|x_j|, 1e-8·scale_j), times step_factor.
    """
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x), dtype=float)
    jac = np.empty((len(f0), len(x)))
    for j in range(len(x)):
        h = step_factor * max(REL_STEP * abs(x[j]), ABS_STEP_PU * scale[j])
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * h)
    return jac


@dataclass(frozen=True)
class LinearModel:
    """State-space model dx = A x + B u, y = C x + D u (SI units)."""
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    state_labels: tuple[str, ...]
    input_labels: tuple[str, ...]
    output_labels: tuple[str, ...]


@dataclass(frozen=True)
class ModeInfo:
    sigma: float
    freq: float
    damping_ratio: float


@dataclass(frozen=True)
class PoleMap:
    """Eigenvalues along a line-impedance sweep."""
    sweep_values: list[float]
    eig_sets: list[np.ndarray]
    stability_flags: list[Optional[bool]]  # None marks an infeasible point
    dominant: list[Optional[ModeInfo]]

    @property
    def feasible(self) -> list[bool]:
        return [flag is not None for flag in self.stability_flags]


@dataclass(frozen=True)
class AdmittanceResponse:
    """2×2 dq port admittance (S) in the grid frame, per frequency."""
    freqs: np.ndarray
    y_dq: np.ndarray  # (F, 2, 2) complex
    y_pm: np.ndarray  # (F, 2) complex: Y+, Y-
    singular: np.ndarray  # (F,) bool
    y_base: float

    @property
    def y_dq_pu(self) -> np.ndarray:
        return self.y_dq / self.y_base


@dataclass(frozen=True)
class AxisPortResponse:
    """Single-axis closed-loop transfer extracted from the state-space model."""
    axis: str
    freqs: np.ndarray
    gain: np.ndarray
    immittance: np.ndarray  # Norton admittance (q) or Thevenin impedance (d)


def linearize(
    m: NonlinearModel,
    point: Union["Equilibrium", np.ndarray],
    inputs: Sequence[str] = (),
    outputs: Sequence[str] = (),
    step_factor: float = 1.0,
) -> LinearModel:
    """
    Linearize m at an equilibrium (or any state vector) by central differences.

    Raises:
        NumericError: if the equilibrium did not converge or a derivative is
            not finite.
    """
    if isinstance(point, np.ndarray):
        x0 = point.astype(float)
    else:
        if not point.converged:
            raise NumericError("cannot linearize around an unconverged equilibrium")
        x0 = np.asarray(point.x_star, dtype=float)
    if len(x0) != m.n_states:
        raise NumericError(f"operating point has {len(x0)} states, model has {m.n_states}")

    inputs = tuple(inputs)
    outputs = tuple(outputs)
    u_scale = input_scale(m, inputs) if inputs else np.zeros(0)
    u_pos = [INPUT_INDEX[name] for name in inputs]

    def full_input(u: np.ndarray) -> list:
        vector = [0.0] * len(INPUT_LABELS)
        for k, value in zip(u_pos, u):
            vector[k] = float(value)
        return vector

    u0 = np.zeros(len(inputs))
    x_scale = state_scale(m)

    a = jacobian(lambda x: m.derivatives(x), x0, x_scale, step_factor)
    b = jacobian(lambda u: m.derivatives(x0, full_input(u)), u0, u_scale, step_factor)
    if outputs:
        c = jacobian(lambda x: m.output_vector(x, outputs), x0, x_scale, step_factor)
        d = jacobian(lambda u: m.output_vector(x0, outputs, full_input(u)), u0, u_scale, step_factor)
    else:
        c = np.zeros((0, m.n_states))
        d = np.zeros((0, len(inputs)))
    b = b.reshape(m.n_states, len(inputs))
    d = d.reshape(len(outputs), len(inputs))

    for name, matrix in (("A", a), ("B", b), ("C", c), ("D", d)):
        bad = np.argwhere(~np.isfinite(matrix))
        if len(bad):
            i, j = bad[0]
            raise NumericError(f"non-finite derivative in {name}[{i}, {j}]")

    return LinearModel(
        a=a, b=b, c=c, d=d,
        state_labels=m.state_labels,
        input_labels=inputs,
        output_labels=outputs,
    )


def eigenvalues(a: np.ndarray) -> np.ndarray:
    """Eigenvalues (rad/s) of a real matrix, ordered by descending real part."""
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise NumericError("state matrix has non-finite entries")
    try:
        eigs = linalg.eigvals(a)
    except linalg.LinAlgError as exc:
        raise NumericError(f"eigenvalue iteration failed: {exc}") from exc
    order = np.lexsort((-eigs.imag, -eigs.real))
    return eigs[order]


def dominant_mode(eigs: Sequence[complex]) -> ModeInfo:
    """
    Rightmost eigenvalue; ties in real part go to the larger |imag|.

    The frequency is reported only for an oscillatory mode (|imag| > 2π·0.5
    rad/s) and is 0 for an aperiodic one, so σ always carries the sign the
    stability flag is taken from.
    """
    eigs = np.asarray(eigs, dtype=complex)
    if eigs.size == 0:
        raise NumericError("no eigenvalues given")
    best_re = eigs.real.max()
    tied = eigs[np.isclose(eigs.real, best_re, rtol=1e-9, atol=1e-12)]
    pick = tied[np.argmax(np.abs(tied.imag))]
    sigma = float(pick.real)
    omega = float(abs(pick.imag))
    freq = omega / (2.0 * math.pi) if omega > 2.0 * math.pi * OSCILLATORY_MIN_HZ else 0.0
    magnitude = math.hypot(sigma, 2.0 * math.pi * freq)
    damping = -sigma / magnitude if magnitude > 0 else 0.0
    return ModeInfo(sigma=sigma, freq=freq, damping_ratio=damping)


def state_eigenvalues(m: NonlinearModel, eq: "Equilibrium") -> np.ndarray:
    return eigenvalues(linearize(m, eq).a)


def pole_sweep(
    mode: ControlMode,
    sys: SystemParams,
    ctrl: ControlParams,
    target: "OperatingTarget",
    zg_values: Sequence[float],
    metrics=None,
) -> PoleMap:
    """
    Eigenvalues of the linearized model for each line impedance |Z_g| (p.u.).

    Each point is warm-started from the previous equilibrium; a point without
    an equilibrium is marked infeasible and the sweep continues.
    """
    from .equilibrium import solve
    from .errors import ConfigError, EquilibriumError

    eig_sets: list[np.ndarray] = []
    flags: list[Optional[bool]] = []
    dominant: list[Optional[ModeInfo]] = []
    guess = None

    for z_g in zg_values:
        try:
            model = assemble(mode, with_scr(sys, 1.0 / z_g), ctrl)
            eq = solve(model, target, guess=guess)
            eigs = state_eigenvalues(eq.model, eq)
        except (EquilibriumError, ConfigError, NumericError) as exc:
            logger.warning(f"Sweep point Z_g = {z_g:.4f} p.u. infeasible: {exc}")
            eig_sets.append(np.zeros(0, dtype=complex))
            flags.append(None)
            dominant.append(None)
            if metrics:
                metrics.record_sweep_point(feasible=False)
            continue

        guess = eq.x_star
        stable = bool(np.all(eigs.real < 0))
        info = dominant_mode(eigs)
        logger.info(
            f"Z_g = {z_g:.4f} p.u.: {'stable' if stable else 'UNSTABLE'}, "
            f"dominant sigma = {info.sigma:.3f} 1/s at {info.freq:.2f} Hz"
        )
        eig_sets.append(eigs)
        flags.append(stable)
        dominant.append(info)
        if metrics:
            metrics.record_sweep_point(feasible=True)
            metrics.record_newton(eq.iterations)

    return PoleMap(
        sweep_values=list(zg_values),
        eig_sets=eig_sets,
        stability_flags=flags,
        dominant=dominant,
    )


def frequency_response(lin: LinearModel, freqs: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """
    C(jωI − A)⁻¹B + D at each frequency (Hz).

    Returns:
        (responses of shape (F, outputs, inputs), singular flags of shape (F,))
    """
    freqs = np.asarray(freqs, dtype=float)
    n = lin.a.shape[0]
    identity = np.eye(n)
    out = np.full((len(freqs), lin.c.shape[0], lin.b.shape[1]), np.nan + 0j)
    singular = np.zeros(len(freqs), dtype=bool)
    for k, f in enumerate(freqs):
        m = 2j * math.pi * f * identity - lin.a
        if np.linalg.cond(m) > 1e14:
            singular[k] = True
            continue
        out[k] = lin.c @ np.linalg.solve(m, lin.b) + lin.d
    return out, singular


def complex_vector_reduce(y_dq: np.ndarray) -> tuple[complex, complex]:
    """2×2 dq matrix → complex-vector pair (Y+, Y-)."""
    y = np.asarray(y_dq)
    y_plus = ((y[0, 0] + y[1, 1]) + 1j * (y[1, 0] - y[0, 1])) / 2.0
    y_minus = ((y[0, 0] - y[1, 1]) + 1j * (y[1, 0] + y[0, 1])) / 2.0
    return complex(y_plus), complex(y_minus)


def complex_vector_expand(y_plus: complex, y_minus: complex) -> np.ndarray:
    """Inverse of complex_vector_reduce for a real-valued 2×2 matrix."""
    total = y_plus + y_minus
    diff = y_plus - y_minus
    return np.array([
        [total.real, -diff.imag],
        [total.imag, diff.real],
    ])


def port_admittance(
    mode: ControlMode,
    sys: SystemParams,
    ctrl: ControlParams,
    target: "OperatingTarget",
    freqs: Sequence[float],
    passive: bool = False,
) -> AdmittanceResponse:
    """
    Port admittance at the capacitor node, looking into the inverter.

    The grid source is perturbed (grid frame) and the grid-frame line current
    G_i and capacitor voltage G_v are measured; Y = −G_i·G_v⁻¹ is then the
    admittance of the inverter alone, synchronization dynamics included, at
    the grid-connected operating point. passive=True freezes controller
    outputs and synchronization at their equilibrium values.
    """
    from .equilibrium import solve

    eq = solve(assemble(mode, sys, ctrl), target)
    model = eq.model
    if passive:
        model = with_options(
            model, freeze_controller=True, freeze_sync=True, v_i_hold=eq.signals.v_i
        )

    lin = linearize(
        model,
        eq,
        inputs=("v_grid_d", "v_grid_q"),
        outputs=("i_gd_grid", "i_gq_grid", "v_cd_grid", "v_cq_grid"),
    )
    response, singular = frequency_response(lin, freqs)

    y_dq = np.full((len(response), 2, 2), np.nan + 0j)
    y_pm = np.full((len(response), 2), np.nan + 0j)
    for k in range(len(response)):
        if singular[k]:
            continue
        g_i = response[k, :2, :]
        g_v = response[k, 2:, :]
        if np.linalg.cond(g_v) > 1e14:
            singular[k] = True
            continue
        y_dq[k] = -g_i @ np.linalg.inv(g_v)
        y_pm[k] = complex_vector_reduce(y_dq[k])

    return AdmittanceResponse(
        freqs=np.asarray(freqs, dtype=float),
        y_dq=y_dq,
        y_pm=y_pm,
        singular=singular,
        y_base=sys.bases.y_base,
    )


def passive_admittance(sys: SystemParams, freqs: Sequence[float]) -> np.ndarray:
    """
    Analytic dq admittance of the R_f–L_f branch plus the C_f shunt.

    Frame rotation at ω* adds the ±ω*L and ±ω*C cross terms.
    """
    w = sys.omega_star
    j_mat = np.array([[0.0, -1.0], [1.0, 0.0]])
    out = np.empty((len(freqs), 2, 2), dtype=complex)
    for k, f in enumerate(freqs):
        s = 2j * math.pi * f
        z_l = (sys.r_f + s * sys.l_f) * np.eye(2) + w * sys.l_f * j_mat
        y_c = s * sys.c_f * np.eye(2) + w * sys.c_f * j_mat
        out[k] = np.linalg.inv(z_l) + y_c
    return out


def axis_port_response(
    mode: ControlMode,
    sys: SystemParams,
    ctrl: ControlParams,
    freqs: Sequence[float],
    axis: str = "q",
) -> AxisPortResponse:
    """
    Single-axis closed loop from the state-space model.

    Synchronization is frozen and frame coupling removed. For the q-axis the
    capacitor voltage is imposed (grid branch and C_f dynamics removed) and
    the transfers i*_lq → i_lq and v_cq → i_lq are extracted; for the d-axis
    the grid current is imposed and i_gd → v_cd, v*_cd → v_cd are extracted.
    """
    if axis == "q":
        port, inputs, output = PortKind.VOLTAGE_DRIVEN, ("i_lq_ref", "v_port_q"), ("i_lq",)
    elif axis == "d":
        if not ControlMode(mode).d_voltage_loop:
            raise NumericError(f"mode {ControlMode(mode).value} has no d-axis voltage loop")
        port, inputs, output = PortKind.CURRENT_DRIVEN, ("v_cd_ref", "i_port_d"), ("v_cd",)
    else:
        raise ValueError(f"axis must be 'd' or 'q', got {axis!r}")

    model = assemble(mode, sys, ctrl, ModelOptions(freeze_sync=True, frame_coupling=False, port=port))
    # The variant is linear, so any point linearizes it exactly
    lin = linearize(model, np.zeros(model.n_states), inputs=inputs, outputs=output)
    response, singular = frequency_response(lin, freqs)
    if np.any(singular):
        raise NumericError("axis response is singular at a requested frequency")
    return AxisPortResponse(
        axis=axis,
        freqs=np.asarray(freqs, dtype=float),
        gain=response[:, 0, 0],
        immittance=-response[:, 0, 1],
    )
