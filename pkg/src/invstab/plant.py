"""
Full-order closed-loop model of one inverter against an infinite bus.

All equations are written in the controller dq frame, which rotates at the
synchronization frequency ω_ctrl; δ is the angle of the controller frame
ahead of the grid frame. States are kept in SI units; `state_scale` gives
the per-unit scale of each state for residuals and finite-difference steps.
"""

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .control_blocks import (
    PIGains,
    delay_eval,
    droop_eval,
    lpf_eval,
    pi_eval,
    pll_eval,
    rotate,
)
from .errors import ConfigError, NumericError
from .params import ControlMode, ControlParams, SystemParams

PLANT_STATES = ("i_ld", "i_lq", "v_cd", "v_cq", "i_gd", "i_gq")

CONTROLLER_STATES = {
    ControlMode.GFM_DROOP: ("xi_vd", "xi_vq", "xi_id", "xi_iq", "p_f", "delta"),
    ControlMode.GFL_PLL: ("xi_id", "xi_iq", "xi_pll", "delta"),
    ControlMode.HYBRID_DROOP: ("xi_vd", "xi_id", "xi_iq", "p_f", "delta"),
    ControlMode.HYBRID_PLL: ("xi_vd", "xi_id", "xi_iq", "xi_pll", "delta"),
}

DELAY_STATES = ("x_del_d", "x_del_q")

# Small-signal input channels, each added to its nominal value
INPUT_LABELS = (
    "v_cd_ref", "v_cq_ref", "i_ld_ref", "i_lq_ref", "p_ref",
    "v_grid_d", "v_grid_q",
    "v_port_d", "v_port_q",
    "i_port_d", "i_port_q",
)
INPUT_INDEX = {name: k for k, name in enumerate(INPUT_LABELS)}

SIGNAL_LABELS = (
    "p", "q", "omega", "v_id", "v_iq",
    "v_cd_grid", "v_cq_grid", "i_gd_grid", "i_gq_grid",
)

_NO_INPUT = (0.0,) * len(INPUT_LABELS)


class PortKind(str, Enum):
    """How the inverter terminal is closed."""
    GRID = "grid"  # line + infinite bus
    VOLTAGE_DRIVEN = "voltage_driven"  # capacitor voltage imposed by v_port inputs
    CURRENT_DRIVEN = "current_driven"  # grid current imposed by i_port inputs


@dataclass(frozen=True)
class ModelOptions:
    """Structural variants of the closed-loop model."""
    freeze_sync: bool = False
    frame_coupling: bool = True
    port: PortKind = PortKind.GRID
    freeze_controller: bool = False
    v_i_hold: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class SyncState:
    """Synchronization states; fields not used by the mode are None."""
    delta: float
    p_f: Optional[float] = None
    xi_pll: Optional[float] = None


@dataclass(frozen=True)
class SignalSet:
    """Derived signals at one state."""
    p: float
    q: float
    v_c: tuple[float, float]
    i_l: tuple[float, float]
    i_g: tuple[float, float]
    omega_ctrl: float
    delta: float
    v_i: tuple[float, float]
    v_g: tuple[float, float]
    v_c_grid: tuple[float, float]
    i_g_grid: tuple[float, float]

    def channel(self, name: str) -> float:
        """Look up a named output channel."""
        table = {
            "p": self.p,
            "q": self.q,
            "omega": self.omega_ctrl,
            "v_id": self.v_i[0],
            "v_iq": self.v_i[1],
            "v_cd_grid": self.v_c_grid[0],
            "v_cq_grid": self.v_c_grid[1],
            "i_gd_grid": self.i_g_grid[0],
            "i_gq_grid": self.i_g_grid[1],
        }
        if name not in table:
            raise KeyError(name)
        return table[name]


class NonlinearModel:
    """
    Closed-loop ODE system f(x, u) for one control mode.

    Instances are immutable after assembly; derivatives and outputs are pure
    functions of the state and input vectors.
    """

    def __init__(
        self,
        mode: ControlMode,
        sys: SystemParams,
        ctrl: ControlParams,
        options: Optional[ModelOptions] = None,
    ):
        self.mode = ControlMode(mode)
        self.sys = sys
        self.ctrl = ctrl
        self.options = options or ModelOptions()

        labels = PLANT_STATES + CONTROLLER_STATES[self.mode]
        if ctrl.delay.active:
            labels += DELAY_STATES
        self.state_labels: tuple[str, ...] = labels
        self._index = {name: k for k, name in enumerate(labels)}

        # Cached gains
        self._gi_d = PIGains(ctrl.gain("kpi_d"), ctrl.gain("kii_d"))
        self._gi_q = PIGains(ctrl.gain("kpi_q"), ctrl.gain("kii_q"))
        self._gv_d = PIGains(ctrl.gain("kpv_d"), ctrl.gain("kiv_d")) if self.mode.d_voltage_loop else None
        self._gv_q = PIGains(ctrl.gain("kpv_q"), ctrl.gain("kiv_q")) if self.mode.q_voltage_loop else None
        self._v_grid = sys.v_grid_peak

    @property
    def n_states(self) -> int:
        return len(self.state_labels)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ConfigError(f"state '{label}' does not exist in mode {self.mode.value}") from None

    def has_state(self, label: str) -> bool:
        return label in self._index

    def derivatives(self, x: Sequence[float], u: Optional[Sequence[float]] = None) -> np.ndarray:
        """State derivatives dx/dt."""
        dx, _ = self._evaluate(x, u)
        return dx

    def outputs(self, x: Sequence[float], u: Optional[Sequence[float]] = None) -> SignalSet:
        """Derived signals at x."""
        _, signals = self._evaluate(x, u)
        return signals

    def output_vector(
        self,
        x: Sequence[float],
        labels: Sequence[str],
        u: Optional[Sequence[float]] = None,
    ) -> np.ndarray:
        """Values of the named output channels (state labels or signal names)."""
        signals = self.outputs(x, u)
        values = []
        for name in labels:
            if name in self._index:
                values.append(float(x[self._index[name]]))
            else:
                values.append(signals.channel(name))
        return np.array(values)

    def sync_state(self, x: Sequence[float]) -> SyncState:
        return SyncState(
            delta=float(x[self._index["delta"]]),
            p_f=float(x[self._index["p_f"]]) if "p_f" in self._index else None,
            xi_pll=float(x[self._index["xi_pll"]]) if "xi_pll" in self._index else None,
        )

    def _evaluate(self, x, u) -> tuple[np.ndarray, SignalSet]:
        if len(x) != self.n_states:
            raise NumericError(f"state vector has {len(x)} entries, expected {self.n_states}")
        sys, ctrl, opt, idx = self.sys, self.ctrl, self.options, self._index
        u = _NO_INPUT if u is None else u
        dx = [0.0] * self.n_states

        i_ld, i_lq, v_cd, v_cq, i_gd, i_gq = (float(v) for v in x[:6])
        if opt.port is PortKind.VOLTAGE_DRIVEN:
            v_cd += u[INPUT_INDEX["v_port_d"]]
            v_cq += u[INPUT_INDEX["v_port_q"]]
        elif opt.port is PortKind.CURRENT_DRIVEN:
            i_gd += u[INPUT_INDEX["i_port_d"]]
            i_gq += u[INPUT_INDEX["i_port_q"]]

        p = 1.5 * (v_cd * i_gd + v_cq * i_gq)
        q = 1.5 * (v_cq * i_gd - v_cd * i_gq)
        omega_star = sys.omega_star
        delta = float(x[idx["delta"]])

        # Synchronization
        omega = omega_star
        if self.mode.uses_droop:
            k = idx["p_f"]
            if not opt.freeze_sync:
                p_ref = ctrl.p_ref + u[INPUT_INDEX["p_ref"]]
                omega = droop_eval(ctrl.m_p, omega_star, p_ref, float(x[k]))
                dx[k] = lpf_eval(ctrl.omega_f, float(x[k]), p)
        else:
            k = idx["xi_pll"]
            if not opt.freeze_sync:
                omega, dx[k] = pll_eval(ctrl.kp_pll, ctrl.ki_pll, float(x[k]), v_cq, omega_star)
        if not opt.freeze_sync:
            dx[idx["delta"]] = omega - omega_star

        # Control law
        if opt.freeze_controller:
            v_id, v_iq = opt.v_i_hold
        else:
            v_id, v_iq = self._control_law(x, u, dx, i_ld, i_lq, v_cd, v_cq, omega)

        w = omega if opt.frame_coupling else 0.0

        # LC filter
        dx[0] = (v_id - v_cd - sys.r_f * i_ld + w * sys.l_f * i_lq) / sys.l_f
        dx[1] = (v_iq - v_cq - sys.r_f * i_lq - w * sys.l_f * i_ld) / sys.l_f
        if opt.port is not PortKind.VOLTAGE_DRIVEN:
            dx[2] = (i_ld - i_gd + w * sys.c_f * v_cq) / sys.c_f
            dx[3] = (i_lq - i_gq - w * sys.c_f * v_cd) / sys.c_f

        # Line and infinite bus
        v_gd, v_gq = rotate(
            self._v_grid + u[INPUT_INDEX["v_grid_d"]], u[INPUT_INDEX["v_grid_q"]], -delta
        )
        if opt.port is PortKind.GRID:
            dx[4] = (v_cd - v_gd - sys.r_g * i_gd + w * sys.l_g * i_gq) / sys.l_g
            dx[5] = (v_cq - v_gq - sys.r_g * i_gq - w * sys.l_g * i_gd) / sys.l_g

        dx = np.array(dx)
        if not np.all(np.isfinite(dx)):
            bad = [self.state_labels[k] for k in np.flatnonzero(~np.isfinite(dx))]
            raise NumericError(f"non-finite derivative for states {bad}")

        signals = SignalSet(
            p=p,
            q=q,
            v_c=(v_cd, v_cq),
            i_l=(i_ld, i_lq),
            i_g=(i_gd, i_gq),
            omega_ctrl=omega,
            delta=delta,
            v_i=(v_id, v_iq),
            v_g=(v_gd, v_gq),
            v_c_grid=rotate(v_cd, v_cq, delta),
            i_g_grid=rotate(i_gd, i_gq, delta),
        )
        return dx, signals

    def _control_law(self, x, u, dx, i_ld, i_lq, v_cd, v_cq, omega) -> tuple[float, float]:
        """Mode-specific voltage/current loops; writes integrator rates into dx."""
        ctrl, idx = self.ctrl, self._index

        if self._gv_d is not None:
            e_vd = ctrl.v_cd_ref + u[INPUT_INDEX["v_cd_ref"]] - v_cd
            i_ref_d, dx[idx["xi_vd"]] = pi_eval(self._gv_d, float(x[idx["xi_vd"]]), e_vd)
        else:
            i_ref_d = ctrl.i_ld_ref + u[INPUT_INDEX["i_ld_ref"]]

        if self._gv_q is not None:
            e_vq = u[INPUT_INDEX["v_cq_ref"]] - v_cq
            i_ref_q, dx[idx["xi_vq"]] = pi_eval(self._gv_q, float(x[idx["xi_vq"]]), e_vq)
        else:
            i_ref_q = ctrl.i_lq_ref + u[INPUT_INDEX["i_lq_ref"]]

        v_cmd_d, dx[idx["xi_id"]] = pi_eval(self._gi_d, float(x[idx["xi_id"]]), i_ref_d - i_ld)
        v_cmd_q, dx[idx["xi_iq"]] = pi_eval(self._gi_q, float(x[idx["xi_iq"]]), i_ref_q - i_lq)

        if ctrl.frame_decoupling:
            v_cmd_d -= omega * self.sys.l_f * i_lq
            v_cmd_q += omega * self.sys.l_f * i_ld

        if not ctrl.delay.active:
            return v_cmd_d, v_cmd_q

        k_d, k_q = idx["x_del_d"], idx["x_del_q"]
        v_id, dx[k_d] = delay_eval(ctrl.delay, float(x[k_d]), v_cmd_d)
        v_iq, dx[k_q] = delay_eval(ctrl.delay, float(x[k_q]), v_cmd_q)
        return v_id, v_iq


def assemble(
    mode: ControlMode,
    sys: SystemParams,
    ctrl: ControlParams,
    options: Optional[ModelOptions] = None,
) -> NonlinearModel:
    """
    Assemble the closed-loop model for a control mode.

    Raises:
        ConfigError: if ctrl belongs to another mode, a required gain is
            missing, or the grid port has no line inductance.
    """
    mode = ControlMode(mode)
    if ctrl.mode is not mode:
        raise ConfigError(f"control parameters are for {ctrl.mode.value}, not {mode.value}")
    ctrl.validate()
    options = options or ModelOptions()
    if options.port is PortKind.GRID and sys.l_g <= 0:
        raise ConfigError("l_g must be positive when the grid branch is modeled")
    return NonlinearModel(mode, sys, ctrl, options)


def derivatives(m: NonlinearModel, x: Sequence[float]) -> np.ndarray:
    return m.derivatives(x)


def outputs(m: NonlinearModel, x: Sequence[float]) -> SignalSet:
    return m.outputs(x)


def with_line(m: NonlinearModel, l_g: float) -> NonlinearModel:
    """Same model with the line inductance swapped."""
    return assemble(m.mode, replace(m.sys, l_g=l_g), m.ctrl, m.options)


def with_control(m: NonlinearModel, ctrl: ControlParams) -> NonlinearModel:
    return assemble(m.mode, m.sys, ctrl, m.options)


def with_options(m: NonlinearModel, **changes) -> NonlinearModel:
    return assemble(m.mode, m.sys, m.ctrl, replace(m.options, **changes))


def state_scale(m: NonlinearModel) -> np.ndarray:
    """Per-unit scale of each state (SI value of 1 p.u.)."""
    bases = m.sys.bases
    scale = []
    for label in m.state_labels:
        if label.startswith("i_") or label in ("xi_id", "xi_iq"):
            scale.append(bases.i_peak)
        elif label.startswith("v_") or label in ("xi_vd", "xi_vq", "xi_pll") or label.startswith("x_del"):
            scale.append(bases.v_peak)
        elif label == "p_f":
            scale.append(bases.s_base)
        else:
            scale.append(1.0)
    return np.array(scale)


def input_scale(m: NonlinearModel, labels: Sequence[str]) -> np.ndarray:
    """Per-unit scale of each input channel."""
    bases = m.sys.bases
    scale = []
    for label in labels:
        if label not in INPUT_INDEX:
            raise ConfigError(f"unknown input channel '{label}'")
        if label.startswith("v_"):
            scale.append(bases.v_peak)
        elif label.startswith("i_"):
            scale.append(bases.i_peak)
        else:
            scale.append(bases.s_base)
    return np.array(scale)


def stored_energy(m: NonlinearModel, x: Sequence[float]) -> float:
    """Energy stored in L_f, C_f and L_g (three-phase, amplitude-invariant dq)."""
    sys = m.sys
    i_ld, i_lq, v_cd, v_cq, i_gd, i_gq = (float(v) for v in x[:6])
    return 0.75 * (
        sys.l_f * (i_ld ** 2 + i_lq ** 2)
        + sys.c_f * (v_cd ** 2 + v_cq ** 2)
        + sys.l_g * (i_gd ** 2 + i_gq ** 2)
    )


def power_balance_residual(m: NonlinearModel, x: Sequence[float]) -> float:
    """
    Converter power minus grid power, losses and stored-energy rate (W).

    Zero for every state of the grid-connected model; frame rotation terms
    cancel in the energy balance.
    """
    sys = m.sys
    dx = m.derivatives(x)
    s = m.outputs(x)
    i_ld, i_lq, v_cd, v_cq, i_gd, i_gq = (float(v) for v in x[:6])
    p_conv = 1.5 * (s.v_i[0] * i_ld + s.v_i[1] * i_lq)
    p_grid = 1.5 * (s.v_g[0] * i_gd + s.v_g[1] * i_gq)
    losses = 1.5 * (sys.r_f * (i_ld ** 2 + i_lq ** 2) + sys.r_g * (i_gd ** 2 + i_gq ** 2))
    energy_rate = 1.5 * (
        sys.l_f * (i_ld * dx[0] + i_lq * dx[1])
        + sys.c_f * (v_cd * dx[2] + v_cq * dx[3])
        + sys.l_g * (i_gd * dx[4] + i_gq * dx[5])
    )
    return p_conv - p_grid - losses - energy_rate


def wrap_angle(angle: float) -> float:
    """Wrap to (−π, π]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped
