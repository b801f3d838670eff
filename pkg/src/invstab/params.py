"""Per-unit bases, circuit parameters and per-mode control parameters."""

import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Optional

from .errors import ConfigError


class ControlMode(str, Enum):
    """The four inverter control architectures."""
    GFM_DROOP = "gfm_droop"
    GFL_PLL = "gfl_pll"
    HYBRID_DROOP = "hybrid_droop"
    HYBRID_PLL = "hybrid_pll"

    @property
    def uses_droop(self) -> bool:
        return self in (ControlMode.GFM_DROOP, ControlMode.HYBRID_DROOP)

    @property
    def uses_pll(self) -> bool:
        return not self.uses_droop

    @property
    def d_voltage_loop(self) -> bool:
        """Whether the d-axis runs an outer voltage loop."""
        return self is not ControlMode.GFL_PLL

    @property
    def q_voltage_loop(self) -> bool:
        """Whether the q-axis runs an outer voltage loop."""
        return self is ControlMode.GFM_DROOP


class DelayKind(str, Enum):
    NONE = "none"
    FIRST_ORDER_PADE = "pade"


class Quantity(str, Enum):
    """Physical quantity kinds understood by pu/from_pu."""
    V = "V"
    A = "A"
    OHM = "ohm"
    H = "H"
    F = "F"
    W = "W"


@dataclass(frozen=True)
class Bases:
    """Per-unit base quantities of the three-phase system."""
    s_base: float
    v_base: float  # line-to-line RMS
    f_base: float
    omega_base: float
    z_base: float
    l_base: float
    c_base: float

    @property
    def v_peak(self) -> float:
        """Peak phase voltage, the base of every dq voltage amplitude."""
        return math.sqrt(2.0 / 3.0) * self.v_base

    @property
    def i_peak(self) -> float:
        """Peak phase current, the base of every dq current amplitude."""
        return (2.0 / 3.0) * self.s_base / self.v_peak

    @property
    def y_base(self) -> float:
        return 1.0 / self.z_base


def derive_bases(s_base: float, v_ll: float, f: float) -> Bases:
    """
    Derive the per-unit bases from rated power, line voltage and frequency.

    Args:
        s_base: Rated three-phase power in W
        v_ll: Line-to-line RMS voltage in V
        f: Base frequency in Hz

    Returns:
        Bases with z = v²/s, ω = 2πf, l = z/ω, c = 1/(z·ω)
    """
    for name, value in (("s_base", s_base), ("v_ll", v_ll), ("f", f)):
        if not (math.isfinite(value) and value > 0):
            raise ConfigError(f"{name} must be positive and finite, got {value}")

    omega_base = 2.0 * math.pi * f
    z_base = v_ll * v_ll / s_base
    return Bases(
        s_base=s_base,
        v_base=v_ll,
        f_base=f,
        omega_base=omega_base,
        z_base=z_base,
        l_base=z_base / omega_base,
        c_base=1.0 / (z_base * omega_base),
    )


def _base_of(kind: Quantity, bases: Bases) -> float:
    kind = Quantity(kind)
    return {
        Quantity.V: bases.v_peak,
        Quantity.A: bases.i_peak,
        Quantity.OHM: bases.z_base,
        Quantity.H: bases.l_base,
        Quantity.F: bases.c_base,
        Quantity.W: bases.s_base,
    }[kind]


def pu(value: float, kind: Quantity, bases: Bases) -> float:
    """Convert an SI value to per-unit."""
    return value / _base_of(kind, bases)


def from_pu(value: float, kind: Quantity, bases: Bases) -> float:
    """Convert a per-unit value back to SI."""
    return value * _base_of(kind, bases)


def scr_to_line(scr: float, r_g: float, bases: Bases) -> tuple[float, float]:
    """
    Line inductance giving a short-circuit ratio with a fixed line resistance.

    SCR is 1/|Z_g| in per-unit with |Z_g| including R_g.

    Returns:
        (l_g in H, |Z_g| in p.u.)
    """
    if not (math.isfinite(scr) and scr > 0):
        raise ConfigError(f"scr must be positive, got {scr}")
    if r_g < 0:
        raise ConfigError(f"r_g must be non-negative, got {r_g}")

    z_mag = bases.z_base / scr
    if r_g > z_mag:
        raise ConfigError(
            f"infeasible impedance: r_g = {r_g} ohm exceeds |Z_g| = {z_mag:.6g} ohm at SCR {scr}"
        )
    x_g = math.sqrt(z_mag * z_mag - r_g * r_g)
    return x_g / bases.omega_base, 1.0 / scr


@dataclass(frozen=True)
class SystemParams:
    """Single-inverter-infinite-bus circuit parameters (SI units)."""
    f_g: float = 50.0
    v_g: float = 200.0  # line-to-line RMS
    v_dc: float = 500.0
    c_dc: float = 1.5e-3
    l_f: float = 3.6e-3
    r_f: float = 0.08
    c_f: float = 30e-6
    l_g: float = 60.6e-3
    r_g: float = 0.33
    s_base: float = 1500.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{f.name} must be finite and non-negative, got {value}")
        if self.l_f <= 0:
            raise ConfigError("l_f must be positive")
        if self.c_f <= 0:
            raise ConfigError("c_f must be positive")
        if self.f_g <= 0 or self.v_g <= 0 or self.s_base <= 0:
            raise ConfigError("f_g, v_g and s_base must be positive")

    @property
    def bases(self) -> Bases:
        return derive_bases(self.s_base, self.v_g, self.f_g)

    @property
    def omega_star(self) -> float:
        return 2.0 * math.pi * self.f_g

    @property
    def v_grid_peak(self) -> float:
        """Peak phase voltage of the infinite bus."""
        return self.bases.v_peak

    @property
    def z_g_pu(self) -> float:
        b = self.bases
        return math.hypot(self.r_g, b.omega_base * self.l_g) / b.z_base

    @property
    def scr(self) -> float:
        return 1.0 / self.z_g_pu


def with_scr(sys: SystemParams, scr: float) -> SystemParams:
    """Return the system with the line inductance set for the given SCR."""
    l_g, _ = scr_to_line(scr, sys.r_g, sys.bases)
    return replace(sys, l_g=l_g)


@dataclass(frozen=True)
class DelaySpec:
    """Controller delay G_del."""
    kind: DelayKind = DelayKind.NONE
    t_d: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DelayKind(self.kind))
        if not math.isfinite(self.t_d) or self.t_d < 0:
            raise ConfigError(f"delay t_d must be non-negative, got {self.t_d}")

    @property
    def active(self) -> bool:
        """A Padé delay with zero delay time behaves as no delay."""
        return self.kind is DelayKind.FIRST_ORDER_PADE and self.t_d > 0


GAIN_FIELDS = (
    "kpv_d", "kiv_d", "kpv_q", "kiv_q",
    "kpi_d", "kii_d", "kpi_q", "kii_q",
    "m_p", "omega_f", "kp_pll", "ki_pll",
)


def required_gains(mode: ControlMode) -> tuple[str, ...]:
    """Gains a control mode reads."""
    mode = ControlMode(mode)
    names = ["kpi_d", "kii_d", "kpi_q", "kii_q"]
    if mode.d_voltage_loop:
        names += ["kpv_d", "kiv_d"]
    if mode.q_voltage_loop:
        names += ["kpv_q", "kiv_q"]
    if mode.uses_droop:
        names += ["m_p", "omega_f"]
    else:
        names += ["kp_pll", "ki_pll"]
    return tuple(names)


@dataclass(frozen=True)
class ControlParams:
    """
    Controller gains and references for one control mode.

    Gains are SI (voltage PI in A/V, current PI in V/A, m_p in rad/s per W,
    PLL gains in rad/s per V); see gain_base for the per-unit scaling. Gains
    the mode does not read may stay None.
    """
    mode: ControlMode
    kpv_d: Optional[float] = None
    kiv_d: Optional[float] = None
    kpv_q: Optional[float] = None
    kiv_q: Optional[float] = None
    kpi_d: Optional[float] = None
    kii_d: Optional[float] = None
    kpi_q: Optional[float] = None
    kii_q: Optional[float] = None
    m_p: Optional[float] = None
    omega_f: Optional[float] = None
    kp_pll: Optional[float] = None
    ki_pll: Optional[float] = None

    # References
    v_cd_ref: float = 0.0
    i_ld_ref: float = 0.0
    i_lq_ref: float = 0.0
    p_ref: float = 0.0

    delay: DelaySpec = field(default_factory=DelaySpec)
    frame_decoupling: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", ControlMode(self.mode))

    def validate(self) -> "ControlParams":
        """Check every gain the mode needs is present, finite and non-negative."""
        for name in required_gains(self.mode):
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"missing gain '{name}' required by mode {self.mode.value}")
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"gain '{name}' must be finite and non-negative, got {value}")
        if self.mode.uses_droop and self.omega_f <= 0:
            raise ConfigError("omega_f must be positive")
        return self

    def gain(self, name: str) -> float:
        value = getattr(self, name)
        if value is None:
            raise ConfigError(f"missing gain '{name}' required by mode {self.mode.value}")
        return value


# Reference gains in per-unit (shared by each GFM/hybrid and GFL/hybrid pair)
REF_VOLTAGE_PI = (0.1, 10.0)
REF_CURRENT_PI = (12.0, 5.0)
REF_M_P = 2.0 * math.pi * 2.5e-5
REF_OMEGA_F = 2.0 * math.pi * 1.0
REF_PLL = (0.5, 12.0)

DEFAULT_SCR = 1.4
DEFAULT_P_PU = 0.5
DEFAULT_V_CD_PU = 1.0


def gain_base(name: str, bases: Bases) -> float:
    """
    SI value of a unit per-unit gain.

    Voltage PI gains map p.u. voltage error to p.u. current (A/V), current PI
    gains p.u. current error to p.u. voltage (V/A), PLL gains p.u. q-axis
    voltage to p.u. frequency and m_p p.u. power to p.u. frequency. omega_f
    is a filter corner and stays in rad/s.
    """
    if name in ("kpv_d", "kiv_d", "kpv_q", "kiv_q"):
        return bases.y_base
    if name in ("kpi_d", "kii_d", "kpi_q", "kii_q"):
        return bases.z_base
    if name in ("kp_pll", "ki_pll"):
        return bases.omega_base / bases.v_peak
    if name == "m_p":
        return bases.omega_base / bases.s_base
    if name == "omega_f":
        return 1.0
    raise ConfigError(f"unknown gain '{name}'")


def gains_from_pu(gains: dict, bases: Bases) -> dict:
    """Convert a mapping of per-unit gains to SI."""
    return {name: value * gain_base(name, bases) for name, value in gains.items()}


def reference_system_params(scr: float = DEFAULT_SCR, **overrides) -> SystemParams:
    """Reference circuit with the line inductance set from an SCR."""
    return with_scr(SystemParams(**overrides), scr)


def reference_control_params(
    mode: ControlMode,
    bases: Optional[Bases] = None,
    delay: Optional[DelaySpec] = None,
    **overrides,
) -> ControlParams:
    """
    Reference gains for a mode with the default desk-scale references.

    The reference gains are per-unit and are converted to SI through the
    bases; overrides are taken as SI. References default to v*_cd = 1.0 p.u.
    and P* = 0.5 p.u.; gains the mode does not read are left unset.
    """
    mode = ControlMode(mode)
    bases = bases or SystemParams().bases
    kpv, kiv = REF_VOLTAGE_PI
    kpi, kii = REF_CURRENT_PI

    values: dict = dict(kpi_d=kpi, kii_d=kii, kpi_q=kpi, kii_q=kii)
    if mode.d_voltage_loop:
        values.update(kpv_d=kpv, kiv_d=kiv)
    if mode.q_voltage_loop:
        values.update(kpv_q=kpv, kiv_q=kiv)
    if mode.uses_droop:
        values.update(m_p=REF_M_P, omega_f=REF_OMEGA_F)
    else:
        values.update(kp_pll=REF_PLL[0], ki_pll=REF_PLL[1])
    values = gains_from_pu(values, bases)

    values.update(
        v_cd_ref=from_pu(DEFAULT_V_CD_PU, Quantity.V, bases),
        p_ref=from_pu(DEFAULT_P_PU, Quantity.W, bases),
        delay=delay or DelaySpec(),
    )
    values.update(overrides)
    return ControlParams(mode=mode, **values).validate()
