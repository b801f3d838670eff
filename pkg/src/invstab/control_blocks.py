"""
Continuous-time control primitives and single-axis equivalents.

Each primitive is a pure function returning its output together with the
time derivative of its own state, so the plant can stack them into one
state vector. Park transforms use the amplitude-invariant (2/3) convention,
so instantaneous power is P = (3/2)(v_d i_d + v_q i_q).
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import NumericError
from .params import ControlParams, DelaySpec, SystemParams

TWO_PI_3 = 2.0 * math.pi / 3.0


# Park transforms ---------------------------------------------------------------


def park_dq0(a, b, c, theta):
    """abc → (d, q, zero) with the amplitude-invariant convention."""
    d = (2.0 / 3.0) * (
        a * np.cos(theta) + b * np.cos(theta - TWO_PI_3) + c * np.cos(theta + TWO_PI_3)
    )
    q = -(2.0 / 3.0) * (
        a * np.sin(theta) + b * np.sin(theta - TWO_PI_3) + c * np.sin(theta + TWO_PI_3)
    )
    zero = (a + b + c) / 3.0
    return d, q, zero


def park(a, b, c, theta):
    """abc → (d, q). A balanced cosine set aligned with theta maps to (A, 0)."""
    d, q, _ = park_dq0(a, b, c, theta)
    return d, q


def inverse_park(d, q, theta, zero=0.0):
    """(d, q[, zero]) → abc."""
    a = d * np.cos(theta) - q * np.sin(theta) + zero
    b = d * np.cos(theta - TWO_PI_3) - q * np.sin(theta - TWO_PI_3) + zero
    c = d * np.cos(theta + TWO_PI_3) - q * np.sin(theta + TWO_PI_3) + zero
    return a, b, c


def rotate(d: float, q: float, angle: float) -> tuple[float, float]:
    """Rotate a dq pair by angle (complex-vector multiplication by e^{j·angle})."""
    cos_a = math.cos(angle)
    sin_a = math.sin(angle)
    return d * cos_a - q * sin_a, d * sin_a + q * cos_a


# Primitives --------------------------------------------------------------------


@dataclass(frozen=True)
class PIGains:
    """Proportional-integral gains."""
    kp: float
    ki: float

    def __post_init__(self):
        if not (math.isfinite(self.kp) and math.isfinite(self.ki)):
            raise NumericError(f"PI gains must be finite, got ({self.kp}, {self.ki})")


def pi_eval(g: PIGains, xi: float, e: float) -> tuple[float, float]:
    """PI output u = kp·e + ki·xi and integrator rate dxi/dt = e."""
    return g.kp * e + g.ki * xi, e


def lpf_eval(omega_f: float, x: float, u: float) -> float:
    """First-order low-pass filter rate."""
    return omega_f * (u - x)


def pll_eval(
    kp_pll: float,
    ki_pll: float,
    xi_pll: float,
    v_cq: float,
    omega_star: float,
) -> tuple[float, float]:
    """PI-type PLL driving v_cq to zero. Returns (ω_ctrl, dxi/dt)."""
    return omega_star + kp_pll * v_cq + ki_pll * xi_pll, v_cq


def droop_eval(m_p: float, omega_star: float, p_ref: float, p_f: float) -> float:
    """P–ω droop frequency."""
    return omega_star + m_p * (p_ref - p_f)


def delay_eval(spec: DelaySpec, x_del: float, u: float) -> tuple[float, float]:
    """
    Delay G_del realized as a first-order Padé section.

    State-space form: dx/dt = (2/t_d)(u − x), y = 2x − u, which has the
    transfer function (1 − s·t_d/2)/(1 + s·t_d/2). With no delay y = u.
    """
    if not spec.active:
        return u, 0.0
    return 2.0 * x_del - u, (2.0 / spec.t_d) * (u - x_del)


# Rational transfer functions -----------------------------------------------------


@dataclass(frozen=True)
class RationalTF:
    """Ratio of polynomials in s, coefficients in ascending powers."""
    num: tuple
    den: tuple

    @classmethod
    def const(cls, value: float) -> "RationalTF":
        return cls((complex(value),), (1.0 + 0j,))

    @classmethod
    def poly(cls, *coeffs: float) -> "RationalTF":
        return cls(tuple(complex(c) for c in coeffs), (1.0 + 0j,))

    @classmethod
    def pi(cls, g: PIGains) -> "RationalTF":
        return cls((complex(g.ki), complex(g.kp)), (0j, 1.0 + 0j))

    def __add__(self, other: "RationalTF") -> "RationalTF":
        num = P.polyadd(P.polymul(self.num, other.den), P.polymul(other.num, self.den))
        return RationalTF(tuple(num), tuple(P.polymul(self.den, other.den)))

    def __mul__(self, other: "RationalTF") -> "RationalTF":
        return RationalTF(
            tuple(P.polymul(self.num, other.num)),
            tuple(P.polymul(self.den, other.den)),
        )

    def __truediv__(self, other: "RationalTF") -> "RationalTF":
        return RationalTF(
            tuple(P.polymul(self.num, other.den)),
            tuple(P.polymul(self.den, other.num)),
        )

    def at(self, s: complex) -> complex:
        """Evaluate at s; at s = 0 common powers of s are cancelled first."""
        num = np.asarray(self.num, dtype=complex)
        den = np.asarray(self.den, dtype=complex)
        if s == 0:
            k = min(_zero_order(num), _zero_order(den))
            num, den = num[k:], den[k:]
            if len(den) == 0 or den[0] == 0:
                raise NumericError("transfer function has a pole at s = 0")
            return complex(num[0] / den[0]) if len(num) else 0j
        value_den = P.polyval(s, den)
        if value_den == 0:
            raise NumericError(f"transfer function has a pole at s = {s}")
        return complex(P.polyval(s, num) / value_den)


def _zero_order(coeffs: np.ndarray) -> int:
    nonzero = np.flatnonzero(coeffs)
    return int(nonzero[0]) if len(nonzero) else len(coeffs)


def delay_tf(spec: DelaySpec) -> RationalTF:
    if not spec.active:
        return RationalTF.const(1.0)
    half = spec.t_d / 2.0
    return RationalTF((1.0 + 0j, complex(-half)), (1.0 + 0j, complex(half)))


def delay_response(spec: DelaySpec, f: float) -> complex:
    """Frequency response of G_del at f Hz."""
    return delay_tf(spec).at(2j * math.pi * f)


# Single-axis equivalents -------------------------------------------------------


@dataclass(frozen=True)
class TransferEval:
    frequency: float
    value: complex


@dataclass(frozen=True)
class TheveninEquivalent:
    """d-axis: v_cd = gain·v*_cd − z_out·i_gd."""
    gain: complex
    z_out: complex


@dataclass(frozen=True)
class NortonEquivalent:
    """q-axis: i_lq = gain·i*_lq − y_out·v_cq."""
    gain: complex
    y_out: complex


@dataclass(frozen=True)
class AxisEquivalents:
    frequency: float
    thevenin_d: Optional[TheveninEquivalent]
    norton_q: NortonEquivalent


def norton_q_tf(sys: SystemParams, ctrl: ControlParams) -> tuple[RationalTF, RationalTF]:
    """q-axis current-loop Norton transfer functions (gain, admittance)."""
    z_pi = RationalTF.pi(PIGains(ctrl.gain("kpi_q"), ctrl.gain("kii_q"))) * delay_tf(ctrl.delay)
    loop = z_pi + RationalTF.poly(sys.r_f, sys.l_f)
    return z_pi / loop, RationalTF.const(1.0) / loop


def thevenin_d_tf(sys: SystemParams, ctrl: ControlParams) -> tuple[RationalTF, RationalTF]:
    """
    d-axis dual-loop Thevenin transfer functions (gain, output impedance).

    Eliminating v_id and i_ld from the d-axis law gives
        v_cd·D = Z_i·Z_v·v*_cd − (sL_f + R_f + Z_i)·i_gd
    with D = 1 + Z_i·Z_v + sC_f·(sL_f + R_f + Z_i).
    """
    z_i = RationalTF.pi(PIGains(ctrl.gain("kpi_d"), ctrl.gain("kii_d"))) * delay_tf(ctrl.delay)
    z_v = RationalTF.pi(PIGains(ctrl.gain("kpv_d"), ctrl.gain("kiv_d")))
    branch = RationalTF.poly(sys.r_f, sys.l_f) + z_i
    loop_gain = z_i * z_v
    denominator = RationalTF.const(1.0) + loop_gain + RationalTF.poly(0.0, sys.c_f) * branch
    return loop_gain / denominator, branch / denominator


def axis_equivalents(sys: SystemParams, ctrl: ControlParams, f: float) -> AxisEquivalents:
    """
    Evaluate the d-axis Thevenin and q-axis Norton equivalents at f Hz.

    The Thevenin part is None for modes without a d-axis voltage loop.
    """
    if not math.isfinite(f):
        raise NumericError(f"frequency must be finite, got {f}")
    s = 2j * math.pi * f

    gain_q, y_q = norton_q_tf(sys, ctrl)
    norton = NortonEquivalent(gain=gain_q.at(s), y_out=y_q.at(s))

    thevenin = None
    if ctrl.mode.d_voltage_loop:
        gain_d, z_d = thevenin_d_tf(sys, ctrl)
        thevenin = TheveninEquivalent(gain=gain_d.at(s), z_out=z_d.at(s))

    return AxisEquivalents(frequency=f, thevenin_d=thevenin, norton_q=norton)
