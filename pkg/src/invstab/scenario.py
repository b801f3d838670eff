"""
Scenario files: parsing, validation and resolution to model parameters.

A scenario is a flat `key = value` document with optional `[system]`,
`[control]`, `[operating]` and `[analysis]` sections; `#` starts a comment.
Values are SI unless the key ends in `_pu`. Anything not given falls back to
the reference gains and circuit on the weak grid (SCR 1.4).

    name = gfl_weak
    mode = gfl_pll
    analysis = poles

    [analysis]
    zg_pu = 0.2, 0.3, 0.4
"""

import math
from dataclasses import dataclass, field, fields as dc_fields
from enum import Enum
from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from .config import InvstabConfig, get_config
from .equilibrium import OperatingTarget
from .errors import ConfigError
from .observability import logger
from .params import (
    ControlMode,
    ControlParams,
    DEFAULT_P_PU,
    DEFAULT_SCR,
    DelayKind,
    DelaySpec,
    GAIN_FIELDS,
    Quantity,
    SystemParams,
    from_pu,
    required_gains,
    reference_control_params,
    with_scr,
)
from .timedomain import Event, SimConfig

SECTIONS = ("system", "control", "operating", "analysis")
TOP = ""

# Default admittance grid: log-spaced on both sides of 0 Hz
DEFAULT_F_MIN = 0.1
DEFAULT_F_MAX = 5000.0
DEFAULT_POINTS_PER_DECADE = 400

DEFAULT_DURATION = 3.0
DEFAULT_WINDOW_DELAY = 0.2
DEFAULT_LINEAR_LIMIT_PU = 0.2


class AnalysisKind(str, Enum):
    EQUILIBRIUM = "equilibrium"
    POLES = "poles"
    ADMITTANCE = "admittance"
    SIMULATE = "simulate"


# Raw section models -------------------------------------------------------------


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False, frozen=True)


class TopSection(_Section):
    name: str = "scenario"
    mode: Optional[ControlMode] = None
    modes: Optional[list[ControlMode]] = None
    analysis: AnalysisKind

    @field_validator("modes", mode="before")
    @classmethod
    def split_modes(cls, value):
        return _split_list(value)


class SystemSection(_Section):
    f_g: Optional[float] = None
    v_g: Optional[float] = None
    v_dc: Optional[float] = None
    c_dc: Optional[float] = None
    l_f: Optional[float] = None
    r_f: Optional[float] = None
    c_f: Optional[float] = None
    l_g: Optional[float] = None
    r_g: Optional[float] = None
    s_base: Optional[float] = None
    scr: Optional[float] = None
    zg_pu: Optional[float] = None


class ControlSection(_Section):
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
    v_cd_ref: Optional[float] = None
    v_cd_ref_pu: Optional[float] = None
    i_ld_ref: Optional[float] = None
    i_lq_ref: Optional[float] = None
    delay: Optional[DelayKind] = None
    delay_td: Optional[float] = None
    frame_decoupling: bool = False


class OperatingSection(_Section):
    p_pu: Optional[float] = None
    q_pu: Optional[float] = None
    p_w: Optional[float] = None
    q_var: Optional[float] = None


class AnalysisSection(_Section):
    # poles
    zg_pu: Optional[list[float]] = None
    # admittance
    freqs_hz: Optional[list[float]] = None
    f_min: Optional[float] = None
    f_max: Optional[float] = None
    points_per_decade: Optional[int] = None
    passive: Optional[bool] = None
    # simulate
    dt: Optional[float] = None
    record_decimation: Optional[int] = None
    pre_roll: Optional[float] = None
    duration: Optional[float] = None
    event_scr: Optional[list[float]] = None
    event_times: Optional[list[float]] = None
    signal: Optional[str] = None
    window_delay: Optional[float] = None
    linear_limit_pu: Optional[float] = None

    @field_validator("zg_pu", "freqs_hz", "event_scr", "event_times", mode="before")
    @classmethod
    def split_lists(cls, value):
        return _split_list(value)


SECTION_MODELS: dict[str, type[_Section]] = {
    TOP: TopSection,
    "system": SystemSection,
    "control": ControlSection,
    "operating": OperatingSection,
    "analysis": AnalysisSection,
}

ANALYSIS_KEYS = {
    AnalysisKind.EQUILIBRIUM: set(),
    AnalysisKind.POLES: {"zg_pu"},
    AnalysisKind.ADMITTANCE: {"freqs_hz", "f_min", "f_max", "points_per_decade", "passive"},
    AnalysisKind.SIMULATE: {
        "dt", "record_decimation", "pre_roll", "duration", "event_scr", "event_times",
        "signal", "window_delay", "linear_limit_pu",
    },
}


# Resolved analysis specs ----------------------------------------------------------


@dataclass(frozen=True)
class EquilibriumSpec:
    kind: AnalysisKind = field(default=AnalysisKind.EQUILIBRIUM, init=False)


@dataclass(frozen=True)
class PolesSpec:
    zg_values: tuple[float, ...]
    kind: AnalysisKind = field(default=AnalysisKind.POLES, init=False)


@dataclass(frozen=True)
class AdmittanceSpec:
    freqs: tuple[float, ...]
    passive: bool = False
    kind: AnalysisKind = field(default=AnalysisKind.ADMITTANCE, init=False)


@dataclass(frozen=True)
class SimulateSpec:
    sim: SimConfig
    pre_roll: float
    duration: float
    signal: str = "v_cd"
    window_delay: float = DEFAULT_WINDOW_DELAY
    linear_limit_pu: float = DEFAULT_LINEAR_LIMIT_PU
    kind: AnalysisKind = field(default=AnalysisKind.SIMULATE, init=False)


AnalysisSpec = Union[EquilibriumSpec, PolesSpec, AdmittanceSpec, SimulateSpec]


@dataclass(frozen=True)
class Scenario:
    """A fully resolved single-mode run."""
    name: str
    mode: ControlMode
    system: SystemParams
    control: ControlParams
    operating: OperatingTarget
    analysis: AnalysisSpec


# Parsing ---------------------------------------------------------------------------


@dataclass
class RawDocument:
    """Key/value pairs per section, with the line each came from."""
    values: dict[str, dict[str, str]] = field(default_factory=dict)
    lines: dict[str, dict[str, int]] = field(default_factory=dict)
    headers: dict[str, int] = field(default_factory=dict)

    def line_of(self, section: str, key: Optional[str] = None) -> int:
        if key is not None and key in self.lines.get(section, {}):
            return self.lines[section][key]
        return self.headers.get(section, 1)


def read_document(text: str) -> RawDocument:
    """Split a scenario document into sections of raw strings."""
    doc = RawDocument(values={TOP: {}}, lines={TOP: {}}, headers={TOP: 1})
    section = TOP
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", line=number)
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", line=number)
            if section in doc.headers:
                raise ConfigError(f"duplicate section [{section}]", line=number)
            doc.headers[section] = number
            doc.values[section] = {}
            doc.lines[section] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("missing key before '='", line=number)
        if key in doc.values[section]:
            first = doc.lines[section][key]
            raise ConfigError(f"duplicate key '{key}' (first set on line {first})", line=number)
        doc.values[section][key] = value
        doc.lines[section][key] = number
    return doc


def _validate_section(doc: RawDocument, section: str) -> _Section:
    model = SECTION_MODELS[section]
    try:
        return model.model_validate(doc.values.get(section, {}))
    except ValidationError as exc:
        error = exc.errors()[0]
        key = str(error["loc"][0]) if error["loc"] else None
        raise ConfigError(_describe(error, key), line=doc.line_of(section, key)) from None


def _describe(error: dict, key: Optional[str]) -> str:
    kind = error["type"]
    if kind == "extra_forbidden":
        return f"unknown key '{key}'"
    if kind == "missing":
        return f"missing required key '{key}'"
    if kind in ("float_parsing", "int_parsing", "float_type", "int_type", "finite_number", "int_from_float"):
        return f"malformed number for '{key}': {error.get('input')!r}"
    return f"invalid value for '{key}': {error['msg']}"


def parse_batch(text: str, config: Optional[InvstabConfig] = None) -> list[Scenario]:
    """
    Parse a scenario document into one Scenario per listed mode.

    Raises:
        ConfigError: unknown key or section, malformed number, duplicate key,
            or a key missing for the chosen mode/analysis; the message carries
            the line number.
    """
    config = config or get_config()
    doc = read_document(text)
    top: TopSection = _validate_section(doc, TOP)
    sections = {name: _validate_section(doc, name) for name in SECTIONS}

    if top.mode is not None and top.modes is not None:
        raise ConfigError("give either 'mode' or 'modes', not both", line=doc.line_of(TOP, "modes"))
    modes = top.modes if top.modes is not None else ([top.mode] if top.mode is not None else [])
    if not modes:
        raise ConfigError("missing required key 'mode'", line=doc.line_of(TOP))
    if len(set(modes)) != len(modes):
        raise ConfigError("a mode is listed twice", line=doc.line_of(TOP, "modes"))

    _check_analysis_keys(doc, sections["analysis"], top.analysis)
    _warn_unused_gains(doc, sections["control"], modes)

    system = _resolve_system(doc, sections["system"])
    operating = _resolve_operating(doc, sections["operating"], system)
    analysis = _resolve_analysis(doc, sections["analysis"], top.analysis, config)

    scenarios = []
    for mode in modes:
        control = _resolve_control(doc, sections["control"], mode, system, config)
        name = top.name if len(modes) == 1 else f"{top.name}_{mode.value}"
        scenarios.append(
            Scenario(name=name, mode=mode, system=system, control=control, operating=operating, analysis=analysis)
        )
    return scenarios


def parse_scenario(text: str, config: Optional[InvstabConfig] = None) -> Scenario:
    """Parse a single-mode scenario document."""
    scenarios = parse_batch(text, config)
    if len(scenarios) != 1:
        raise ConfigError(f"document lists {len(scenarios)} modes; use parse_batch")
    return scenarios[0]


def _check_analysis_keys(doc: RawDocument, section: AnalysisSection, kind: AnalysisKind):
    allowed = ANALYSIS_KEYS[kind]
    for key in sorted(section.model_fields_set, key=lambda k: doc.line_of("analysis", k)):
        if key not in allowed:
            raise ConfigError(
                f"key '{key}' does not apply to analysis {kind.value}", line=doc.line_of("analysis", key)
            )


def _warn_unused_gains(doc: RawDocument, section: ControlSection, modes: list[ControlMode]):
    used = set().union(*(required_gains(mode) for mode in modes))
    for key in sorted(section.model_fields_set & set(GAIN_FIELDS)):
        if key not in used:
            names = ", ".join(mode.value for mode in modes)
            logger.warning(
                f"line {doc.line_of('control', key)}: gain '{key}' is not used by mode {names}, ignoring it"
            )


def _resolve_system(doc: RawDocument, section: SystemSection) -> SystemParams:
    given = {f.name: getattr(section, f.name) for f in dc_fields(SystemParams) if getattr(section, f.name) is not None}
    line_keys = [k for k in ("l_g", "scr", "zg_pu") if getattr(section, k) is not None]
    if len(line_keys) > 1:
        raise ConfigError(
            f"give only one of l_g, scr, zg_pu (got {', '.join(line_keys)})",
            line=doc.line_of("system", line_keys[-1]),
        )
    try:
        system = SystemParams(**given)
        if section.scr is not None:
            system = with_scr(system, section.scr)
        elif section.zg_pu is not None:
            if section.zg_pu <= 0:
                raise ConfigError(f"zg_pu must be positive, got {section.zg_pu}")
            system = with_scr(system, 1.0 / section.zg_pu)
        elif section.l_g is None:
            system = with_scr(system, DEFAULT_SCR)
    except ConfigError as exc:
        named = [k for k in given if str(exc).startswith(k)]
        key = named[0] if named else (line_keys[0] if line_keys else None)
        raise ConfigError(str(exc), line=doc.line_of("system", key)) from None
    return system


def _resolve_operating(doc: RawDocument, section: OperatingSection, system: SystemParams) -> OperatingTarget:
    for si, per_unit in (("p_w", "p_pu"), ("q_var", "q_pu")):
        if getattr(section, si) is not None and getattr(section, per_unit) is not None:
            raise ConfigError(f"give either '{si}' or '{per_unit}'", line=doc.line_of("operating", per_unit))
    bases = system.bases
    if section.p_w is not None:
        p = section.p_w
    else:
        p = from_pu(section.p_pu if section.p_pu is not None else DEFAULT_P_PU, Quantity.W, bases)
    if section.q_var is not None:
        q = section.q_var
    else:
        q = from_pu(section.q_pu or 0.0, Quantity.W, bases)
    return OperatingTarget(p_target=p, q_target=q)


def _resolve_control(
    doc: RawDocument,
    section: ControlSection,
    mode: ControlMode,
    system: SystemParams,
    config: InvstabConfig,
) -> ControlParams:
    if section.v_cd_ref is not None and section.v_cd_ref_pu is not None:
        raise ConfigError("give either 'v_cd_ref' or 'v_cd_ref_pu'", line=doc.line_of("control", "v_cd_ref_pu"))
    bases = system.bases
    overrides: dict = {
        name: getattr(section, name)
        for name in required_gains(mode)
        if getattr(section, name) is not None
    }
    if section.v_cd_ref is not None:
        overrides["v_cd_ref"] = section.v_cd_ref
    elif section.v_cd_ref_pu is not None:
        overrides["v_cd_ref"] = from_pu(section.v_cd_ref_pu, Quantity.V, bases)
    for name in ("i_ld_ref", "i_lq_ref"):
        if getattr(section, name) is not None:
            overrides[name] = getattr(section, name)
    overrides["frame_decoupling"] = section.frame_decoupling

    kind = section.delay if section.delay is not None else DelayKind(config.delay_kind)
    t_d = section.delay_td if section.delay_td is not None else config.delay_td
    try:
        delay = DelaySpec(kind=kind, t_d=t_d if kind is DelayKind.FIRST_ORDER_PADE else 0.0)
        return reference_control_params(mode, bases=bases, delay=delay, **overrides)
    except ConfigError as exc:
        raise ConfigError(str(exc), line=doc.line_of("control")) from None


def log_frequency_grid(f_min: float, f_max: float, points_per_decade: int) -> tuple[float, ...]:
    """Log-spaced frequencies on ±[f_min, f_max], ascending."""
    if not (0 < f_min < f_max) or points_per_decade < 1:
        raise ConfigError("frequency grid needs 0 < f_min < f_max and points_per_decade >= 1")
    count = max(2, int(round(math.log10(f_max / f_min) * points_per_decade)) + 1)
    positive = np.logspace(math.log10(f_min), math.log10(f_max), count)
    return tuple(float(f) for f in np.concatenate([-positive[::-1], positive]))


def _resolve_analysis(
    doc: RawDocument,
    section: AnalysisSection,
    kind: AnalysisKind,
    config: InvstabConfig,
) -> AnalysisSpec:
    def fail(message: str, key: Optional[str] = None):
        raise ConfigError(message, line=doc.line_of("analysis", key))

    if kind is AnalysisKind.EQUILIBRIUM:
        return EquilibriumSpec()

    if kind is AnalysisKind.POLES:
        if not section.zg_pu:
            fail("analysis poles needs a non-empty 'zg_pu' list", "zg_pu")
        if any(z <= 0 for z in section.zg_pu):
            fail("zg_pu values must be positive", "zg_pu")
        return PolesSpec(zg_values=tuple(section.zg_pu))

    if kind is AnalysisKind.ADMITTANCE:
        if section.freqs_hz is not None:
            if not section.freqs_hz:
                fail("empty frequency list", "freqs_hz")
            if {"f_min", "f_max", "points_per_decade"} & section.model_fields_set:
                fail("give either 'freqs_hz' or a log grid, not both", "freqs_hz")
            freqs = tuple(sorted(section.freqs_hz))
        else:
            freqs = log_frequency_grid(
                section.f_min if section.f_min is not None else DEFAULT_F_MIN,
                section.f_max if section.f_max is not None else DEFAULT_F_MAX,
                section.points_per_decade if section.points_per_decade is not None else DEFAULT_POINTS_PER_DECADE,
            )
        return AdmittanceSpec(freqs=freqs, passive=bool(section.passive))

    pre_roll = section.pre_roll if section.pre_roll is not None else config.pre_roll
    duration = section.duration if section.duration is not None else DEFAULT_DURATION
    if pre_roll <= 0 or duration <= 0:
        fail("pre_roll and duration must be positive", "pre_roll" if pre_roll <= 0 else "duration")
    scrs = section.event_scr or []
    if section.event_times is not None:
        if len(section.event_times) != len(scrs):
            fail("event_times and event_scr must have the same length", "event_times")
        times = list(section.event_times)
    elif len(scrs) > 1:
        fail("several events need explicit 'event_times'", "event_scr")
    else:
        times = [pre_roll] * len(scrs)
    t_end = (times[-1] if times else pre_roll) + duration

    try:
        sim = SimConfig(
            dt=section.dt if section.dt is not None else config.dt,
            t_end=t_end,
            record_decimation=(
                section.record_decimation if section.record_decimation is not None else config.record_decimation
            ),
            events=tuple(Event(time=t, scr=s) for t, s in zip(times, scrs)),
        )
    except ConfigError as exc:
        fail(str(exc), "dt")
    return SimulateSpec(
        sim=sim,
        pre_roll=pre_roll,
        duration=duration,
        signal=section.signal or "v_cd",
        window_delay=section.window_delay if section.window_delay is not None else DEFAULT_WINDOW_DELAY,
        linear_limit_pu=(
            section.linear_limit_pu if section.linear_limit_pu is not None else DEFAULT_LINEAR_LIMIT_PU
        ),
    )


def with_pre_roll(scenario: Scenario, pre_roll: float) -> Scenario:
    """Shift a simulate scenario's events so the first one fires at pre_roll."""
    spec = scenario.analysis
    if not isinstance(spec, SimulateSpec):
        return scenario
    if pre_roll <= 0:
        raise ConfigError(f"pre_roll must be positive, got {pre_roll}")
    shift = pre_roll - (spec.sim.events[0].time if spec.sim.events else spec.pre_roll)
    events = tuple(Event(time=e.time + shift, scr=e.scr) for e in spec.sim.events)
    sim = SimConfig(
        dt=spec.sim.dt,
        t_end=spec.sim.t_end + shift,
        record_decimation=spec.sim.record_decimation,
        events=events,
    )
    return Scenario(
        name=scenario.name,
        mode=scenario.mode,
        system=scenario.system,
        control=scenario.control,
        operating=scenario.operating,
        analysis=SimulateSpec(
            sim=sim,
            pre_roll=pre_roll,
            duration=spec.duration,
            signal=spec.signal,
            window_delay=spec.window_delay,
            linear_limit_pu=spec.linear_limit_pu,
        ),
    )


# Rendering -------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def render_scenario(scenario: Scenario) -> str:
    """
    Write a resolved scenario back as a document.

    Every value is explicit (l_g rather than an SCR, SI references, the
    mode's full gain set), so parsing the result rebuilds the same Scenario
    without relying on defaults.
    """
    sys, ctrl, spec = scenario.system, scenario.control, scenario.analysis
    lines = [
        f"name = {scenario.name}",
        f"mode = {scenario.mode.value}",
        f"analysis = {spec.kind.value}",
        "",
        "[system]",
    ]
    lines += [f"{f.name} = {_fmt(float(getattr(sys, f.name)))}" for f in dc_fields(SystemParams)]

    lines += ["", "[control]"]
    lines += [f"{name} = {_fmt(float(ctrl.gain(name)))}" for name in required_gains(scenario.mode)]
    lines += [
        f"v_cd_ref = {_fmt(float(ctrl.v_cd_ref))}",
        f"i_ld_ref = {_fmt(float(ctrl.i_ld_ref))}",
        f"i_lq_ref = {_fmt(float(ctrl.i_lq_ref))}",
        f"delay = {_fmt(ctrl.delay.kind)}",
        f"delay_td = {_fmt(float(ctrl.delay.t_d))}",
        f"frame_decoupling = {_fmt(ctrl.frame_decoupling)}",
    ]

    lines += [
        "",
        "[operating]",
        f"p_w = {_fmt(float(scenario.operating.p_target))}",
        f"q_var = {_fmt(float(scenario.operating.q_target))}",
        "",
        "[analysis]",
    ]
    if isinstance(spec, PolesSpec):
        lines.append(f"zg_pu = {_fmt(spec.zg_values)}")
    elif isinstance(spec, AdmittanceSpec):
        lines.append(f"freqs_hz = {_fmt(spec.freqs)}")
        lines.append(f"passive = {_fmt(spec.passive)}")
    elif isinstance(spec, SimulateSpec):
        lines += [
            f"dt = {_fmt(spec.sim.dt)}",
            f"record_decimation = {spec.sim.record_decimation}",
            f"pre_roll = {_fmt(spec.pre_roll)}",
            f"duration = {_fmt(spec.duration)}",
            f"signal = {spec.signal}",
            f"window_delay = {_fmt(spec.window_delay)}",
            f"linear_limit_pu = {_fmt(spec.linear_limit_pu)}",
        ]
        if spec.sim.events:
            lines.append(f"event_scr = {_fmt(tuple(e.scr for e in spec.sim.events))}")
            lines.append(f"event_times = {_fmt(tuple(e.time for e in spec.sim.events))}")
    return "\n".join(lines) + "\n"
