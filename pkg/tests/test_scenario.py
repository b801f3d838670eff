"""Tests for scenario parsing and configuration."""

import logging
import math

import pytest

from invstab.config import InvstabConfig, get_config
from invstab.errors import ConfigError
from invstab.params import ControlMode, DelayKind, reference_system_params
from invstab.scenario import (
    AdmittanceSpec,
    AnalysisKind,
    EquilibriumSpec,
    PolesSpec,
    SimulateSpec,
    log_frequency_grid,
    parse_batch,
    parse_scenario,
    read_document,
    render_scenario,
    with_pre_roll,
)


def _doc(*lines: str) -> str:
    return "\n".join(lines) + "\n"


@pytest.fixture
def config(clean_env):
    return get_config()


class TestReadDocument:
    """Tests for the line-level reader."""

    def test_sections_and_comments(self):
        doc = read_document(_doc("name = a  # trailing", "", "[system]", "scr = 2.0"))
        assert doc.values[""] == {"name": "a"}
        assert doc.values["system"] == {"scr": "2.0"}
        assert doc.line_of("system", "scr") == 4

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="line 3: duplicate key 'mode' \\(first set on line 1\\)") as exc_info:
            read_document(_doc("mode = gfl_pll", "analysis = poles", "mode = gfm_droop"))
        assert exc_info.value.line == 3

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="line 2: unknown section \\[plant\\]"):
            read_document(_doc("mode = gfl_pll", "[plant]"))

    def test_duplicate_section(self):
        with pytest.raises(ConfigError, match="duplicate section"):
            read_document(_doc("[system]", "[system]"))

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="line 1: expected 'key = value'"):
            read_document("mode gfl_pll\n")


class TestParseScenario:
    """Tests for parse_scenario and parse_batch."""

    def test_minimal_defaults(self, scenarios_path, config):
        scenario = parse_scenario((scenarios_path / "minimal.ini").read_text(), config)
        assert scenario.name == "scenario"
        assert scenario.mode is ControlMode.HYBRID_PLL
        assert scenario.system == reference_system_params()
        assert scenario.operating.p_target == pytest.approx(750.0)
        assert scenario.operating.q_target == 0.0
        assert scenario.control.v_cd_ref == pytest.approx(scenario.system.bases.v_peak)
        assert scenario.control.delay.kind is DelayKind.NONE
        assert isinstance(scenario.analysis, EquilibriumSpec)

    def test_unknown_key(self, config):
        with pytest.raises(ConfigError, match="line 4: unknown key 'kpv_x'"):
            parse_scenario(_doc("mode = gfm_droop", "analysis = equilibrium", "[control]", "kpv_x = 1"), config)

    def test_malformed_number(self, config):
        with pytest.raises(ConfigError, match="line 4: malformed number for 'r_g'"):
            parse_scenario(_doc("mode = gfm_droop", "analysis = equilibrium", "[system]", "r_g = abc"), config)

    def test_non_finite_number(self, config):
        with pytest.raises(ConfigError, match="line 4"):
            parse_scenario(_doc("mode = gfm_droop", "analysis = equilibrium", "[system]", "r_g = nan"), config)

    def test_missing_mode(self, config):
        with pytest.raises(ConfigError, match="missing required key 'mode'"):
            parse_scenario(_doc("analysis = equilibrium"), config)

    def test_missing_analysis(self, config):
        with pytest.raises(ConfigError, match="missing required key 'analysis'"):
            parse_scenario(_doc("mode = gfl_pll"), config)

    def test_mode_and_modes(self, config):
        with pytest.raises(ConfigError, match="either 'mode' or 'modes'"):
            parse_batch(_doc("mode = gfl_pll", "modes = gfl_pll, gfm_droop", "analysis = equilibrium"), config)

    def test_q_axis_current_gains(self, config):
        scenario = parse_scenario(
            _doc("mode = gfl_pll", "analysis = equilibrium", "[control]", "kpi_q = 8.5", "kii_q = 3.0"), config
        )
        assert (scenario.control.kpi_q, scenario.control.kii_q) == (8.5, 3.0)
        assert scenario.control.kpi_d == pytest.approx(320.0)

    def test_gain_not_used_by_mode_is_ignored(self, config, caplog):
        with caplog.at_level(logging.WARNING, logger="invstab"):
            scenario = parse_scenario(
                _doc("mode = gfl_pll", "analysis = equilibrium", "[control]", "kpv_d = 0.1"), config
            )
        assert scenario.control.kpv_d is None
        assert "line 4: gain 'kpv_d' is not used by mode gfl_pll" in caplog.text

    def test_key_not_for_analysis(self, config):
        with pytest.raises(ConfigError, match="key 'dt' does not apply to analysis poles"):
            parse_scenario(_doc("mode = gfl_pll", "analysis = poles", "[analysis]", "zg_pu = 0.3", "dt = 1e-5"), config)

    def test_one_line_description(self, config):
        with pytest.raises(ConfigError, match="give only one of l_g, scr, zg_pu"):
            parse_scenario(_doc("mode = gfl_pll", "analysis = equilibrium", "[system]", "scr = 2", "zg_pu = 0.5"), config)

    def test_zg_pu_sets_line(self, config):
        scenario = parse_scenario(_doc("mode = gfl_pll", "analysis = equilibrium", "[system]", "zg_pu = 0.5"), config)
        assert scenario.system == reference_system_params(scr=2.0)

    def test_infeasible_scr(self, config):
        with pytest.raises(ConfigError, match="line 4"):
            parse_scenario(_doc("mode = gfl_pll", "analysis = equilibrium", "[system]", "scr = 100"), config)

    def test_per_unit_reference(self, config):
        scenario = parse_scenario(
            _doc("mode = gfm_droop", "analysis = equilibrium", "[control]", "v_cd_ref_pu = 0.9"), config
        )
        assert scenario.control.v_cd_ref == pytest.approx(0.9 * scenario.system.bases.v_peak)

    def test_operating_si_and_pu(self, config):
        with pytest.raises(ConfigError, match="give either 'p_w' or 'p_pu'"):
            parse_scenario(
                _doc("mode = gfm_droop", "analysis = equilibrium", "[operating]", "p_w = 300", "p_pu = 0.2"), config
            )

    def test_pade_delay(self, config):
        scenario = parse_scenario(
            _doc("mode = gfl_pll", "analysis = equilibrium", "[control]", "delay = pade", "delay_td = 1e-4"), config
        )
        assert scenario.control.delay.kind is DelayKind.FIRST_ORDER_PADE
        assert scenario.control.delay.t_d == 1e-4

    def test_batch_names(self, scenarios_path, config):
        scenarios = parse_batch((scenarios_path / "pll_poles.ini").read_text(), config)
        assert [s.name for s in scenarios] == ["pll_poles_gfl_pll", "pll_poles_hybrid_pll"]
        assert [s.mode for s in scenarios] == [ControlMode.GFL_PLL, ControlMode.HYBRID_PLL]
        assert scenarios[0].analysis == scenarios[1].analysis
        assert len(scenarios[0].analysis.zg_values) == 17

    def test_batch_needs_parse_batch(self, scenarios_path, config):
        with pytest.raises(ConfigError, match="use parse_batch"):
            parse_scenario((scenarios_path / "droop_poles.ini").read_text(), config)

    def test_duplicate_mode(self, config):
        with pytest.raises(ConfigError, match="listed twice"):
            parse_batch(_doc("modes = gfl_pll, gfl_pll", "analysis = equilibrium"), config)


class TestAnalysisSpecs:
    """Tests for the resolved analysis section."""

    def test_poles(self, config):
        scenario = parse_scenario(_doc("mode = gfm_droop", "analysis = poles", "[analysis]", "zg_pu = 0.2, 0.15"), config)
        assert scenario.analysis == PolesSpec(zg_values=(0.2, 0.15))

    def test_poles_need_values(self, config):
        with pytest.raises(ConfigError, match="non-empty 'zg_pu'"):
            parse_scenario(_doc("mode = gfm_droop", "analysis = poles"), config)

    def test_explicit_frequencies_sorted(self, config):
        scenario = parse_scenario(
            _doc("mode = gfm_droop", "analysis = admittance", "[analysis]", "freqs_hz = 10, -1, 1"), config
        )
        assert scenario.analysis == AdmittanceSpec(freqs=(-1.0, 1.0, 10.0))

    def test_empty_frequency_list(self, config):
        with pytest.raises(ConfigError, match="line 4: empty frequency list"):
            parse_scenario(_doc("mode = gfm_droop", "analysis = admittance", "[analysis]", "freqs_hz = "), config)

    def test_default_grid(self, scenarios_path, config):
        scenarios = parse_batch((scenarios_path / "admittance.ini").read_text(), config)
        freqs = scenarios[0].analysis.freqs
        assert len(scenarios) == 4
        assert freqs[0] == pytest.approx(-5000.0)
        assert freqs[-1] == pytest.approx(5000.0)
        assert 0.1 in [pytest.approx(f) for f in freqs]

    def test_simulate(self, scenarios_path, config):
        scenarios = parse_batch((scenarios_path / "pll_scr_step.ini").read_text(), config)
        spec = scenarios[0].analysis
        assert isinstance(spec, SimulateSpec)
        assert spec.sim.t_end == pytest.approx(4.0)
        assert [(e.time, e.scr) for e in spec.sim.events] == [(1.0, 1.2)]
        assert spec.signal == "v_cd"
        assert spec.window_delay == 0.2

    def test_several_events_need_times(self, config):
        with pytest.raises(ConfigError, match="explicit 'event_times'"):
            parse_scenario(
                _doc("mode = gfl_pll", "analysis = simulate", "[analysis]", "event_scr = 1.3, 1.2"), config
            )

    def test_event_times(self, config):
        scenario = parse_scenario(
            _doc(
                "mode = gfl_pll", "analysis = simulate", "[analysis]",
                "event_scr = 1.3, 1.2", "event_times = 0.5, 1.0", "duration = 1.0",
            ),
            config,
        )
        assert scenario.analysis.sim.t_end == pytest.approx(2.0)
        assert [e.time for e in scenario.analysis.sim.events] == [0.5, 1.0]

    def test_with_pre_roll(self, scenarios_path, config):
        scenario = parse_batch((scenarios_path / "pll_scr_step.ini").read_text(), config)[1]
        shifted = with_pre_roll(scenario, 0.5)
        assert shifted.analysis.sim.events[0].time == pytest.approx(0.5)
        assert shifted.analysis.sim.t_end == pytest.approx(3.5)
        assert shifted.analysis.pre_roll == 0.5
        assert shifted.system == scenario.system

    def test_with_pre_roll_other_analysis(self, scenarios_path, config):
        scenario = parse_scenario((scenarios_path / "minimal.ini").read_text(), config)
        assert with_pre_roll(scenario, 0.5) is scenario


class TestRenderScenario:
    """Tests for render_scenario."""

    @pytest.mark.parametrize(
        "name", ["minimal.ini", "pll_poles.ini", "droop_poles.ini", "pll_scr_step.ini", "droop_scr_step.ini"]
    )
    def test_reparses_to_same_scenario(self, scenarios_path, config, name):
        for scenario in parse_batch((scenarios_path / name).read_text(), config):
            assert parse_scenario(render_scenario(scenario), config) == scenario

    def test_admittance_rendering(self, config):
        scenario = parse_scenario(
            _doc("mode = hybrid_droop", "analysis = admittance", "[analysis]", "freqs_hz = -1, 1", "passive = true"),
            config,
        )
        assert parse_scenario(render_scenario(scenario), config) == scenario

    def test_explicit_values(self, scenarios_path, config):
        text = render_scenario(parse_scenario((scenarios_path / "minimal.ini").read_text(), config))
        assert "analysis = equilibrium" in text
        assert "l_g = " in text
        assert "scr" not in text
        assert "kp_pll = " in text


class TestLogFrequencyGrid:
    def test_symmetric(self):
        freqs = log_frequency_grid(1.0, 100.0, 10)
        assert len(freqs) == 42
        assert freqs[:21] == tuple(-f for f in reversed(freqs[21:]))
        assert freqs[21] == pytest.approx(1.0)
        assert freqs[31] == pytest.approx(10.0)

    @pytest.mark.parametrize("args", [(0.0, 10.0, 10), (10.0, 1.0, 10), (1.0, 10.0, 0)])
    def test_invalid(self, args):
        with pytest.raises(ConfigError):
            log_frequency_grid(*args)


class TestConfig:
    """Tests for InvstabConfig."""

    def test_defaults(self, clean_env):
        config = InvstabConfig.from_env()
        assert config.dt == 20e-6
        assert config.record_decimation == 10
        assert config.pre_roll == 5.0
        assert config.delay_kind == "none"
        assert config.workers == 4

    def test_from_env(self, clean_env):
        clean_env.setenv("INVSTAB_DT", "1e-5")
        clean_env.setenv("INVSTAB_DELAY", "PADE")
        clean_env.setenv("INVSTAB_LOG_LEVEL", "debug")
        config = InvstabConfig.from_env()
        assert config.dt == 1e-5
        assert config.delay_kind == "pade"
        assert config.log_level == "DEBUG"

    @pytest.mark.parametrize(
        "name, value",
        [("INVSTAB_DT", "fast"), ("INVSTAB_DELAY", "exact"), ("INVSTAB_WORKERS", "0"), ("INVSTAB_LOG_LEVEL", "LOUD")],
    )
    def test_invalid_env(self, clean_env, name, value):
        clean_env.setenv(name, value)
        with pytest.raises(ConfigError, match=name):
            InvstabConfig.from_env()

    def test_overrides(self, clean_env):
        config = get_config({"workers": 2, "out_dir": None})
        assert config.workers == 2
        assert config.out_dir == "out"

    def test_env_delay_reaches_scenario(self, clean_env):
        clean_env.setenv("INVSTAB_DELAY", "pade")
        scenario = parse_scenario(_doc("mode = gfl_pll", "analysis = equilibrium"))
        assert scenario.control.delay.kind is DelayKind.FIRST_ORDER_PADE
        assert math.isclose(scenario.control.delay.t_d, 150e-6)
