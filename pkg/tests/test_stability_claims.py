"""
End-to-end stability behaviour of the four controls.

These run full sweeps and multi-second simulations; select them with
`pytest -m slow`.
"""

import numpy as np
import pytest

from invstab.commands import cmd_simulate
from invstab.config import get_config
from invstab.equilibrium import OperatingTarget
from invstab.params import ControlMode, from_pu, Quantity, reference_control_params, reference_system_params
from invstab.scenario import parse_batch
from invstab.smallsignal import pole_sweep

pytestmark = pytest.mark.slow

# Weak-grid PLL oscillation of the grid-following control
GFL_FREQ_HZ = 38.8


def _sweep(mode, zg_values):
    sys = reference_system_params()
    ctrl = reference_control_params(mode, bases=sys.bases)
    target = OperatingTarget(p_target=from_pu(0.5, Quantity.W, sys.bases))
    return pole_sweep(mode, sys, ctrl, target, zg_values)


def _first_unstable(pole_map):
    for z_g, flag, info in zip(pole_map.sweep_values, pole_map.stability_flags, pole_map.dominant):
        if flag is False:
            return z_g, info
    return None


@pytest.fixture
def config(clean_env):
    return get_config()


class TestPoleSweeps:
    """Pole maps as the grid strength changes."""

    def test_gfl_loses_stability_on_weak_grid(self):
        pole_map = _sweep(ControlMode.GFL_PLL, np.linspace(0.2, 0.9, 17))
        assert pole_map.stability_flags[0] is True
        assert pole_map.stability_flags[-1] is False

        z_g, info = _first_unstable(pole_map)
        assert 0.7 < z_g < 0.8
        assert info.freq > 0
        assert pole_map.dominant[-1].freq == pytest.approx(GFL_FREQ_HZ, rel=0.2)

    def test_hybrid_pll_stays_stable(self):
        pole_map = _sweep(ControlMode.HYBRID_PLL, np.linspace(0.2, 0.9, 17))
        assert all(flag is True for flag in pole_map.stability_flags)

    def test_gfm_loses_stability_on_strong_grid(self):
        pole_map = _sweep(ControlMode.GFM_DROOP, np.linspace(0.2, 0.14, 13))
        assert pole_map.stability_flags[0] is True
        assert pole_map.stability_flags[-1] is False

        z_g, info = _first_unstable(pole_map)
        assert 0.14 <= z_g <= 0.15
        assert info.sigma > 0
        assert pole_map.dominant[-1].sigma > 0

    def test_hybrid_droop_stays_stable(self):
        pole_map = _sweep(ControlMode.HYBRID_DROOP, np.linspace(0.2, 0.14, 13))
        assert all(flag is True for flag in pole_map.stability_flags)


class TestGridStepSimulations:
    """SCR steps with a 1 s pre-roll and 3 s after the event."""

    def _run(self, scenarios_path, config, name):
        results = {}
        for scenario in parse_batch((scenarios_path / name).read_text(), config):
            results[scenario.mode] = cmd_simulate(scenario).summary
        return results

    def test_weak_grid_step(self, scenarios_path, config):
        results = self._run(scenarios_path, config, "pll_scr_step.ini")

        gfl = results[ControlMode.GFL_PLL]
        assert gfl["eig_sigma_per_s"] > 0
        assert gfl["eig_freq_hz"] > 0
        assert gfl["diverged_at_s"] is not None or gfl["sigma_per_s"] > 0

        hybrid = results[ControlMode.HYBRID_PLL]
        assert hybrid["diverged_at_s"] is None
        assert hybrid["eig_sigma_per_s"] < 0
        assert hybrid["status"] in ("settled", "no_oscillation")

    def test_strong_grid_step(self, scenarios_path, config):
        results = self._run(scenarios_path, config, "droop_scr_step.ini")

        gfm = results[ControlMode.GFM_DROOP]
        assert gfm["eig_sigma_per_s"] > 0

        hybrid = results[ControlMode.HYBRID_DROOP]
        assert hybrid["diverged_at_s"] is None
        assert hybrid["eig_sigma_per_s"] < 0
