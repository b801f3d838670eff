"""Test configuration and shared fixtures."""

import pytest
from pathlib import Path

from invstab.equilibrium import default_target, solve
from invstab.params import ControlMode, reference_control_params, reference_system_params
from invstab.plant import assemble


@pytest.fixture
def fixtures_path():
    """Path to fixture files."""
    return Path(__file__).parent.parent / "fixtures"


@pytest.fixture
def scenarios_path(fixtures_path):
    """Path to scenario documents."""
    return fixtures_path / "scenarios"


@pytest.fixture
def weak_system():
    """Reference circuit on the SCR 1.4 grid."""
    return reference_system_params()


@pytest.fixture
def strong_system():
    """Reference circuit on the SCR 6 grid."""
    return reference_system_params(scr=6.0)


@pytest.fixture(params=list(ControlMode), ids=lambda m: m.value)
def mode(request):
    """Every control mode."""
    return request.param


@pytest.fixture
def control(mode, weak_system):
    """Reference controller for the mode."""
    return reference_control_params(mode, bases=weak_system.bases)


@pytest.fixture
def model(mode, weak_system, control):
    """Closed-loop model of the mode on the weak grid."""
    return assemble(mode, weak_system, control)


@pytest.fixture
def equilibrium(model):
    """Solved desk-scale operating point (0.5 p.u., unity power factor)."""
    return solve(model, default_target(model))


@pytest.fixture
def hybrid_pll_model(weak_system):
    return assemble(
        ControlMode.HYBRID_PLL,
        weak_system,
        reference_control_params(ControlMode.HYBRID_PLL, bases=weak_system.bases),
    )


@pytest.fixture
def clean_env(monkeypatch):
    """Environment without INVSTAB_* overrides."""
    for name in (
        "INVSTAB_OUT", "INVSTAB_DT", "INVSTAB_DECIMATION", "INVSTAB_PRE_ROLL",
        "INVSTAB_DELAY", "INVSTAB_DELAY_TD", "INVSTAB_WORKERS", "INVSTAB_LOG_LEVEL",
    ):
        monkeypatch.delenv(name, raising=False)
    return monkeypatch
