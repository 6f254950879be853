import pytest

from aoe_chain import ScenarioParams

MOSTLY_VISIBLE = ((0.3, 0.7), (0.3, 0.7))
MODERATE = ((0.6, 0.4), (0.4, 0.6))
ALWAYS_VISIBLE = ((0.0, 1.0), (0.0, 1.0))


@pytest.fixture
def fig1_params():
    return ScenarioParams(p_L=0.5, p_sw=0.8, P12=MOSTLY_VISIBLE, P23=MOSTLY_VISIBLE)


@pytest.fixture
def small_params():
    return ScenarioParams(p_L=0.4, p_sw=0.7, P12=MOSTLY_VISIBLE, P23=MODERATE, m_star=2, delta_max=6)


@pytest.fixture
def cycle_params():
    return ScenarioParams(p_L=1.0, p_sw=1.0, P12=ALWAYS_VISIBLE, P23=ALWAYS_VISIBLE, m_star=3, delta_max=8)
