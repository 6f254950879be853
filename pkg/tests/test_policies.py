import numpy as np
import pytest

from aoe_chain import (
    ScenarioParams,
    State,
    act_greedy,
    act_optimal,
    act_wur,
    admissible_actions,
    enumerate_states,
    evaluate_policy_exact,
    make_policy,
    policy_table,
    rvi_solve,
    SolveConfig,
    state_index,
)
from aoe_chain.model import InadmissibleActionError
from aoe_chain.policies import TabularPolicy

from conftest import ALWAYS_VISIBLE


class TestGreedy:
    def test_swap_when_both_present(self):
        assert act_greedy(State(1, 1, 2, 3, 9)) == (0, 0, 1)

    def test_generate_on_visible(self):
        assert act_greedy(State(1, 0, -1, 2, 9)) == (1, 0, 0)

    def test_nothing_to_do(self):
        assert act_greedy(State(0, 0, -1, -1, 9)) == (0, 0, 0)

    def test_regenerates_existing_link(self):
        assert act_greedy(State(1, 1, 3, -1, 4)) == (1, 1, 0)

    def test_never_waits_when_something_is_admissible(self, small_params):
        for s in enumerate_states(small_params):
            if len(admissible_actions(s)) > 1:
                assert act_greedy(s) != (0, 0, 0)


class TestWUR:
    def test_swap(self):
        assert act_wur(State(1, 1, 1, 4, 7), tau=4) == (0, 0, 1)

    def test_lone_link_requests_missing_when_not_strict(self):
        assert act_wur(State(0, 1, 3, -1, 7), tau=4, strict_wait=False) == (0, 1, 0)

    def test_lone_link_idles_when_strict(self):
        assert act_wur(State(0, 1, 3, -1, 7), tau=4) == (0, 0, 0)

    @pytest.mark.parametrize("strict", [True, False])
    def test_over_age_lone_link_regenerated(self, strict):
        assert act_wur(State(1, 0, 5, -1, 7), tau=4, strict_wait=strict) == (1, 0, 0)

    def test_over_age_lone_link_dark_side_waits(self):
        assert act_wur(State(0, 1, 5, -1, 7), tau=4) == (0, 0, 0)

    def test_no_links_generate_all_visible(self):
        assert act_wur(State(1, 1, -1, -1, 7)) == (1, 1, 0)
        assert act_wur(State(0, 1, -1, -1, 7)) == (0, 1, 0)

    def test_over_age_partner_still_swapped(self):
        assert act_wur(State(1, 1, 5, 1, 7), tau=4) == (0, 0, 1)

    @pytest.mark.parametrize("strict", [True, False])
    def test_never_regenerates_young_link(self, fig1_params, strict):
        for s in enumerate_states(fig1_params):
            a = act_wur(s, fig1_params.tau, strict)
            if 1 <= s.m12 <= fig1_params.tau:
                assert a.a12 == 0
            if 1 <= s.m23 <= fig1_params.tau:
                assert a.a23 == 0

    @pytest.mark.parametrize("strict", [True, False])
    def test_discard_semantics_under_full_visibility(self, strict):
        # With both sides always visible a lone link older than tau is dropped at once,
        # so no lone link of age > tau + 1 carries stationary mass.
        p = ScenarioParams(p_L=0.3, p_sw=0.8, P12=ALWAYS_VISIBLE, P23=ALWAYS_VISIBLE, m_star=7, delta_max=20, tau=4)
        ev = evaluate_policy_exact(p, lambda s: act_wur(s, p.tau, strict))
        idx = state_index(p)
        for i in np.flatnonzero(ev.stationary > 0):
            s = idx.state_of(i)
            assert max(s.m12, s.m23) <= p.tau + 1


def test_all_policies_closed_under_admissibility(fig1_params):
    res = rvi_solve(fig1_params)
    for name in ("rvi", "greedy", "wur"):
        pol = make_policy(name, fig1_params, res)
        for s in enumerate_states(fig1_params):
            assert pol(s) in admissible_actions(s)


def test_tabular_lookup(fig1_params):
    res = rvi_solve(fig1_params)
    table = TabularPolicy(fig1_params, res.policy)
    ref = State(0, 0, -1, -1, 1)
    assert act_optimal(ref, table) == res.action(ref)
    with pytest.raises(KeyError):
        act_optimal(State(0, 0, -1, -1, 99), table)


def test_cycle_optimum_swaps_on_fresh_pair(cycle_params):
    res = rvi_solve(cycle_params, SolveConfig(aperiodicity=0.5))
    table = TabularPolicy(cycle_params, res.policy)
    # delta_e = 1 is unreachable (resets are >= 2) and there regenerating has the larger bias
    for de in range(2, cycle_params.delta_max + 1):
        assert act_optimal(State(1, 1, 1, 1, de), table) == (0, 0, 1)


def test_policy_table_rejects_inadmissible(fig1_params):
    with pytest.raises(InadmissibleActionError):
        policy_table(fig1_params, lambda s: (0, 0, 1))


def test_make_policy_unknown_name(fig1_params):
    with pytest.raises(ValueError):
        make_policy("random", fig1_params)
