import numpy as np
import pytest

from aoe_chain import ScenarioParams, State, act_greedy, act_wur, evaluate_policy_exact, rvi_solve
from aoe_chain.model import InadmissibleActionError
from aoe_chain.simulator import SimConfig, replay, simulate, stationary_visible, write_trajectory

from conftest import ALWAYS_VISIBLE, MODERATE, MOSTLY_VISIBLE

SHORT = SimConfig(horizon=40_000, warmup=500, replications=8, base_seed=11)


def cyclic_policy(s):
    if s.m12 >= 1 and s.m23 >= 1:
        return (0, 0, 1)
    return (s.v12, s.v23, 0)


def test_no_generation_sits_at_cap(fig1_params):
    p = fig1_params.replace(p_L=0.0)
    rep = simulate(p, act_greedy, SimConfig(horizon=2000, warmup=100, replications=3))
    assert rep.avg_aoe == p.delta_max
    assert rep.stderr == 0.0
    assert rep.swap_success_rate == 0.0


def test_cycle(cycle_params):
    rep = simulate(cycle_params, cyclic_policy, SimConfig(horizon=5000, warmup=10, replications=4))
    assert rep.avg_aoe == pytest.approx(2.5, abs=1e-3)
    assert rep.mean_reset_value == 2.0


@pytest.mark.parametrize("policy", [act_greedy, act_wur])
def test_mc_matches_exact(fig1_params, policy):
    exact = evaluate_policy_exact(fig1_params, policy).avg_aoe
    rep = simulate(fig1_params, policy, SHORT)
    assert abs(rep.avg_aoe - exact) < 3 * rep.stderr


def test_mc_matches_exact_for_rvi_policy():
    p = ScenarioParams(p_L=0.3, p_sw=0.6, P12=MODERATE, P23=MOSTLY_VISIBLE, m_star=4, delta_max=24)
    res = rvi_solve(p)
    rep = simulate(p, res, SHORT)
    assert abs(rep.avg_aoe - (-res.gain)) < 3 * rep.stderr


def test_seed_determinism(fig1_params):
    a = simulate(fig1_params, act_greedy, SHORT)
    b = simulate(fig1_params, act_greedy, SHORT)
    assert np.array_equal(a.per_replication, b.per_replication)
    c = simulate(fig1_params, act_greedy, SimConfig(horizon=40_000, warmup=500, replications=8, base_seed=12))
    assert not np.array_equal(a.per_replication, c.per_replication)


def test_replications_are_prefix_stable(fig1_params):
    a = simulate(fig1_params, act_greedy, SHORT)
    b = simulate(fig1_params, act_greedy, SimConfig(horizon=40_000, warmup=500, replications=3, base_seed=11))
    assert np.array_equal(a.per_replication[:3], b.per_replication)


def test_compiled_kernel_matches_python_replay(fig1_params):
    horizon = 3000
    recs = replay(fig1_params, act_greedy, seed=5, horizon=horizon + 1)
    rep = simulate(fig1_params, act_greedy, SimConfig(horizon=horizon, warmup=0, replications=1, base_seed=5))
    assert rep.per_replication[0] == pytest.approx(np.mean([r.delta_e for r in recs[1:]]), abs=1e-12)


def test_recorded_trajectory_matches_replay(fig1_params):
    recs = replay(fig1_params, act_wur, seed=3, horizon=1001)
    rep = simulate(fig1_params, act_wur, SimConfig(horizon=1000, warmup=0, replications=2, base_seed=3, record_every=10))
    assert list(rep.aoe_trajectory) == [recs[t + 1].delta_e for t in range(0, 1000, 10)]


def test_replay_reproducible(fig1_params):
    assert replay(fig1_params, act_greedy, 42, 500) == replay(fig1_params, act_greedy, 42, 500)


def test_replay_invariants(fig1_params):
    recs = replay(fig1_params, act_greedy, 42, 20_000)
    prev = None
    for r in recs:
        assert 1 <= r.delta_e <= fig1_params.delta_max
        assert r.m12 != 0 and r.m23 != 0 and r.m12 <= fig1_params.m_star and r.m23 <= fig1_params.m_star
        if r.a_sw:
            assert r.m12 >= 1 and r.m23 >= 1
        if prev is not None:
            if prev.swap_success:
                assert r.delta_e == min(prev.m12 + prev.m23, fig1_params.delta_max)
            else:
                assert r.delta_e == min(prev.delta_e + 1, fig1_params.delta_max)
        prev = r


def test_visibility_marginal_converges(fig1_params):
    p = fig1_params.replace(P23=MODERATE)
    recs = replay(p, act_greedy, 9, 100_000)
    v12 = np.array([r.v12 for r in recs], dtype=float)
    v23 = np.array([r.v23 for r in recs], dtype=float)
    # batch means for the standard error of a correlated series
    for v, P in ((v12, p.P12), (v23, p.P23)):
        batches = v.reshape(100, -1).mean(axis=1)
        se = batches.std(ddof=1) / np.sqrt(len(batches))
        assert abs(v.mean() - stationary_visible(P)) < 3 * se


def test_stationary_visible():
    assert stationary_visible(MOSTLY_VISIBLE) == pytest.approx(0.7)
    assert stationary_visible(ALWAYS_VISIBLE) == 1.0


def test_inadmissible_policy_aborts(fig1_params):
    with pytest.raises(InadmissibleActionError, match="state"):
        simulate(fig1_params, lambda s: (1, 1, 0), SHORT)
    with pytest.raises(InadmissibleActionError, match="slot"):
        replay(fig1_params, lambda s: (0, 0, 1), 1, 10, initial_state=State(1, 1, -1, -1, 1))


def test_fixed_initial_state(fig1_params):
    s0 = State(1, 1, 2, 3, 7)
    recs = replay(fig1_params, act_greedy, 1, 3, initial_state=s0)
    assert recs[0][1:6] == tuple(s0)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(horizon=10, warmup=10)
    with pytest.raises(ValueError):
        SimConfig(base_seed=-1)


def test_trajectory_dump(tmp_path, fig1_params):
    out = tmp_path / "traj.csv"
    write_trajectory(replay(fig1_params, act_greedy, 1, 5), out)
    lines = out.read_text().splitlines()
    assert lines[0] == "t,v12,v23,m12,m23,delta_e,a12,a23,a_sw,swap_success"
    assert len(lines) == 6
