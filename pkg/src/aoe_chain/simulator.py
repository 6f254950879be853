"""Seeded Monte Carlo simulation of a policy on the repeater MDP.

Random streams: replication ``r`` of base seed ``b`` draws from
``PCG64(SeedSequence([b, r]))``.  The first two uniforms pick the initial
visibilities, after which every slot consumes exactly five uniforms in the
order ``v12, v23, gen12, gen23, swap`` whether or not they are needed.  An
event with probability ``p`` happens when its uniform is ``< p``.  The
compiled kernel and the pure-Python :func:`replay` follow the same rules, so
a replay reproduces replication 0 of a simulation slot by slot.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from .model import (
    ABSENT,
    ACTIONS,
    Action,
    InadmissibleActionError,
    ScenarioParams,
    State,
    age_link,
    check_action,
    check_state,
)
from .policies import policy_table

_ACTION_ARRAY = np.array(ACTIONS, dtype=np.int64)
_CHUNK = 1 << 16


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings.

    ``initial_state=None`` starts with both links absent, ``delta_e = 1`` and
    visibilities drawn from each chain's stationary law.  ``record_every``
    keeps every n-th AoE value of replication 0 (0 disables it).
    """

    horizon: int = 200_000
    warmup: int = 2_000
    replications: int = 20
    base_seed: int = 0
    initial_state: State | None = None
    record_every: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if not 0 <= self.warmup < self.horizon:
            raise ValueError("warmup must satisfy 0 <= warmup < horizon")
        if self.replications < 1:
            raise ValueError("replications must be positive")
        if not 0 <= self.base_seed < 2**64:
            raise ValueError("base_seed must be a 64-bit unsigned integer")
        if self.record_every < 0:
            raise ValueError("record_every must be nonnegative")


@dataclass
class SimReport:
    avg_aoe: float
    stderr: float
    swap_success_rate: float
    mean_reset_value: float
    per_replication: np.ndarray
    aoe_trajectory: np.ndarray | None = None


def stationary_visible(P) -> float:
    """Long-run probability that a two-state visibility chain is visible."""
    up, down = P[0][1], P[1][0]
    if up + down == 0:
        return 0.5
    return up / (up + down)


def replication_rng(base_seed: int, replication: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([base_seed, replication])))


def _initial_state(params: ScenarioParams, rng: np.random.Generator, fixed: State | None) -> State:
    u = rng.random(2)
    if fixed is not None:
        check_state(State(*fixed), params)
        return State(*fixed)
    v12 = int(u[0] < stationary_visible(params.P12))
    v23 = int(u[1] < stationary_visible(params.P23))
    return State(v12, v23, ABSENT, ABSENT, 1)


@njit(cache=True)
def _run_chunk(state, t0, U, table, actions, pv12, pv23, p_L, p_sw, m_star, dmax, warmup, acc, traj, stride):
    n_ages = m_star + 1
    for i in range(U.shape[0]):
        t = t0 + i
        v12 = state[0]
        v23 = state[1]
        m12 = state[2]
        m23 = state[3]
        de = state[4]
        k12 = 0 if m12 < 0 else m12
        k23 = 0 if m23 < 0 else m23
        idx = (((v12 * 2 + v23) * n_ages + k12) * n_ages + k23) * dmax + de - 1
        a = table[idx]
        a12 = actions[a, 0]
        a23 = actions[a, 1]
        asw = actions[a, 2]

        nv12 = 1 if U[i, 0] < pv12[v12] else 0
        nv23 = 1 if U[i, 1] < pv23[v23] else 0
        grow = de + 1 if de < dmax else dmax
        success = False
        if asw == 1:
            nm12 = -1
            nm23 = -1
            if U[i, 4] < p_sw:
                success = True
                nde = m12 + m23 if m12 + m23 < dmax else dmax
            else:
                nde = grow
        else:
            if a12 == 1:
                nm12 = 1 if U[i, 2] < p_L else -1
            elif m12 < 0 or m12 + 1 > m_star:
                nm12 = -1
            else:
                nm12 = m12 + 1
            if a23 == 1:
                nm23 = 1 if U[i, 3] < p_L else -1
            elif m23 < 0 or m23 + 1 > m_star:
                nm23 = -1
            else:
                nm23 = m23 + 1
            nde = grow
        if t >= warmup:
            acc[0] += nde
            acc[1] += 1
            if success:
                acc[2] += 1
                acc[3] += m12 + m23
        if stride > 0 and t % stride == 0:
            traj[t // stride] = nde
        state[0] = nv12
        state[1] = nv23
        state[2] = nm12
        state[3] = nm23
        state[4] = nde


def _simulate_replication(params, table, cfg: SimConfig, r: int, record: bool):
    rng = replication_rng(cfg.base_seed, r)
    state = np.array(_initial_state(params, rng, cfg.initial_state), dtype=np.int64)
    pv12 = np.array([params.P12[0][1], params.P12[1][1]])
    pv23 = np.array([params.P23[0][1], params.P23[1][1]])
    acc = np.zeros(4)
    stride = cfg.record_every if record else 0
    traj = np.zeros((cfg.horizon - 1) // stride + 1 if stride else 1, dtype=np.int64)
    for t0 in range(0, cfg.horizon, _CHUNK):
        U = rng.random((min(_CHUNK, cfg.horizon - t0), 5))
        _run_chunk(
            state, t0, U, table, _ACTION_ARRAY, pv12, pv23, params.p_L, params.p_sw,
            params.m_star, params.delta_max, cfg.warmup, acc, traj, stride,
        )
    return acc, (traj if stride else None)


def simulate(params: ScenarioParams, policy, cfg: SimConfig | None = None) -> SimReport:
    """Estimate the long-run average AoE of ``policy`` by simulation.

    Averages ``delta_e`` at the end of every slot ``t >= warmup`` within a
    replication; ``stderr`` is the standard error of the mean across
    replications (``inf`` for a single replication).
    """
    cfg = cfg or SimConfig()
    table = policy_table(params, policy)
    means = np.empty(cfg.replications)
    slots = successes = reset_sum = 0.0
    trajectory = None
    for r in range(cfg.replications):
        acc, traj = _simulate_replication(params, table, cfg, r, record=(r == 0 and cfg.record_every > 0))
        means[r] = acc[0] / acc[1]
        slots += acc[1]
        successes += acc[2]
        reset_sum += acc[3]
        if traj is not None:
            trajectory = traj
    stderr = float(np.std(means, ddof=1) / np.sqrt(cfg.replications)) if cfg.replications > 1 else float("inf")
    return SimReport(
        avg_aoe=float(means.mean()),
        stderr=stderr,
        swap_success_rate=successes / slots,
        mean_reset_value=reset_sum / successes if successes else float("nan"),
        per_replication=means,
        aoe_trajectory=trajectory,
    )


class SlotRecord(NamedTuple):
    t: int
    v12: int
    v23: int
    m12: int
    m23: int
    delta_e: int
    a12: int
    a23: int
    a_sw: int
    swap_success: int


def replay(
    params: ScenarioParams,
    policy,
    seed: int,
    horizon: int,
    initial_state: State | None = None,
) -> list[SlotRecord]:
    """Slot-by-slot trajectory of replication 0 for ``seed``.

    Each record holds the state at the start of slot ``t``, the action taken
    and whether a swap succeeded in that slot.  ``policy`` is any callable
    ``State -> Action``; an inadmissible choice aborts with the offending
    state and action.
    """
    rng = replication_rng(seed, 0)
    s = _initial_state(params, rng, initial_state)
    out: list[SlotRecord] = []
    for t0 in range(0, horizon, _CHUNK):
        U = rng.random((min(_CHUNK, horizon - t0), 5))
        for i, u in enumerate(U):
            a = Action(*policy(s))
            try:
                check_action(s, a)
            except InadmissibleActionError as exc:
                raise InadmissibleActionError(f"slot {t0 + i}: state {tuple(s)}, action {tuple(a)}: {exc}") from None
            v12 = int(u[0] < params.P12[s.v12][1])
            v23 = int(u[1] < params.P23[s.v23][1])
            grow = min(s.delta_e + 1, params.delta_max)
            success = 0
            if a.a_sw:
                m12 = m23 = ABSENT
                if u[4] < params.p_sw:
                    success = 1
                    de = min(s.m12 + s.m23, params.delta_max)
                else:
                    de = grow
            else:
                m12 = (1 if u[2] < params.p_L else ABSENT) if a.a12 else age_link(s.m12, params.m_star)
                m23 = (1 if u[3] < params.p_L else ABSENT) if a.a23 else age_link(s.m23, params.m_star)
                de = grow
            out.append(SlotRecord(t0 + i, *s, *a, success))
            s = State(v12, v23, m12, m23, de)
    return out


def write_trajectory(records, path, delimiter: str = ",") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(SlotRecord._fields)
        w.writerows(records)
