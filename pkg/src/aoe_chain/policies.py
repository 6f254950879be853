"""Control policies: the two benchmark heuristics and a tabular policy wrapper.

Every policy is a pure function ``State -> Action``.  :func:`policy_table`
turns any of them into an array of global action ids over the dense state
index, which is what the solver, evaluator and simulator consume.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .model import (
    ACTION_ID,
    ACTIONS,
    SWAP,
    WAIT,
    Action,
    InadmissibleActionError,
    ScenarioParams,
    State,
    admissible_actions,
    state_index,
)

POLICY_NAMES = ("rvi", "greedy", "wur")


def act_greedy(s: State) -> Action:
    """Greedy generation + swap-ASAP.

    Swap as soon as both links exist, otherwise request generation on every
    visible link, even one that already holds a pair.
    """
    if s.m12 >= 1 and s.m23 >= 1:
        return SWAP
    return Action(int(s.v12), int(s.v23), 0)


def act_wur(s: State, tau: int = 4, strict_wait: bool = True) -> Action:
    """Wait-Until-Ready.

    Rules, first match wins:

    1. a lone link older than ``tau`` is regenerated if its side is visible
       (generation drops the old pair), otherwise the controller waits;
    2. both links present: swap;
    3. a lone link: idle until the other link shows up.  With
       ``strict_wait=False`` the missing link is requested when visible;
    4. no link: generate on every visible link.
    """
    has12 = s.m12 >= 1
    has23 = s.m23 >= 1
    if has12 != has23:
        age = s.m12 if has12 else s.m23
        if age > tau:
            if has12:
                return Action(int(s.v12), 0, 0)
            return Action(0, int(s.v23), 0)
    if has12 and has23:
        return SWAP
    if has12:
        return WAIT if strict_wait else Action(0, int(s.v23), 0)
    if has23:
        return WAIT if strict_wait else Action(int(s.v12), 0, 0)
    return Action(int(s.v12), int(s.v23), 0)


class TabularPolicy:
    """Deterministic policy backed by one global action id per dense state index."""

    def __init__(self, params: ScenarioParams, actions: np.ndarray):
        idx = state_index(params)
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (len(idx),):
            raise ValueError(f"policy table must have {len(idx)} entries, got shape {actions.shape}")
        self.params = params
        self.actions = actions
        self._index = idx

    def __call__(self, s: State) -> Action:
        return act_optimal(s, self)


def act_optimal(s: State, table: TabularPolicy) -> Action:
    try:
        i = table._index.index(s)
    except ValueError:
        raise KeyError(f"state {tuple(s)} is not covered by the policy table") from None
    return ACTIONS[table.actions[i]]


def make_policy(name: str, params: ScenarioParams, solved=None, wur_strict_wait: bool = True) -> Callable[[State], Action]:
    """Policy callable for a CLI/CSV policy name.

    ``solved`` must be an RVI :class:`~aoe_chain.solver.SolveResult` (or a
    :class:`TabularPolicy`) when ``name == "rvi"``.
    """
    if name == "greedy":
        return act_greedy
    if name == "wur":
        tau = params.tau
        return lambda s: act_wur(s, tau, wur_strict_wait)
    if name == "rvi":
        if solved is None:
            raise ValueError("policy 'rvi' needs a solved policy table")
        return solved if isinstance(solved, TabularPolicy) else TabularPolicy(params, solved.policy)
    raise ValueError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")


def policy_table(params: ScenarioParams, policy) -> np.ndarray:
    """Global action id per dense state index for ``policy``.

    Accepts a callable, a :class:`TabularPolicy`, anything with a ``policy``
    array attribute (a solve result) or a raw id array.  Every action is
    checked for admissibility.
    """
    idx = state_index(params)
    if isinstance(policy, TabularPolicy):
        table = policy.actions
    elif hasattr(policy, "policy") and not callable(policy):
        table = np.asarray(policy.policy, dtype=np.int64)
    elif callable(policy):
        table = np.array([ACTION_ID[Action(*policy(s))] for s in idx.states], dtype=np.int64)
    else:
        table = np.asarray(policy, dtype=np.int64)
    if table.shape != (len(idx),):
        raise ValueError(f"policy table must have {len(idx)} entries, got shape {table.shape}")
    for i, k in enumerate(table):
        s = idx.state_of(i)
        if not 0 <= k < len(ACTIONS) or ACTIONS[k] not in admissible_actions(s):
            a = ACTIONS[k] if 0 <= k < len(ACTIONS) else k
            raise InadmissibleActionError(f"policy picks inadmissible action {a} in state {tuple(s)}")
    return table

