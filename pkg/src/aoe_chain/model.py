"""Satellite repeater-chain MDP: states, actions, admissibility and the transition law.

A state is ``(v12, v23, m12, m23, delta_e)``: the visibility of both
ground-satellite links, the ages of both elementary links (``-1`` when
absent) and the Age of Entanglement of the end-to-end link.  Everything in
here is a pure function of :class:`ScenarioParams`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

ABSENT = -1


class State(NamedTuple):
    v12: int
    v23: int
    m12: int
    m23: int
    delta_e: int


class Action(NamedTuple):
    a12: int
    a23: int
    a_sw: int


WAIT = Action(0, 0, 0)
SWAP = Action(0, 0, 1)
# Global action order; admissible_actions() returns a subsequence of it.
ACTIONS: tuple[Action, ...] = (
    WAIT,
    Action(0, 1, 0),
    Action(1, 0, 0),
    Action(1, 1, 0),
    SWAP,
)
ACTION_ID = {a: i for i, a in enumerate(ACTIONS)}
N_ACTIONS = len(ACTIONS)


class InadmissibleActionError(ValueError):
    """Raised when an action violates one of the admissibility gates."""


def _as_matrix(m) -> tuple[tuple[float, float], tuple[float, float]]:
    arr = np.asarray(m, dtype=float)
    if arr.shape != (2, 2):
        raise ValueError(f"visibility matrix must be 2x2, got shape {arr.shape}")
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValueError(f"visibility matrix entries must lie in [0, 1]: {arr.tolist()}")
    if np.any(np.abs(arr.sum(axis=1) - 1.0) > 1e-12):
        raise ValueError(f"visibility matrix rows must sum to 1: {arr.tolist()}")
    return (tuple(float(x) for x in arr[0]), tuple(float(x) for x in arr[1]))


@dataclass(frozen=True)
class ScenarioParams:
    """All model constants of one scenario.

    ``P12``/``P23`` are row-stochastic 2x2 matrices indexed ``[v_t, v_{t+1}]``
    with 0 = invisible, 1 = visible.  ``T2`` only feeds :func:`fidelity`;
    ``tau`` is the Wait-Until-Ready discard age.
    """

    p_L: float
    p_sw: float
    P12: tuple = ((0.3, 0.7), (0.3, 0.7))
    P23: tuple = ((0.3, 0.7), (0.3, 0.7))
    m_star: int = 5
    delta_max: int = 30
    T2: float = 10.0
    tau: int = 4

    def __post_init__(self):
        for name in ("p_L", "p_sw"):
            p = float(getattr(self, name))
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
            object.__setattr__(self, name, p)
        object.__setattr__(self, "P12", _as_matrix(self.P12))
        object.__setattr__(self, "P23", _as_matrix(self.P23))
        if int(self.m_star) != self.m_star or self.m_star < 1:
            raise ValueError(f"m_star must be a positive integer, got {self.m_star}")
        if int(self.delta_max) != self.delta_max or self.delta_max < 2 * self.m_star:
            raise ValueError(
                f"delta_max must be an integer >= 2*m_star = {2 * self.m_star}, got {self.delta_max}"
            )
        if not self.T2 > 0:
            raise ValueError(f"T2 must be positive, got {self.T2}")
        if int(self.tau) != self.tau or self.tau < 1:
            raise ValueError(f"tau must be a positive integer, got {self.tau}")
        object.__setattr__(self, "m_star", int(self.m_star))
        object.__setattr__(self, "delta_max", int(self.delta_max))
        object.__setattr__(self, "tau", int(self.tau))
        object.__setattr__(self, "T2", float(self.T2))

    def replace(self, **changes) -> "ScenarioParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["P12"] = [list(r) for r in self.P12]
        d["P23"] = [list(r) for r in self.P23]
        return d


def check_state(s: State, params: ScenarioParams) -> None:
    v12, v23, m12, m23, de = s
    if v12 not in (0, 1) or v23 not in (0, 1):
        raise ValueError(f"visibility must be 0 or 1: {s}")
    for m in (m12, m23):
        if m != ABSENT and not 1 <= m <= params.m_star:
            raise ValueError(f"link age must be -1 or in 1..{params.m_star}: {s}")
    if not 1 <= de <= params.delta_max:
        raise ValueError(f"AoE must lie in 1..{params.delta_max}: {s}")


def admissible_actions(s: State) -> list[Action]:
    """Admissible actions of ``s`` in the global order of :data:`ACTIONS`.

    Generation on a link needs that link visible; a swap needs both
    elementary links present and excludes generation.  Waiting is always
    admissible and always first.
    """
    v12, v23, m12, m23, _ = s
    out = [WAIT]
    if v23:
        out.append(ACTIONS[1])
    if v12:
        out.append(ACTIONS[2])
    if v12 and v23:
        out.append(ACTIONS[3])
    if m12 >= 1 and m23 >= 1:
        out.append(SWAP)
    return out


def check_action(s: State, a: Action) -> None:
    a12, a23, a_sw = a
    if any(x not in (0, 1) for x in a):
        raise InadmissibleActionError(f"action components must be binary: {tuple(a)}")
    if a_sw and (a12 or a23):
        raise InadmissibleActionError(
            f"swap cannot be combined with generation: action {tuple(a)} in state {tuple(s)}"
        )
    if a12 and not s.v12:
        raise InadmissibleActionError(f"generation on (1,2) while invisible: state {tuple(s)}")
    if a23 and not s.v23:
        raise InadmissibleActionError(f"generation on (2,3) while invisible: state {tuple(s)}")
    if a_sw and not (s.m12 >= 1 and s.m23 >= 1):
        raise InadmissibleActionError(f"swap needs both elementary links present: state {tuple(s)}")


def age_link(m: int, m_star: int) -> int:
    """Age an elementary link by one slot; links older than ``m_star`` are discarded."""
    if m == ABSENT:
        return ABSENT
    if not 1 <= m <= m_star:
        raise ValueError(f"invalid link age {m} for m_star={m_star}")
    return m + 1 if m + 1 <= m_star else ABSENT


def fidelity(m: float, T2: float) -> float:
    """Fidelity of a pair stored for ``m`` slots, ``exp(-m / T2)``."""
    if T2 <= 0:
        raise ValueError(f"T2 must be positive, got {T2}")
    if m < 0:
        raise ValueError(f"storage age must be nonnegative, got {m}")
    return math.exp(-m / T2)


def _link_outcomes(m: int, request: int, p_L: float, m_star: int) -> list[tuple[int, float]]:
    if request:
        return [(o, p) for o, p in ((ABSENT, 1.0 - p_L), (1, p_L)) if p > 0]
    return [(age_link(m, m_star), 1.0)]


def _vis_outcomes(row) -> list[tuple[int, float]]:
    return [(j, p) for j, p in enumerate(row) if p > 0]


class Transition(NamedTuple):
    state: State
    prob: float
    reward: int


def transition(s: State, a: Action, params: ScenarioParams) -> list[Transition]:
    """One-step distribution of the next state under action ``a``.

    Returns ``(next_state, probability, reward)`` triples with the reward
    equal to ``-next_state.delta_e``.  Zero-probability outcomes are dropped,
    duplicates merged, and entries sorted by dense next-state index.
    """
    s = State(*s)
    a = Action(*a)
    check_state(s, params)
    check_action(s, a)
    dmax = params.delta_max
    grow = min(s.delta_e + 1, dmax)

    if a.a_sw:
        links = [((ABSENT, ABSENT), 1.0)]
        reset = min(s.m12 + s.m23, dmax)
        aoe = [(d, p) for d, p in ((reset, params.p_sw), (grow, 1.0 - params.p_sw)) if p > 0]
    else:
        links = [
            ((m12, m23), p12 * p23)
            for m12, p12 in _link_outcomes(s.m12, a.a12, params.p_L, params.m_star)
            for m23, p23 in _link_outcomes(s.m23, a.a23, params.p_L, params.m_star)
        ]
        aoe = [(grow, 1.0)]

    merged: dict[State, float] = {}
    for v12, pv12 in _vis_outcomes(params.P12[s.v12]):
        for v23, pv23 in _vis_outcomes(params.P23[s.v23]):
            for (m12, m23), pm in links:
                for de, pd in aoe:
                    nxt = State(v12, v23, m12, m23, de)
                    merged[nxt] = merged.get(nxt, 0.0) + pv12 * pv23 * pm * pd
    idx = state_index(params)
    return [
        Transition(nxt, merged[nxt], -nxt.delta_e)
        for nxt in sorted(merged, key=idx.index)
        if merged[nxt] > 0  # products of tiny factors can underflow
    ]


class StateIndex:
    """Dense bijection between states and ``0..n-1``.

    Ordering is lexicographic in ``(v12, v23, m12, m23, delta_e)`` with the
    absent age ``-1`` sorted before every positive age.
    """

    def __init__(self, m_star: int, delta_max: int):
        self.m_star = m_star
        self.delta_max = delta_max
        self.n_ages = m_star + 1
        self.n = 4 * self.n_ages * self.n_ages * delta_max

    def __len__(self) -> int:
        return self.n

    def index(self, s: Sequence[int]) -> int:
        v12, v23, m12, m23, de = s
        k12 = 0 if m12 == ABSENT else m12
        k23 = 0 if m23 == ABSENT else m23
        if (
            v12 not in (0, 1) or v23 not in (0, 1)
            or not 0 <= k12 <= self.m_star or not 0 <= k23 <= self.m_star
            or m12 == 0 or m23 == 0 or not 1 <= de <= self.delta_max
        ):
            raise ValueError(f"not a valid state: {tuple(s)}")
        return (((v12 * 2 + v23) * self.n_ages + k12) * self.n_ages + k23) * self.delta_max + de - 1

    def state_of(self, i: int) -> State:
        if not 0 <= i < self.n:
            raise IndexError(f"state index {i} out of range 0..{self.n - 1}")
        i, de = divmod(int(i), self.delta_max)
        i, k23 = divmod(i, self.n_ages)
        i, k12 = divmod(i, self.n_ages)
        v12, v23 = divmod(i, 2)
        return State(v12, v23, k12 or ABSENT, k23 or ABSENT, de + 1)

    @cached_property
    def states(self) -> list[State]:
        return [self.state_of(i) for i in range(self.n)]

    @cached_property
    def components(self) -> np.ndarray:
        """``(n, 5)`` integer array of state tuples in index order."""
        return np.array(self.states, dtype=np.int64).reshape(self.n, 5)


@lru_cache(maxsize=None)
def _state_index(m_star: int, delta_max: int) -> StateIndex:
    return StateIndex(m_star, delta_max)


def state_index(params: ScenarioParams) -> StateIndex:
    return _state_index(params.m_star, params.delta_max)


def enumerate_states(params: ScenarioParams) -> list[State]:
    return list(state_index(params).states)


@dataclass(frozen=True)
class Kernel:
    """Tabular form of the MDP used by the solvers.

    ``P[a]`` is the sparse ``n x n`` transition matrix of global action ``a``
    (all-zero rows where ``a`` is inadmissible), ``R[:, a]`` the expected
    one-step reward ``-E[delta_e']`` and ``mask[:, a]`` admissibility.
    """

    params: ScenarioParams
    P: tuple
    R: np.ndarray
    mask: np.ndarray

    @property
    def n_states(self) -> int:
        return self.R.shape[0]


@lru_cache(maxsize=32)
def build_kernel(params: ScenarioParams) -> Kernel:
    idx = state_index(params)
    n = len(idx)
    rows = [[] for _ in ACTIONS]
    cols = [[] for _ in ACTIONS]
    vals = [[] for _ in ACTIONS]
    R = np.zeros((n, N_ACTIONS))
    mask = np.zeros((n, N_ACTIONS), dtype=bool)
    for i, s in enumerate(idx.states):
        for a in admissible_actions(s):
            k = ACTION_ID[a]
            mask[i, k] = True
            r = 0.0
            for nxt, p, rew in transition(s, a, params):
                rows[k].append(i)
                cols[k].append(idx.index(nxt))
                vals[k].append(p)
                r += p * rew
            R[i, k] = r
    P = tuple(
        sp.csr_matrix((vals[k], (rows[k], cols[k])), shape=(n, n)) for k in range(N_ACTIONS)
    )
    R.setflags(write=False)
    mask.setflags(write=False)
    return Kernel(params, P, R, mask)


def policy_matrix(kernel: Kernel, actions: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray]:
    """Transition matrix and expected reward of the chain induced by ``actions``.

    ``actions`` holds one global action id per state.
    """
    actions = np.asarray(actions)
    n = kernel.n_states
    P = sp.csr_matrix((n, n))
    for k in range(N_ACTIONS):
        sel = actions == k
        if sel.any():
            P = P + sp.diags(sel.astype(float)) @ kernel.P[k]
    r = kernel.R[np.arange(n), actions]
    return P.tocsr(), r
