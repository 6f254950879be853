"""Average-reward solvers for the repeater MDP.

:func:`rvi_solve` is relative value iteration, the primary solver.
:func:`policy_iteration_solve` is Howard policy iteration, kept as an
independent oracle, and :func:`evaluate_policy_exact` computes the long-run
average AoE of a fixed policy from its stationary distribution.  Rewards are
``-delta_e'`` throughout, so ``gain = -average AoE``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .model import (
    ABSENT,
    ACTIONS,
    N_ACTIONS,
    Kernel,
    ScenarioParams,
    State,
    build_kernel,
    policy_matrix,
    state_index,
)
from .policies import policy_table

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class MultichainError(SolverError):
    """A policy-induced chain has more than one recurrent class."""


@dataclass(frozen=True)
class SolveConfig:
    """Stopping and normalisation settings shared by both solvers.

    ``ref_state`` defaults to dense index 0, ``(0, 0, -1, -1, 1)``.
    ``tie_tol`` is the relative slack under which two Q-values count as tied;
    ties go to the earliest action in admissible order.  ``aperiodicity``
    below 1 applies the transform ``P -> a P + (1 - a) I`` inside RVI (needed
    only for periodic optimal chains, e.g. fully deterministic scenarios);
    the reported gain and policy are those of the original MDP.
    """

    epsilon: float = 1e-8
    ref_state: State | None = None
    max_iters: int = 100_000
    tie_tol: float = 1e-9
    aperiodicity: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not 0 < self.aperiodicity <= 1:
            raise ValueError(f"aperiodicity must lie in (0, 1], got {self.aperiodicity}")
        if self.tie_tol < 0:
            raise ValueError("tie_tol must be nonnegative")

    def ref_index(self, params: ScenarioParams) -> int:
        if self.ref_state is None:
            return 0
        return state_index(params).index(self.ref_state)


@dataclass
class TraceRow:
    iteration: int
    max_abs_change: float
    span: float
    gain_estimate: float


@dataclass
class SolveResult:
    params: ScenarioParams
    h: np.ndarray
    gain: float
    policy: np.ndarray
    converged: bool
    iterations: int
    trace: list[TraceRow] = field(default_factory=list)
    method: str = "rvi"

    @property
    def avg_aoe(self) -> float:
        return -self.gain

    def action(self, s: State):
        return ACTIONS[self.policy[state_index(self.params).index(s)]]


@dataclass
class EvalResult:
    avg_aoe: float
    stationary: np.ndarray
    recurrent: np.ndarray


def q_values(kernel: Kernel, h: np.ndarray) -> np.ndarray:
    """``Q[s, a] = r(s, a) + sum_s' P(s'|s,a) h(s')``; ``-inf`` where inadmissible."""
    Q = np.full((kernel.n_states, N_ACTIONS), -np.inf)
    for k in range(N_ACTIONS):
        col = kernel.mask[:, k]
        Q[col, k] = kernel.R[col, k] + (kernel.P[k] @ h)[col]
    return Q


def greedy_actions(Q: np.ndarray, tie_tol: float) -> np.ndarray:
    best = Q.max(axis=1)
    near = Q >= (best - tie_tol * (1.0 + np.abs(best)))[:, None]
    return np.argmax(near, axis=1)


def rvi_solve(params: ScenarioParams, cfg: SolveConfig | None = None) -> SolveResult:
    """Relative value iteration for the average-reward (negative AoE) criterion.

    Each sweep computes ``h_k(s) = max_a Q_k(s, a)`` from ``h_{k-1}`` and then
    subtracts ``h_k(ref)``.  Stops once ``max_s |h_k(s) - h_{k-1}(s)| < epsilon``.
    The gain is the pre-normalisation value at the reference state in the
    final sweep.  Hitting ``max_iters`` returns the partial result with
    ``converged=False``.
    """
    cfg = cfg or SolveConfig()
    kernel = build_kernel(params)
    ref = cfg.ref_index(params)
    alpha = cfg.aperiodicity
    h = np.zeros(kernel.n_states)
    trace: list[TraceRow] = []
    gain = 0.0
    converged = False
    k = 0
    for k in range(1, cfg.max_iters + 1):
        Q = q_values(kernel, h)
        if alpha < 1.0:
            Q = alpha * Q + (1.0 - alpha) * h[:, None]
        h_new = Q.max(axis=1)
        gain = h_new[ref] / alpha
        h_new = h_new - h_new[ref]
        diff = h_new - h
        max_abs = float(np.max(np.abs(diff)))
        span = float(diff.max() - diff.min())
        trace.append(TraceRow(k, max_abs, span, float(gain)))
        h = h_new
        if max_abs < cfg.epsilon:
            converged = True
            break
    if not converged:
        logger.warning("RVI did not converge within %d iterations (last change %.3g)", cfg.max_iters, trace[-1].max_abs_change)
    # The transformed MDP has the same bias and optimal policies; only the gain scales by alpha.
    policy = greedy_actions(q_values(kernel, h), cfg.tie_tol)
    return SolveResult(params, h, float(gain), policy, converged, k, trace, "rvi")


def _evaluate_gain_bias(kernel: Kernel, actions: np.ndarray, ref: int) -> tuple[float, np.ndarray]:
    """Solve ``(I - P) h + g 1 = r`` with ``h[ref] = 0``."""
    n = kernel.n_states
    P, r = policy_matrix(kernel, actions)
    M = (sp.identity(n, format="csr") - P).tolil()
    M[:, ref] = np.ones((n, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            x = spsolve(M.tocsc(), r)
        except MatrixRankWarning:
            x = np.full(n, np.nan)
    if not np.all(np.isfinite(x)) or np.max(np.abs(M @ x - r)) > 1e-6 * (1 + np.max(np.abs(r))):
        raise SolverError(
            "singular gain/bias system for the policy-induced chain "
            f"(actions per state: {np.bincount(actions, minlength=N_ACTIONS).tolist()}); "
            "the chain is probably not unichain"
        )
    g = float(x[ref])
    h = x.copy()
    h[ref] = 0.0
    return g, h


def policy_iteration_solve(params: ScenarioParams, cfg: SolveConfig | None = None) -> SolveResult:
    """Howard policy iteration; starts from the all-wait policy.

    A state's action changes only when another action beats it by more than
    the tie tolerance, which rules out cycling between equally good policies.
    """
    cfg = cfg or SolveConfig()
    kernel = build_kernel(params)
    ref = cfg.ref_index(params)
    n = kernel.n_states
    actions = np.zeros(n, dtype=np.int64)
    trace: list[TraceRow] = []
    for it in range(1, cfg.max_iters + 1):
        g, h = _evaluate_gain_bias(kernel, actions, ref)
        Q = q_values(kernel, h)
        current = Q[np.arange(n), actions]
        best = Q.max(axis=1)
        improve = best > current + cfg.tie_tol * (1.0 + np.abs(best))
        trace.append(TraceRow(it, float(np.max(best - current)), float(np.sum(improve)), g))
        if not improve.any():
            return SolveResult(params, h, g, greedy_actions(Q, cfg.tie_tol), True, it, trace, "policy_iteration")
        candidates = greedy_actions(Q, cfg.tie_tol)
        actions = np.where(improve, candidates, actions)
    return SolveResult(params, h, g, actions, False, cfg.max_iters, trace, "policy_iteration")


def recurrent_classes(P: sp.spmatrix) -> list[np.ndarray]:
    """Closed communicating classes of the positive-probability graph of ``P``."""
    P = sp.csr_matrix(P)
    ncomp, labels = connected_components(P, directed=True, connection="strong")
    coo = P.tocoo()
    pos = coo.data > 0
    leaving = labels[coo.row[pos]] != labels[coo.col[pos]]
    open_comp = np.zeros(ncomp, dtype=bool)
    open_comp[labels[coo.row[pos][leaving]]] = True
    return [np.flatnonzero(labels == c) for c in range(ncomp) if not open_comp[c]]


def stationary_distribution(P: sp.spmatrix) -> tuple[np.ndarray, np.ndarray]:
    """Stationary vector of a unichain stochastic matrix (zero on transient states)."""
    P = sp.csr_matrix(P)
    n = P.shape[0]
    classes = recurrent_classes(P)
    if len(classes) != 1:
        raise MultichainError(
            f"policy-induced chain has {len(classes)} recurrent classes; "
            "the model should be unichain under every stationary policy"
        )
    C = classes[0]
    Pc = P[C][:, C]
    m = len(C)
    A = (Pc.T - sp.identity(m)).tolil()
    A[0, :] = np.ones((1, m))
    b = np.zeros(m)
    b[0] = 1.0
    pc = spsolve(A.tocsc(), b) if m > 1 else np.ones(1)
    if not np.all(np.isfinite(pc)):
        raise SolverError("singular stationary-distribution system")
    pc = np.clip(pc, 0.0, None)
    pc /= pc.sum()
    pi = np.zeros(n)
    pi[C] = pc
    if np.max(np.abs(pi @ P - pi)) > 1e-8:
        raise SolverError("stationary distribution failed the balance check")
    return pi, C


def evaluate_policy_exact(params: ScenarioParams, policy) -> EvalResult:
    """Exact long-run average AoE of a deterministic stationary policy.

    ``policy`` may be a callable ``State -> Action``, a solve result or an
    array of action ids.
    """
    kernel = build_kernel(params)
    actions = policy_table(params, policy)
    P, r = policy_matrix(kernel, actions)
    pi, C = stationary_distribution(P)
    return EvalResult(float(-(pi @ r)), pi, C)


def bellman_residual(params: ScenarioParams, result: SolveResult) -> float:
    """``max_s |max_a Q(s, a) - h(s) - gain|``; zero at an exact fixed point."""
    Q = q_values(build_kernel(params), result.h)
    return float(np.max(np.abs(Q.max(axis=1) - result.h - result.gain)))


@dataclass
class ReachabilityReport:
    reachable: bool
    premise_ok: bool
    failed_premises: list[str]
    target: State
    max_steps: int | None
    witness: list[State]
    counterexample: State | None


def check_unichain_reachability(params: ScenarioParams) -> ReachabilityReport:
    """Check that ``(0, 0, -1, -1, delta_max)`` is reachable from every state under every policy.

    Computes the set of states from which the target is hit with positive
    probability whatever action is chosen in each state (backward
    induction: a state joins once every admissible action has a successor
    already in the set).  ``max_steps`` is the number of rounds this took,
    i.e. the worst-case length of a shortest path, and ``witness`` is such a
    path from a hardest state.
    """
    failed = []
    if params.P12[0][0] <= 0:
        failed.append("P12[0,0] > 0")
    if params.P23[0][0] <= 0:
        failed.append("P23[0,0] > 0")
    kernel = build_kernel(params)
    idx = state_index(params)
    n = kernel.n_states
    target_state = State(0, 0, ABSENT, ABSENT, params.delta_max)
    target = idx.index(target_state)

    rank = np.full(n, -1, dtype=np.int64)
    rank[target] = 0
    inside = np.zeros(n, dtype=bool)
    inside[target] = True
    step = 0
    while True:
        step += 1
        ok = np.ones(n, dtype=bool)
        for k in range(N_ACTIONS):
            hits = (kernel.P[k] @ inside.astype(float)) > 0
            ok &= ~kernel.mask[:, k] | hits
        new = ok & ~inside
        if not new.any():
            break
        rank[new] = step
        inside |= new

    reachable = bool(inside.all())
    if not reachable:
        bad = idx.state_of(int(np.flatnonzero(~inside)[0]))
        return ReachabilityReport(False, not failed, failed, target_state, None, [], bad)

    start = int(np.argmax(rank))
    path = [start]
    while path[-1] != target:
        i = path[-1]
        # worst action: the one whose best successor has the largest rank
        best_next = None
        for k in np.flatnonzero(kernel.mask[i]):
            row = kernel.P[k].getrow(i)
            succ = row.indices[row.data > 0]
            j = succ[np.argmin(rank[succ])]
            if best_next is None or rank[j] > rank[best_next]:
                best_next = j
        path.append(int(best_next))
    return ReachabilityReport(
        True, not failed, failed, target_state, int(rank.max()), [idx.state_of(i) for i in path], None
    )
