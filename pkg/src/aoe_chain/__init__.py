"""Age-of-Entanglement optimal control of a satellite quantum repeater chain."""

from .model import (
    ACTIONS,
    SWAP,
    WAIT,
    Action,
    ScenarioParams,
    State,
    admissible_actions,
    age_link,
    build_kernel,
    enumerate_states,
    fidelity,
    state_index,
    transition,
)
from .policies import act_greedy, act_optimal, act_wur, make_policy, policy_table
from .solver import (
    SolveConfig,
    SolveResult,
    bellman_residual,
    check_unichain_reachability,
    evaluate_policy_exact,
    policy_iteration_solve,
    rvi_solve,
)

__version__ = "0.1.0"
