"""duelq: single-stream vs dueling Q-networks on an exactly solvable corridor.

A small dense-network engine (with a compiled kernel backend and a NumPy
fallback), the corridor gridworld with exact DP solvers, uniform and
rank-based prioritized replay, TD policy evaluation and double-Q control
loops, and a CLI harness for reproducible seeded experiments.
"""

__version__ = "0.1.0"

from . import _kernels as kernels
from .agents import (AgentState, SECurve, TrainConfig, ddqn_target,
                     dqn_target, exact_return_of_greedy, expected_sarsa_target,
                     se_log_indices, sync_target, train_ddqn,
                     train_policy_eval)
from .corridor import (CorridorSpec, ExactQ, PolicyTable, advantage_of,
                       bellman_residual, build_corridor, encode_state,
                       epsilon_greedy_policy, greedy_policy_from_table,
                       mc_return, se_metric, solve_q_pi, solve_q_star, step)
from .network import (DenseNet, GradientSet, NonFiniteError, aggregate,
                      aggregate_backward, backward, build_dueling,
                      build_single_stream, clip_grad_norm, finite_diff_grad,
                      forward, init_net, junction_rescale, load_net, q_values,
                      saliency, save_net, sgd_step)
from .replay import PrioritizedBuffer, Transition, UniformBuffer, anneal_beta

__all__ = [
    "AgentState", "CorridorSpec", "DenseNet", "ExactQ", "GradientSet",
    "NonFiniteError", "PolicyTable", "PrioritizedBuffer", "SECurve",
    "TrainConfig", "Transition", "UniformBuffer", "advantage_of", "aggregate",
    "aggregate_backward", "anneal_beta", "backward", "bellman_residual",
    "build_corridor", "build_dueling", "build_single_stream",
    "clip_grad_norm", "ddqn_target", "dqn_target", "encode_state",
    "epsilon_greedy_policy", "exact_return_of_greedy",
    "expected_sarsa_target", "finite_diff_grad", "forward",
    "greedy_policy_from_table", "init_net", "junction_rescale", "kernels",
    "load_net", "mc_return", "q_values", "saliency", "save_net",
    "se_log_indices", "se_metric", "sgd_step", "solve_q_pi", "solve_q_star",
    "step", "sync_target", "train_ddqn", "train_policy_eval",
]
