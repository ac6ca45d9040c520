"""Corridor gridworld with exact dynamic-programming solvers.

Three connected one-cell-wide corridors: a left column of 10 cells (the
agent starts at its bottom), a horizontal row of 50 cells leaving the top
of the left column, and a right column of 10 cells rising from the row's
far end. Two terminal cells: a goal above the top-right cell (reward 1.0)
and a smaller-reward terminal immediately left of the start (reward 0.4).
All other rewards are zero and every transition is deterministic, so value
iteration and policy evaluation produce reference Q tables to solver
tolerance.

Actions 0..4 are up, down, left, right, no-op; moving into a wall is a
self-transition. The 10- and 20-action variants duplicate the no-op, which
is the whole point of the benchmark: many actions with identical values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import q_values

N_STATES = 70
GOAL_STATE = 70
DISTRACTOR_STATE = 71
START_STATE = 0

GOAL_REWARD = 1.0
DISTRACTOR_REWARD = 0.4
DEFAULT_GAMMA = 0.99

ACTION_NAMES = ("up", "down", "left", "right", "noop")
UP, DOWN, LEFT, RIGHT, NOOP = range(5)
VALID_N_ACTIONS = (5, 10, 20)

_EYE = np.eye(N_STATES, dtype=np.float64)
# Rows 70/71 are all-zero: the conventional absorbing encoding, and a handy
# lookup table for batched next-state encodings.
ENCODING_TABLE = np.vstack([_EYE, np.zeros((2, N_STATES))])

_DELTAS = {UP: (0, 1), DOWN: (0, -1), LEFT: (-1, 0), RIGHT: (1, 0)}


def _cell_coords():
    """Grid coordinates of the 70 layout cells, in state-id order."""
    cells = []
    cells += [(0, y) for y in range(10)]         # left column, bottom to top
    cells += [(x, 9) for x in range(1, 51)]      # horizontal row, left to right
    cells += [(51, y) for y in range(9, 19)]     # right column, bottom to top
    return cells


_CELLS = _cell_coords()
_CELL_ID = {c: i for i, c in enumerate(_CELLS)}
_GOAL_COORD = (51, 19)          # above the top of the right column
_DISTRACTOR_COORD = (-1, 0)     # left of the start cell


@dataclass
class CorridorSpec:
    """Full MDP definition as dense lookup tables over the 70 layout states."""

    n_actions: int
    next_state: np.ndarray      # (70, A) int64; terminals appear as 70/71
    reward: np.ndarray          # (70, A) float64
    done: np.ndarray            # (70, A) bool
    gamma: float = DEFAULT_GAMMA
    start: int = START_STATE
    n_states: int = N_STATES

    def terminal_states(self):
        return (GOAL_STATE, DISTRACTOR_STATE)


def build_corridor(n_actions=5, gamma=DEFAULT_GAMMA):
    """Build the corridor MDP with 5, 10 or 20 actions.

    Actions beyond the first five are extra no-ops with identical dynamics.
    """
    if n_actions not in VALID_N_ACTIONS:
        raise ValueError(f"n_actions must be one of {VALID_N_ACTIONS}, "
                         f"got {n_actions}")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")

    nxt = np.empty((N_STATES, n_actions), dtype=np.int64)
    rew = np.zeros((N_STATES, n_actions), dtype=np.float64)
    done = np.zeros((N_STATES, n_actions), dtype=bool)

    for s, (x, y) in enumerate(_CELLS):
        for a in range(n_actions):
            if a >= 4:  # no-op and its duplicates
                nxt[s, a] = s
                continue
            tx, ty = x + _DELTAS[a][0], y + _DELTAS[a][1]
            if (tx, ty) == _GOAL_COORD:
                nxt[s, a] = GOAL_STATE
                rew[s, a] = GOAL_REWARD
                done[s, a] = True
            elif (tx, ty) == _DISTRACTOR_COORD:
                nxt[s, a] = DISTRACTOR_STATE
                rew[s, a] = DISTRACTOR_REWARD
                done[s, a] = True
            elif (tx, ty) in _CELL_ID:
                nxt[s, a] = _CELL_ID[(tx, ty)]
            else:
                nxt[s, a] = s  # wall: self-transition
    return CorridorSpec(n_actions=n_actions, next_state=nxt, reward=rew,
                        done=done, gamma=gamma)


def step(spec, state, action):
    """One environment transition. Returns ``(next_state, reward, done)``."""
    if not 0 <= state < N_STATES:
        raise ValueError(f"cannot step from state {state}: not a layout state "
                         "(terminal or out of range)")
    if not 0 <= action < spec.n_actions:
        raise ValueError(f"action {action} out of range for "
                         f"{spec.n_actions} actions")
    return (int(spec.next_state[state, action]),
            float(spec.reward[state, action]),
            bool(spec.done[state, action]))


def encode_state(spec, state):
    """One-hot encoding of a layout state; terminals encode as all zeros."""
    if state in (GOAL_STATE, DISTRACTOR_STATE):
        return np.zeros(N_STATES)
    if not 0 <= state < N_STATES:
        raise ValueError(f"unknown state id {state}")
    return _EYE[state].copy()


# ---------------------------------------------------------------------------
# exact solvers

@dataclass
class ExactQ:
    """Dense action-value table from a DP solver, with its provenance."""

    q: np.ndarray               # (70, A)
    gamma: float
    provenance: str             # "optimal" or "policy"
    policy: np.ndarray | None = None
    residual: float = 0.0


@dataclass
class PolicyTable:
    """Row-stochastic policy over the 70 layout states."""

    pi: np.ndarray              # (70, A)

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        if self.pi.ndim != 2 or self.pi.shape[0] != N_STATES:
            raise ValueError(f"policy table must be ({N_STATES}, A)")
        if (self.pi < 0).any():
            raise ValueError("policy probabilities must be non-negative")
        sums = self.pi.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-12:
            raise ValueError("policy rows must sum to 1")

    @property
    def n_actions(self):
        return self.pi.shape[1]


def _bootstrap(spec, per_state):
    """gamma * value-of-next-state, with terminals bootstrapping to zero."""
    ext = np.concatenate([per_state, [0.0, 0.0]])
    return spec.gamma * ext[spec.next_state]


def bellman_residual(spec, q, policy=None):
    """Sup-norm residual of the optimality (policy=None) or expectation form."""
    if policy is None:
        backup = q.max(axis=1)
    else:
        backup = (policy.pi * q).sum(axis=1)
    return float(np.abs(spec.reward + _bootstrap(spec, backup) - q).max())


def solve_q_star(spec, tol=1e-10):
    """Optimal action values by value iteration to the requested residual."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.zeros((N_STATES, spec.n_actions))
    while True:
        tq = spec.reward + _bootstrap(spec, q.max(axis=1))
        delta = float(np.abs(tq - q).max())
        q = tq
        if delta < tol:
            break
    return ExactQ(q=q, gamma=spec.gamma, provenance="optimal",
                  residual=bellman_residual(spec, q))


def solve_q_pi(spec, policy, tol=1e-10):
    """Action values of a fixed policy by iterative policy evaluation."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if policy.n_actions != spec.n_actions:
        raise ValueError("policy action count does not match the spec")
    q = np.zeros((N_STATES, spec.n_actions))
    while True:
        u = (policy.pi * q).sum(axis=1)
        tq = spec.reward + _bootstrap(spec, u)
        delta = float(np.abs(tq - q).max())
        q = tq
        if delta < tol:
            break
    return ExactQ(q=q, gamma=spec.gamma, provenance="policy",
                  policy=policy.pi.copy(),
                  residual=bellman_residual(spec, q, policy))


def epsilon_greedy_policy(q_star, epsilon):
    """epsilon-greedy mixture over a Q table; argmax ties go to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    q = q_star.q
    n_actions = q.shape[1]
    pi = np.full_like(q, epsilon / n_actions)
    pi[np.arange(N_STATES), q.argmax(axis=1)] += 1.0 - epsilon
    return PolicyTable(pi)


def greedy_policy_from_table(q):
    """Deterministic policy picking the per-state argmax of a (70, A) table."""
    pi = np.zeros_like(q)
    pi[np.arange(N_STATES), q.argmax(axis=1)] = 1.0
    return PolicyTable(pi)


def advantage_of(q_pi, policy):
    """State values and advantages of a policy-evaluation table.

    Returns ``(v, a)`` with ``v_s = sum_a pi(a|s) q(s,a)`` and
    ``a = q - v``; requires the table to have been solved for this policy.
    """
    if q_pi.provenance != "policy" or q_pi.policy is None:
        raise ValueError("advantage_of needs a policy-evaluation table")
    if not np.array_equal(q_pi.policy, policy.pi):
        raise ValueError("table was solved for a different policy")
    v = (policy.pi * q_pi.q).sum(axis=1)
    return v, q_pi.q - v[:, None]


def se_metric(net, spec, q_pi):
    """Sum of squared deviations of the network from the exact Q table."""
    if net.n_outputs != spec.n_actions:
        raise ValueError(f"network has {net.n_outputs} outputs but the "
                         f"corridor has {spec.n_actions} actions")
    pred = q_values(net, _EYE)
    return float(((pred - q_pi.q) ** 2).sum())


def policy_state_values(spec, policy, tol=1e-12):
    """V^pi over the 70 states (via the exact Q table)."""
    q_pi = solve_q_pi(spec, policy, tol)
    return (policy.pi * q_pi.q).sum(axis=1)


def mc_return(spec, policy, state, action, episodes, rng=None, max_steps=4000):
    """Monte-Carlo estimate of the discounted return from a fixed (s, a).

    Rolls out ``episodes`` trajectories (first action forced, then the
    policy), vectorized across episodes. Returns ``(mean, standard_error)``.
    Truncation at ``max_steps`` is negligible for gamma < 1.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    cdf = np.cumsum(policy.pi, axis=1)
    returns = np.zeros(episodes)
    s = np.full(episodes, state, dtype=np.int64)
    a = np.full(episodes, action, dtype=np.int64)
    alive = np.arange(episodes)
    discount = np.ones(episodes)

    for _ in range(max_steps):
        r = spec.reward[s, a]
        d = spec.done[s, a]
        ns = spec.next_state[s, a]
        returns[alive] += discount[alive] * r
        keep = ~d
        alive = alive[keep]
        if alive.size == 0:
            break
        s = ns[keep]
        discount[alive] *= spec.gamma
        u = rng.random(alive.size)
        a = (cdf[s] < u[:, None]).sum(axis=1)
        np.clip(a, 0, spec.n_actions - 1, out=a)

    mean = float(returns.mean())
    sem = float(returns.std(ddof=1) / np.sqrt(episodes))
    return mean, sem
