"""Bootstrap targets, target-network bookkeeping, and the two training loops.

Policy evaluation learns Q for a fixed behavior policy with batch-1 TD
updates and an expected-value bootstrap (the expected-SARSA target, computed
from the online network: there is no target network in evaluation mode).
Control runs epsilon-greedy double-Q learning with experience replay,
minibatch updates, gradient clipping and periodic target syncs.

Both loops are bitwise reproducible given (seed, config): all randomness
flows through one seeded generator per loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corridor import (ENCODING_TABLE, GOAL_STATE, N_STATES, encode_state,
                       se_metric)
from .network import (DUELING, backward, clip_grad_norm, forward, q_values,
                      sgd_step)
from .replay import PrioritizedBuffer, Transition, anneal_beta


@dataclass
class TrainConfig:
    """Hyperparameters shared by the training loops.

    ``updates`` is the number of TD updates (policy evaluation) or
    environment steps (control). Policy evaluation ignores ``sync_period``
    and ``minibatch``.
    """

    lr: float = 1e-3
    clip_norm: float = 10.0
    sync_period: int = 500
    seed: int = 0
    updates: int = 10_000
    minibatch: int = 32

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.sync_period < 1 or self.updates < 1 or self.minibatch < 1:
            raise ValueError("sync_period, updates and minibatch must be "
                             "positive integers")


@dataclass
class AgentState:
    """Online/target network pair plus the pieces a control loop needs."""

    online: object
    target: object
    config: TrainConfig
    aggregator: str = "mean"
    buffer: object = None
    steps: int = 0

    def __post_init__(self):
        if self.online.topology != self.target.topology or \
                self.online.shapes != self.target.shapes:
            raise ValueError("online and target networks must share a topology")


@dataclass
class SECurve:
    """Squared-error trajectory of one policy-evaluation run."""

    updates: list
    se: list
    arch: str
    n_actions: int
    seed: int

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.updates, self.updates[1:])):
            raise ValueError("update indices must be strictly increasing")
        if any(v < 0 for v in self.se):
            raise ValueError("squared errors cannot be negative")


def se_log_indices(total_updates):
    """Logging grid: every update through 100, then 1.25x geometric growth.

    Always contains 0 and ``total_updates``; identical for every run with
    the same budget, so curves align index-for-index.
    """
    idx = set(range(0, min(total_updates, 100) + 1))
    v = 100.0
    while v < total_updates:
        v *= 1.25
        idx.add(min(total_updates, math.ceil(v)))
    idx.add(total_updates)
    return sorted(idx)


# ---------------------------------------------------------------------------
# bootstrap targets

def expected_sarsa_target(spec, r, s_next, done, policy, net,
                          aggregator="mean", gamma=None):
    """r + gamma * E_{a' ~ pi(s')} Q(s', a') from the online network."""
    if done:
        return float(r)
    g = spec.gamma if gamma is None else gamma
    q_next = q_values(net, encode_state(spec, s_next), aggregator)
    return float(r + g * (policy.pi[s_next] @ q_next))


def dqn_target(spec, r, s_next, done, target_net, aggregator="mean",
               gamma=None):
    """r + gamma * max_a' Q(s', a') from the target network."""
    if done:
        return float(r)
    g = spec.gamma if gamma is None else gamma
    q_next = q_values(target_net, encode_state(spec, s_next), aggregator)
    return float(r + g * q_next.max())


def ddqn_target(spec, r, s_next, done, online_net, target_net,
                aggregator="mean", gamma=None):
    """Double-Q target: the online network selects, the target evaluates."""
    if done:
        return float(r)
    g = spec.gamma if gamma is None else gamma
    x = encode_state(spec, s_next)
    a_star = int(q_values(online_net, x, aggregator).argmax())
    return float(r + g * q_values(target_net, x, aggregator)[a_star])


def sync_target(agent):
    """Copy online parameters into the target network, bitwise."""
    agent.target.theta[:] = agent.online.theta


# ---------------------------------------------------------------------------
# policy evaluation

def train_policy_eval(spec, policy, net, config, q_pi, aggregator="mean",
                      sampling="uniform", arch_label=None):
    """TD policy evaluation against a fixed behavior policy.

    Each update takes one (s, a), queries the environment for (r, s'), and
    performs a semi-gradient step on half the squared distance between
    Q(s, a) and the expected-SARSA target (the target is a constant: only
    the taken action's output path receives gradient).

    ``sampling`` picks how (s, a) pairs are visited:

    * ``"uniform"`` (default): s uniform over layout states, a uniform over
      actions. Covers every pair, so the whole Q table is fitted - the
      squared-error metric sums over all of them.
    * ``"rollout"``: episodic trajectories under the behavior policy with a
      reset to the start state at termination. With a near-greedy policy
      this rarely visits non-greedy actions, so the full-table error stalls;
      kept for studying the on-policy state distribution.

    Returns the squared-error curve on a geometric logging grid.
    """
    if sampling not in ("uniform", "rollout"):
        raise ValueError(f"unknown sampling mode {sampling!r}")
    if net.input_dim != spec.n_states or net.n_outputs != spec.n_actions:
        raise ValueError("network dimensions do not match the corridor")
    if policy.n_actions != spec.n_actions:
        raise ValueError("policy does not match the corridor action count")

    rng = np.random.default_rng([config.seed, 1])
    gamma = spec.gamma
    pi = policy.pi
    n_actions = spec.n_actions
    label = arch_label or net.topology

    log_at = se_log_indices(config.updates)
    log_set = set(log_at)
    curve_updates = [0]
    curve_se = [se_metric(net, spec, q_pi)]

    if sampling == "rollout":
        cdf = np.cumsum(pi, axis=1)
        cur = spec.start
    else:
        chunk = 8192
        states = actions = None
        fill = chunk  # forces a draw on the first update

    for t in range(1, config.updates + 1):
        if sampling == "uniform":
            if fill == chunk:
                states = rng.integers(0, spec.n_states, size=chunk)
                actions = rng.integers(0, n_actions, size=chunk)
                fill = 0
            s = int(states[fill])
            a = int(actions[fill])
            fill += 1
        else:
            s = cur
            a = min(int(np.searchsorted(cdf[s], rng.random(), side="right")),
                    n_actions - 1)

        s2 = int(spec.next_state[s, a])
        r = spec.reward[s, a]
        if spec.done[s, a]:
            y = r
        else:
            q_next = q_values(net, ENCODING_TABLE[s2], aggregator)
            y = r + gamma * float(pi[s2] @ q_next)

        q, trace = forward(net, ENCODING_TABLE[s], aggregator)
        g = np.zeros(n_actions)
        g[a] = q[a] - y
        grads, _ = backward(net, trace, g)
        clip_grad_norm(grads, config.clip_norm)
        sgd_step(net, grads, config.lr)

        if sampling == "rollout":
            cur = spec.start if spec.done[s, a] else s2

        if t in log_set:
            curve_updates.append(t)
            curve_se.append(se_metric(net, spec, q_pi))

    return SECurve(curve_updates, curve_se, label, n_actions, config.seed)


# ---------------------------------------------------------------------------
# control

def exploration_epsilon(step, total_steps, start=1.0, end=0.05, frac=0.2):
    """Linear decay from ``start`` to ``end`` over the first ``frac`` of
    training, then the floor."""
    anneal = max(1, int(frac * total_steps))
    if step >= anneal:
        return end
    return start + (end - start) * (step / anneal)


def train_ddqn(spec, config, agent, *, explore_start=1.0, explore_end=0.05,
               explore_frac=0.2, warmup=500, update_period=1,
               log_every=0, log_fn=None):
    """Epsilon-greedy double-Q control with experience replay.

    Acts for ``config.updates`` environment steps. After ``warmup``
    transitions are stored, every ``update_period`` steps a minibatch is
    sampled (uniform or prioritized; the importance weight multiplies each
    sample's gradient term), the double-Q target is formed (online selects,
    target evaluates), gradients are clipped to ``config.clip_norm``, and
    priorities are refreshed from |TD error|. The target network syncs every
    ``config.sync_period`` steps.
    """
    if agent.buffer is None:
        raise ValueError("control training needs a replay buffer")
    rng = np.random.default_rng([config.seed, 2])
    online, target = agent.online, agent.target
    agg = agent.aggregator
    buffer = agent.buffer
    prioritized = isinstance(buffer, PrioritizedBuffer)
    gamma = spec.gamma
    n_actions = spec.n_actions
    batch = config.minibatch
    batch_range = np.arange(batch)

    cur = spec.start
    for step_i in range(1, config.updates + 1):
        eps = exploration_epsilon(step_i, config.updates, explore_start,
                                  explore_end, explore_frac)
        if rng.random() < eps:
            a = int(rng.integers(n_actions))
        else:
            a = int(q_values(online, ENCODING_TABLE[cur], agg).argmax())
        s2 = int(spec.next_state[cur, a])
        r = float(spec.reward[cur, a])
        d = bool(spec.done[cur, a])
        buffer.push(Transition(cur, a, r, s2, d))
        cur = spec.start if d else s2
        agent.steps += 1

        if len(buffer) >= warmup and step_i % update_period == 0:
            if prioritized:
                beta = anneal_beta(step_i, config.updates)
                idx, weights = buffer.sample_indices(batch, beta, rng)
            else:
                idx = buffer.sample_indices(batch, rng)
                weights = 1.0
            s_ids, a_ids, rewards, next_ids, done_mask = buffer.gather(idx)
            not_done = ~done_mask

            x_next = ENCODING_TABLE[next_ids]
            a_star = q_values(online, x_next, agg).argmax(axis=1)
            q_next = q_values(target, x_next, agg)
            y = rewards + gamma * not_done * q_next[batch_range, a_star]

            q, trace = forward(online, ENCODING_TABLE[s_ids], agg)
            td = q[batch_range, a_ids] - y
            g = np.zeros((batch, n_actions))
            g[batch_range, a_ids] = weights * td / batch
            grads, _ = backward(online, trace, g)
            clip_grad_norm(grads, config.clip_norm)
            sgd_step(online, grads, config.lr)

            if prioritized:
                buffer.update_priorities([int(i) for i in idx], np.abs(td))

        if step_i % config.sync_period == 0:
            sync_target(agent)
        if log_fn is not None and log_every and step_i % log_every == 0:
            log_fn(step_i, agent)
    return agent


def exact_return_of_greedy(spec, net, aggregator="mean", tol=1e-12):
    """Discounted return of the network's greedy policy from the start state,
    evaluated by dynamic programming (no sampling)."""
    q = q_values(net, ENCODING_TABLE[:N_STATES], aggregator)
    greedy = q.argmax(axis=1)
    rew = spec.reward[np.arange(N_STATES), greedy]
    nxt = spec.next_state[np.arange(N_STATES), greedy]
    v = np.zeros(N_STATES)
    while True:
        ext = np.concatenate([v, [0.0, 0.0]])
        tv = rew + spec.gamma * ext[nxt]
        delta = float(np.abs(tv - v).max())
        v = tv
        if delta < tol:
            break
    return float(v[spec.start])
