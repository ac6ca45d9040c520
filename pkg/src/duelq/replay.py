"""Experience replay: a uniform ring buffer and a rank-based prioritized one.

The prioritized buffer samples index ``i`` with probability proportional to
``(1/rank_i)**alpha`` where ranks order entries by descending priority.
Entries with exactly equal priorities share the average of their rank
positions' mass, so an all-equal buffer degenerates to uniform sampling
(and all importance weights to 1). Ranks are recomputed by exact sort per
sampling call, which is fine at the buffer sizes used here.

Transitions are stored column-wise (one array per field) so training loops
can gather minibatches as arrays without touching Python tuples.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

PRIORITY_FLOOR = 1e-6
DEFAULT_ALPHA = 0.7


class Transition(NamedTuple):
    """One experience tuple; ``done`` iff ``s_next`` is a terminal marker."""

    s: int
    a: int
    r: float
    s_next: int
    done: bool


class _ColumnStore:
    """Fixed-capacity ring of transitions in parallel arrays."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._s = np.zeros(capacity, dtype=np.int64)
        self._a = np.zeros(capacity, dtype=np.int64)
        self._r = np.zeros(capacity, dtype=np.float64)
        self._s_next = np.zeros(capacity, dtype=np.int64)
        self._done = np.zeros(capacity, dtype=bool)
        self._size = 0
        self._cursor = 0

    def __len__(self):
        return self._size

    def _store(self, t):
        """Write into the next ring slot; returns the slot index."""
        slot = self._cursor if self._size == self.capacity else self._size
        self._s[slot] = t.s
        self._a[slot] = t.a
        self._r[slot] = t.r
        self._s_next[slot] = t.s_next
        self._done[slot] = t.done
        if self._size < self.capacity:
            self._size += 1
        self._cursor = (self._cursor + 1) % self.capacity
        return slot

    def __getitem__(self, idx):
        if not 0 <= idx < self._size:
            raise IndexError(f"buffer index {idx} out of range")
        return Transition(int(self._s[idx]), int(self._a[idx]),
                          float(self._r[idx]), int(self._s_next[idx]),
                          bool(self._done[idx]))

    def gather(self, idx):
        """Minibatch columns ``(s, a, r, s_next, done)`` for index array."""
        idx = np.asarray(idx)
        return (self._s[idx], self._a[idx], self._r[idx],
                self._s_next[idx], self._done[idx])


class UniformBuffer(_ColumnStore):
    """Ring buffer with oldest-first eviction and uniform sampling."""

    def push(self, transition):
        self._store(transition)

    def sample(self, batch, rng):
        """``batch`` independent uniform draws with replacement; returns a
        list of ``(index, Transition)``."""
        idx = self.sample_indices(batch, rng)
        return [(int(i), self[int(i)]) for i in idx]

    def sample_indices(self, batch, rng):
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self._size, size=batch)


class PrioritizedBuffer(_ColumnStore):
    """Ring buffer with per-entry priorities and rank-based sampling."""

    def __init__(self, capacity, alpha=DEFAULT_ALPHA,
                 priority_floor=PRIORITY_FLOOR):
        super().__init__(capacity)
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        self.alpha = alpha
        self.priority_floor = priority_floor
        self._priority = np.zeros(capacity)
        self._age = np.zeros(capacity, dtype=np.int64)
        self._counter = 0

    def priority(self, idx):
        return float(self._priority[idx])

    def push(self, transition):
        """Insert with the current maximum priority (1.0 into an empty
        buffer), so fresh transitions are never starved before their first
        replay."""
        prio = float(self._priority[:self._size].max()) if self._size else 1.0
        slot = self._store(transition)
        self._priority[slot] = prio
        self._age[slot] = self._counter
        self._counter += 1

    def sampling_distribution(self):
        """Exact rank-based sampling probabilities over the stored entries."""
        n = self._size
        if n == 0:
            raise ValueError("cannot sample from an empty buffer")
        prio = self._priority[:n]
        order = np.lexsort((self._age[:n], -prio))
        mass = (1.0 / np.arange(1, n + 1)) ** self.alpha
        # Equal priorities share their positions' average mass, so ties get
        # equal probability and an all-equal buffer is exactly uniform.
        p = np.empty(n)
        sorted_prio = prio[order]
        start = 0
        for end in range(1, n + 1):
            if end == n or sorted_prio[end] != sorted_prio[start]:
                p[order[start:end]] = mass[start:end].mean()
                start = end
        return p / p.sum()

    def sample(self, batch, beta, rng):
        """Draw ``batch`` indices from the rank-based distribution.

        Importance weights are ``(N P(i))**-beta`` normalized by the largest
        such weight over the whole buffer, so they lie in (0, 1]. Returns a
        list of ``(index, transition, weight)``.
        """
        idx, w = self.sample_indices(batch, beta, rng)
        return [(int(i), self[int(i)], float(wi)) for i, wi in zip(idx, w)]

    def sample_indices(self, batch, beta, rng):
        """Array variant of :meth:`sample`: ``(indices, weights)``."""
        if not 0.0 <= beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        p = self.sampling_distribution()
        w = (self._size * p) ** (-beta)
        w /= w.max()
        idx = rng.choice(self._size, size=batch, replace=True, p=p)
        return idx, w[idx]

    def update_priorities(self, indices, td_abs):
        """Replace stored priorities with |TD error| + floor (never zero)."""
        td_abs = np.asarray(td_abs, dtype=np.float64)
        if td_abs.shape != (len(indices),):
            raise ValueError("one TD magnitude per index required")
        if (td_abs < 0).any():
            raise ValueError("TD magnitudes must be non-negative")
        for i, td in zip(indices, td_abs):
            if not 0 <= i < self._size:
                raise IndexError(f"buffer index {i} out of range")
            self._priority[i] = float(td) + self.priority_floor


def anneal_beta(step, total_steps):
    """Linear importance-sampling exponent schedule from 0.5 to 1.0."""
    if not 0 <= step <= total_steps:
        raise ValueError("step must lie in [0, total_steps]")
    return 0.5 + 0.5 * (step / total_steps)
