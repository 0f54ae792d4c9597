"""Finite MDPs: exact value iteration and tabular Q-learning.

Used as a small, fully checkable reference for the TD semantics shared with
the deep agent. Greedy choices break ties toward the lowest action index.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from drlcontrol.errors import ConfigError, InvalidParameterError, InvalidShapeError, NonConvergenceError


@dataclass
class FiniteMdp:
    """``transition[s, a, s']``, ``reward[s, a]`` and per-state terminal flags.

    Terminal states are normalized on construction: they self-loop with zero
    reward regardless of what was passed in.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    terminal: np.ndarray = None

    def __post_init__(self):
        P = np.array(self.transition, dtype=np.float64)
        R = np.array(self.reward, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InvalidShapeError("transition must have shape (S, A, S)")
        if R.shape != P.shape[:2]:
            raise InvalidShapeError("reward must have shape (S, A)")
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidParameterError("gamma must lie in [0, 1]")
        if np.any(P < 0) or not np.allclose(P.sum(axis=2), 1.0, atol=1e-9, rtol=0):
            raise InvalidParameterError("every transition row must be a probability vector")
        term = np.zeros(P.shape[0], dtype=bool) if self.terminal is None else np.asarray(self.terminal, dtype=bool)
        if term.shape != (P.shape[0],):
            raise InvalidShapeError("terminal flags must have one entry per state")
        for s in np.flatnonzero(term):
            P[s] = 0.0
            P[s, :, s] = 1.0
            R[s] = 0.0
        self.transition, self.reward, self.terminal = P, R, term

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    def step(self, s, a, rng):
        s_next = int(rng.choice(self.n_states, p=self.transition[s, a]))
        return s_next, float(self.reward[s, a])


def bellman_backup(mdp: FiniteMdp, q):
    q_new = mdp.reward + mdp.gamma * mdp.transition @ q.max(axis=1)
    q_new[mdp.terminal] = 0.0
    return q_new


def value_iteration(mdp: FiniteMdp, tolerance=1e-10, max_iterations=1_000_000):
    """Iterate the Bellman optimality operator to a sup-norm fixed point.

    Stops once the residual guarantees ``|Q - Q*| <= tolerance``. With
    ``gamma == 1`` there is no contraction; it raises unless the residual
    hits zero (e.g. every path ends in a terminal state).
    """
    if tolerance <= 0:
        raise InvalidParameterError("tolerance must be positive")
    q = np.zeros_like(mdp.reward)
    g = mdp.gamma
    for _ in range(max_iterations):
        q_new = bellman_backup(mdp, q)
        diff = float(np.max(np.abs(q_new - q)))
        q = q_new
        if diff == 0.0:
            return q
        if g < 1.0 and diff * g / (1.0 - g) <= tolerance:
            return q
    raise NonConvergenceError(f"value iteration did not converge in {max_iterations} sweeps (gamma={g})")


def greedy_action(q_row, epsilon, rng):
    """Epsilon-greedy choice; ``np.argmax`` already returns the lowest tied index."""
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(len(q_row)))
    return int(np.argmax(q_row))


def greedy_policy(q, epsilon, rng):
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidParameterError("epsilon must lie in [0, 1]")
    q = np.asarray(q)

    def choose(s):
        return greedy_action(q[s], epsilon, rng)

    return choose


def decayed_alpha(alpha0, k, scale=1e4):
    return alpha0 / (1.0 + k / scale)


@dataclass
class QLearningResult:
    q: np.ndarray
    steps: int
    episodes: int
    visits: np.ndarray = field(repr=False, default=None)


def q_learning(mdp: FiniteMdp, episodes, alpha, epsilon, rng, max_steps=None, episode_length=100,
               decay=True, start_state=None, q0=None):
    """Epsilon-greedy tabular Q-learning.

    ``alpha`` is the initial step size; with ``decay`` the k-th update uses
    ``alpha / (1 + k / 1e4)``, counted per state-action pair. Episodes start
    from ``start_state`` (uniform over non-terminal states when ``None``) and
    end at a terminal state or after ``episode_length`` steps. ``max_steps``
    caps the total number of updates.
    """
    if not 0.0 < alpha <= 1.0:
        raise InvalidParameterError("alpha must lie in (0, 1]")
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidParameterError("epsilon must lie in [0, 1]")
    q = np.zeros_like(mdp.reward) if q0 is None else np.array(q0, dtype=np.float64)
    q[mdp.terminal] = 0.0
    visits = np.zeros(q.shape, dtype=np.int64)
    live = np.flatnonzero(~mdp.terminal)
    if live.size == 0:
        return QLearningResult(q, 0, 0, visits)
    # cumulative rows make sampling a cheap searchsorted
    cdf = np.cumsum(mdp.transition, axis=2)
    steps = 0
    done_episodes = 0
    for _ in range(episodes):
        s = int(rng.choice(live)) if start_state is None else int(start_state)
        for _ in range(episode_length):
            if mdp.terminal[s] or (max_steps is not None and steps >= max_steps):
                break
            a = greedy_action(q[s], epsilon, rng)
            s_next = min(int(np.searchsorted(cdf[s, a], rng.random(), side="right")), mdp.n_states - 1)
            r = mdp.reward[s, a]
            target = r + mdp.gamma * (0.0 if mdp.terminal[s_next] else q[s_next].max())
            step = decayed_alpha(alpha, visits[s, a]) if decay else alpha
            q[s, a] += step * (target - q[s, a])
            visits[s, a] += 1
            steps += 1
            s = s_next
        done_episodes += 1
        if max_steps is not None and steps >= max_steps:
            break
    return QLearningResult(q, steps, done_episodes, visits)


def random_mdp(n_states, n_actions, gamma, rng, deterministic=False, reward_range=(0.0, 1.0)):
    """Random MDP with dense Dirichlet transitions, or one-hot ones if ``deterministic``."""
    if deterministic:
        P = np.zeros((n_states, n_actions, n_states))
        nxt = rng.integers(0, n_states, size=(n_states, n_actions))
        P[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], nxt] = 1.0
    else:
        P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.uniform(*reward_range, size=(n_states, n_actions))
    return FiniteMdp(P, R, gamma)


def parse_mdp(text):
    """Read an MDP from plain text.

    Format (``#`` starts a comment, blank lines ignored)::

        states 2
        actions 1
        gamma 0.9
        terminal 1
        reward
        1.0
        0.0
        transition 0
        0 1
        transition 1
        0 1

    ``reward`` is followed by S rows of A values; ``transition a`` by an
    S x S matrix for action ``a``. ``terminal`` lists state indices and may
    be omitted.
    """
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    header = {}
    i = 0
    terminal = []
    while i < len(lines) and lines[i].split()[0] in ("states", "actions", "gamma", "terminal"):
        key, *vals = lines[i].split()
        if key == "terminal":
            terminal = [int(v) for v in vals]
        else:
            if len(vals) != 1:
                raise ConfigError(f"expected one value for {key}", key=key)
            header[key] = vals[0]
        i += 1
    for key in ("states", "actions", "gamma"):
        if key not in header:
            raise ConfigError("missing header field", key=key)
    S, A, gamma = int(header["states"]), int(header["actions"]), float(header["gamma"])
    R = None
    P = np.full((S, A, S), np.nan)

    def rows(start, n, width, key):
        block = []
        for r in range(n):
            if start + r >= len(lines):
                raise ConfigError("truncated matrix", key=key)
            vals = [float(v) for v in lines[start + r].split()]
            if len(vals) != width:
                raise ConfigError(f"row has {len(vals)} values, expected {width}", key=key)
            block.append(vals)
        return np.array(block)

    while i < len(lines):
        parts = lines[i].split()
        if parts[0] == "reward":
            R = rows(i + 1, S, A, "reward")
            i += 1 + S
        elif parts[0] == "transition" and len(parts) == 2:
            a = int(parts[1])
            if not 0 <= a < A:
                raise ConfigError(f"action {a} out of range", key="transition")
            P[:, a, :] = rows(i + 1, S, S, f"transition {a}")
            i += 1 + S
        else:
            raise ConfigError(f"unexpected line: {lines[i]!r}")
    if R is None:
        raise ConfigError("missing reward block", key="reward")
    if np.isnan(P).any():
        raise ConfigError("missing transition block", key="transition")
    term = np.zeros(S, dtype=bool)
    term[terminal] = True
    return FiniteMdp(P, R, gamma, term)


def load_mdp(path):
    return parse_mdp(Path(path).read_text())
