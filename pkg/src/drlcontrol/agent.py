"""Deterministic off-policy actor-critic controller.

The agent owns an actor ``mu(s)``, a critic ``Q(s, a)``, slowly tracking
target copies of both, a FIFO replay memory and an Ornstein-Uhlenbeck
exploration process. :meth:`DdpgAgent.train_step` performs one batch update
of critic, actor and targets.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields
from typing import Callable, NamedTuple

import numpy as np

from drlcontrol import kernels
from drlcontrol.errors import (
    InsufficientDataError,
    InvalidParameterError,
    InvalidShapeError,
    NumericOverflowError,
)
from drlcontrol.nn import (
    AdamState,
    DenseNetwork,
    Mode,
    adam_step,
    build_mlp,
    network_from_lines,
    network_to_lines,
)


class Experience(NamedTuple):
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray


class ReplayMemory:
    """Bounded FIFO of transitions with uniform sampling (with replacement).

    Storage is a ring of preallocated arrays; the oldest entry is
    overwritten once ``capacity`` is reached.
    """

    def __init__(self, capacity, state_dim, action_dim, rng):
        if capacity < 1:
            raise InvalidParameterError("replay capacity must be >= 1")
        self.capacity = int(capacity)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.rng = rng
        self._states = np.zeros((self.capacity, state_dim))
        self._actions = np.zeros((self.capacity, action_dim))
        self._rewards = np.zeros(self.capacity)
        self._next = np.zeros((self.capacity, state_dim))
        self._head = 0  # next write slot
        self._size = 0

    def __len__(self):
        return self._size

    def push(self, e: Experience):
        s = np.asarray(e.state, dtype=np.float64).ravel()
        s2 = np.asarray(e.next_state, dtype=np.float64).ravel()
        a = np.asarray(e.action, dtype=np.float64).ravel()
        if s.size != self.state_dim or s2.size != self.state_dim:
            raise InvalidShapeError(f"state must have {self.state_dim} entries")
        if a.size != self.action_dim:
            raise InvalidShapeError(f"action must have {self.action_dim} entries")
        if not np.isfinite(e.reward):
            raise NumericOverflowError("reward must be finite")
        i = self._head
        self._states[i] = s
        self._actions[i] = a
        self._rewards[i] = e.reward
        self._next[i] = s2
        self._head = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _ordered_index(self, k):
        # k = 0 is the oldest stored entry
        start = (self._head - self._size) % self.capacity
        return (start + k) % self.capacity

    def __getitem__(self, k):
        if not -self._size <= k < self._size:
            raise IndexError(k)
        i = self._ordered_index(k % self._size)
        return Experience(
            self._states[i].copy(), self._actions[i].copy(), float(self._rewards[i]), self._next[i].copy()
        )

    def __iter__(self):
        for k in range(self._size):
            yield self[k]

    def _sample_indices(self, m):
        if m < 1:
            raise InvalidParameterError("sample size must be >= 1")
        if self._size < m:
            raise InsufficientDataError(f"replay holds {self._size} tuples, need {m}")
        return self.rng.integers(0, self._size, size=m)

    def sample_arrays(self, m):
        """Uniform sample of ``m`` transitions as ``(s, a, r, s')`` arrays."""
        # occupied slots are always 0..size-1, so raw slot indices are uniform
        idx = self._sample_indices(m)
        return self._states[idx], self._actions[idx], self._rewards[idx], self._next[idx]

    def sample(self, m):
        s, a, r, s2 = self.sample_arrays(m)
        return [Experience(s[i], a[i], float(r[i]), s2[i]) for i in range(m)]


def replay_push(memory: ReplayMemory, e: Experience):
    memory.push(e)
    return memory


def replay_sample(memory: ReplayMemory, m):
    return memory.sample(m)


@dataclass
class OuNoise:
    """Ornstein-Uhlenbeck process, one independent channel per action."""

    theta: float
    sigma: float
    dim: int
    rng: np.random.Generator
    dt: float = 1.0
    mean: np.ndarray | None = None
    current: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.theta <= 0 or self.sigma < 0 or self.dt <= 0:
            raise InvalidParameterError("OU needs theta > 0, sigma >= 0, dt > 0")
        self.mean = np.zeros(self.dim) if self.mean is None else np.asarray(self.mean, dtype=np.float64)
        self.current = self.mean.copy()

    def reset(self):
        self.current = self.mean.copy()

    def sample(self):
        drift = self.theta * (self.mean - self.current) * self.dt
        if self.sigma > 0:
            diffusion = self.sigma * np.sqrt(self.dt) * self.rng.standard_normal(self.dim)
        else:
            diffusion = 0.0
        self.current = self.current + drift + diffusion
        return self.current.copy()


def ou_sample(noise: OuNoise):
    return noise.sample()


def invert_gradient(g, a, a_low, a_high):
    """Scale an action gradient by the remaining room toward the bound it points at.

    Works elementwise on arrays. Actions outside ``[a_low, a_high]`` get a
    negative scale, which reverses the gradient and pushes them back inside.
    """
    g = np.asarray(g, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    a_low = np.asarray(a_low, dtype=np.float64)
    a_high = np.asarray(a_high, dtype=np.float64)
    if np.any(a_low >= a_high):
        raise InvalidParameterError("inverted gradients need a_low < a_high")
    if g.ndim == 2 and a.shape == g.shape:
        return kernels.invert_gradients(
            np.ascontiguousarray(g), np.ascontiguousarray(a),
            np.ascontiguousarray(np.broadcast_to(a_low, g.shape[1:])),
            np.ascontiguousarray(np.broadcast_to(a_high, g.shape[1:])),
        )
    width = a_high - a_low
    out = g * np.where(g > 0, (a_high - a) / width, (a - a_low) / width)
    return float(out) if out.ndim == 0 else out


def soft_update(online, target, tau):
    """``target <- tau * online + (1 - tau) * target`` in place.

    Accepts flat arrays or :class:`DenseNetwork` pairs (parameters and
    batch-norm running statistics are both blended).
    """
    if not 0.0 <= tau <= 1.0:
        raise InvalidParameterError("tau must lie in [0, 1]")
    if isinstance(online, DenseNetwork):
        if online.params.shape != target.params.shape or online.buffers.shape != target.buffers.shape:
            raise InvalidShapeError("online and target architectures differ")
        kernels.soft_update(target.params, online.params, tau)
        if target.buffers.size:
            kernels.soft_update(target.buffers, online.buffers, tau)
        target.touch()
        return target
    if online.shape != target.shape:
        raise InvalidShapeError(f"soft_update shape mismatch {online.shape} vs {target.shape}")
    kernels.soft_update(target, np.ascontiguousarray(online, dtype=np.float64), tau)
    return target


@dataclass
class AgentConfig:
    action_low: tuple
    action_high: tuple
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    tau: float = 1e-3
    gamma: float = 0.99
    batch_size: int = 64
    capacity: int = 100_000
    clamp_applied_action: bool = False
    ou_theta: float = 0.15
    ou_sigma: float = 0.30
    ou_dt: float = 1.0
    # where dQ/da is evaluated for the actor update: "policy" -> mu(s), "replay" -> stored a
    action_grad_at: str = "policy"

    def __post_init__(self):
        self.action_low = tuple(float(v) for v in np.atleast_1d(self.action_low))
        self.action_high = tuple(float(v) for v in np.atleast_1d(self.action_high))
        if len(self.action_low) != len(self.action_high):
            raise InvalidParameterError("action bounds must have equal length")
        if any(lo >= hi for lo, hi in zip(self.action_low, self.action_high)):
            raise InvalidParameterError("action_low must be < action_high elementwise")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise InvalidParameterError("learning rates must be positive")
        if not 0.0 < self.tau <= 1.0:
            raise InvalidParameterError("tau must lie in (0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidParameterError("gamma must lie in [0, 1]")
        if self.batch_size < 1 or self.capacity < self.batch_size:
            raise InvalidParameterError("need 1 <= batch_size <= capacity")
        if self.action_grad_at not in ("policy", "replay"):
            raise InvalidParameterError("action_grad_at must be 'policy' or 'replay'")

    @property
    def action_dim(self):
        return len(self.action_low)


@dataclass
class NetworkConfig:
    hidden: tuple = (400, 300)
    actor_activations: tuple = ("relu", "relu")
    critic_activations: tuple = ("relu", "relu")
    batch_norm: bool = True
    critic_batch_norm: bool = True
    l2_decay: float = 1e-4
    l2_layers: tuple = (1,)
    output_init_bound: float | None = None
    bn_momentum: float = 0.99


@dataclass
class TrainDiagnostics:
    critic_loss: float
    mean_target: float
    critic_grad_norm: float
    actor_grad_norm: float


class DdpgAgent:
    """Actor-critic controller with replay memory and target networks.

    The critic takes the concatenation ``[state, action]`` as input, so the
    action enters at the first hidden layer.
    """

    def __init__(self, state_dim, config: AgentConfig, net_config: NetworkConfig | None = None,
                 rng=None, actor=None, critic=None):
        self.config = config
        self.net_config = net_config or NetworkConfig()
        self.state_dim = int(state_dim)
        self.action_dim = config.action_dim
        self.rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        nc = self.net_config
        self.actor = actor or build_mlp(
            self.state_dim, self.action_dim, hidden=nc.hidden,
            hidden_activations=nc.actor_activations, batch_norm=nc.batch_norm,
            l2_decay=nc.l2_decay, l2_layers=nc.l2_layers,
            output_init_bound=nc.output_init_bound, bn_momentum=nc.bn_momentum, rng=self.rng,
        )
        self.critic = critic or build_mlp(
            self.state_dim + self.action_dim, 1, hidden=nc.hidden,
            hidden_activations=nc.critic_activations,
            batch_norm=nc.batch_norm and nc.critic_batch_norm,
            l2_decay=nc.l2_decay, l2_layers=nc.l2_layers,
            output_init_bound=nc.output_init_bound, bn_momentum=nc.bn_momentum, rng=self.rng,
        )
        if self.actor.input_dim != self.state_dim or self.actor.output_dim != self.action_dim:
            raise InvalidShapeError("actor dims do not match state/action dims")
        if self.critic.input_dim != self.state_dim + self.action_dim or self.critic.output_dim != 1:
            raise InvalidShapeError("critic must map state+action to a scalar")
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = AdamState.for_params(self.actor.params, config.actor_lr)
        self.critic_opt = AdamState.for_params(self.critic.params, config.critic_lr)
        self.memory = ReplayMemory(config.capacity, self.state_dim, self.action_dim, self.rng)
        self.noise = OuNoise(config.ou_theta, config.ou_sigma, self.action_dim, self.rng, dt=config.ou_dt)
        self.low = np.array(config.action_low)
        self.high = np.array(config.action_high)
        self.learning_enabled = True
        self.exploring = True

    # -- acting -------------------------------------------------------------

    def policy(self, state):
        state = np.asarray(state, dtype=np.float64).reshape(1, -1)
        if state.shape[1] != self.state_dim:
            raise InvalidShapeError(f"state must have {self.state_dim} entries, got {state.shape[1]}")
        return self.actor.predict(state)[0]

    def select_action(self, state):
        """Policy output plus exploration noise when exploring.

        This is the value stored for learning; :meth:`applied_action` gives
        what is sent to the plant.
        """
        a = self.policy(state)
        if self.exploring:
            a = a + self.noise.sample()
        return a

    def applied_action(self, action):
        if self.config.clamp_applied_action:
            return np.clip(action, self.low, self.high)
        return np.asarray(action, dtype=np.float64)

    def remember(self, state, action, reward, next_state):
        self.memory.push(Experience(state, action, reward, next_state))

    # -- learning -----------------------------------------------------------

    def compute_targets(self, rewards, next_states):
        """``r + gamma * Q'(s', mu'(s'))`` with the target networks."""
        a2 = self.target_actor.predict(next_states)
        q2 = self.target_critic.predict(np.hstack([next_states, a2]))[:, 0]
        return rewards + self.config.gamma * q2

    def update_critic(self, states, actions, targets):
        m = states.shape[0]
        q, cache = self.critic.forward(np.hstack([states, actions]), Mode.TRAIN)
        td = q[:, 0] - targets
        loss = float(np.mean(td * td))
        if not np.isfinite(loss):
            raise NumericOverflowError("critic loss is not finite")
        grads = self.critic.backward(cache, (2.0 / m) * td[:, None])
        adam_step(self.critic.params, grads.flat, self.critic_opt)
        self.critic.touch()
        return loss, float(np.linalg.norm(grads.flat))

    def critic_action_gradient(self, states, actions):
        """Per-sample dQ/da from the online critic (running BN statistics)."""
        q, cache = self.critic.forward(np.hstack([states, actions]), Mode.INFER)
        g = self.critic.backward(cache, np.ones_like(q), param_grads=False)
        return g.inputs[:, self.state_dim:]

    def update_actor(self, states, replay_actions=None,
                     action_gradient: Callable | None = None):
        """One ascent step on the batch-mean deterministic policy gradient.

        ``action_gradient(states, actions)`` returns dQ/da per sample; it
        defaults to the online critic and may be replaced (e.g. by a fixed
        analytic critic in tests).
        """
        m = states.shape[0]
        mu, cache = self.actor.forward(states, Mode.TRAIN)
        if self.config.action_grad_at == "replay" and replay_actions is not None:
            at = replay_actions
        else:
            at = mu
        grad_fn = action_gradient or self.critic_action_gradient
        dq_da = grad_fn(states, at)
        dq_da = invert_gradient(dq_da, at, self.low, self.high)
        # Adam descends, so feed the negated ascent direction
        grads = self.actor.backward(cache, -dq_da / m)
        adam_step(self.actor.params, grads.flat, self.actor_opt)
        self.actor.touch()
        return float(np.linalg.norm(grads.flat))

    def update_targets(self):
        soft_update(self.actor, self.target_actor, self.config.tau)
        soft_update(self.critic, self.target_critic, self.config.tau)

    def train_step(self):
        if not self.learning_enabled:
            raise InvalidParameterError("train_step called while learning is disabled")
        s, a, r, s2 = self.memory.sample_arrays(self.config.batch_size)
        y = self.compute_targets(r, s2)
        loss, cnorm = self.update_critic(s, a, y)
        anorm = self.update_actor(s, replay_actions=a)
        self.update_targets()
        return TrainDiagnostics(loss, float(np.mean(y)), cnorm, anorm)

    # -- checkpoints --------------------------------------------------------

    def save(self, path):
        save_agent(self, path)


AGENT_MAGIC = "drlcontrol-agent"
AGENT_FORMAT_VERSION = 1


def _fmt(value):
    if isinstance(value, (tuple, list)):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, enum.Enum):
        return str(value.value)
    return repr(value) if isinstance(value, float) else str(value)


def save_agent(agent: DdpgAgent, path):
    """Write config plus online actor and critic in the network text format.

    Layout::

        drlcontrol-agent 1
        state_dim <n>
        agent.<field> <value>      (one line per AgentConfig field)
        network.<field> <value>    (one line per NetworkConfig field)
        [actor]
        <network block>
        [critic]
        <network block>
    """
    lines = [f"{AGENT_MAGIC} {AGENT_FORMAT_VERSION}", f"state_dim {agent.state_dim}"]
    for f in fields(AgentConfig):
        lines.append(f"agent.{f.name} {_fmt(getattr(agent.config, f.name))}")
    for f in fields(NetworkConfig):
        lines.append(f"network.{f.name} {_fmt(getattr(agent.net_config, f.name))}")
    lines.append("[actor]")
    lines.extend(network_to_lines(agent.actor))
    lines.append("[critic]")
    lines.extend(network_to_lines(agent.critic))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_value(raw, default):
    if isinstance(default, bool):
        return raw == "True"
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float) or default is None:
        return None if raw == "None" else float(raw)
    if isinstance(default, tuple):
        items = [v for v in raw.split(",") if v]
        if default and isinstance(default[0], str):
            return tuple(items)
        if default and isinstance(default[0], int):
            return tuple(int(v) for v in items)
        return tuple(float(v) for v in items)
    return raw


def load_agent(path, rng=None):
    with open(path) as fh:
        lines = fh.read().splitlines()
    head = lines[0].split()
    if head[0] != AGENT_MAGIC or int(head[1]) != AGENT_FORMAT_VERSION:
        raise ValueError(f"{path}: not a drlcontrol agent checkpoint")
    state_dim = int(lines[1].split()[1])
    agent_kw, net_kw = {}, {}
    defaults_a = {"action_low": (0.0,), "action_high": (1.0,)}
    defaults_a.update({f.name: f.default for f in fields(AgentConfig) if f.name not in defaults_a})
    defaults_n = {f.name: f.default for f in fields(NetworkConfig)}
    defaults_n["output_init_bound"] = None
    i = 2
    while not lines[i].startswith("["):
        key, _, raw = lines[i].partition(" ")
        scope, name = key.split(".", 1)
        if scope == "agent":
            agent_kw[name] = _parse_value(raw, defaults_a[name])
        else:
            net_kw[name] = _parse_value(raw, defaults_n[name])
        i += 1
    actor, i = network_from_lines(lines, i + 1)
    critic, i = network_from_lines(lines, i + 1)
    return DdpgAgent(state_dim, AgentConfig(**agent_kw), NetworkConfig(**net_kw), rng=rng,
                     actor=actor, critic=critic)
