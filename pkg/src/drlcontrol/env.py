"""Controller-facing environment: RL state, rewards, episodes, set-points.

The RL state stacks recent outputs, recent actions and the current tracking
error::

    [y_1,t .. y_1,t-dy, y_2,t .. y_2,t-dy, ...,
     a_1,t-1 .. a_1,t-da, ...,
     y_1,t - sp_1, ...]

Blocks are channel-contiguous. With ``dy = da = 0`` it reduces to
``[y_t, y_t - sp]``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from drlcontrol.errors import ConfigError, InsufficientHistoryError, InvalidParameterError
from drlcontrol.plants import MeasurementNoise


def state_dim(n_y, n_a, d_y, d_a):
    return n_y * (d_y + 1) + n_a * d_a + n_y


def build_rl_state(output_history, action_history, y_sp, d_y, d_a):
    """Assemble the RL state vector.

    ``output_history[0]`` is ``y_t`` and later rows are older;
    ``action_history[0]`` is ``a_{t-1}``. Each row is a per-channel vector
    (scalars are accepted for single-channel plants).
    """
    ys = [np.atleast_1d(np.asarray(y, dtype=np.float64)) for y in output_history]
    acts = [np.atleast_1d(np.asarray(a, dtype=np.float64)) for a in action_history]
    if len(ys) < d_y + 1:
        raise InsufficientHistoryError(f"need {d_y + 1} outputs, have {len(ys)}")
    if len(acts) < d_a:
        raise InsufficientHistoryError(f"need {d_a} past actions, have {len(acts)}")
    sp = np.atleast_1d(np.asarray(y_sp, dtype=np.float64))
    y_block = np.stack(ys[: d_y + 1], axis=1).ravel()  # channel-major
    parts = [y_block]
    if d_a:
        parts.append(np.stack(acts[:d_a], axis=1).ravel())
    parts.append(ys[0] - sp)
    return np.concatenate(parts)


# -- rewards ----------------------------------------------------------------

class RewardKindTag(str, enum.Enum):
    L1 = "l1"
    POLAR = "polar"
    L1_EPSILON = "l1_epsilon"


@dataclass(frozen=True)
class RewardKind:
    tag: RewardKindTag = RewardKindTag.L1
    c: float = 0.0
    epsilon: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "tag", RewardKindTag(self.tag))
        if self.tag is RewardKindTag.L1_EPSILON and not (self.c > 0 and self.epsilon > 0):
            raise InvalidParameterError("l1_epsilon reward needs c > 0 and epsilon > 0")

    @classmethod
    def l1(cls):
        return cls(RewardKindTag.L1)

    @classmethod
    def polar(cls):
        return cls(RewardKindTag.POLAR)

    @classmethod
    def l1_epsilon(cls, c, epsilon):
        return cls(RewardKindTag.L1_EPSILON, c, epsilon)


def compute_reward(kind: RewardKind, y_t, y_next, y_sp):
    """Reward for the transition ``y_t -> y_next``.

    L1 and L1-epsilon score the post-action output ``y_next``; polar returns
    0 only when every channel's absolute error strictly shrank.
    """
    y_t = np.atleast_1d(np.asarray(y_t, dtype=np.float64))
    y_next = np.atleast_1d(np.asarray(y_next, dtype=np.float64))
    sp = np.atleast_1d(np.asarray(y_sp, dtype=np.float64))
    err_next = np.abs(y_next - sp)
    if kind.tag is RewardKindTag.L1:
        return -float(err_next.sum())
    if kind.tag is RewardKindTag.POLAR:
        return 0.0 if bool(np.all(np.abs(y_t - sp) > err_next)) else -1.0
    if bool(np.all(err_next <= kind.epsilon)):
        return float(kind.c)
    return -float(err_next.sum())


# -- episodes ---------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeConfig:
    max_steps: int = 200
    tolerance: float = 0.01
    consecutive_required: int = 5
    settle_steps: int = 50

    def __post_init__(self):
        if min(self.max_steps, self.consecutive_required, self.settle_steps) < 1:
            raise InvalidParameterError("episode counts must be >= 1")
        if self.tolerance <= 0:
            raise InvalidParameterError("tolerance must be positive")


class Status(str, enum.Enum):
    CONTINUE = "continue"
    TRACKED = "tracked"
    TIMEOUT = "timeout"


def episode_status(errors, config: EpisodeConfig):
    """Decide whether an episode ends.

    ``errors`` is the per-step sequence of absolute tracking errors (scalar
    or per channel), one entry per step taken so far.
    """
    n = len(errors)
    k = config.consecutive_required
    if n >= k:
        recent = np.asarray([np.max(np.abs(np.atleast_1d(e))) for e in errors[-k:]])
        if np.all(recent <= config.tolerance):
            return Status.TRACKED
    if n >= config.max_steps:
        return Status.TIMEOUT
    return Status.CONTINUE


# -- set-point schedules ----------------------------------------------------

@dataclass
class GridSetpoints:
    values: Sequence[float]
    channels: int = 1

    def __post_init__(self):
        if len(self.values) == 0:
            raise ConfigError("set-point grid is empty")

    def sample(self, rng, t=0):
        return np.array([float(rng.choice(self.values)) for _ in range(self.channels)])


@dataclass
class PairGridSetpoints:
    """Independent draws for two channels, rejecting pairs farther apart than ``max_gap``."""

    values: Sequence[float]
    max_gap: float

    def __post_init__(self):
        if len(self.values) == 0:
            raise ConfigError("set-point grid is empty")
        v = np.asarray(self.values)
        if not np.any(np.abs(v[:, None] - v[None, :]) <= self.max_gap):
            raise ConfigError("no pair satisfies max_gap")

    def sample(self, rng, t=0):
        while True:
            y1 = float(rng.choice(self.values))
            y2 = float(rng.choice(self.values))
            if abs(y1 - y2) <= self.max_gap + 1e-12:
                return np.array([y1, y2])


@dataclass
class SinusoidSetpoints:
    amplitude: float
    period: float
    offset: float = 0.0
    channels: int = 1

    def sample(self, rng=None, t=0):
        v = self.offset + self.amplitude * math.sin(2.0 * math.pi * t / self.period)
        return np.full(self.channels, v)


@dataclass
class PiecewiseConstantSetpoints:
    times: Sequence[int]
    values: Sequence[float]
    channels: int = 1

    def __post_init__(self):
        if len(self.values) == 0 or len(self.times) != len(self.values):
            raise ConfigError("piecewise set-points need matching, non-empty times and values")
        if list(self.times) != sorted(self.times):
            raise ConfigError("piecewise set-point times must be increasing")

    def sample(self, rng=None, t=0):
        idx = int(np.searchsorted(np.asarray(self.times), t, side="right")) - 1
        return np.full(self.channels, float(self.values[max(idx, 0)]))


def sample_setpoint(scheduler, rng, t=0):
    return scheduler.sample(rng, t)


def is_time_varying(scheduler):
    return isinstance(scheduler, (SinusoidSetpoints, PiecewiseConstantSetpoints))


# -- episode initialization -------------------------------------------------

@dataclass
class RandomActionInitializer:
    """Hold one uniformly drawn action until the plant settles."""

    low: np.ndarray
    high: np.ndarray

    def draw(self, rng, setpoint=None):
        return rng.uniform(self.low, self.high)


@dataclass
class RegressionInitializer:
    """Draw actions along a fitted line through feasible settled inputs.

    The first input is drawn uniformly over the feasible span; the others
    come from ``intercept + slope * u_0`` plus Gaussian noise.
    """

    intercepts: np.ndarray
    slopes: np.ndarray
    u0_range: tuple
    noise_std: float = 1.0

    def draw(self, rng, setpoint=None):
        u0 = rng.uniform(*self.u0_range)
        rest = self.intercepts + self.slopes * u0 + self.noise_std * rng.standard_normal(self.slopes.shape)
        return np.concatenate([[u0], rest])

    @classmethod
    def fit(cls, plant, low, high, out_low, out_high, rng, n_samples=2000, settle_steps=50,
            noise_std=1.0):
        """Probe ``plant`` with random constant inputs and regress the feasible ones.

        Each probe starts from the plant's reset state and holds the input
        for ``settle_steps``; inputs whose outputs all land in
        ``[out_low, out_high]`` are kept.
        """
        low = np.asarray(low, dtype=np.float64)
        high = np.asarray(high, dtype=np.float64)
        kept = []
        for _ in range(n_samples):
            u = rng.uniform(low, high)
            probe = plant.copy()
            probe.reset()
            for _ in range(settle_steps):
                y = probe.step(u)
            if np.all(y >= out_low) and np.all(y <= out_high):
                kept.append(u)
        if len(kept) < 2:
            raise ConfigError("regression initializer found fewer than 2 feasible inputs")
        kept = np.array(kept)
        x = kept[:, 0]
        X = np.column_stack([np.ones_like(x), x])
        coef, *_ = np.linalg.lstsq(X, kept[:, 1:], rcond=None)
        return cls(coef[0], coef[1], (float(x.min()), float(x.max())), noise_std)


@dataclass
class EpisodeStart:
    outputs: list  # most recent first, true (noise-free) plant outputs
    actions: list  # most recent first


def init_episode(plant, initializer, rng, settle_steps, history=1, setpoint=None):
    """Settle the plant under one drawn action and return the histories.

    ``history`` is how many outputs/actions the RL state needs.
    """
    if settle_steps < 1:
        raise InvalidParameterError("settle_steps must be >= 1")
    a = np.atleast_1d(initializer.draw(rng, setpoint))
    outs = [plant.output()]
    for _ in range(settle_steps):
        outs.append(plant.step(a))
    n = max(history, 1)
    outputs = outs[::-1][:n]
    while len(outputs) < n:
        outputs.append(outputs[-1])
    return EpisodeStart(outputs=[np.array(o) for o in outputs], actions=[a.copy() for _ in range(n)])


# -- environment wrapper ----------------------------------------------------

@dataclass
class ControlEnv:
    """Plant plus measurement noise, histories and reward bookkeeping."""

    plant: object
    reward: RewardKind
    d_y: int = 0
    d_a: int = 0
    noise: MeasurementNoise | None = None
    setpoint: np.ndarray = field(default=None)
    outputs: list = field(default_factory=list)  # measured, most recent first
    actions: list = field(default_factory=list)

    @property
    def n_y(self):
        return self.plant.output_dim

    @property
    def n_a(self):
        return self.plant.input_dim

    @property
    def state_dim(self):
        return state_dim(self.n_y, self.n_a, self.d_y, self.d_a)

    def measure(self, y):
        return self.noise.apply(y) if self.noise is not None else np.asarray(y, dtype=np.float64).copy()

    def reset(self, setpoint, initializer, rng, settle_steps, reset_plant=False):
        """Start an episode; ``reset_plant`` first returns the plant to its initial state."""
        if reset_plant:
            self.plant.reset()
        start = init_episode(self.plant, initializer, rng, settle_steps,
                             history=max(self.d_y + 1, self.d_a, 1), setpoint=setpoint)
        self.outputs = [self.measure(y) for y in start.outputs]
        self.actions = start.actions
        self.setpoint = np.atleast_1d(np.asarray(setpoint, dtype=np.float64))
        return self.state()

    def state(self):
        return build_rl_state(self.outputs, self.actions, self.setpoint, self.d_y, self.d_a)

    def step(self, action):
        """Apply ``action``; returns ``(next_state, reward, measured_y_next)``."""
        y_prev = self.outputs[0]
        y_true = self.plant.step(action)
        y_next = self.measure(y_true)
        r = compute_reward(self.reward, y_prev, y_next, self.setpoint)
        keep = max(self.d_y + 1, 1)
        self.outputs = [y_next] + self.outputs[: keep - 1]
        keep_a = max(self.d_a, 1)
        self.actions = [np.atleast_1d(np.asarray(action, dtype=np.float64))] + self.actions[: keep_a - 1]
        return self.state(), r, y_next

    def set_setpoint(self, setpoint):
        self.setpoint = np.atleast_1d(np.asarray(setpoint, dtype=np.float64))
