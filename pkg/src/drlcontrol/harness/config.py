"""Experiment configuration: INI files read with :mod:`configparser`.

Grammar
-------
Standard INI: ``[section]`` headers and ``key = value`` lines, ``#`` or ``;``
comments. Values are typed per key: integers, reals (``5e4`` is accepted for
counts), booleans (``true``/``false``), strings, and lists written as comma
separated values. Unknown sections or keys are rejected.

Sections and keys (defaults in parentheses)::

    [experiment]  seed (required), episodes (500), output_dir (runs/out),
                  d_y (0), d_a (0), freeze_threshold (1e-4),
                  freeze_window (4), reenable_factor (10), save_traces (false),
                  continuous (false), total_steps (0)
    [plant]       kind: transfer_function | distillation | hvac
                  numerator, denominator            (transfer_function)
                  time_constant (75), sample_time (1) (distillation)
                  theta (placeholder), boundary (clip),
                  valve_quadratic, walk_std_fraction (0.01)  (hvac)
                  noise_variance (0), change_time (-1), change_scale (1)
    [agent]       action_low, action_high (required), actor_lr (1e-4),
                  critic_lr (1e-4), tau (1e-3), gamma (0.99),
                  batch_size (64), capacity (1e5),
                  clamp_applied_action (false), ou_theta (0.15),
                  ou_sigma (0.30), ou_dt (1), action_grad_at (policy)
    [network]     hidden (400, 300), actor_activations (relu, relu),
                  critic_activations (relu, relu), batch_norm (true),
                  critic_batch_norm (true), l2_decay (1e-4),
                  output_init_bound (none)
    [reward]      kind: l1 | polar | l1_epsilon; c, epsilon
    [setpoints]   kind: grid | pair_grid | sinusoid | piecewise
                  values, max_gap, amplitude, period, offset, times
    [episode]     max_steps (200), tolerance (0.01),
                  consecutive_required (5), settle_steps (50),
                  initializer: random | regression,
                  output_low, output_high (regression feasibility box),
                  regression_samples (2000), regression_noise (1.0)
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from drlcontrol.agent import AgentConfig, NetworkConfig
from drlcontrol.env import (
    EpisodeConfig,
    GridSetpoints,
    PairGridSetpoints,
    PiecewiseConstantSetpoints,
    RewardKind,
    SinusoidSetpoints,
)
from drlcontrol.errors import ConfigError, DrlControlError
from drlcontrol.nn import Activation
from drlcontrol.plants import HVAC_PLACEHOLDER_THETA

PRESET_DIR = Path(__file__).resolve().parent.parent / "presets"


@dataclass
class PlantConfig:
    kind: str
    numerator: tuple = ()
    denominator: tuple = ()
    time_constant: float = 75.0
    sample_time: float = 1.0
    theta: tuple = HVAC_PLACEHOLDER_THETA
    boundary: str = "clip"
    valve_quadratic: float | None = None
    walk_std_fraction: float = 0.01
    noise_variance: float = 0.0
    change_time: int = -1
    change_scale: float = 1.0


@dataclass
class ExperimentConfig:
    seed: int
    plant: PlantConfig
    agent: AgentConfig
    network: NetworkConfig
    reward: RewardKind
    setpoints: object
    episode: EpisodeConfig
    episodes: int = 500
    d_y: int = 0
    d_a: int = 0
    freeze_threshold: float = 1e-4
    freeze_window: int = 4
    reenable_factor: float = 10.0
    output_dir: str = "runs/out"
    save_traces: bool = False
    continuous: bool = False
    total_steps: int = 0
    initializer: str = "random"
    output_low: tuple = ()
    output_high: tuple = ()
    regression_samples: int = 2000
    regression_noise: float = 1.0
    source: str = field(default="", repr=False)

    def with_overrides(self, **kw):
        return replace(self, **kw)


# -- typed readers ----------------------------------------------------------

def _int(raw, key):
    try:
        v = float(raw)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}", key=key) from None
    if not math.isfinite(v) or v != int(v):
        raise ConfigError(f"expected an integer, got {raw!r}", key=key)
    return int(v)


def _float(raw, key):
    try:
        v = float(raw)
    except ValueError:
        raise ConfigError(f"expected a number, got {raw!r}", key=key) from None
    if not math.isfinite(v):
        raise ConfigError(f"expected a finite number, got {raw!r}", key=key)
    return v


def _bool(raw, key):
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected true/false, got {raw!r}", key=key)


def _floats(raw, key):
    items = [s.strip() for s in raw.split(",") if s.strip()]
    if not items:
        raise ConfigError("expected a comma-separated list", key=key)
    return tuple(_float(s, key) for s in items)


def _ints(raw, key):
    return tuple(_int(s.strip(), key) for s in raw.split(",") if s.strip())


def _strs(raw):
    return tuple(s.strip() for s in raw.split(",") if s.strip())


_SCHEMA = {
    "experiment": {"seed", "episodes", "output_dir", "d_y", "d_a", "freeze_threshold", "freeze_window",
                   "reenable_factor", "save_traces", "continuous", "total_steps"},
    "plant": {"kind", "numerator", "denominator", "time_constant", "sample_time", "theta", "boundary",
              "valve_quadratic", "walk_std_fraction", "noise_variance", "change_time", "change_scale"},
    "agent": {"action_low", "action_high", "actor_lr", "critic_lr", "tau", "gamma", "batch_size", "capacity",
              "clamp_applied_action", "ou_theta", "ou_sigma", "ou_dt", "action_grad_at"},
    "network": {"hidden", "actor_activations", "critic_activations", "batch_norm", "critic_batch_norm",
                "l2_decay", "output_init_bound"},
    "reward": {"kind", "c", "epsilon"},
    "setpoints": {"kind", "values", "max_gap", "amplitude", "period", "offset", "times"},
    "episode": {"max_steps", "tolerance", "consecutive_required", "settle_steps", "initializer", "output_low",
                "output_high", "regression_samples", "regression_noise"},
}


class _Section:
    def __init__(self, parser, name):
        self.name = name
        self.data = dict(parser[name]) if parser.has_section(name) else {}

    def key(self, k):
        return f"{self.name}.{k}"

    def has(self, k):
        return k in self.data

    def raw(self, k, default=None, required=False):
        if k in self.data:
            return self.data[k]
        if required:
            raise ConfigError("missing required key", key=self.key(k))
        return default

    def int(self, k, default=None, required=False):
        r = self.raw(k, None, required)
        return default if r is None else _int(r, self.key(k))

    def float(self, k, default=None, required=False):
        r = self.raw(k, None, required)
        return default if r is None else _float(r, self.key(k))

    def bool(self, k, default=False):
        r = self.raw(k)
        return default if r is None else _bool(r, self.key(k))

    def floats(self, k, default=None, required=False):
        r = self.raw(k, None, required)
        return default if r is None else _floats(r, self.key(k))

    def str(self, k, default=None, required=False):
        r = self.raw(k, None, required)
        return default if r is None else r.strip()


def _activations(raw, key):
    try:
        return tuple(Activation(s.lower()) for s in _strs(raw))
    except ValueError:
        raise ConfigError(f"unknown activation in {raw!r}", key=key) from None


def parse_config(text, source="<string>"):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: cannot parse: {exc}") from None
    if not parser.sections():
        raise ConfigError(f"{source}: no sections found")
    for name in parser.sections():
        if name not in _SCHEMA:
            raise ConfigError("unknown section", key=name)
        for k in parser[name]:
            if k not in _SCHEMA[name]:
                raise ConfigError("unknown key", key=f"{name}.{k}")

    ex = _Section(parser, "experiment")
    pl = _Section(parser, "plant")
    ag = _Section(parser, "agent")
    nw = _Section(parser, "network")
    rw = _Section(parser, "reward")
    sp = _Section(parser, "setpoints")
    ep = _Section(parser, "episode")

    try:
        plant = _plant(pl)
        agent = AgentConfig(
            action_low=np.array(ag.floats("action_low", required=True)),
            action_high=np.array(ag.floats("action_high", required=True)),
            actor_lr=ag.float("actor_lr", 1e-4),
            critic_lr=ag.float("critic_lr", 1e-4),
            tau=ag.float("tau", 1e-3),
            gamma=ag.float("gamma", 0.99),
            batch_size=ag.int("batch_size", 64),
            capacity=ag.int("capacity", 100_000),
            clamp_applied_action=ag.bool("clamp_applied_action", False),
            ou_theta=ag.float("ou_theta", 0.15),
            ou_sigma=ag.float("ou_sigma", 0.30),
            ou_dt=ag.float("ou_dt", 1.0),
            action_grad_at=ag.str("action_grad_at", "policy"),
        )
        network = _network(nw)
        reward = _reward(rw)
        setpoints = _setpoints(sp)
        episode = EpisodeConfig(
            max_steps=ep.int("max_steps", 200),
            tolerance=ep.float("tolerance", reward.epsilon if reward.epsilon > 0 else 0.01),
            consecutive_required=ep.int("consecutive_required", 5),
            settle_steps=ep.int("settle_steps", 50),
        )
        cfg = ExperimentConfig(
            seed=ex.int("seed", required=True),
            plant=plant,
            agent=agent,
            network=network,
            reward=reward,
            setpoints=setpoints,
            episode=episode,
            episodes=ex.int("episodes", 500),
            d_y=ex.int("d_y", 0),
            d_a=ex.int("d_a", 0),
            freeze_threshold=ex.float("freeze_threshold", 1e-4),
            freeze_window=ex.int("freeze_window", 4),
            reenable_factor=ex.float("reenable_factor", 10.0),
            output_dir=ex.str("output_dir", "runs/out"),
            save_traces=ex.bool("save_traces", False),
            continuous=ex.bool("continuous", False),
            total_steps=ex.int("total_steps", 0),
            initializer=ep.str("initializer", "random"),
            output_low=ep.floats("output_low", ()),
            output_high=ep.floats("output_high", ()),
            regression_samples=ep.int("regression_samples", 2000),
            regression_noise=ep.float("regression_noise", 1.0),
            source=source,
        )
    except ConfigError:
        raise
    except DrlControlError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    validate(cfg)
    return cfg


def _plant(pl):
    kind = pl.str("kind", required=True).lower()
    common = dict(
        noise_variance=pl.float("noise_variance", 0.0),
        change_time=pl.int("change_time", -1),
        change_scale=pl.float("change_scale", 1.0),
    )
    if kind == "transfer_function":
        return PlantConfig(kind, numerator=pl.floats("numerator", required=True),
                           denominator=pl.floats("denominator", required=True), **common)
    if kind == "distillation":
        return PlantConfig(kind, time_constant=pl.float("time_constant", 75.0),
                           sample_time=pl.float("sample_time", 1.0), **common)
    if kind == "hvac":
        theta = pl.floats("theta", HVAC_PLACEHOLDER_THETA)
        if len(theta) != 12:
            raise ConfigError("expected 12 values", key="plant.theta")
        return PlantConfig(kind, theta=theta, boundary=pl.str("boundary", "clip"),
                           valve_quadratic=pl.float("valve_quadratic", None),
                           walk_std_fraction=pl.float("walk_std_fraction", 0.01), **common)
    raise ConfigError(f"unknown plant kind {kind!r}", key="plant.kind")


def _network(nw):
    hidden = _ints(nw.raw("hidden"), "network.hidden") if nw.has("hidden") else (400, 300)
    acts_a = _activations(nw.raw("actor_activations"), "network.actor_activations") \
        if nw.has("actor_activations") else (Activation.RELU,) * len(hidden)
    acts_c = _activations(nw.raw("critic_activations"), "network.critic_activations") \
        if nw.has("critic_activations") else (Activation.RELU,) * len(hidden)
    bound = nw.str("output_init_bound", "none")
    return NetworkConfig(
        hidden=hidden,
        actor_activations=acts_a,
        critic_activations=acts_c,
        batch_norm=nw.bool("batch_norm", True),
        critic_batch_norm=nw.bool("critic_batch_norm", True),
        l2_decay=nw.float("l2_decay", 1e-4),
        output_init_bound=None if bound.lower() == "none" else _float(bound, "network.output_init_bound"),
    )


def _reward(rw):
    kind = rw.str("kind", "l1").lower()
    if kind == "l1":
        return RewardKind.l1()
    if kind == "polar":
        return RewardKind.polar()
    if kind == "l1_epsilon":
        c = rw.float("c", required=True)
        eps = rw.float("epsilon", required=True)
        if c <= 0:
            raise ConfigError("must be positive", key="reward.c")
        if eps <= 0:
            raise ConfigError("must be positive", key="reward.epsilon")
        return RewardKind.l1_epsilon(c, eps)
    raise ConfigError(f"unknown reward kind {kind!r}", key="reward.kind")


def _setpoints(sp):
    kind = sp.str("kind", "grid").lower()
    if kind == "grid":
        return GridSetpoints(sp.floats("values", required=True))
    if kind == "pair_grid":
        return PairGridSetpoints(sp.floats("values", required=True), sp.float("max_gap", required=True))
    if kind == "sinusoid":
        return SinusoidSetpoints(sp.float("amplitude", required=True), sp.float("period", required=True),
                                 sp.float("offset", 0.0))
    if kind == "piecewise":
        times = _ints(sp.raw("times", required=True), "setpoints.times")
        return PiecewiseConstantSetpoints(times, sp.floats("values", required=True))
    raise ConfigError(f"unknown set-point kind {kind!r}", key="setpoints.kind")


def validate(cfg: ExperimentConfig):
    def need(cond, key, msg):
        if not cond:
            raise ConfigError(msg, key=key)

    need(cfg.episodes >= 1 or cfg.continuous, "experiment.episodes", "must be >= 1")
    need(cfg.d_y >= 0, "experiment.d_y", "must be >= 0")
    need(cfg.d_a >= 0, "experiment.d_a", "must be >= 0")
    need(cfg.freeze_threshold >= 0, "experiment.freeze_threshold", "must be >= 0")
    need(cfg.freeze_window >= 1, "experiment.freeze_window", "must be >= 1")
    need(cfg.reenable_factor >= 1, "experiment.reenable_factor", "must be >= 1")
    need(not cfg.continuous or cfg.total_steps >= 1, "experiment.total_steps", "continuous runs need total_steps")
    need(cfg.plant.noise_variance >= 0, "plant.noise_variance", "must be >= 0")
    need(cfg.plant.change_scale > 0, "plant.change_scale", "must be positive")
    need(cfg.plant.boundary in ("clip", "reflect"), "plant.boundary", "must be clip or reflect")
    need(cfg.plant.walk_std_fraction >= 0, "plant.walk_std_fraction", "must be >= 0")
    need(cfg.initializer in ("random", "regression"), "episode.initializer", "must be random or regression")
    n_a = len(cfg.agent.action_low)
    n_y = {"transfer_function": 1, "hvac": 1, "distillation": 2}[cfg.plant.kind]
    need(n_a == (2 if cfg.plant.kind == "distillation" else 1), "agent.action_low",
         "action dimension does not match the plant")
    if isinstance(cfg.setpoints, PairGridSetpoints):
        need(n_y == 2, "setpoints.kind", "pair_grid needs a two-output plant")
    elif cfg.setpoints.channels != n_y:
        cfg.setpoints.channels = n_y
    if cfg.initializer == "regression":
        need(len(cfg.output_low) == n_y and len(cfg.output_high) == n_y, "episode.output_low",
             "regression initializer needs output_low/output_high per output")
    need(len(cfg.network.actor_activations) == len(cfg.network.hidden), "network.actor_activations",
         "one activation per hidden layer")
    need(len(cfg.network.critic_activations) == len(cfg.network.hidden), "network.critic_activations",
         "one activation per hidden layer")


def load_config(path):
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc.strerror}") from None
    return parse_config(text, source=str(p))


def preset_path(name):
    p = PRESET_DIR / f"{name}.ini"
    if not p.exists():
        raise ConfigError(f"no preset named {name!r}")
    return p


def load_preset(name):
    return load_config(preset_path(name))
