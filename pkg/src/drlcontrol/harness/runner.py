"""Experiment loop: builds plant, environment and agent from a config and trains."""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from drlcontrol._alloc import tune_malloc
from drlcontrol.agent import DdpgAgent, Experience
from drlcontrol.env import (
    ControlEnv,
    RandomActionInitializer,
    RegressionInitializer,
    Status,
    episode_status,
    is_time_varying,
)
from drlcontrol.errors import DrlControlError, InvalidParameterError
from drlcontrol.harness.config import ExperimentConfig, PlantConfig
from drlcontrol.harness.metrics import MetricsLog, StepRecord, emit_plot_data, export_csv
from drlcontrol.plants import (
    DiscreteTransferFunction,
    HvacPlant,
    MeasurementNoise,
    ProcessChange,
    apply_process_change,
    distillation_column,
)


class ExperimentError(DrlControlError, RuntimeError):
    pass


def build_plant(pc: PlantConfig, rng):
    if pc.kind == "transfer_function":
        return DiscreteTransferFunction(pc.numerator, pc.denominator)
    if pc.kind == "distillation":
        return distillation_column(pc.time_constant, pc.sample_time)
    if pc.kind == "hvac":
        from drlcontrol.plants import HVAC_BOUNDS

        sizes = {k: pc.walk_std_fraction * (hi - lo) for k, (lo, hi) in HVAC_BOUNDS.items()}
        return HvacPlant(theta=tuple(pc.theta), rng=rng, step_sizes=sizes, boundary=pc.boundary,
                         valve_quadratic=pc.valve_quadratic)
    raise InvalidParameterError(f"unknown plant kind {pc.kind!r}")


@dataclass
class StepInfo:
    t: int
    y: np.ndarray
    action: np.ndarray
    reward: float
    error: float
    learning: bool
    status: Status


class Runner:
    """Holds every piece of one experiment and advances it step by step.

    Random streams are spawned from the config seed: one each for the
    agent (weights, replay sampling, exploration), episode starts and
    set-points, measurement noise, and plant disturbances.
    """

    def __init__(self, cfg: ExperimentConfig, agent: DdpgAgent | None = None):
        self.cfg = cfg
        ss = np.random.SeedSequence(cfg.seed)
        agent_ss, env_ss, noise_ss, plant_ss, init_ss = ss.spawn(5)
        self.env_rng = np.random.default_rng(env_ss)
        self.plant = build_plant(cfg.plant, np.random.default_rng(plant_ss))
        noise = MeasurementNoise(cfg.plant.noise_variance, np.random.default_rng(noise_ss)) \
            if cfg.plant.noise_variance > 0 else None
        self.env = ControlEnv(self.plant, cfg.reward, cfg.d_y, cfg.d_a, noise)
        low = np.array(cfg.agent.action_low)
        high = np.array(cfg.agent.action_high)
        if cfg.initializer == "regression":
            self.initializer = RegressionInitializer.fit(
                self.plant, low, high, np.array(cfg.output_low), np.array(cfg.output_high),
                np.random.default_rng(init_ss), n_samples=cfg.regression_samples,
                settle_steps=cfg.episode.settle_steps, noise_std=cfg.regression_noise)
        else:
            self.initializer = RandomActionInitializer(low, high)
        self.agent = agent or DdpgAgent(self.env.state_dim, cfg.agent, cfg.network,
                                        rng=np.random.default_rng(agent_ss))
        self.change = ProcessChange(cfg.plant.change_time, cfg.plant.change_scale) \
            if cfg.plant.change_time >= 0 and cfg.plant.change_scale != 1.0 else None
        # linear plants restart from rest; the HVAC coil keeps its thermal state
        self.reset_plant = cfg.plant.kind != "hvac"
        self.log = MetricsLog(n_y=self.env.n_y, n_a=self.env.n_a)
        self.global_t = 0
        self.state = None
        self.errors = []
        self.window = deque(maxlen=cfg.freeze_window)
        self.frozen = False
        self.freeze_events = []  # (global step, "freeze" | "reenable")

    # -- learning switch ----------------------------------------------------

    def _set_learning(self, on, reason):
        self.frozen = not on
        self.agent.learning_enabled = on
        self.agent.exploring = on
        if on:
            self.agent.noise.reset()
        self.freeze_events.append((self.global_t, reason))

    def _update_freeze(self, err):
        self.window.append(err)
        if len(self.window) < self.window.maxlen:
            return
        avg = sum(self.window) / len(self.window)
        thr = self.cfg.freeze_threshold
        if not self.frozen and avg < thr:
            self._set_learning(False, "freeze")
        elif self.frozen and avg > self.cfg.reenable_factor * thr:
            self._set_learning(True, "reenable")

    # -- episodes -----------------------------------------------------------

    def prefill(self):
        """Fill the replay memory with ``batch_size`` transitions under uniform random actions."""
        m = self.cfg.agent.batch_size
        low, high = self.agent.low, self.agent.high
        while len(self.agent.memory) < m:
            sp = self.cfg.setpoints.sample(self.env_rng, 0)
            s = self.env.reset(sp, self.initializer, self.env_rng, self.cfg.episode.settle_steps,
                               reset_plant=self.reset_plant)
            for _ in range(self.cfg.episode.max_steps):
                a = self.env_rng.uniform(low, high)
                s2, r, _ = self.env.step(a)
                self.agent.remember(s, a, r, s2)
                s = s2
                if len(self.agent.memory) >= m:
                    break

    def begin_episode(self, setpoint=None):
        sp = self.cfg.setpoints.sample(self.env_rng, 0) if setpoint is None else np.atleast_1d(setpoint)
        self.state = self.env.reset(sp, self.initializer, self.env_rng, self.cfg.episode.settle_steps,
                                    reset_plant=self.reset_plant)
        self.errors = []
        self.episode_t = 0
        self.window.clear()
        self.agent.noise.reset()
        if self.frozen:
            self._set_learning(True, "new setpoint")
        return self.state

    def step(self):
        """One control interval: act, observe, store, learn."""
        cfg = self.cfg
        if self.change is not None:
            apply_process_change(self.plant, self.change, self.global_t)
        if is_time_varying(cfg.setpoints):
            self.env.set_setpoint(cfg.setpoints.sample(self.env_rng, self.episode_t))
            self.state = self.env.state()
        learning = self.agent.learning_enabled
        raw = self.agent.select_action(self.state)
        a = self.agent.applied_action(raw)
        s2, r, y = self.env.step(a)
        if learning:
            self.agent.memory.push(Experience(self.state, a, r, s2))
            self.agent.train_step()
        err = float(np.max(np.abs(y - self.env.setpoint)))
        self.errors.append(err)
        self._update_freeze(err)
        self.state = s2
        self.global_t += 1
        self.episode_t += 1
        status = episode_status(self.errors, cfg.episode) if not cfg.continuous else Status.CONTINUE
        return StepInfo(self.global_t, y, a, r, err, learning, status)

    def run_episode(self, index):
        cfg = self.cfg
        t0 = time.perf_counter()
        self.begin_episode()
        total = 0.0
        trace = [] if cfg.save_traces else None
        steps = 0
        while True:
            sp = self.env.setpoint.copy()
            try:
                info = self.step()
            except DrlControlError as exc:
                raise ExperimentError(f"episode {index}, step {self.episode_t}: {exc}") from exc
            total += info.reward
            steps += 1
            if trace is not None:
                trace.append(StepRecord(steps, sp, info.y, info.action, info.reward))
            if info.status is not Status.CONTINUE:
                break
        self.log.add_episode(index, total, steps, time.perf_counter() - t0, trace)
        return total, steps

    def run_continuous(self, setpoint=None):
        """One long rollout; each block of ``max_steps`` steps is logged as an episode."""
        cfg = self.cfg
        self.begin_episode(setpoint)
        block = cfg.episode.max_steps
        total, steps, trace, t0 = 0.0, 0, ([] if cfg.save_traces else None), time.perf_counter()
        for k in range(cfg.total_steps):
            sp = self.env.setpoint.copy()
            try:
                info = self.step()
            except DrlControlError as exc:
                raise ExperimentError(f"step {k}: {exc}") from exc
            total += info.reward
            steps += 1
            if trace is not None:
                trace.append(StepRecord(k + 1, sp, info.y, info.action, info.reward))
            if steps == block or k == cfg.total_steps - 1:
                self.log.add_episode(len(self.log), total, steps, time.perf_counter() - t0, trace)
                total, steps, trace, t0 = 0.0, 0, ([] if cfg.save_traces else None), time.perf_counter()

    def train(self, episodes=None, callback=None):
        self.prefill()
        if self.cfg.continuous:
            self.run_continuous()
            return self.log
        n = self.cfg.episodes if episodes is None else episodes
        for i in range(n):
            self.run_episode(len(self.log))
            if callback is not None:
                callback(self, i)
        return self.log


def run_experiment(cfg: ExperimentConfig, out_dir=None, episodes=None, save=True, callback=None):
    """Train per ``cfg`` and write CSV, plot data and a checkpoint to ``out_dir``."""
    tune_malloc()
    runner = Runner(cfg)
    log = runner.train(episodes, callback=callback)
    if save:
        out = Path(out_dir or cfg.output_dir)
        export_csv(log, out)
        emit_plot_data(log, out)
        runner.agent.save(out / "agent.ckpt")
    return log, runner


# -- evaluation ---------------------------------------------------------------

@dataclass
class EvalResult:
    setpoint: np.ndarray
    reached: bool
    steps_to_reach: int
    final_error: float
    outputs: np.ndarray


def evaluate_policy(agent: DdpgAgent, cfg: ExperimentConfig, setpoints, steps=200, tolerance=0.1,
                    consecutive=None, seed=0, plant=None):
    """Roll out the greedy policy (no exploration, no learning, no measurement noise).

    A set-point counts as reached once the error on every channel stays
    within ``tolerance`` for ``consecutive`` steps (the episode-termination
    count by default) inside the step budget.
    """
    k = cfg.episode.consecutive_required if consecutive is None else consecutive
    rng = np.random.default_rng(seed)
    base = plant if plant is not None else build_plant(cfg.plant, np.random.default_rng(seed + 1))
    if cfg.initializer == "regression":
        init = RegressionInitializer.fit(base, agent.low, agent.high, np.array(cfg.output_low),
                                         np.array(cfg.output_high), np.random.default_rng(seed + 2),
                                         n_samples=cfg.regression_samples,
                                         settle_steps=cfg.episode.settle_steps, noise_std=cfg.regression_noise)
    else:
        init = RandomActionInitializer(agent.low, agent.high)
    exploring = agent.exploring
    agent.exploring = False
    results = []
    try:
        for sp in setpoints:
            p = base.copy()
            p.reset()
            env = ControlEnv(p, cfg.reward, cfg.d_y, cfg.d_a, None)
            sp = np.atleast_1d(np.asarray(sp, dtype=np.float64))
            s = env.reset(sp, init, rng, cfg.episode.settle_steps, reset_plant=cfg.plant.kind != "hvac")
            run = 0
            reached_at = -1
            ys = []
            for t in range(steps):
                a = agent.applied_action(agent.policy(s))
                s, _, y = env.step(a)
                ys.append(y)
                if np.all(np.abs(y - sp) <= tolerance):
                    run += 1
                    if run >= k and reached_at < 0:
                        reached_at = t + 1
                else:
                    run = 0
            final = float(np.max(np.abs(ys[-1] - sp)))
            results.append(EvalResult(sp, reached_at > 0, reached_at, final, np.array(ys)))
    finally:
        agent.exploring = exploring
    return results
