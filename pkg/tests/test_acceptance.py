"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line. The training-based
criteria (3 to 6c) are marked ``slow``; deselect them with ``-m "not slow"``.
"""
import dataclasses
import time

import numpy as np
import pytest

from drlcontrol.agent import AgentConfig, DdpgAgent, NetworkConfig, OuNoise, ReplayMemory, \
    Experience, invert_gradient, ou_sample, soft_update
from drlcontrol.env import RewardKind, compute_reward
from drlcontrol.harness.cli import main
from drlcontrol.harness.config import load_preset
from drlcontrol.harness.runner import Runner, evaluate_policy
from drlcontrol.nn import Activation
from drlcontrol.plants import HVAC_BOUNDS, HvacPlant
from drlcontrol.tabular import q_learning, random_mdp, value_iteration

from gradcheck import check_network, random_network


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}", flush=True)
        assert ok, detail
    return emit


def best_of_three(trial, seeds=(0, 1, 2), need=2):
    """Run ``trial(seed) -> (ok, detail)`` until ``need`` pass or that becomes impossible."""
    details, passed = [], 0
    for i, seed in enumerate(seeds):
        ok, detail = trial(seed)
        passed += ok
        details.append(f"seed {seed}: {'ok' if ok else 'no'} ({detail})")
        if passed >= need or passed + len(seeds) - i - 1 < need:
            break
    return passed >= need, f"{passed} seed(s) passed; " + "; ".join(details)


# -- 1. gradients ---------------------------------------------------------------

def test_criterion_1_gradient_oracle(report):
    t0 = time.perf_counter()
    worst = 0.0
    kinds = set()
    with_bn = without_bn = 0
    for i in range(50):
        rng = np.random.default_rng(1000 + i)
        # alternate forced and random batch norm so both variants appear
        net = random_network(rng, batch_norm=[True, False, None][i % 3])
        kinds.update(layer.activation for layer in net.layers)
        if any(layer.batch_norm for layer in net.layers):
            with_bn += 1
        else:
            without_bn += 1
        worst = max(worst, check_network(net, rng))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and kinds == set(Activation) and with_bn > 0 and without_bn > 0 and elapsed < 60
    report(1, ok, f"max relative error {worst:.2e} over 50 networks "
                  f"({with_bn} with batch norm), {elapsed:.1f} s")


# -- 2. tabular ---------------------------------------------------------------

def test_criterion_2_tabular_equivalence(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    mdp = random_mdp(5, 3, 0.9, rng, deterministic=True)
    q_star = value_iteration(mdp, 1e-12)
    res = q_learning(mdp, episodes=10**9, alpha=1.0, epsilon=0.1, rng=rng, max_steps=100_000)
    err = float(np.max(np.abs(res.q - q_star)))
    elapsed = time.perf_counter() - t0
    report(2, err <= 1e-3 and res.steps <= 100_000 and elapsed < 10,
           f"sup-norm {err:.2e} after {res.steps} steps, {elapsed:.1f} s")


# -- 3. Example 1 ---------------------------------------------------------------

def example1_trial(seed):
    cfg = load_preset("example1").with_overrides(seed=seed)
    runner = Runner(cfg)
    runner.train(episodes=300)
    res = evaluate_policy(runner.agent, cfg, cfg.setpoints.values, steps=200, tolerance=0.1)
    hits = sum(r.reached for r in res)
    return hits >= 0.9 * len(res), f"{hits}/{len(res)} set-points"


@pytest.mark.slow
def test_criterion_3_example1_tracking(report):
    ok, detail = best_of_three(example1_trial)
    report(3, ok, detail)


# -- 4. Example 4 ---------------------------------------------------------------

def example4_trial(seed):
    cfg = load_preset("example4").with_overrides(seed=seed)
    change, budget = cfg.plant.change_time, 1500
    runner = Runner(cfg)
    runner.prefill()
    runner.begin_episode(np.array([2.0]))
    err = []
    for _ in range(change + budget):
        runner.step()
        err.append(abs(float(runner.plant.output()[0]) - 2.0))
    events = runner.freeze_events
    froze = any(kind == "freeze" and t < change for t, kind in events)
    relearn = any(kind == "reenable" and t >= change for t, kind in events)
    after = np.array(err[change:]) <= 0.1
    # recovery: back within 0.1 for 5 steps in a row after first leaving it
    left = np.flatnonzero(~after)
    recovered_at = -1
    if left.size:
        run = 0
        for k in range(left[0], after.size):
            run = run + 1 if after[k] else 0
            if run >= 5:
                recovered_at = k + 1
                break
    ok = froze and relearn and recovered_at > 0
    return ok, f"froze={froze}, relearned={relearn}, recovered after {recovered_at} steps"


@pytest.mark.slow
def test_criterion_4_example4_adaptivity(report):
    ok, detail = best_of_three(example4_trial)
    report(4, ok, detail)


# -- 5. Example 2 ---------------------------------------------------------------

def example2_trial(seed):
    cfg = load_preset("example2").with_overrides(seed=seed)
    runner = Runner(cfg)
    runner.train(episodes=1500)
    res = evaluate_policy(runner.agent, cfg, [(1.0, 1.0)], steps=200, tolerance=0.1)[0]
    return res.reached, f"final error {res.final_error:.3f}"


@pytest.mark.slow
def test_criterion_5_example2_pair_tracking(report):
    ok, detail = best_of_three(example2_trial)
    report(5, ok, detail)


# -- 6. Example 3 substitutes -----------------------------------------------------

def test_criterion_6a_hvac_identity_and_bounds(report):
    rng = np.random.default_rng(0)
    broken = 0
    for seed in range(5):
        plant = HvacPlant(rng=np.random.default_rng(seed), step_sizes={"f_a": 0.05, "T_wi": 2.0, "T_ai": 2.0})
        for _ in range(2000):
            plant.step(rng.uniform(150, 800))
            broken += plant.T_w_bar != 0.5 * (plant.T_wi + plant.T_wo)
            broken += sum(not lo <= getattr(plant, k) <= hi for k, (lo, hi) in HVAC_BOUNDS.items())
    report("6a", broken == 0, f"{broken} violations over 10000 steps")


def test_criterion_6b_polar_values(report):
    rng = np.random.default_rng(1)
    seen = set()
    for _ in range(10_000):
        n = int(rng.integers(1, 4))
        y0, y1, sp = rng.normal(0, 2, (3, n))
        seen.add(compute_reward(RewardKind.polar(), y0, y1, sp))
    report("6b", seen == {0.0, -1.0}, f"observed values {sorted(seen)}")


def example3_trial(seed):
    cfg = load_preset("example3").with_overrides(seed=seed)
    cfg = cfg.with_overrides(setpoints=dataclasses.replace(cfg.setpoints, values=(30.0,)))
    runner = Runner(cfg)
    log = runner.train(episodes=1000)
    r = np.array(log.rewards)
    first, last = r[:100].mean(), r[-100:].mean()
    return last > first, f"first 100 mean {first:.1f}, last 100 mean {last:.1f}"


@pytest.mark.slow
def test_criterion_6c_example3_reward_trend(report):
    ok, detail = best_of_three(example3_trial)
    report("6c", ok, detail)


# -- 7. mechanism suite -------------------------------------------------------------

def test_criterion_7_mechanisms(report):
    t0 = time.perf_counter()
    checks = {}
    table = [(1.0, 10.0, 0.0), (-1.0, 0.0, 0.0), (1.0, 5.0, 0.5), (1.0, 12.0, -0.2), (-1.0, -2.0, 0.2)]
    checks["inverted gradient"] = all(abs(invert_gradient(g, a, 0.0, 10.0) - e) < 1e-15 for g, a, e in table)

    rng = np.random.default_rng(0)
    online, target = rng.standard_normal((2, 6))
    t = target.copy()
    soft_update(online, t, 0.0)
    ident0 = np.array_equal(t, target)
    soft_update(online, t, 1.0)
    ident1 = np.array_equal(t, online)
    t = target.copy()
    for _ in range(10):
        soft_update(online, t, 0.1)
    contraction = np.allclose(np.abs(t - online), np.abs(target - online) * 0.9 ** 10, rtol=1e-12)
    checks["soft update"] = ident0 and ident1 and contraction

    mem = ReplayMemory(3, 1, 1, rng)
    for i in range(5):
        mem.push(Experience(np.array([float(i)]), np.array([0.0]), float(i), np.array([0.0])))
    checks["replay FIFO"] = [e.reward for e in mem] == [2.0, 3.0, 4.0]

    agent = DdpgAgent(2, AgentConfig(action_low=(0.0,), action_high=(1.0,), gamma=0.0),
                      NetworkConfig(hidden=(8, 8)), rng=rng)
    r = rng.standard_normal(5)
    checks["gamma zero"] = np.array_equal(agent.compute_targets(r, rng.standard_normal((5, 2))), r)

    noise = OuNoise(0.15, 0.30, 1, np.random.default_rng(3))
    xs = np.array([ou_sample(noise)[0] for _ in range(1_000_000)])
    expected = 0.3 ** 2 / (1 - 0.85 ** 2)
    checks["OU variance"] = abs(xs[1000:].var() - expected) <= 0.1 * expected

    checks["rewards"] = (
        compute_reward(RewardKind.l1(), [0.0, 0.0], [1.0, 2.0], [0.0, 0.0]) == -3.0
        and compute_reward(RewardKind.l1(), [4.0], [2.0], [2.0]) == 0.0
        and compute_reward(RewardKind.polar(), [2.0, 3.0], [1.0, 3.0], [0.0, 0.0]) == -1.0
        and compute_reward(RewardKind.l1_epsilon(5.0, 0.1), [0.0], [1.05], [1.0]) == 5.0
        and compute_reward(RewardKind.l1_epsilon(5.0, 0.1), [0.0], [1.5], [1.0]) == -0.5
    )
    elapsed = time.perf_counter() - t0
    failed = [k for k, v in checks.items() if not v]
    report(7, not failed and elapsed < 60,
           f"{len(checks) - len(failed)}/{len(checks)} mechanism groups exact, {elapsed:.1f} s"
           + (f"; failed: {', '.join(failed)}" if failed else ""))


# -- 8. determinism ---------------------------------------------------------------

CONFIG = """
[experiment]
seed = 11
episodes = 4

[plant]
kind = transfer_function
numerator = 0, 0.05
denominator = 1, -0.6
noise_variance = 0.01

[agent]
action_low = 0
action_high = 100
batch_size = 32
capacity = 1000

[network]
hidden = 32, 24

[reward]
kind = l1

[setpoints]
kind = grid
values = 0, 2.5, 5

[episode]
max_steps = 25
"""


def test_criterion_8_determinism(report, tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(CONFIG)
    codes = [main(["run", "--config", str(path), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    a = (tmp_path / "a" / "episodes.csv").read_bytes()
    b = (tmp_path / "b" / "episodes.csv").read_bytes()
    report(8, codes == [0, 0] and a == b, f"exit codes {codes}, {len(a)} bytes, identical={a == b}")
