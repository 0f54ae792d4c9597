import numpy as np
import pytest

from drlcontrol.errors import ConfigError
from drlcontrol.harness.cli import main
from drlcontrol.harness.config import load_config, load_preset, parse_config
from drlcontrol.harness.metrics import (
    MetricsLog,
    StepRecord,
    emit_plot_data,
    export_csv,
    moving_average,
    read_episodes_csv,
    read_trace_csv,
)
from drlcontrol.harness.runner import Runner, evaluate_policy, run_experiment

SMALL = """
[experiment]
seed = 3
episodes = 3
save_traces = true

[plant]
kind = transfer_function
numerator = 0, 0.05
denominator = 1, -0.6
noise_variance = 0.01

[agent]
action_low = 0
action_high = 100
batch_size = 16
capacity = 500

[network]
hidden = 16, 12

[reward]
kind = l1

[setpoints]
kind = grid
values = 1, 2, 3

[episode]
max_steps = 15
tolerance = 0.01
settle_steps = 10
"""


def small(**over):
    return parse_config(SMALL).with_overrides(**over)


# -- config -------------------------------------------------------------------

def test_example1_preset():
    cfg = load_preset("example1")
    a = cfg.agent
    assert (a.batch_size, a.capacity, a.gamma) == (128, 50_000, 0.99)
    assert (a.action_low, a.action_high) == ((0.0,), (100.0,))
    assert cfg.episodes == 500
    assert len(cfg.setpoints.values) == 21 and max(cfg.setpoints.values) == 10.0
    assert cfg.plant.noise_variance == 0.01 and cfg.episode.tolerance == 0.01


def test_example3_preset():
    cfg = load_preset("example3")
    a = cfg.agent
    assert (a.batch_size, a.capacity, a.gamma) == (64, 1_000_000, 0.99)
    assert (a.action_low, a.action_high) == ((150.0,), (800.0,))
    assert min(cfg.setpoints.values) == 30.0 and max(cfg.setpoints.values) == 35.0
    assert cfg.reward.tag.value == "polar"
    assert (cfg.d_y, cfg.d_a) == (1, 1)


def test_example2_and_example4_presets():
    ex2 = load_preset("example2")
    assert (ex2.agent.batch_size, ex2.agent.capacity, ex2.agent.gamma) == (128, 500_000, 0.95)
    assert ex2.agent.action_high == (50.0, 50.0) and ex2.setpoints.max_gap == 0.5
    ex4 = load_preset("example4")
    assert ex4.continuous and ex4.plant.change_scale == 2.0 and ex4.setpoints.values == (2.0,)


def test_table_defaults_apply_when_omitted():
    cfg = small()
    a = cfg.agent
    assert (a.actor_lr, a.critic_lr, a.tau, a.ou_theta, a.ou_sigma) == (1e-4, 1e-4, 1e-3, 0.15, 0.30)


def test_empty_file_is_config_error(tmp_path):
    p = tmp_path / "empty.ini"
    p.write_text("")
    with pytest.raises(ConfigError):
        load_config(p)


def test_bad_value_names_the_key():
    with pytest.raises(ConfigError, match="agent.batch_size"):
        parse_config(SMALL.replace("batch_size = 16", "batch_size = lots"))


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError, match="agent.learning_rate"):
        parse_config(SMALL.replace("[agent]", "[agent]\nlearning_rate = 1"))


def test_missing_seed_is_rejected():
    with pytest.raises(ConfigError, match="experiment.seed"):
        parse_config(SMALL.replace("seed = 3", ""))


def test_invalid_range_is_config_error():
    with pytest.raises(ConfigError):
        parse_config(SMALL.replace("action_high = 100", "action_high = -5"))


# -- metrics ------------------------------------------------------------------

def test_moving_average_examples():
    assert np.array_equal(moving_average([4.0] * 5, 3), [4.0] * 5)
    assert moving_average([1.0, 2.0, 3.0], 3)[-1] == 2.0
    assert np.array_equal(moving_average([1.0, 5.0, 2.0], 1), [1.0, 5.0, 2.0])
    assert moving_average([], 5).size == 0


def test_moving_average_warm_up_and_length():
    x = np.arange(10.0)
    ma = moving_average(x, 4)
    assert ma.size == x.size
    for i in range(10):
        assert ma[i] == pytest.approx(x[max(0, i - 3): i + 1].mean())


def test_metrics_log_is_contiguous():
    log = MetricsLog()
    log.add_episode(0, -1.0, 3)
    with pytest.raises(Exception):
        log.add_episode(2, -1.0, 3)


def test_export_empty_log(tmp_path):
    export_csv(MetricsLog(), tmp_path)
    assert (tmp_path / "episodes.csv").read_text() == "episode,total_reward,steps\n"


def test_export_one_episode_two_steps(tmp_path):
    log = MetricsLog(n_y=2, n_a=2)
    trace = [StepRecord(1, np.array([1.0, 1.5]), np.array([0.3, 0.1]), np.array([10.0, 20.0]), -2.1),
             StepRecord(2, np.array([1.0, 1.5]), np.array([0.5, 0.7]), np.array([11.0, 21.0]), -1.3)]
    log.add_episode(0, -3.4, 2, trace=trace)
    export_csv(log, tmp_path)
    rows = (tmp_path / "episodes.csv").read_text().splitlines()
    assert len(rows) == 2
    header, data = read_trace_csv(tmp_path / "trace_0.csv")
    assert header == ["t", "setpoint1", "setpoint2", "y1", "y2", "a1", "a2", "reward"]
    assert data.shape == (2, 8)


def test_csv_round_trip_is_exact(tmp_path, rng):
    log = MetricsLog()
    values = rng.standard_normal(20) * 1e3
    trace = [StepRecord(t, np.array([1.0 / 3]), np.array([v]), np.array([v * 7]), v / 11)
             for t, v in enumerate(values)]
    for i, v in enumerate(values):
        log.add_episode(i, v, i + 1, trace=trace if i == 0 else None)
    export_csv(log, tmp_path)
    back = read_episodes_csv(tmp_path / "episodes.csv")
    assert [b[1] for b in back] == list(values)
    _, data = read_trace_csv(tmp_path / "trace_0.csv")
    assert np.array_equal(data[:, 2], values) and np.array_equal(data[:, 4], values / 11)


def test_plot_data_is_whitespace_columns(tmp_path):
    log = MetricsLog()
    for i in range(5):
        log.add_episode(i, -float(i), 10)
    emit_plot_data(log, tmp_path)
    arr = np.loadtxt(tmp_path / "rewards.dat")
    assert arr.shape == (5, 4)
    assert np.allclose(arr[:, 2], moving_average(-np.arange(5.0), 21))


# -- runner -------------------------------------------------------------------

def test_prefill_holds_batch_size_before_training():
    r = Runner(small())
    r.prefill()
    assert len(r.agent.memory) == 16


def test_run_logs_every_episode(tmp_path):
    log, runner = run_experiment(small(), tmp_path)
    assert len(log) == 3 and all(np.isfinite(log.rewards))
    assert (tmp_path / "agent.ckpt").exists() and (tmp_path / "trace_2.csv").exists()


def test_gamma_zero_smoke(tmp_path):
    cfg = parse_config(SMALL.replace("[agent]", "[agent]\ngamma = 0"))
    log, _ = run_experiment(cfg, tmp_path)
    assert np.all(np.isfinite(log.rewards))


def test_same_seed_same_episodes(tmp_path):
    run_experiment(small(), tmp_path / "a")
    run_experiment(small(), tmp_path / "b")
    assert (tmp_path / "a" / "episodes.csv").read_bytes() == (tmp_path / "b" / "episodes.csv").read_bytes()


def test_different_seed_differs(tmp_path):
    a, _ = run_experiment(small(), tmp_path / "a")
    b, _ = run_experiment(small(seed=4), tmp_path / "b")
    assert not np.array_equal(a.rewards, b.rewards)


def test_learning_freeze_keeps_parameters_bit_identical():
    r = Runner(small(freeze_threshold=1e9))  # any error counts as small
    r.prefill()
    r.begin_episode()
    for _ in range(4):
        r.step()
    assert r.frozen and not r.agent.exploring
    snap = [n.params.copy() for n in (r.agent.actor, r.agent.critic, r.agent.target_actor, r.agent.target_critic)]
    n_mem = len(r.agent.memory)
    for _ in range(8):
        assert not r.step().learning
    after = [n.params for n in (r.agent.actor, r.agent.critic, r.agent.target_actor, r.agent.target_critic)]
    assert all(np.array_equal(a, b) for a, b in zip(snap, after))
    assert len(r.agent.memory) == n_mem


def test_learning_reenables_on_large_error_and_new_setpoint():
    r = Runner(small(freeze_threshold=1e9))
    r.prefill()
    r.begin_episode()
    for _ in range(4):
        r.step()
    assert r.frozen
    r.begin_episode()  # a new set-point switches learning back on
    assert not r.frozen and r.agent.learning_enabled
    for _ in range(4):
        r.step()
    assert r.frozen
    r.cfg = r.cfg.with_overrides(freeze_threshold=1e-12)
    r.step()
    assert not r.frozen and r.freeze_events[-1][1] == "reenable"


def test_process_change_applies_at_trigger():
    cfg = parse_config(SMALL.replace("noise_variance = 0.01", "change_time = 5\nchange_scale = 2"))
    r = Runner(cfg)
    r.prefill()
    r.begin_episode()
    for _ in range(5):
        r.step()
    assert r.plant.steady_state_gain() == pytest.approx(0.125)
    r.step()
    assert r.plant.steady_state_gain() == pytest.approx(0.25)


def test_evaluate_policy_reports_each_setpoint():
    r = Runner(small())
    res = evaluate_policy(r.agent, r.cfg, [1.0, 2.0], steps=10)
    assert len(res) == 2 and all(x.outputs.shape == (10, 1) for x in res)
    assert r.agent.exploring  # restored afterwards


def test_evaluate_counts_consecutive_steps():
    class Perfect:
        exploring = True
        low, high = np.array([0.0]), np.array([100.0])

        def policy(self, s):
            y, err = s
            return np.array([((y - err) - 0.6 * y) / 0.05])  # deadbeat: lands on the set-point in one step

        def applied_action(self, a):
            return a

    cfg = small()
    res = evaluate_policy(Perfect(), cfg, [1.0], steps=20, tolerance=0.1)
    assert res[0].reached and res[0].steps_to_reach == 5


# -- CLI ----------------------------------------------------------------------

def write_small(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return p


def test_cli_run_is_byte_deterministic(tmp_path):
    cfg = write_small(tmp_path)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "episodes.csv").read_bytes() == (tmp_path / "b" / "episodes.csv").read_bytes()


def test_cli_eval(tmp_path, capsys):
    cfg = write_small(tmp_path)
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "a"), "--episodes", "1"])
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(tmp_path / "a" / "agent.ckpt"), "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "reached" in out and len(out.strip().splitlines()) == 5


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) != 0
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "bad.ini"
    bad.write_text(SMALL.replace("kind = l1", "kind = l7"))
    assert main(["run", "--config", str(bad)]) != 0
    assert "reward.kind" in capsys.readouterr().err


def test_cli_example_preset_short_run(tmp_path):
    assert main(["example1", "--episodes", "1", "--seed", "2", "--out", str(tmp_path)]) == 0
    assert len(read_episodes_csv(tmp_path / "episodes.csv")) == 1
