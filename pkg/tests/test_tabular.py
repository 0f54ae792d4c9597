import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drlcontrol.errors import ConfigError, InvalidParameterError, NonConvergenceError
from drlcontrol.tabular import (
    FiniteMdp,
    bellman_backup,
    decayed_alpha,
    greedy_policy,
    parse_mdp,
    q_learning,
    random_mdp,
    value_iteration,
)


def chain():
    # s0 -> s1 -> s2 (terminal), reward 1 per move
    P = np.zeros((3, 1, 3))
    P[0, 0, 1] = P[1, 0, 2] = P[2, 0, 2] = 1.0
    R = np.array([[1.0], [1.0], [0.0]])
    return FiniteMdp(P, R, 0.9, terminal=[False, False, True])


def test_single_state_geometric_series():
    mdp = FiniteMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.5)
    assert value_iteration(mdp, 1e-12)[0, 0] == pytest.approx(2.0, abs=1e-11)


def test_gamma_zero_gives_immediate_reward(rng):
    mdp = random_mdp(4, 3, 0.0, rng)
    assert np.allclose(value_iteration(mdp), mdp.reward)


def test_two_step_chain_by_hand():
    q = value_iteration(chain(), 1e-12)
    assert q[0, 0] == pytest.approx(1.9) and q[1, 0] == pytest.approx(1.0) and q[2, 0] == 0.0


def test_terminal_rows_are_normalized():
    P = np.full((2, 2, 2), 0.5)
    mdp = FiniteMdp(P, np.ones((2, 2)), 0.9, terminal=[False, True])
    assert np.array_equal(mdp.transition[1, :, 1], [1.0, 1.0])
    assert np.array_equal(mdp.reward[1], [0.0, 0.0])


def test_transition_rows_must_sum_to_one():
    with pytest.raises(InvalidParameterError):
        FiniteMdp(np.full((2, 1, 2), 0.4), np.zeros((2, 1)), 0.9)


def test_gamma_one_without_terminals_does_not_converge():
    mdp = FiniteMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 1.0)
    with pytest.raises(NonConvergenceError):
        value_iteration(mdp, 1e-6, max_iterations=1000)


def test_gamma_one_with_terminal_chain_converges():
    c = chain()
    mdp = FiniteMdp(c.transition, c.reward, 1.0, c.terminal)
    assert value_iteration(mdp)[0, 0] == 2.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 0.95))
def test_bellman_operator_is_gamma_contraction(seed, gamma):
    r = np.random.default_rng(seed)
    mdp = random_mdp(4, 3, gamma, r)
    q1, q2 = r.standard_normal((2, 4, 3))
    d_in = np.max(np.abs(q1 - q2))
    d_out = np.max(np.abs(bellman_backup(mdp, q1) - bellman_backup(mdp, q2)))
    assert d_out <= gamma * d_in + 1e-12


def test_value_iteration_residuals_shrink(rng):
    mdp = random_mdp(5, 3, 0.8, rng)
    q = np.zeros((5, 3))
    diffs = []
    for _ in range(20):
        q_new = bellman_backup(mdp, q)
        diffs.append(np.max(np.abs(q_new - q)))
        q = q_new
    for a, b in zip(diffs, diffs[1:]):
        assert b <= 0.8 * a + 1e-12


def test_single_td_update_arithmetic(rng):
    mdp = FiniteMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.0)
    res = q_learning(mdp, episodes=1, alpha=0.5, epsilon=0.0, rng=rng, episode_length=1, decay=False)
    assert res.q[0, 0] == 0.5


def test_terminal_entries_stay_zero(rng):
    res = q_learning(chain(), episodes=500, alpha=1.0, epsilon=0.5, rng=rng)
    assert np.all(res.q[2] == 0.0)


def test_deterministic_mdp_alpha_one_reaches_fixed_point(rng):
    mdp = random_mdp(5, 3, 0.7, rng, deterministic=True)
    q_star = value_iteration(mdp, 1e-13)
    res = q_learning(mdp, episodes=3000, alpha=1.0, epsilon=1.0, rng=rng, decay=False)
    visited = res.visits > 0
    assert np.allclose(res.q[visited], q_star[visited], atol=1e-9)


def test_q_learning_validation(rng):
    with pytest.raises(InvalidParameterError):
        q_learning(chain(), 1, alpha=0.0, epsilon=0.1, rng=rng)
    with pytest.raises(InvalidParameterError):
        q_learning(chain(), 1, alpha=0.5, epsilon=1.5, rng=rng)


def test_decay_schedule():
    assert decayed_alpha(1.0, 0) == 1.0
    assert decayed_alpha(1.0, 10_000) == 0.5


def test_greedy_epsilon_zero_is_argmax(rng):
    choose = greedy_policy(np.array([[0.0, 3.0, 1.0]]), 0.0, rng)
    assert all(choose(0) == 1 for _ in range(100))


def test_greedy_tie_goes_to_lowest_index(rng):
    choose = greedy_policy(np.array([[1.0, 5.0, 5.0, 5.0]]), 0.0, rng)
    assert choose(0) == 1


def test_greedy_epsilon_one_is_uniform(rng):
    choose = greedy_policy(np.array([[0.0, 9.0, 1.0, 2.0]]), 1.0, rng)
    counts = np.bincount([choose(0) for _ in range(20_000)], minlength=4) / 20_000
    assert np.all(np.abs(counts - 0.25) < 0.05 * 0.25 * 4)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=6), st.floats(0.01, 100), st.floats(-100, 100))
def test_greedy_invariant_under_positive_affine_scaling(row, scale, shift):
    row = np.array(row)
    scaled = scale * row + shift
    # exact ties can be created or broken by rounding; only check clear winners
    top = np.sort(scaled)[::-1]
    if row.size > 1 and top[0] - top[1] < 1e-6 * (1 + abs(top[0])):
        return
    rng = np.random.default_rng(0)
    assert greedy_policy(row[None, :], 0.0, rng)(0) == greedy_policy(scaled[None, :], 0.0, rng)(0)


MDP_TEXT = """
# two-state chain
states 2
actions 1
gamma 0.9
terminal 1
reward
1.0
0.0
transition 0
0 1
0 1
"""


def test_parse_plain_text_mdp():
    mdp = parse_mdp(MDP_TEXT)
    assert mdp.n_states == 2 and mdp.terminal[1]
    assert value_iteration(mdp)[0, 0] == pytest.approx(1.0)


def test_parse_reports_missing_key():
    with pytest.raises(ConfigError, match="gamma"):
        parse_mdp("states 2\nactions 1\n")


def test_parse_reports_bad_row():
    with pytest.raises(ConfigError, match="reward"):
        parse_mdp("states 2\nactions 1\ngamma 0.5\nreward\n1 2\n0\n")
