import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_mdp
from prism_irl.environments import FrustrationGridworld, build_mdp, target_rewards
from prism_irl.errors import DimensionMismatch, NonConvergence, ParseError, ValidationError
from prism_irl.mdp import (
    TabularMdp, boltzmann_policy, expected_value_difference, greedy_value, load_mdp,
    log_boltzmann_policy, policy_value, save_mdp, solve_q,
)


def naive_value_iteration(P, r, gamma, sweeps):
    """Loop-based reference implementation, independent of the vectorised solver."""
    S, A = len(r), len(r[0])
    q = [[0.0] * A for _ in range(S)]
    for _ in range(sweeps):
        v = [max(row) for row in q]
        q = [[r[s][a] + gamma * sum(P[s][a][t] * v[t] for t in range(S)) for a in range(A)]
             for s in range(S)]
    return np.array(q)


# --- construction --------------------------------------------------------------

def test_rejects_rows_not_summing_to_one():
    P = np.full((2, 1, 2), 0.5)
    P[0, 0] = [0.5, 0.6]
    with pytest.raises(ValidationError):
        TabularMdp(P, 0.9)


def test_rejects_out_of_range_probabilities_and_discount():
    P = np.zeros((2, 1, 2))
    P[:, 0, 0] = 1.5
    P[:, 0, 1] = -0.5
    with pytest.raises(ValidationError):
        TabularMdp(P, 0.9)
    good = np.ones((1, 1, 1))
    with pytest.raises(ValidationError):
        TabularMdp(good, 1.0)
    with pytest.raises(ValidationError):
        TabularMdp(good, -0.1)


def test_transitions_are_read_only():
    mdp = TabularMdp(np.ones((1, 1, 1)), 0.5)
    with pytest.raises(ValueError):
        mdp.transitions[0, 0, 0] = 0.0


# --- solve_q -------------------------------------------------------------------

def test_single_state_geometric_series():
    mdp = TabularMdp(np.ones((1, 1, 1)), 0.5)
    q = solve_q(mdp, np.array([[1.0]]))
    assert q[0, 0] == pytest.approx(2.0, abs=1e-10)


def test_zero_reward_gives_zero_q(rng):
    mdp = random_mdp(rng, 6, 3)
    assert np.array_equal(solve_q(mdp, np.zeros((6, 3))), np.zeros((6, 3)))


def test_two_state_chain_matches_long_value_iteration():
    # state 0: action 0 stays, action 1 moves to the absorbing goal state 1
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = 1.0
    P[0, 1, 1] = 1.0
    P[1, :, 1] = 1.0
    r = np.array([[0.0, 0.0], [1.0, 1.0]])
    q = solve_q(TabularMdp(P, 0.9), r)
    oracle = naive_value_iteration(P.tolist(), r.tolist(), 0.9, 1000)
    assert np.abs(q - oracle).max() <= 1e-8
    assert np.allclose(q, [[8.1, 9.0], [10.0, 10.0]], atol=1e-8)


def test_bellman_residual_within_tolerance(rng):
    mdp = random_mdp(rng, 8, 4, discount=0.97)
    r = rng.normal(size=(8, 4))
    q = solve_q(mdp, r, tol=1e-9)
    residual = r + mdp.discount * mdp.expected_next(q.max(axis=1)) - q
    # the last step is at most tol, so the returned iterate's residual is at most gamma * tol
    assert np.abs(residual).max() <= 1e-9


def test_solve_q_errors(rng):
    mdp = random_mdp(rng, 4, 2, discount=0.99)
    with pytest.raises(NonConvergence) as info:
        solve_q(mdp, np.ones((4, 2)), max_iters=3)
    assert info.value.iterations == 3 and info.value.residual > 0
    with pytest.raises(DimensionMismatch):
        solve_q(mdp, np.ones((4, 3)))
    with pytest.raises(ValidationError):
        solve_q(mdp, np.ones((4, 2)), tol=0)


@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_solve_q_equivariant_under_state_relabelling(S, A, seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, S, A)
    r = rng.normal(size=(S, A))
    perm = rng.permutation(S)
    P_perm = mdp.transitions[perm][:, :, perm]
    q_perm = solve_q(TabularMdp(P_perm, mdp.discount), r[perm])
    inv = np.argsort(perm)
    assert np.abs(q_perm[inv] - solve_q(mdp, r)).max() <= 1e-10


# --- Boltzmann policies --------------------------------------------------------

def test_boltzmann_examples():
    assert np.array_equal(boltzmann_policy([[0.0, 0.0]]), [[0.5, 0.5]])
    e = math.e
    assert np.allclose(boltzmann_policy([[1.0, 0.0]]), [[e / (e + 1), 1 / (e + 1)]],
                       rtol=0, atol=1e-15)
    assert np.allclose(boltzmann_policy([[1.0, 0.0]]), [[0.7311, 0.2689]], atol=1e-4)
    big = boltzmann_policy([[1000.0, 999.0]])
    assert np.abs(big - boltzmann_policy([[1.0, 0.0]])).max() <= 1e-12


@given(st.lists(st.lists(st.floats(-500, 500), min_size=3, max_size=3), min_size=1,
                max_size=5),
       st.floats(-1e3, 1e3))
def test_boltzmann_rows_normalised_and_shift_invariant(rows, shift):
    q = np.array(rows)
    pi = boltzmann_policy(q)
    assert np.all(pi >= 0)
    assert np.abs(pi.sum(axis=1) - 1).max() <= 1e-12
    assert np.allclose(boltzmann_policy(q + shift), pi, atol=1e-12)
    assert np.allclose(np.exp(log_boltzmann_policy(q)), pi, atol=1e-12)


# --- policy evaluation ---------------------------------------------------------

def test_zero_reward_zero_value(rng):
    mdp = random_mdp(rng, 5, 3)
    pi = np.full((5, 3), 1 / 3)
    assert np.array_equal(greedy_value(mdp, np.zeros((5, 3)), pi), np.zeros(5))


def test_constant_reward_single_state():
    mdp = TabularMdp(np.ones((1, 2, 1)), 0.5)
    v = policy_value(mdp, np.array([[1.0, 1.0]]), np.array([[0.5, 0.5]]))
    assert v[0] == pytest.approx(2.0, abs=1e-10)


def test_policy_value_rejects_bad_policy(rng):
    mdp = random_mdp(rng, 3, 2)
    with pytest.raises(ValidationError):
        policy_value(mdp, np.zeros((3, 2)), np.full((3, 2), 0.6))


def test_gridworld_expert_value_matches_monte_carlo(gridworld):
    env, mdp = gridworld
    r = target_rewards(env)[0]
    pi = boltzmann_policy(solve_q(mdp, r))
    v = policy_value(mdp, r, pi)

    rng = np.random.default_rng(7)
    episodes, start = 10_000, env.state(env.origin)
    horizon = int(np.ceil(np.log(1e-8) / np.log(mdp.discount)))
    pi_cdf = np.cumsum(pi, axis=1)
    p_cdf = np.cumsum(mdp.transitions, axis=2)
    s = np.full(episodes, start)
    returns = np.zeros(episodes)
    disc = 1.0
    for _ in range(horizon):
        a = np.minimum((rng.random(episodes)[:, None] > pi_cdf[s]).sum(axis=1), 4)
        returns += disc * r[s, a]
        s = np.minimum((rng.random(episodes)[:, None] > p_cdf[s, a]).sum(axis=1), 24)
        disc *= mdp.discount
    se = returns.std(ddof=1) / np.sqrt(episodes)
    assert abs(returns.mean() - v[start]) <= 3 * se


def test_boltzmann_beats_uniform_on_random_fleet():
    rng = np.random.default_rng(99)
    for _ in range(40):
        S, A = rng.integers(2, 8), rng.integers(2, 5)
        gamma = rng.choice([0.5, 0.9, 0.97])
        mdp = random_mdp(rng, S, A, discount=gamma, sparsity=0.5)
        r = rng.normal(size=(S, A))
        boltz = policy_value(mdp, r, boltzmann_policy(solve_q(mdp, r)))
        uniform = policy_value(mdp, r, np.full((S, A), 1 / A))
        assert np.all(boltz >= uniform - 1e-9)


def test_boltzmann_beats_uniform_on_gridworld(gridworld):
    env, mdp = gridworld
    for r in target_rewards(FrustrationGridworld(extra_goals=((4, 0), (0, 4)))):
        boltz = policy_value(mdp, r, boltzmann_policy(solve_q(mdp, r)))
        uniform = policy_value(mdp, r, np.full(r.shape, 0.2))
        assert np.all(boltz >= uniform)


# --- expected value difference ---------------------------------------------------

def test_evd_of_identical_rewards_is_zero(rng):
    mdp = random_mdp(rng, 6, 3, discount=0.95)
    r = rng.normal(size=(6, 3))
    mae, s0 = expected_value_difference(mdp, r, r, 0)
    assert mae == 0.0 and s0 == 0.0


def test_evd_invariant_to_constant_shift_at_zero_discount(rng):
    mdp = random_mdp(rng, 5, 3, discount=0.0)
    r = rng.normal(size=(5, 3))
    mae, s0 = expected_value_difference(mdp, r, r + 3.7, 2)
    assert abs(mae) <= 1e-12 and abs(s0) <= 1e-12


@given(st.integers(0, 2**32 - 1))
def test_evd_start_gap_is_non_positive(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 5, 3, discount=0.8)
    r_true, r_hat = rng.normal(size=(2, 5, 3))
    mae, s0 = expected_value_difference(mdp, r_true, r_true, 1)
    assert mae <= 1e-8
    mae, s0 = expected_value_difference(mdp, r_true, r_hat, 1)
    assert mae >= 0


def test_evd_errors(rng):
    mdp = random_mdp(rng, 3, 2)
    with pytest.raises(DimensionMismatch):
        expected_value_difference(mdp, np.zeros((3, 2)), np.zeros((2, 2)), 0)
    with pytest.raises(DimensionMismatch):
        expected_value_difference(mdp, np.zeros((3, 2)), np.zeros((3, 2)), 5)


# --- file format ---------------------------------------------------------------

def test_mdp_file_round_trip_is_exact(tmp_path, gridworld):
    _, mdp = gridworld
    save_mdp(mdp, tmp_path / "m.json")
    back = load_mdp(tmp_path / "m.json")
    assert np.array_equal(back.transitions, mdp.transitions)
    assert back.discount == mdp.discount


def test_mdp_file_renormalises_small_errors(tmp_path):
    import json

    doc = {"num_states": 2, "num_actions": 1, "discount": 0.9,
           "transitions": [0.5, 0.5 + 5e-7, 0.25, 0.75]}
    (tmp_path / "m.json").write_text(json.dumps(doc))
    mdp = load_mdp(tmp_path / "m.json")
    assert np.abs(mdp.transitions.sum(axis=2) - 1).max() <= 1e-15

    doc["transitions"][1] = 0.6
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ValidationError):
        load_mdp(tmp_path / "m.json")

    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ParseError):
        load_mdp(tmp_path / "bad.json")


def test_build_mdp_rows_sum_to_one():
    for slip in ("stay", "lateral"):
        mdp = build_mdp(FrustrationGridworld(slip=slip))
        assert np.abs(mdp.transitions.sum(axis=2) - 1).max() <= 1e-12
