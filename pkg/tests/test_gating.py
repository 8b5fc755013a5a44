import numpy as np
import pytest
from hypothesis import given, strategies as st

from prism_irl import gating
from prism_irl.errors import IndexOutOfRange, NumericalFault, ValidationError
from prism_irl.gating import (
    Adam, GatingNetwork, SGD, forward, forward_batch, gradient_check, loss,
    random_check_problem, train_step,
)


def random_net(rng, S=5, A=3, K=3, d=4, dh=4, cell="rnn", scale=1.0):
    net = GatingNetwork(S, A, K, d, dh, cell, seed=int(rng.integers(2**31)))
    for p in net.params.values():
        p[...] = rng.normal(0, scale, p.shape)
    return net


def random_seq(rng, n, S=5, A=3):
    return rng.integers(0, S, n), rng.integers(0, A, n)


# --- structure -----------------------------------------------------------------

def test_parameter_count_matches_closed_form(caplog):
    S, A, K, d, dh = 127, 4, 4, 128, 128
    net = GatingNetwork(S, A, K, d, dh)
    expected = (S + A) * d + dh * d + dh * dh + dh + K * dh + K
    assert net.num_parameters == expected
    assert 4e4 < expected < 6e4


def test_lstm_has_four_gate_blocks():
    net = GatingNetwork(3, 2, 2, 5, 6, cell="lstm")
    assert net.params["W_x"].shape == (24, 5) and net.params["W_h"].shape == (24, 6)
    with pytest.raises(ValidationError):
        GatingNetwork(3, 2, 2, cell="gru")


def test_initialisation_ranges():
    net = GatingNetwork(20, 5, 3, 16, 16, seed=3)
    assert np.abs(net.params["E_s"]).max() <= 0.1
    assert np.abs(net.params["W_h"]).max() <= 1 / np.sqrt(16)
    again = GatingNetwork(20, 5, 3, 16, 16, seed=3)
    assert all(np.array_equal(net.params[k], again.params[k]) for k in net.params)


# --- forward -------------------------------------------------------------------

def test_zero_parameters_give_uniform_output(rng):
    for cell in gating.CELLS:
        net = GatingNetwork(5, 3, 4, 3, 3, cell).zero_()
        out = forward(net, *random_seq(rng, 6))
        assert np.array_equal(out.dists, np.full((6, 4), 0.25))


def test_memoryless_when_recurrence_is_zero(rng):
    net = random_net(rng)
    net.params["W_h"][...] = 0
    s, a = random_seq(rng, 7)
    perm = rng.permutation(7)
    assert np.allclose(forward(net, s[perm], a[perm]).dists, forward(net, s, a).dists[perm],
                       rtol=0, atol=1e-15)


def test_forward_is_deterministic_and_normalised(rng):
    net = random_net(rng, K=3)
    s, a = random_seq(rng, 5)
    one, two = forward(net, s, a), forward(net, s, a)
    assert np.array_equal(one.dists, two.dists)
    assert np.abs(one.dists.sum(axis=1) - 1).max() <= 1e-12
    assert one.hiddens.shape == (5, 4)


def test_simplex_invariant_over_many_random_nets():
    rng = np.random.default_rng(0)
    for i in range(1000):
        net = random_net(rng, K=int(rng.integers(1, 5)), cell=gating.CELLS[i % 2],
                         scale=float(rng.uniform(0.1, 5)))
        f = forward(net, *random_seq(rng, int(rng.integers(1, 8)))).dists
        assert np.all(f >= 0) and np.abs(f.sum(axis=1) - 1).max() <= 1e-9


@given(st.integers(0, 2**32 - 1), st.integers(2, 9), st.sampled_from(gating.CELLS))
def test_outputs_do_not_depend_on_future_steps(seed, n, cell):
    rng = np.random.default_rng(seed)
    net = random_net(rng, cell=cell)
    s, a = random_seq(rng, n)
    t = int(rng.integers(0, n - 1))
    s2, a2 = s.copy(), a.copy()
    s2[t + 1:] = rng.integers(0, 5, n - t - 1)
    a2[t + 1:] = rng.integers(0, 3, n - t - 1)
    before = forward(net, s, a).dists[: t + 1]
    after = forward(net, s2, a2).dists[: t + 1]
    assert np.array_equal(before, after)


def test_padded_batch_matches_single_sequences(rng):
    for cell in gating.CELLS:
        net = random_net(rng, cell=cell)
        seqs = [random_seq(rng, n) for n in (4, 1, 7)]
        batched = forward_batch(net, seqs)
        for seq, logf in zip(seqs, batched):
            assert np.allclose(np.exp(logf), forward(net, *seq).dists, rtol=0, atol=1e-14)


def test_forward_rejects_bad_tokens():
    net = GatingNetwork(3, 2, 2, 2, 2)
    with pytest.raises(IndexOutOfRange):
        forward(net, [0, 3], [0, 0])
    with pytest.raises(IndexOutOfRange):
        forward(net, [0], [-1])
    with pytest.raises(ValidationError):
        forward(net, [], [])


# --- loss and gradients ----------------------------------------------------------

def test_single_intention_loss_is_zero():
    rng = np.random.default_rng(4)
    net = random_net(rng, K=1)
    seq = random_seq(rng, 5)
    value, grads = loss(net, [(seq, np.ones((5, 1)))])
    assert value == 0.0
    assert np.array_equal(grads["W_o"], np.zeros_like(grads["W_o"]))
    assert np.array_equal(grads["b_o"], np.zeros_like(grads["b_o"]))


def test_constant_outputs_have_no_smoothness_penalty(rng):
    net = random_net(rng)
    net.params["W_h"][...] = 0
    net.params["W_x"][...] = 0
    batch = [(random_seq(rng, 6), rng.dirichlet(np.ones(3), 6))]
    plain = loss(net, batch)[0]
    assert loss(net, batch, lambda_l1=3.0, lambda_kl=2.0)[0] == plain


def test_loss_is_batch_mean(rng):
    net = random_net(rng)
    items = [(random_seq(rng, n), rng.dirichlet(np.ones(3), n)) for n in (3, 6)]
    both = loss(net, items, 0.5, 0.5)[0]
    single = [loss(net, [item], 0.5, 0.5)[0] for item in items]
    assert both == pytest.approx(np.mean(single), rel=1e-12)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("cell", gating.CELLS)
def test_gradients_match_central_differences(seed, cell):
    rng = np.random.default_rng(seed)
    net, batch = random_check_problem(rng, cell, K=2, d=4, dh=4, lengths=(3,))
    assert gradient_check(net, batch, 0.7, 0.3, eps=1e-5, points=2) <= 1e-4


@pytest.mark.parametrize("cell", gating.CELLS)
def test_gradients_on_padded_batches(cell):
    rng = np.random.default_rng(11)
    for _ in range(3):
        net, batch = random_check_problem(rng, cell, K=3, lengths=(4, 1, 6))
        assert gradient_check(net, batch, 1.3, 0.6) <= 1e-4


def test_gradient_check_detects_a_wrong_gradient(monkeypatch):
    rng = np.random.default_rng(2)
    net, batch = random_check_problem(rng)
    real = gating._backward

    def skewed(*args):
        grads = real(*args)
        grads["b_o"] = grads["b_o"] * 1.01
        return grads

    monkeypatch.setattr(gating, "_backward", skewed)
    assert gradient_check(net, batch) > 1e-3


def test_non_finite_output_raises_with_step():
    net = GatingNetwork(3, 2, 2, 2, 2)
    net.params["E_s"][2] = np.nan
    with pytest.raises(NumericalFault) as info:
        loss(net, [(([0, 1, 2], [0, 0, 0]), np.full((3, 2), 0.5))])
    assert info.value.step == 2
    with pytest.raises(ValidationError):
        loss(net, [(([0], [0]), np.ones((1, 2)) / 2)], lambda_l1=-1)


# --- training ------------------------------------------------------------------

def test_descent_step_on_zero_net(rng):
    net = GatingNetwork(5, 3, 2, 4, 4).zero_()
    w = np.zeros((6, 2))
    w[:, 0] = 1.0
    batch = [(random_seq(rng, 6), np.full((6, 2), 0.5)), (random_seq(rng, 6), w)]
    before = loss(net, batch)[0]
    train_step(net, batch, lr=1e-2)
    assert loss(net, batch)[0] <= before


def test_zero_learning_rate_leaves_parameters_bitwise(rng):
    for opt in (SGD(0.0), Adam(0.0)):
        net = random_net(rng)
        snapshot = net.copy()
        batch = [(random_seq(rng, 4), rng.dirichlet(np.ones(3), 4))]
        train_step(net, batch, epochs=3, optimizer=opt)
        assert all(np.array_equal(net.params[k], snapshot.params[k]) for k in net.params)


def test_zero_epochs_returns_current_loss(rng):
    net = random_net(rng)
    snapshot = net.copy()
    batch = [(random_seq(rng, 4), rng.dirichlet(np.ones(3), 4))]
    assert train_step(net, batch, epochs=0) == loss(net, batch)[0]
    assert all(np.array_equal(net.params[k], snapshot.params[k]) for k in net.params)
    with pytest.raises(ValidationError):
        train_step(net, [])


def test_training_fits_a_fixed_posterior():
    rng = np.random.default_rng(0)
    batch = []
    for _ in range(8):
        s, a = random_seq(rng, 10)
        w = np.where((s < 2)[:, None], [0.95, 0.05], [0.05, 0.95])
        batch.append(((s, a), w))
    net = GatingNetwork(5, 3, 2, 8, 8, seed=1)
    start = loss(net, batch)[0]
    train_step(net, batch, epochs=200, batch_size=4, optimizer=Adam(1e-2),
               rng=np.random.default_rng(0))
    assert loss(net, batch)[0] < 0.5 * start


def test_stronger_l1_never_adds_switches():
    batch = gating.alternating_posterior_batch(seed=0)
    counts = gating.l1_switch_sweep((0.0, 0.5, 2.22, 5.0, 10.0), batch)
    assert all(b <= a for a, b in zip(counts, counts[1:]))
    assert counts[-1] < counts[0]


# --- checkpoints ---------------------------------------------------------------

def test_gate_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    for cell in gating.CELLS:
        net = random_net(rng, cell=cell)
        gating.save_gate(net, tmp_path / f"{cell}.npz")
        back = gating.load_gate(tmp_path / f"{cell}.npz")
        assert (back.cell, back.seed, back.embed_dim) == (net.cell, net.seed, net.embed_dim)
        assert all(np.array_equal(back.params[k], net.params[k]) for k in net.params)


def test_gate_checkpoint_rejects_missing_arrays(tmp_path, rng):
    net = random_net(rng)
    del net.params["b_o"]
    gating.save_gate(net, tmp_path / "g.npz")
    with pytest.raises(ValidationError):
        gating.load_gate(tmp_path / "g.npz")
