"""Recurrent intention-gating network, written directly in numpy.

The network reads a sequence of ``(state, action)`` tokens, embeds each step as
``x_t = E_s[s_t] + E_a[a_t]``, runs a single recurrent layer (tanh RNN or LSTM)
and maps every hidden state to a softmax over ``K`` intentions.

Batches of variable-length sequences are zero-padded with a boolean mask;
padded steps contribute neither loss nor gradient.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_softmax

from .errors import IndexOutOfRange, NumericalFault, ValidationError

CELLS = ("rnn", "lstm")


@dataclass(eq=False)
class GatingNetwork:
    num_states: int
    num_actions: int
    num_intentions: int
    embed_dim: int = 128
    hidden_dim: int = 128
    cell: str = "rnn"
    seed: int = 0
    params: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self.cell not in CELLS:
            raise ValidationError(f"unknown recurrent cell {self.cell!r}")
        if self.params is None:
            self.params = init_params(
                np.random.default_rng(self.seed), self.num_states, self.num_actions,
                self.num_intentions, self.embed_dim, self.hidden_dim, self.cell,
            )

    @property
    def num_parameters(self):
        return sum(p.size for p in self.params.values())

    def copy(self):
        return GatingNetwork(
            self.num_states, self.num_actions, self.num_intentions, self.embed_dim,
            self.hidden_dim, self.cell, self.seed,
            {k: v.copy() for k, v in self.params.items()},
        )

    def zero_(self):
        for p in self.params.values():
            p[...] = 0.0
        return self


def param_shapes(num_states, num_actions, K, d, dh, cell="rnn"):
    gates = 4 if cell == "lstm" else 1
    return {
        "E_s": (num_states, d),
        "E_a": (num_actions, d),
        "W_x": (gates * dh, d),
        "W_h": (gates * dh, dh),
        "b_h": (gates * dh,),
        "W_o": (K, dh),
        "b_o": (K,),
    }


def init_params(rng, num_states, num_actions, K, d, dh, cell="rnn"):
    scale = 1.0 / np.sqrt(dh)
    params = {}
    for name, shape in param_shapes(num_states, num_actions, K, d, dh, cell).items():
        bound = 0.1 if name.startswith("E_") else scale
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


@dataclass(eq=False)
class GateOutput:
    dists: np.ndarray  # (n, K)
    hiddens: np.ndarray  # (n, d')


def pad_batch(seqs, weights=None):
    """Stack ``(states, actions)`` pairs into zero-padded (B, T) arrays plus a mask."""
    lengths = np.array([len(s) for s, _ in seqs])
    B, T = len(seqs), int(lengths.max())
    states = np.zeros((B, T), dtype=np.int64)
    actions = np.zeros((B, T), dtype=np.int64)
    mask = np.arange(T)[None, :] < lengths[:, None]
    for b, (s, a) in enumerate(seqs):
        states[b, : len(s)] = s
        actions[b, : len(a)] = a
    if weights is None:
        return states, actions, mask
    K = weights[0].shape[1]
    w = np.zeros((B, T, K))
    for b, wb in enumerate(weights):
        w[b, : len(wb)] = wb
    return states, actions, mask, w


def _check_indices(net, states, actions, mask):
    s, a = states[mask], actions[mask]
    if s.size and (s.min() < 0 or s.max() >= net.num_states):
        raise IndexOutOfRange("state token outside the gate's embedding table")
    if a.size and (a.min() < 0 or a.max() >= net.num_actions):
        raise IndexOutOfRange("action token outside the gate's embedding table")


def _forward(net, states, actions, mask):
    p = net.params
    _check_indices(net, states, actions, mask)
    x = p["E_s"][states] + p["E_a"][actions]
    pre_x = x @ p["W_x"].T + p["b_h"]
    B, T = states.shape
    dh = net.hidden_dim
    W_hT = p["W_h"].T
    H = np.empty((B, T, dh))
    cache = {"x": x, "H": H}
    h = np.zeros((B, dh))
    if net.cell == "rnn":
        for t in range(T):
            h = np.tanh(pre_x[:, t] + h @ W_hT)
            H[:, t] = h
    else:
        G = np.empty((B, T, 4 * dh))
        C = np.empty((B, T, dh))
        TC = np.empty((B, T, dh))
        c = np.zeros((B, dh))
        for t in range(T):
            z = pre_x[:, t] + h @ W_hT
            i_g = expit(z[:, :dh])
            f_g = expit(z[:, dh:2 * dh])
            g_g = np.tanh(z[:, 2 * dh:3 * dh])
            o_g = expit(z[:, 3 * dh:])
            c = f_g * c + i_g * g_g
            tc = np.tanh(c)
            h = o_g * tc
            G[:, t, :dh], G[:, t, dh:2 * dh] = i_g, f_g
            G[:, t, 2 * dh:3 * dh], G[:, t, 3 * dh:] = g_g, o_g
            C[:, t], TC[:, t], H[:, t] = c, tc, h
        cache.update(G=G, C=C, TC=TC)
    logits = H @ p["W_o"].T + p["b_o"]
    cache["logf"] = log_softmax(logits, axis=-1)
    return cache


def _backward(net, states, actions, mask, cache, dlogits):
    p = net.params
    H, x = cache["H"], cache["x"]
    B, T = states.shape
    dh = net.hidden_dim
    grads = {}
    grads["W_o"] = np.einsum("btk,btj->kj", dlogits, H)
    grads["b_o"] = dlogits.sum(axis=(0, 1))
    dH = dlogits @ p["W_o"]
    W_h = p["W_h"]
    dpre = np.zeros((B, T, W_h.shape[0]))
    dh_next = np.zeros((B, dh))
    if net.cell == "rnn":
        for t in range(T - 1, -1, -1):
            d = (dH[:, t] + dh_next) * (1.0 - H[:, t] ** 2)
            dpre[:, t] = d
            dh_next = d @ W_h
    else:
        G, C, TC = cache["G"], cache["C"], cache["TC"]
        dc_next = np.zeros((B, dh))
        for t in range(T - 1, -1, -1):
            i_g, f_g = G[:, t, :dh], G[:, t, dh:2 * dh]
            g_g, o_g = G[:, t, 2 * dh:3 * dh], G[:, t, 3 * dh:]
            c_prev = C[:, t - 1] if t > 0 else np.zeros((B, dh))
            dh_t = dH[:, t] + dh_next
            dc = dh_t * o_g * (1.0 - TC[:, t] ** 2) + dc_next
            d = dpre[:, t]
            d[:, :dh] = dc * g_g * i_g * (1.0 - i_g)
            d[:, dh:2 * dh] = dc * c_prev * f_g * (1.0 - f_g)
            d[:, 2 * dh:3 * dh] = dc * i_g * (1.0 - g_g ** 2)
            d[:, 3 * dh:] = dh_t * TC[:, t] * o_g * (1.0 - o_g)
            dc_next = dc * f_g
            dh_next = d @ W_h
    grads["W_x"] = np.einsum("btj,bti->ji", dpre, x)
    grads["W_h"] = np.einsum("btj,bti->ji", dpre[:, 1:], H[:, :-1])
    grads["b_h"] = dpre.sum(axis=(0, 1))
    dx = dpre[mask] @ p["W_x"]
    grads["E_s"] = np.zeros_like(p["E_s"])
    grads["E_a"] = np.zeros_like(p["E_a"])
    np.add.at(grads["E_s"], states[mask], dx)
    np.add.at(grads["E_a"], actions[mask], dx)
    return grads


def forward(net, states, actions):
    """Per-step intention distributions for a single sequence."""
    states = np.asarray(states, dtype=np.int64)[None, :]
    actions = np.asarray(actions, dtype=np.int64)[None, :]
    if states.shape[1] < 1 or states.shape != actions.shape:
        raise ValidationError("sequence must be non-empty with matching states/actions")
    cache = _forward(net, states, actions, np.ones(states.shape, dtype=bool))
    return GateOutput(np.exp(cache["logf"][0]), cache["H"][0])


def forward_batch(net, seqs):
    """Log gate outputs for several sequences, returned as a list of (n_i, K) arrays."""
    states, actions, mask = pad_batch(seqs)
    logf = _forward(net, states, actions, mask)["logf"]
    return [logf[b, : len(s)] for b, (s, _) in enumerate(seqs)]


def _loss_terms(logf, mask, w, lambda_l1, lambda_kl):
    """Batch-mean regularised NLL and its gradient with respect to the logits."""
    B = logf.shape[0]
    f = np.exp(logf)
    m = mask[..., None]
    value = -np.sum(m * w * logf)
    dlogits = m * (f * w.sum(axis=-1, keepdims=True) - w)

    pm = mask[:, 1:, None]
    if lambda_l1:
        diff = f[:, 1:] - f[:, :-1]
        wl = pm * w[:, 1:]
        value += lambda_l1 * np.sum(wl * np.abs(diff))
        g = lambda_l1 * wl * np.sign(diff)
        gf = np.zeros_like(f)
        gf[:, 1:] += g
        gf[:, :-1] -= g
        dlogits += f * (gf - np.sum(f * gf, axis=-1, keepdims=True))
    if lambda_kl:
        p, lp, lq, q = f[:, :-1], logf[:, :-1], logf[:, 1:], f[:, 1:]
        kl = np.sum(p * (lp - lq), axis=-1, keepdims=True)
        value += lambda_kl * np.sum(pm * kl)
        dlogits[:, 1:] += lambda_kl * pm * (q - p)
        dlogits[:, :-1] += lambda_kl * pm * p * (lp - lq - kl)
    return value / B, dlogits / B


def _check_finite(logf, mask):
    bad = ~np.isfinite(logf).all(axis=-1) & mask
    if bad.any():
        step = int(np.argwhere(bad)[0][1])
        raise NumericalFault("non-finite gate output", step=step)


def loss(net, batch, lambda_l1=0.0, lambda_kl=0.0):
    """Regularised gate loss and its gradients over a batch of ``(seq, w)`` pairs.

    ``batch`` holds ``((states, actions), w)`` items, ``w`` being an (n, K)
    responsibility matrix treated as a constant. Returns ``(value, grads)``
    where ``grads`` maps parameter names to arrays; the value is the mean over
    sequences of NLL + ``lambda_l1`` * L1 + ``lambda_kl`` * KL.
    """
    if lambda_l1 < 0 or lambda_kl < 0:
        raise ValidationError("smoothness weights must be non-negative")
    seqs = [seq for seq, _ in batch]
    states, actions, mask, w = pad_batch(seqs, [np.asarray(wb) for _, wb in batch])
    cache = _forward(net, states, actions, mask)
    _check_finite(cache["logf"], mask)
    value, dlogits = _loss_terms(cache["logf"], mask, w, lambda_l1, lambda_kl)
    if not np.isfinite(value):
        raise NumericalFault("non-finite loss")
    return value, _backward(net, states, actions, mask, cache, dlogits)


class SGD:
    def __init__(self, lr=1e-3):
        self.lr = lr

    def step(self, params, grads):
        if self.lr == 0:
            return
        for name, g in grads.items():
            params[name] -= self.lr * g


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m, self.v = {}, {}

    def step(self, params, grads):
        if self.lr == 0:
            return
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name, lr):
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValidationError(f"unknown optimizer {name!r}")


def train_step(net, batch, lr=1e-3, lambda_l1=0.0, lambda_kl=0.0, epochs=1,
               batch_size=None, optimizer=None, rng=None):
    """Run ``epochs`` passes of minibatch gradient descent on ``net`` in place.

    ``optimizer`` (an ``SGD``/``Adam`` instance) carries state across calls; a
    fresh ``SGD(lr)`` is used when omitted. Minibatches are shuffled when an
    ``rng`` is supplied. Returns the mean minibatch loss of the final epoch,
    or the current full-batch loss if ``epochs`` is 0.
    """
    if not batch:
        raise ValidationError("empty training batch")
    optimizer = optimizer if optimizer is not None else SGD(lr)
    size = batch_size or len(batch)
    if epochs == 0:
        return loss(net, batch, lambda_l1, lambda_kl)[0]
    for _ in range(epochs):
        order = rng.permutation(len(batch)) if rng is not None else np.arange(len(batch))
        losses, counts = [], []
        for start in range(0, len(batch), size):
            mb = [batch[i] for i in order[start:start + size]]
            value, grads = loss(net, mb, lambda_l1, lambda_kl)
            optimizer.step(net.params, grads)
            losses.append(value)
            counts.append(len(mb))
    return float(np.average(losses, weights=counts))


def save_gate(net, path):
    meta = {
        "num_states": net.num_states, "num_actions": net.num_actions,
        "num_intentions": net.num_intentions, "embed_dim": net.embed_dim,
        "hidden_dim": net.hidden_dim, "cell": net.cell, "seed": net.seed,
    }
    np.savez(path, __meta__=np.array(json.dumps(meta)), **net.params)


def gate_from_arrays(meta, arrays):
    net = GatingNetwork(**meta, params={k: np.array(v) for k, v in arrays.items()})
    expected = param_shapes(net.num_states, net.num_actions, net.num_intentions,
                            net.embed_dim, net.hidden_dim, net.cell)
    for name, shape in expected.items():
        if net.params.get(name) is None or net.params[name].shape != shape:
            raise ValidationError(f"checkpoint parameter {name} missing or mis-shaped")
    return net


def load_gate(path):
    with np.load(path) as data:
        meta = json.loads(str(data["__meta__"]))
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    return gate_from_arrays(meta, arrays)


def gradient_check(net, batch, lambda_l1=0.0, lambda_kl=0.0, eps=1e-4, floor=1e-6, points=5):
    """Largest relative gap between the analytic gradient and finite differences.

    ``points`` selects the two-point central or the fourth-order five-point
    stencil. The relative error of each coordinate is
    ``|fd - g| / max(|fd|, |g|, floor)``.
    """
    if points not in (2, 5):
        raise ValidationError("points must be 2 or 5")
    _, grads = loss(net, batch, lambda_l1, lambda_kl)
    steps = (1, -1) if points == 2 else (2, 1, -1, -2)
    worst = 0.0
    for name, p in net.params.items():
        for idx in np.ndindex(p.shape):
            old = p[idx]
            vals = []
            for step in steps:
                p[idx] = old + step * eps
                vals.append(loss(net, batch, lambda_l1, lambda_kl)[0])
            p[idx] = old
            if points == 2:
                fd = (vals[0] - vals[1]) / (2 * eps)
            else:
                fd = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * eps)
            g = grads[name][idx]
            worst = max(worst, abs(fd - g) / max(abs(fd), abs(g), floor))
    return worst


def min_step_change(net, batch):
    """Smallest ``|f_i - f_{i-1}|`` entry in a batch (distance to an L1 kink)."""
    gaps = [np.inf]
    for (states, actions), _ in batch:
        f = forward(net, states, actions).dists
        if len(f) > 1:
            gaps.append(np.abs(np.diff(f, axis=0)).min())
    return float(min(gaps))


def random_check_problem(rng, cell="rnn", num_states=5, num_actions=3, K=3, d=4, dh=4,
                         lengths=(3, 5, 2), scale=0.8, kink_gap=1e-7):
    """A small random net and batch for gradient checking, redrawn while any
    consecutive gate outputs are within ``kink_gap`` of each other."""
    while True:
        net = GatingNetwork(num_states, num_actions, K, d, dh, cell,
                            seed=int(rng.integers(2**31)))
        for p in net.params.values():
            p[...] = rng.normal(0.0, scale, p.shape)
        batch = []
        for n in lengths:
            seq = (rng.integers(0, num_states, n), rng.integers(0, num_actions, n))
            batch.append((seq, rng.dirichlet(np.ones(K), n)))
        if min_step_change(net, batch) >= kink_gap:
            return net, batch


def argmax_switches(net, seqs):
    """Total number of changes in the most likely intention along each sequence."""
    total = 0
    for logf in forward_batch(net, seqs):
        total += int(np.count_nonzero(np.diff(logf.argmax(axis=1))))
    return total


def alternating_posterior_batch(seed=0, num_sequences=32, length=24, num_states=5,
                                num_actions=3, pattern=(0, 0, 0, 1), confidence=0.85):
    """Random token sequences whose K = 2 posterior cycles through ``pattern``.

    The default pattern alternates three steps of intention 0 with one step
    of intention 1, so a fully smoothed gate has a clear majority intention.
    """
    rng = np.random.default_rng(seed)
    z = np.resize(np.asarray(pattern), length)
    w = np.where(z[:, None] == np.arange(2), confidence, 1.0 - confidence)
    return [
        ((rng.integers(0, num_states, length), rng.integers(0, num_actions, length)), w.copy())
        for _ in range(num_sequences)
    ]


def l1_switch_sweep(lambdas, batch, embed_dim=8, hidden_dim=8, epochs=300, lr=1e-2,
                    batch_size=8, seed=0):
    """Argmax switch count of a gate trained from the same seed for each ``lambda_l1``."""
    S = 1 + max(int(s.max()) for (s, _), _ in batch)
    A = 1 + max(int(a.max()) for (_, a), _ in batch)
    K = batch[0][1].shape[1]
    seqs = [seq for seq, _ in batch]
    counts = []
    for lam in lambdas:
        net = GatingNetwork(S, A, K, embed_dim, hidden_dim, seed=seed)
        train_step(net, batch, lambda_l1=lam, epochs=epochs, batch_size=batch_size,
                   optimizer=Adam(lr), rng=np.random.default_rng(seed))
        counts.append(argmax_switches(net, seqs))
    return counts
