"""EM over latent intentions: per-step posteriors, gate training, weighted IAVI.

The E-step posterior at step ``i`` is the normalised product of the gate output
and each intention's Boltzmann likelihood of the observed action. Because the
intentions decouple across steps given the gate, the posterior costs ``n * K``
policy lookups per trajectory and no forward-backward pass is needed.
"""

import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import gating
from .errors import DimensionMismatch, InstanceTooLarge, NonConvergence, ValidationError
from .iavi import accumulate_all_counts, empirical_policy, iavi_solve
from .mdp import log_boltzmann_policy, solve_q

log = logging.getLogger(__name__)

@dataclass(eq=False)
class EmState:
    net: gating.GatingNetwork
    rewards: np.ndarray  # (K, S, A)
    q: np.ndarray = None
    log_policies: np.ndarray = None
    iteration: int = 0
    train_ll: float = float("nan")
    history: list = field(default_factory=list)
    observation_lag: bool = False
    optimizer: object = None
    lookups: int = 0

    @property
    def num_intentions(self):
        return self.rewards.shape[0]

    @property
    def policies(self):
        return np.exp(self.log_policies)


def refresh_policies(state, mdp, q_tol=1e-10):
    """Recompute cached Q tables and Boltzmann log-policies from the rewards."""
    qs = []
    for k, r in enumerate(state.rewards):
        init = state.q[k] if state.q is not None else None
        try:
            qs.append(solve_q(mdp, r, tol=q_tol, init=init))
        except NonConvergence as exc:
            raise NonConvergence(exc.residual, exc.iterations, "value iteration", k) from exc
    state.q = np.stack(qs)
    state.log_policies = np.stack([log_boltzmann_policy(q) for q in state.q])
    return state


def gate_sequences(dataset, observation_lag=False):
    """Gate input tokens per trajectory.

    With ``observation_lag`` the gate sees ``(s_i, a_{i-1})``; the first step
    uses the extra start token ``num_actions``.
    """
    seqs = []
    for states, actions in dataset:
        if observation_lag:
            prev = np.empty_like(actions)
            prev[0] = dataset.num_actions
            prev[1:] = actions[:-1]
            seqs.append((states, prev))
        else:
            seqs.append((states, actions))
    return seqs


def init_state(mdp, dataset, config):
    if (mdp.num_states, mdp.num_actions) != (dataset.num_states, dataset.num_actions):
        raise DimensionMismatch("dataset does not match the MDP's state/action counts")
    rng = np.random.default_rng(config.seed)
    K = config.num_intentions
    scale = config.reward_init_scale
    rewards = rng.uniform(-scale, scale, size=(K, mdp.num_states, mdp.num_actions))
    net = gating.GatingNetwork(
        mdp.num_states,
        mdp.num_actions + int(config.observation_lag),
        K,
        config.embed_dim,
        config.hidden_dim,
        config.architecture,
        seed=config.seed,
    )
    log.info("gate has %d trainable parameters", net.num_parameters)
    state = EmState(
        net,
        rewards,
        observation_lag=config.observation_lag,
        optimizer=gating.make_optimizer(config.optimizer, config.learning_rate),
    )
    return refresh_policies(state, mdp, config.q_tol)


def _step_log_terms(state, dataset):
    """Per trajectory: (log gate, log policy) arrays, each (n, K)."""
    log_gate = gating.forward_batch(state.net, gate_sequences(dataset, state.observation_lag))
    out = []
    for (states, actions), lg in zip(dataset, log_gate):
        lp = state.log_policies[:, states, actions].T
        state.lookups += lp.size
        out.append((lg, lp))
    return out


def posterior(state, dataset):
    """Responsibilities and the per-trajectory mixture log-likelihood of every step."""
    resp, step_ll = [], []
    for lg, lp in _step_log_terms(state, dataset):
        joint = lg + lp
        ll = logsumexp(joint, axis=1, keepdims=True)
        resp.append(np.exp(joint - ll))
        step_ll.append(ll[:, 0])
    return resp, step_ll


def e_step(state, dataset):
    """Per-step responsibilities ``w[i, k]`` for every trajectory."""
    return posterior(state, dataset)[0]


def log_likelihood(state, dataset):
    """Mean per-step log of ``sum_k f(phi_i)_k pi_k(a_i | s_i)``."""
    _, step_ll = posterior(state, dataset)
    return float(np.concatenate(step_ll).mean())


def expected_reward_objective(log_policies, dataset, resp):
    """Responsibility-weighted log-likelihood of the actions (reward part of the EM bound)."""
    counts = accumulate_all_counts(dataset, resp)
    return float(np.sum(counts * log_policies)) / len(dataset)


def m_step(state, mdp, dataset, resp, config, rng=None):
    """Gate update on the regularised weighted NLL, then K independent IAVI solves."""
    gate_loss = float("nan")
    if state.num_intentions > 1 and config.epochs_per_mstep > 0:
        batch = list(zip(gate_sequences(dataset, state.observation_lag), resp))
        gate_loss = gating.train_step(
            state.net, batch, lambda_l1=config.lambda_l1, lambda_kl=config.lambda_kl,
            epochs=config.epochs_per_mstep, batch_size=config.batch_size,
            optimizer=state.optimizer, rng=rng,
        )

    counts = accumulate_all_counts(dataset, resp)
    new_rewards = np.empty_like(state.rewards)
    for k in range(state.num_intentions):
        pihat = empirical_policy(counts[k], config.smoothing)
        try:
            new_rewards[k] = iavi_solve(
                mdp, pihat, tol=config.iavi_tol, max_iters=config.iavi_max_iters,
                damping=config.iavi_damping, init=state.rewards[k],
                sweeps=config.iavi_sweeps_per_mstep,
            )
        except NonConvergence as exc:
            raise NonConvergence(exc.residual, exc.iterations, "IAVI", k) from exc
    delta = float(np.abs(new_rewards - state.rewards).max())
    state.rewards = new_rewards
    refresh_policies(state, mdp, config.q_tol)
    return state, {"gate_loss": gate_loss, "max_reward_delta": delta}


def run_em(mdp, dataset, config, callback=None):
    """Alternate E- and M-steps until the train log-likelihood plateaus.

    Stops when ``|dLL| / |LL| < rel_tol`` for ``patience`` consecutive
    iterations or after ``max_em_iters``. ``callback(record)`` receives each
    per-iteration diagnostics record.
    """
    state = init_state(mdp, dataset, config)
    rng = np.random.default_rng([config.seed, 1])
    prev_ll, calm = None, 0
    for _ in range(config.max_em_iters):
        resp, step_ll = posterior(state, dataset)
        ll = float(np.concatenate(step_ll).mean())
        state, diag = m_step(state, mdp, dataset, resp, config, rng)
        state.iteration += 1
        record = {"iteration": state.iteration, "train_ll": ll, **diag}
        state.history.append(record)
        if callback is not None:
            callback(record)
        log.debug("iter %d  LL %.6f  dR %.2e", state.iteration, ll, diag["max_reward_delta"])
        if prev_ll is not None:
            if ll < prev_ll - 1e-6:
                log.warning(
                    "train log-likelihood decreased at iteration %d: %.6f -> %.6f",
                    state.iteration, prev_ll, ll,
                )
            calm = calm + 1 if abs(ll - prev_ll) / max(abs(ll), 1e-300) < config.rel_tol else 0
            if calm >= config.patience:
                break
        prev_ll = ll
    state.train_ll = log_likelihood(state, dataset)
    return state


def _enumerate(K, n):
    if K ** n > 1000:
        raise InstanceTooLarge(f"K^n = {K ** n} exceeds the enumeration limit of 1000")
    return np.array(list(itertools.product(range(K), repeat=n)), dtype=np.int64).reshape(-1, n)


def random_state(mdp, K, rng, embed_dim=4, hidden_dim=4, cell="rnn", scale=1.0):
    """An EmState with random gate weights and random rewards (for verification)."""
    net = gating.GatingNetwork(
        mdp.num_states, mdp.num_actions, K, embed_dim, hidden_dim, cell,
        seed=int(rng.integers(2**31)),
    )
    for p in net.params.values():
        p[...] = rng.normal(0.0, scale, p.shape)
    rewards = rng.uniform(-1.0, 1.0, (K, mdp.num_states, mdp.num_actions))
    return refresh_policies(EmState(net, rewards), mdp)


def verify_decomposition(mdp, dataset, K, num_pairs=10, seed=0):
    """Max gap between the brute-force EM objective and its two-term decomposition.

    For each random pair (current, candidate) of parameter sets, the objective is
    summed over all ``K^n`` intention sequences of every trajectory and compared
    with gate term + reward term evaluated from per-step responsibilities.
    """
    rng = np.random.default_rng(seed)
    for states, _ in dataset:
        _enumerate(K, len(states))
    worst = 0.0
    for _ in range(num_pairs):
        cur = random_state(mdp, K, rng)
        cand = random_state(mdp, K, rng)
        resp = e_step(cur, dataset)
        terms = _step_log_terms(cand, dataset)
        brute = decomposed = 0.0
        for (lg, lp), w in zip(terms, resp):
            n = len(w)
            etas = _enumerate(K, n)
            steps = np.arange(n)
            log_p_eta = np.log(w[steps, etas]).sum(axis=1)
            inner = (lg[steps, etas] + lp[steps, etas]).sum(axis=1)
            brute += np.sum(np.exp(log_p_eta) * inner)
            decomposed += np.sum(w * lg) + np.sum(w * lp)
        brute /= len(dataset)
        decomposed /= len(dataset)
        worst = max(worst, abs(brute - decomposed))
    return worst


def verify_posterior_factorization(state, dataset):
    """Max gap between enumerated joint marginals and the per-step posterior."""
    K = state.num_intentions
    resp = e_step(state, dataset)
    worst = 0.0
    for (lg, lp), w in zip(_step_log_terms(state, dataset), resp):
        n = len(w)
        etas = _enumerate(K, n)
        steps = np.arange(n)
        joint = (lg[steps, etas] + lp[steps, etas]).sum(axis=1)
        p_eta = np.exp(joint - logsumexp(joint))
        marg = np.zeros((n, K))
        for i in range(n):
            np.add.at(marg[i], etas[:, i], p_eta)
        worst = max(worst, float(np.abs(marg - w).max()))
    return worst


def save_checkpoint(state, path):
    net = state.net
    meta = {
        "num_states": net.num_states, "num_actions": net.num_actions,
        "num_intentions": net.num_intentions, "embed_dim": net.embed_dim,
        "hidden_dim": net.hidden_dim, "cell": net.cell, "seed": net.seed,
        "observation_lag": state.observation_lag, "iteration": state.iteration,
        "train_ll": state.train_ll,
    }
    arrays = {f"gate/{k}": v for k, v in net.params.items()}
    if state.q is not None:
        arrays["q"] = state.q
    np.savez(path, __meta__=np.array(json.dumps(meta)), rewards=state.rewards, **arrays)


def load_checkpoint(path, mdp=None):
    """Rebuild an EmState from a checkpoint; cached policies need ``mdp``.

    Stored Q tables are reused as-is; the MDP is then only used for shape checks.
    """
    with np.load(path) as data:
        meta = json.loads(str(data["__meta__"]))
        rewards = data["rewards"].copy()
        q = data["q"].copy() if "q" in data.files else None
        arrays = {k[len("gate/"):]: data[k] for k in data.files if k.startswith("gate/")}
    lag = meta.pop("observation_lag")
    iteration = meta.pop("iteration")
    train_ll = meta.pop("train_ll")
    net = gating.gate_from_arrays(meta, arrays)
    if rewards.shape[0] != net.num_intentions:
        raise ValidationError("checkpoint rewards and gate disagree on K")
    state = EmState(net, rewards, iteration=iteration, train_ll=train_ll, observation_lag=lag)
    if mdp is not None:
        if rewards.shape[1:] != (mdp.num_states, mdp.num_actions):
            raise DimensionMismatch("checkpoint rewards do not match the MDP")
        if q is not None and q.shape == rewards.shape:
            # cached Q tables keep reloaded policies bit-identical to the saved run
            state.q = q
            state.log_policies = np.stack([log_boltzmann_policy(t) for t in q])
        else:
            refresh_policies(state, mdp)
    return state
