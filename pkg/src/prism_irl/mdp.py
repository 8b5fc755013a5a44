"""Finite MDPs, Bellman-optimal Q tables, Boltzmann policies and EVD."""

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatch, NonConvergence, ParseError, ValidationError

ROW_TOL = 1e-9
FILE_ROW_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP ``<S, A, P, gamma>``.

    ``transitions[s, a, s2]`` is ``P(s2 | s, a)``. The array is stored read-only.
    """

    transitions: np.ndarray
    discount: float

    def __post_init__(self):
        P = np.array(self.transitions, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise DimensionMismatch(f"transition tensor must be (S, A, S), got {P.shape}")
        if P.shape[0] < 1 or P.shape[1] < 1:
            raise ValidationError("MDP needs at least one state and one action")
        if not np.all((P >= 0.0) & (P <= 1.0)):
            raise ValidationError("transition probabilities must lie in [0, 1]")
        err = np.abs(P.sum(axis=2) - 1.0).max()
        if err > ROW_TOL:
            raise ValidationError(f"transition rows must sum to 1 (max error {err:.3e})")
        if not 0.0 <= self.discount < 1.0:
            raise ValidationError(f"discount must be in [0, 1), got {self.discount}")
        P.flags.writeable = False
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self):
        return self.transitions.shape[0]

    @property
    def num_actions(self):
        return self.transitions.shape[1]

    def expected_next(self, values):
        """``(T_a V)(s) = sum_s2 P(s2 | s, a) V(s2)`` as an (S, A) array."""
        return self.transitions @ values

    def check_table(self, table, name="reward"):
        table = np.asarray(table, dtype=np.float64)
        if table.shape != (self.num_states, self.num_actions):
            raise DimensionMismatch(
                f"{name} table has shape {table.shape}, "
                f"expected {(self.num_states, self.num_actions)}"
            )
        return table


def solve_q(mdp, reward, tol=1e-10, max_iters=100_000, init=None):
    """Bellman-optimal Q for ``reward`` by synchronous value iteration.

    Stops once the max-norm change between sweeps (the Bellman residual of the
    previous iterate) is at most ``tol``. ``init`` warm-starts the sweeps.
    """
    if tol <= 0 or max_iters < 1:
        raise ValidationError("solve_q needs tol > 0 and max_iters >= 1")
    r = mdp.check_table(reward)
    q = np.zeros_like(r) if init is None else mdp.check_table(init, "init").copy()
    gamma = mdp.discount
    residual = np.inf
    for _ in range(max_iters):
        q_new = r + gamma * mdp.expected_next(q.max(axis=1))
        residual = np.abs(q_new - q).max()
        q = q_new
        if residual <= tol:
            return q
    raise NonConvergence(residual, max_iters, what="value iteration")


def log_boltzmann_policy(q):
    q = np.asarray(q, dtype=np.float64)
    return q - logsumexp(q, axis=1, keepdims=True)


def boltzmann_policy(q):
    """Row-wise softmax of a Q table (temperature 1)."""
    q = np.asarray(q, dtype=np.float64)
    z = np.exp(q - q.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def policy_value(mdp, reward, policy, tol=1e-10, max_iters=100_000):
    """State values of ``policy`` under ``reward`` (iterative policy evaluation)."""
    r = mdp.check_table(reward)
    pi = mdp.check_table(policy, "policy")
    if np.abs(pi.sum(axis=1) - 1.0).max() > ROW_TOL:
        raise ValidationError("policy rows must sum to 1")
    r_pi = (pi * r).sum(axis=1)
    P_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
    v = np.zeros(mdp.num_states)
    residual = np.inf
    for _ in range(max_iters):
        v_new = r_pi + mdp.discount * (P_pi @ v)
        residual = np.abs(v_new - v).max()
        v = v_new
        if residual <= tol:
            return v
    raise NonConvergence(residual, max_iters, what="policy evaluation")


greedy_value = policy_value


def expected_value_difference(mdp, r_true, r_recovered, start_state, tol=1e-10):
    """Value lost under ``r_true`` by acting Boltzmann-optimally for ``r_recovered``.

    Returns ``(evd_mae, evd_s0)``: the mean absolute value gap over all states and
    the signed gap ``V_hat(s0) - V_star(s0)`` at the start state (<= 0 up to noise).
    """
    r_true = mdp.check_table(r_true)
    r_recovered = mdp.check_table(r_recovered)
    if not 0 <= start_state < mdp.num_states:
        raise DimensionMismatch(f"start state {start_state} out of range")
    pi_star = boltzmann_policy(solve_q(mdp, r_true, tol=tol))
    pi_hat = boltzmann_policy(solve_q(mdp, r_recovered, tol=tol))
    v_star = policy_value(mdp, r_true, pi_star, tol=tol)
    v_hat = policy_value(mdp, r_true, pi_hat, tol=tol)
    return float(np.abs(v_star - v_hat).mean()), float(v_hat[start_state] - v_star[start_state])


def save_mdp(mdp, path):
    # json writes floats via repr, so values round-trip exactly
    doc = {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "discount": mdp.discount,
        "transitions": mdp.transitions.ravel().tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_mdp(path):
    """Read an MDP file, renormalising rows that are off by at most 1e-6."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from exc
    try:
        S, A = int(doc["num_states"]), int(doc["num_actions"])
        gamma = float(doc["discount"])
        flat = np.asarray(doc["transitions"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed MDP file: {exc}") from exc
    if flat.size != S * A * S:
        raise DimensionMismatch(f"expected {S * A * S} transition entries, got {flat.size}")
    P = flat.reshape(S, A, S)
    if np.any(P < 0) or np.any(P > 1):
        raise ValidationError("transition probabilities must lie in [0, 1]")
    sums = P.sum(axis=2)
    bad = np.argwhere(np.abs(sums - 1.0) > FILE_ROW_TOL)
    if bad.size:
        s, a = bad[0]
        raise ValidationError(f"row (s={s}, a={a}) sums to {sums[s, a]!r}")
    return TabularMdp(P / sums[:, :, None], gamma)
