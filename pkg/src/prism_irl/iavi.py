"""Responsibility-weighted inverse action-value iteration (IAVI).

Reward recovery for a single intention: aggregate the responsibility mass that
each demonstration step assigns to the intention, turn it into a smoothed
empirical Boltzmann policy, and solve for the zero-mean reward whose
Boltzmann-optimal policy reproduces it.
"""

import functools
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange, NonConvergence, ValidationError
from .mdp import solve_q


@dataclass(frozen=True, eq=False)
class WeightedVisitCounts:
    counts: np.ndarray  # (S, A)

    @property
    def state_totals(self):
        return self.counts.sum(axis=1)


@dataclass(frozen=True, eq=False)
class EmpiricalPolicy:
    probs: np.ndarray  # (S, A)
    visited: np.ndarray  # (S,) bool


def accumulate_counts(dataset, responsibilities, intention):
    """Sum of ``w[i, intention]`` over every step ``i`` that visits ``(s, a)``."""
    return WeightedVisitCounts(accumulate_all_counts(dataset, responsibilities)[intention])


def accumulate_all_counts(dataset, responsibilities):
    """Weighted (K, S, A) visit counts for every intention in one pass."""
    S, A = dataset.num_states, dataset.num_actions
    if len(responsibilities) != len(dataset):
        raise ValidationError("one responsibility matrix per trajectory is required")
    K = responsibilities[0].shape[1]
    counts = np.zeros((K, S, A))
    for (states, actions), w in zip(dataset, responsibilities):
        if w.shape != (len(states), K):
            raise ValidationError(f"responsibility shape {w.shape} does not match trajectory")
        if states.min() < 0 or states.max() >= S or actions.min() < 0 or actions.max() >= A:
            raise IndexOutOfRange("trajectory index outside the MDP")
        flat = states * A + actions
        for k in range(K):
            counts[k] += np.bincount(flat, weights=w[:, k], minlength=S * A).reshape(S, A)
    return counts


def empirical_policy(counts, smoothing=1e-3):
    """Laplace-smoothed policy ``(c[s,a] + eps) / (c[s] + |A| eps)``."""
    if smoothing <= 0:
        raise ValidationError("smoothing must be positive")
    c = counts.counts if isinstance(counts, WeightedVisitCounts) else np.asarray(counts)
    totals = c.sum(axis=1, keepdims=True)
    probs = (c + smoothing) / (totals + c.shape[1] * smoothing)
    return EmpiricalPolicy(probs, totals[:, 0] > 0)


@functools.lru_cache(maxsize=None)
def _system_pinv(num_actions):
    # X = I - (11^T - I) / (|A| - 1) is singular along the all-ones direction
    eye = np.eye(num_actions)
    X = eye - (np.ones((num_actions, num_actions)) - eye) / (num_actions - 1)
    X_pinv = np.linalg.pinv(X)
    X.flags.writeable = False
    X_pinv.flags.writeable = False
    return X, X_pinv


def iavi_solve(
    mdp,
    pihat,
    tol=1e-8,
    max_iters=500,
    damping=1.0,
    init=None,
    sweeps=None,
    inner_sweeps=1,
    q_tol=1e-11,
):
    """Recover a reward whose Boltzmann policy matches ``pihat`` at visited states.

    Each sweep takes ``V = max_a Q`` for the current reward, then solves the
    per-state least-squares system relating reward differences to log-policy
    differences. The minimum-norm solution has zero mean over actions, which fixes
    the additive gauge. Unvisited states keep a zero reward.

    ``inner_sweeps`` is the number of warm-started Bellman backups used to refresh
    ``Q`` between reward updates. The default of one makes the joint update a
    ``gamma``-contraction; ``None`` re-solves ``Q`` to convergence every sweep,
    which has the same fixed point but can cycle on cyclic MDPs.

    ``sweeps`` caps the number of sweeps without raising; otherwise the loop runs
    until the max-norm reward change is at most ``tol``.
    """
    S, A = mdp.num_states, mdp.num_actions
    probs = mdp.check_table(pihat.probs, "policy")
    if A == 1:
        warnings.warn("IAVI with a single action has no preference to fit; returning r = 0")
        return np.zeros((S, A))
    if tol <= 0 or np.any(probs <= 0):
        raise ValidationError("iavi_solve needs tol > 0 and a strictly positive policy")

    X, X_pinv = _system_pinv(A)
    visited = np.asarray(pihat.visited, dtype=bool)
    log_pi = np.log(probs[visited])
    gamma = mdp.discount

    if init is None:
        r = np.zeros((S, A))
        q = np.zeros((S, A))
    else:
        r = mdp.check_table(init, "init").copy()
        q = solve_q(mdp, r, tol=q_tol)
    limit = max_iters if sweeps is None else sweeps
    delta = np.inf
    for it in range(limit):
        if it > 0 or init is None:
            if inner_sweeps is None:
                q = solve_q(mdp, r, tol=q_tol, init=q)
            else:
                for _ in range(inner_sweeps):
                    q = r + gamma * mdp.expected_next(q.max(axis=1))
        next_v = mdp.expected_next(q.max(axis=1))[visited]
        rhs = (log_pi - gamma * next_v) @ X.T
        r_new = np.zeros((S, A))
        r_new[visited] = rhs @ X_pinv.T
        if damping != 1.0:
            r_new = (1.0 - damping) * r + damping * r_new
        delta = np.abs(r_new - r).max()
        r = r_new
        if delta <= tol:
            return r
    if sweeps is not None:
        return r
    raise NonConvergence(delta, max_iters, what="IAVI")
