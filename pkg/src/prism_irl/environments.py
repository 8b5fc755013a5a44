"""Frustration gridworld with counter-driven, non-Markovian intention switches.

Cells are ``(x, y)`` pairs with ``x`` the column and ``y`` the row; ``y`` grows
upwards. State ids are ``y * width + x``.
"""

from dataclasses import dataclass, field

import numpy as np

from .dataset import Trajectory, TrajectoryDataset
from .errors import InvalidConfig
from .mdp import TabularMdp, boltzmann_policy, solve_q

ACTIONS = ("up", "down", "left", "right", "stay")
MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0), (0, 0))
STAY = 4
GENERATOR = "frustration-gridworld/1"


@dataclass(frozen=True)
class FrustrationGridworld:
    width: int = 5
    height: int = 5
    success_prob: float = 0.9
    barrier_cells: frozenset = frozenset({(2, 1), (2, 2), (2, 3)})
    goal: tuple = (4, 4)
    origin: tuple = (0, 0)
    extra_goals: tuple = ()
    switch_slope: float = 0.15
    switch_cap: float = 0.9
    discount: float = 0.97
    slip: str = "stay"
    horizon: int = 40
    edge_encounters: bool = True

    def __post_init__(self):
        object.__setattr__(self, "barrier_cells", frozenset(map(tuple, self.barrier_cells)))
        object.__setattr__(self, "extra_goals", tuple(map(tuple, self.extra_goals)))
        if self.width < 1 or self.height < 1:
            raise InvalidConfig("grid must be at least 1x1")
        if not 0.0 <= self.success_prob <= 1.0:
            raise InvalidConfig("success_prob must be a probability")
        if self.slip not in ("stay", "lateral"):
            raise InvalidConfig(f"unknown slip model {self.slip!r}")
        for cell in self.targets:
            if cell in self.barrier_cells or not self.in_grid(cell):
                raise InvalidConfig(f"target cell {cell} is blocked or off-grid")
        if all(self.blocked((0, y)) for y in range(self.height)):
            raise InvalidConfig("left column has no free start cell")

    @property
    def targets(self):
        """Target cell of each intention: goal, origin (abandon), then extras."""
        return (tuple(self.goal), tuple(self.origin)) + self.extra_goals

    @property
    def num_intentions(self):
        return len(self.targets)

    @property
    def num_states(self):
        return self.width * self.height

    @property
    def num_actions(self):
        return len(ACTIONS)

    def state(self, cell):
        return cell[1] * self.width + cell[0]

    def cell(self, state):
        return (state % self.width, state // self.width)

    def in_grid(self, cell):
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def blocked(self, cell):
        return not self.in_grid(cell) or cell in self.barrier_cells

    def intended_cell(self, state, action):
        x, y = self.cell(state)
        dx, dy = MOVES[action]
        return (x + dx, y + dy)

    def is_barrier_encounter(self, state, action):
        """Attempted move into a barrier, or off the grid when ``edge_encounters``
        is set (decided before any slip)."""
        if action == STAY:
            return False
        nxt = self.intended_cell(state, action)
        if nxt in self.barrier_cells:
            return True
        return self.edge_encounters and not self.in_grid(nxt)

    def switch_probability(self, counter):
        return min(self.switch_slope * counter, self.switch_cap)


def _target_or_stay(env, state, action):
    nxt = env.intended_cell(state, action)
    return state if env.blocked(nxt) else env.state(nxt)


def build_mdp(env):
    """Tabular model of the gridworld; blocked moves leave the agent in place."""
    S, A = env.num_states, env.num_actions
    P = np.zeros((S, A, S))
    fail = 1.0 - env.success_prob
    for s in range(S):
        for a in range(A):
            if a == STAY:
                P[s, a, s] = 1.0
                continue
            P[s, a, _target_or_stay(env, s, a)] += env.success_prob
            if env.slip == "stay":
                P[s, a, s] += fail
            else:
                lateral = (2, 3) if a in (0, 1) else (0, 1)
                for b in lateral:
                    P[s, a, _target_or_stay(env, s, b)] += fail / 2
    return TabularMdp(P, env.discount)


def target_rewards(env):
    """Indicator rewards ``r_k(s, .) = 1`` iff ``s`` is intention k's target, as (K, S, A)."""
    R = np.zeros((env.num_intentions, env.num_states, env.num_actions))
    for k, cell in enumerate(env.targets):
        R[k, env.state(cell)] = 1.0
    return R


def expert_policies(env, mdp=None):
    """Ground-truth ``(pi_goal, pi_abandon, r_goal, r_abandon)``."""
    mdp = mdp or build_mdp(env)
    R = target_rewards(env)
    pis = [boltzmann_policy(solve_q(mdp, r)) for r in R[:2]]
    return pis[0], pis[1], R[0], R[1]


def _expert_tables(env, mdp):
    R = target_rewards(env)
    return np.stack([boltzmann_policy(solve_q(mdp, r)) for r in R])


def generate(env, num_trajectories, horizon=None, seed=0):
    """Sample demonstrations from the counter-driven switching expert.

    Every trajectory starts in a random free cell of the left column under the
    goal intention with counter 0. Each barrier encounter increments the
    counter, after which the intention switches with probability
    ``min(slope * c, cap)`` and the counter resets. Each trajectory draws from
    its own stream seeded by ``(seed, index)``.
    """
    horizon = env.horizon if horizon is None else horizon
    if num_trajectories < 1 or horizon < 1:
        raise InvalidConfig("need at least one trajectory of at least one step")
    mdp = build_mdp(env)
    policy_cdf = np.cumsum(_expert_tables(env, mdp), axis=-1)
    trans_cdf = np.cumsum(mdp.transitions, axis=-1)
    bump = np.array(
        [[env.is_barrier_encounter(s, a) for a in range(env.num_actions)]
         for s in range(env.num_states)]
    )
    starts = [env.state((0, y)) for y in range(env.height) if not env.blocked((0, y))]
    K = env.num_intentions

    trajectories = []
    for i in range(num_trajectories):
        rng = np.random.default_rng([seed, i])
        u = rng.random((horizon, 4))
        s = starts[rng.integers(len(starts))]
        z, c = 0, 0
        states = np.empty(horizon, dtype=np.int64)
        actions = np.empty(horizon, dtype=np.int64)
        labels = np.empty(horizon, dtype=np.int64)
        counters = np.empty(horizon, dtype=np.int64)
        for t in range(horizon):
            states[t], labels[t], counters[t] = s, z, c
            a = min(int(np.searchsorted(policy_cdf[z, s], u[t, 0], side="right")),
                    env.num_actions - 1)
            actions[t] = a
            if bump[s, a]:
                c += 1
                if u[t, 1] < env.switch_probability(c):
                    z = _next_intention(z, K, u[t, 2])
                    c = 0
            s = min(int(np.searchsorted(trans_cdf[s, a], u[t, 3], side="right")),
                    env.num_states - 1)
        trajectories.append(Trajectory(states, actions, labels, counters))
    meta = {
        "generator": GENERATOR, "seed": seed, "horizon": horizon,
        "extra_goals": [list(g) for g in env.extra_goals], "slip": env.slip,
        "barrier_cells": sorted(list(c) for c in env.barrier_cells),
        "edge_encounters": env.edge_encounters,
    }
    return TrajectoryDataset(env.num_states, env.num_actions, trajectories, meta)


def env_from_metadata(metadata):
    """The generating gridworld of a dataset written by ``generate``, else None."""
    if metadata.get("generator") != GENERATOR:
        return None
    defaults = FrustrationGridworld()
    return FrustrationGridworld(
        barrier_cells=frozenset(map(tuple, metadata.get("barrier_cells",
                                                        defaults.barrier_cells))),
        extra_goals=tuple(map(tuple, metadata.get("extra_goals", ()))),
        slip=metadata.get("slip", "stay"),
        edge_encounters=metadata.get("edge_encounters", True),
    )


def _next_intention(z, K, u):
    # uniform over the other intentions; a plain flip when K = 2
    return (z + 1 + int(u * (K - 1))) % K


@dataclass
class SwitchStats:
    encounters: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    switches: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def rate(self, counter):
        return self.switches[counter] / self.encounters[counter]


def switch_events(env, dataset, max_counter=20):
    """Tally barrier encounters and switches by post-increment counter value.

    Reconstructed from the stored label and counter traces; the final step of
    each trajectory is skipped because its outcome is not observed.
    """
    enc = np.zeros(max_counter + 1, dtype=np.int64)
    sw = np.zeros(max_counter + 1, dtype=np.int64)
    for t in dataset.trajectories:
        for i in range(len(t) - 1):
            if env.is_barrier_encounter(t.states[i], t.actions[i]):
                c = min(int(t.counters[i]) + 1, max_counter)
                enc[c] += 1
                sw[c] += int(t.labels[i + 1] != t.labels[i])
    return SwitchStats(enc, sw)
