import logging
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from prism_irl import em
from prism_irl.config import profile_config
from prism_irl.environments import FrustrationGridworld, build_mdp, generate, target_rewards
from prism_irl.evaluation import cross_validate
from prism_irl.mdp import TabularMdp

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

GRIDWORLD_TRAJECTORIES = 1024
GRIDWORLD_SEED = 0

# wall-clock seconds spent building the expensive session fixtures
FIXTURE_SECONDS = {}
# (criterion, passed, detail) lines reported by the acceptance module
ACCEPTANCE_LINES = []


def random_mdp(rng, S, A, discount=0.9, sparsity=0.0):
    P = rng.dirichlet(np.ones(S), size=(S, A))
    if sparsity:
        P = np.where(rng.random(P.shape) < sparsity, 0.0, P)
        P[..., 0] += P.sum(axis=2) == 0
        P /= P.sum(axis=2, keepdims=True)
    return TabularMdp(P, discount)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def gridworld():
    env = FrustrationGridworld()
    return env, build_mdp(env)


@pytest.fixture(scope="session")
def gridworld_data(gridworld):
    env, _ = gridworld
    return generate(env, GRIDWORLD_TRAJECTORIES, seed=GRIDWORLD_SEED)


@pytest.fixture(scope="session")
def gridworld_fit(gridworld, gridworld_data):
    """K = 2 fit on the full benchmark dataset (shared by several tests)."""
    _, mdp = gridworld
    logging.getLogger("prism_irl.em").setLevel(logging.ERROR)
    start = time.perf_counter()
    state = em.run_em(mdp, gridworld_data, profile_config("gridworld"))
    FIXTURE_SECONDS["gridworld_fit"] = time.perf_counter() - start
    return state


@pytest.fixture(scope="session")
def gridworld_cv(gridworld, gridworld_data):
    """5-fold reports for K = 1 and K = 2 on the benchmark dataset."""
    env, mdp = gridworld
    logging.getLogger("prism_irl.em").setLevel(logging.ERROR)
    truth = target_rewards(env)
    start = time.perf_counter()
    reports = {
        K: cross_validate(mdp, gridworld_data, profile_config("gridworld", num_intentions=K),
                          true_rewards=truth, start_state=0, keep_states=True)
        for K in (1, 2)
    }
    FIXTURE_SECONDS["gridworld_cv"] = time.perf_counter() - start
    return reports


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE_LINES, key=lambda line: int(line[0].split()[0])):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
