"""Train log-likelihood against the number of intentions.

Uses the three-goal gridworld variant (extra goal in the bottom-right corner).
"""

import argparse
import logging

import numpy as np

from prism_irl import em
from prism_irl.config import profile_config
from prism_irl.environments import FrustrationGridworld, build_mdp, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--num", type=int, default=512)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--max-k", type=int, default=4)
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    env = FrustrationGridworld(extra_goals=((4, 0),))
    mdp = build_mdp(env)
    ks = range(1, args.max_k + 1)
    table = np.zeros((len(args.seeds), len(ks)))
    for i, seed in enumerate(args.seeds):
        data = generate(env, args.num, seed=seed)
        for j, K in enumerate(ks):
            state = em.run_em(mdp, data, profile_config("gridworld", num_intentions=K, seed=seed))
            table[i, j] = state.train_ll
            print(f"seed {seed}  K={K}  train LL {state.train_ll:.5f}  ({state.iteration} iters)",
                  flush=True)
    print("K     " + "".join(f"{K:>10d}" for K in ks))
    print("mean  " + "".join(f"{v:>10.5f}" for v in table.mean(axis=0)))


if __name__ == "__main__":
    main()
