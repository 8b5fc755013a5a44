"""K = 1 vs K = 2 cross-validation on the frustration gridworld.

Prints per-fold held-out likelihood, EVD per true intention, and the goal
intention's greedy path from the bottom-left corner.

    python3 scripts/gridworld_benchmark.py --num 1024 --workers 2 --out bench.json
"""

import argparse
import json
import logging
import time

import numpy as np

from prism_irl import em, evaluation
from prism_irl.config import profile_config
from prism_irl.environments import FrustrationGridworld, build_mdp, generate, target_rewards


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--num", type=int, default=1024)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", help="optional JSON summary path")
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    env = FrustrationGridworld()
    mdp = build_mdp(env)
    data = generate(env, args.num, seed=args.data_seed)
    truth = target_rewards(env)
    summary = {}
    for K in (1, 2):
        t0 = time.perf_counter()
        report = evaluation.cross_validate(mdp, data, profile_config("gridworld", num_intentions=K),
                                           true_rewards=truth, workers=args.workers)
        summary[K] = report.summary()
        print(f"K={K}  ({time.perf_counter() - t0:.0f}s)")
        for f, ll in enumerate(report.test_ll):
            goal, abandon = report.evd[f][0][0], report.evd[f][1][0]
            print(f"  fold {f}: test LL {ll:.5f}  EVD goal {goal:.2f}  abandon {abandon:.2f}"
                  f"  seg acc {report.accuracy[f]:.3f}")
        print(f"  mean test LL {report.mean_test_ll:.5f} +- {report.std_test_ll:.5f}")

    state = em.run_em(mdp, data, profile_config("gridworld"))
    resp = em.e_step(state, data)
    pred = np.concatenate([w.argmax(axis=1) for w in resp])
    labels = np.concatenate([t.labels for t in data.trajectories])
    goal_k = evaluation.recovered_for_true(pred, labels, 2, 2)[0]
    path = evaluation.greedy_rollout(mdp, state.q[goal_k], env.state((0, 0)), 12)
    print("full-data fit, goal intention greedy path:", " ".join(str(env.cell(s)) for s in path))
    print(f"segmentation accuracy {evaluation.segmentation_accuracy(state, data):.3f}")

    if args.out:
        with open(args.out, "w") as fh:
            json.dump({str(k): v for k, v in summary.items()}, fh, indent=2)


if __name__ == "__main__":
    main()
