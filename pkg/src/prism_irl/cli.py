"""Command-line entry point: ``prism <command> [options]``.

Exit codes: 0 on success, 1 on invalid input or usage, 2 when a solver fails
to converge.
"""

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import em, evaluation, gating, tokenizer
from .config import load_config, profile_config
from .dataset import TrajectoryDataset, load_dataset, save_dataset
from .environments import (
    FrustrationGridworld, build_mdp, env_from_metadata, generate, target_rewards,
)
from .errors import NonConvergence, PrismError, ValidationError
from .mdp import TabularMdp, load_mdp, save_mdp

log = logging.getLogger("prism_irl")

DECOMPOSITION_TOL = 1e-10
FACTORIZATION_TOL = 1e-12
GRADIENT_TOL = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(1, f"\n{self.prog}: error: {message}\n")


def _cell(text):
    try:
        x, y = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y got {text!r}") from None
    return (x, y)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    model = _Parser(add_help=False)
    model.add_argument("--profile", default="gridworld", help="default profile without --config")
    model.add_argument("-K", "--num-intentions", type=int)
    model.add_argument("--max-iters", type=int, dest="max_em_iters")
    model.add_argument("--architecture", choices=gating.CELLS)
    model.add_argument("--lambda-l1", type=float)
    model.add_argument("--lambda-kl", type=float)
    model.add_argument("--dataset", help="trajectory dataset (JSON lines)")
    model.add_argument("--mdp", help="transition model (JSON); defaults to the generating "
                                     "gridworld or to counts estimated from the dataset")

    parser = _Parser(prog="prism", parents=[common],
                     description="Multi-intention IRL on tabular MDPs.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="<command>")

    p = sub.add_parser("generate", parents=[common], help="sample frustration-gridworld data")
    p.add_argument("--num", type=int, default=1024)
    p.add_argument("--horizon", type=int, default=40)
    p.add_argument("--extra-goal", type=_cell, action="append", default=[],
                   help="additional goal cell X,Y (repeatable)")
    p.add_argument("--slip", choices=("stay", "lateral"), default="stay")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("tokenize", parents=[common], help="k-means tokens from embedding files")
    p.add_argument("--state-embeddings", required=True)
    p.add_argument("--action-embeddings", required=True)
    p.add_argument("--lengths", help="text file of trajectory lengths (default: one trajectory)")
    p.add_argument("--state-tokens", type=int, default=2048)
    p.add_argument("--action-tokens", type=int, default=tokenizer.ACTION_TOKENS)
    p.add_argument("--kmeans-iters", type=int, default=100)
    p.add_argument("--kmeans-tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("estimate-p", parents=[common], help="smoothed empirical transitions")
    p.add_argument("--dataset", required=True)
    p.add_argument("--prior-strength", type=float)
    p.add_argument("--discount", type=float)
    p.set_defaults(func=cmd_estimate_p)

    p = sub.add_parser("train", parents=[common, model], help="fit the model with EM")
    p.add_argument("--dump-responsibilities", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common, model], help="k-fold cross-validation")
    p.add_argument("--folds", type=int)
    p.add_argument("--workers", type=int, default=1, help="folds fitted in parallel")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("segment", parents=[common], help="per-step intention posteriors")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--mdp", help="transition model (default as for train)")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("export-maps", parents=[common], help="reward/value/policy tables")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mdp", help="transition model (default: the standard gridworld)")
    p.set_defaults(func=cmd_export_maps)

    p = sub.add_parser("verify", parents=[common], help="exactness and gradient self-checks")
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--grad-nets", type=int, default=10)
    p.set_defaults(func=cmd_verify)
    return parser


def _out_dir(args):
    out = getattr(args, "out", None) or "prism_out"
    os.makedirs(out, exist_ok=True)
    return out


def _seed(args, default=0):
    return getattr(args, "seed", default)


def _run_config(args):
    path = getattr(args, "config", None)
    config = load_config(path) if path else profile_config(args.profile)
    changes = {
        name: getattr(args, name)
        for name in ("num_intentions", "max_em_iters", "architecture", "lambda_l1",
                     "lambda_kl", "folds")
        if getattr(args, name, None) is not None
    }
    if hasattr(args, "seed"):
        changes["seed"] = args.seed
    config = config.replace(**changes)
    config.validate()
    return config


def _dataset(args, config):
    path = args.dataset or config.dataset_path
    if not path:
        raise ValidationError("no dataset given (use --dataset or dataset_path in the config)")
    return load_dataset(path)


def _mdp_for(dataset, config, path=None):
    path = path or config.mdp_path
    if path:
        mdp = load_mdp(path)
        if (mdp.num_states, mdp.num_actions) != (dataset.num_states, dataset.num_actions):
            raise ValidationError("MDP and dataset disagree on state/action counts")
        return mdp
    env = env_from_metadata(dataset.metadata)
    if env is not None:
        return build_mdp(env)
    log.warning("no transition model supplied; estimating it from the dataset")
    return evaluation.estimate_transitions(
        dataset, dataset.num_states, dataset.num_actions, config.prior_strength, config.discount
    )


def _dump(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def cmd_generate(args):
    env = FrustrationGridworld(extra_goals=tuple(args.extra_goal), slip=args.slip)
    data = generate(env, args.num, args.horizon, seed=_seed(args))
    out = _out_dir(args)
    save_dataset(data, os.path.join(out, "dataset.jsonl"))
    save_mdp(build_mdp(env), os.path.join(out, "mdp.json"))
    print(f"wrote {len(data)} trajectories ({data.total_steps} steps) to {out}/dataset.jsonl")
    return 0


def _read_lengths(path, rows):
    if path is None:
        return [rows]
    with open(path) as fh:
        try:
            return [int(tok) for tok in fh.read().split()]
        except ValueError as exc:
            raise ValidationError(f"{path}: lengths must be integers") from exc


def cmd_tokenize(args):
    seed = _seed(args)
    S = tokenizer.read_embeddings(args.state_embeddings)
    A = tokenizer.read_embeddings(args.action_embeddings)
    if len(S) != len(A):
        raise ValidationError("state and action embedding files have different row counts")
    lengths = _read_lengths(args.lengths, len(S))
    state_seqs = tokenizer.split_rows(S, lengths)
    action_seqs = tokenizer.split_rows(A, lengths)
    fits = {}
    for name, seqs, k in (("state", state_seqs, args.state_tokens),
                          ("action", action_seqs, args.action_tokens)):
        fits[name] = tokenizer.fit(seqs, k, seed=seed, max_iters=args.kmeans_iters,
                                   tol=args.kmeans_tol)
        log.info("%s codebook: k=%d inertia=%.6g after %d iterations", name, k,
                 fits[name].inertia, fits[name].iterations)
    s_tok = tokenizer.assign(fits["state"], state_seqs)
    a_tok = tokenizer.assign(fits["action"], action_seqs)
    data = TrajectoryDataset(
        args.state_tokens, args.action_tokens, list(zip(s_tok, a_tok)),
        {"generator": "kmeans-tokens", "seed": seed},
    )
    stats = tokenizer.discretization_stats(s_tok, args.state_tokens)
    out = _out_dir(args)
    save_dataset(data, os.path.join(out, "tokens.jsonl"))
    tokenizer.save_stats(stats, os.path.join(out, "discretization_stats.json"))
    np.savez(os.path.join(out, "codebooks.npz"), state=fits["state"].centroids,
             action=fits["action"].centroids)
    summary = stats.summary()
    print(f"{'statistic':<16}{'mean':>10}{'std':>10}")
    for key in ("coverage_pct", "avg_revisits", "singleton_pct"):
        print(f"{key:<16}{summary[key]['mean']:>10.3f}{summary[key]['std']:>10.3f}")
    return 0


def cmd_estimate_p(args):
    config = load_config(args.config) if getattr(args, "config", None) else profile_config()
    data = load_dataset(args.dataset)
    alpha = config.prior_strength if args.prior_strength is None else args.prior_strength
    gamma = config.discount if args.discount is None else args.discount
    mdp = evaluation.estimate_transitions(data, data.num_states, data.num_actions, alpha, gamma)
    out = _out_dir(args)
    save_mdp(mdp, os.path.join(out, "mdp.json"))
    print(f"wrote {mdp.num_states}x{mdp.num_actions} transition model to {out}/mdp.json")
    return 0


def cmd_train(args):
    config = _run_config(args)
    data = _dataset(args, config)
    mdp = _mdp_for(data, config, args.mdp)
    start = time.time()
    state = em.run_em(mdp, data, config)
    out = _out_dir(args)
    evaluation.write_run(out, config, state, data, args.dump_responsibilities)
    print(f"K={config.num_intentions} iterations={state.iteration} "
          f"train LL/step={state.train_ll:.6f} ({time.time() - start:.1f}s); run saved in {out}")
    return 0


def cmd_evaluate(args):
    config = _run_config(args)
    data = _dataset(args, config)
    mdp = _mdp_for(data, config, args.mdp)
    env = env_from_metadata(data.metadata)
    truth = target_rewards(env) if env is not None and data.has_labels else None
    report = evaluation.cross_validate(mdp, data, config, true_rewards=truth,
                                       workers=args.workers)
    doc = report.summary()
    doc["config"] = config.to_dict()
    out = _out_dir(args)
    _dump(os.path.join(out, "metrics.json"), doc)
    for f, (tr, te) in enumerate(zip(report.train_ll, report.test_ll)):
        line = f"fold {f}: train {tr:.5f}  test {te:.5f}  iters {report.iterations[f]}"
        if report.evd:
            line += "  EVD " + " ".join(f"{k}:{v[0]:.3f}" for k, v in report.evd[f].items())
        print(line)
    print(f"held-out LL/step {report.mean_test_ll:.5f} +- {report.std_test_ll:.5f}")
    return 0


def cmd_segment(args):
    data = load_dataset(args.dataset)
    state = em.load_checkpoint(args.checkpoint)
    if state.rewards.shape[1:] != (data.num_states, data.num_actions):
        raise ValidationError("checkpoint does not match the dataset dimensions")
    mdp = _mdp_for(data, profile_config(), args.mdp)
    em.refresh_policies(state, mdp)
    segments = evaluation.segment(state, data)
    out = _out_dir(args)
    with open(os.path.join(out, "segments.jsonl"), "w") as fh:
        for seg in segments:
            fh.write(json.dumps({
                "labels": seg["labels"].tolist(),
                "switches": seg["switches"],
                "posteriors": seg["posteriors"].tolist(),
            }) + "\n")
    switches = [seg["switches"] for seg in segments]
    print(f"{len(segments)} trajectories, mean switches {np.mean(switches):.3f}; "
          f"written to {out}/segments.jsonl")
    return 0


def cmd_export_maps(args):
    mdp = load_mdp(args.mdp) if args.mdp else build_mdp(FrustrationGridworld())
    state = em.load_checkpoint(args.checkpoint, mdp)
    out = os.path.join(_out_dir(args), "maps")
    paths = evaluation.export_maps(state, mdp, out)
    for path in paths:
        print(path)
    return 0


def cmd_verify(args):
    rng = np.random.default_rng(_seed(args))
    ok = True

    worst = 0.0
    for _ in range(args.instances):
        S, A, K = (int(v) for v in rng.integers(2, 4, size=3))
        mdp = _random_mdp(rng, S, A)
        n = int(rng.integers(1, 5))
        data = TrajectoryDataset(S, A, [(rng.integers(0, S, n), rng.integers(0, A, n))])
        worst = max(worst, em.verify_decomposition(mdp, data, K, num_pairs=1,
                                                   seed=int(rng.integers(2**31))))
    ok &= worst <= DECOMPOSITION_TOL
    print(f"objective decomposition     max gap {worst:.3e}  (tol {DECOMPOSITION_TOL:g})")

    worst = 0.0
    for _ in range(args.instances):
        S, A, K = (int(v) for v in rng.integers(2, 4, size=3))
        mdp = _random_mdp(rng, S, A)
        n = int(rng.integers(1, 6))
        data = TrajectoryDataset(S, A, [(rng.integers(0, S, n), rng.integers(0, A, n))])
        state = em.random_state(mdp, K, rng)
        worst = max(worst, em.verify_posterior_factorization(state, data))
    ok &= worst <= FACTORIZATION_TOL
    print(f"posterior factorization     max gap {worst:.3e}  (tol {FACTORIZATION_TOL:g})")

    worst = 0.0
    for i in range(args.grad_nets):
        net, batch = gating.random_check_problem(rng, gating.CELLS[i % 2])
        worst = max(worst, gating.gradient_check(net, batch, lambda_l1=0.7, lambda_kl=0.3))
    ok &= worst <= GRADIENT_TOL
    print(f"gate gradient (BPTT vs FD)  max rel {worst:.3e}  (tol {GRADIENT_TOL:g})")
    return 0 if ok else 1


def _random_mdp(rng, S, A, discount=0.9):
    return TabularMdp(rng.dirichlet(np.ones(S), size=(S, A)), discount)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(getattr(args, "verbose", 0), logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PrismError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
