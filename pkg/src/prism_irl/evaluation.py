"""Cross-validation, segmentation, transition estimation and map export."""

import csv
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import em
from .config import save_config
from .errors import BoundsError, DimensionMismatch, ValidationError
from .mdp import (
    TabularMdp, boltzmann_policy, expected_value_difference, solve_q,
)


def estimate_transitions(dataset, num_states, num_actions, prior_strength=0.05, discount=0.97):
    """Smoothed empirical ``P(s2 | s, a)`` from consecutive steps; unseen pairs are uniform."""
    counts = np.zeros((num_states, num_actions, num_states))
    for states, actions in dataset:
        if states.max() >= num_states or actions.max() >= num_actions or states.min() < 0:
            raise BoundsError("token outside the declared state/action range")
        np.add.at(counts, (states[:-1], actions[:-1], states[1:]), 1.0)
    totals = counts.sum(axis=2, keepdims=True)
    empty = totals[:, :, 0] == 0
    P = np.full(counts.shape, 1.0 / num_states)
    P[~empty] = (counts[~empty] + prior_strength) / (totals[~empty] + prior_strength * num_states)
    return TabularMdp(P, discount)


def fold_indices(num_items, folds, seed):
    """Seeded shuffle split into ``folds`` disjoint test sets."""
    if folds < 2 or num_items < folds:
        raise ValidationError(f"cannot split {num_items} trajectories into {folds} folds")
    order = np.random.default_rng(seed).permutation(num_items)
    return [np.sort(chunk) for chunk in np.array_split(order, folds)]


def match_intentions(pred, labels, K, J=None):
    """Best label map (recovered -> true) by exhaustive search; returns (map, accuracy)."""
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    J = int(labels.max()) + 1 if J is None else J
    if K <= J:
        candidates = itertools.permutations(range(J), K)
    else:
        candidates = itertools.product(range(J), repeat=K)
    best, best_acc = None, -1.0
    for cand in candidates:
        acc = float(np.mean(np.asarray(cand)[pred] == labels))
        if acc > best_acc:
            best, best_acc = tuple(cand), acc
    return best, best_acc


def recovered_for_true(pred, labels, K, J):
    """Index of the recovered intention standing in for each true intention."""
    mapping, _ = match_intentions(pred, labels, K, J)
    overlap = np.zeros((K, J))
    np.add.at(overlap, (pred, labels), 1.0)
    out = []
    for j in range(J):
        owners = [k for k in range(K) if mapping[k] == j]
        pool = owners if owners else range(K)
        out.append(max(pool, key=lambda k: overlap[k, j]))
    return out


def segmentation_accuracy(state, dataset):
    resp = em.e_step(state, dataset)
    pred = np.concatenate([w.argmax(axis=1) for w in resp])
    labels = np.concatenate([t.labels for t in dataset.trajectories])
    return match_intentions(pred, labels, state.num_intentions)[1]


@dataclass
class FoldReport:
    train_ll: list = field(default_factory=list)
    test_ll: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    evd: list = field(default_factory=list)  # per fold: {true intention: (mae, s0)}
    accuracy: list = field(default_factory=list)
    argmax: list = field(default_factory=list)  # per fold: list of per-trajectory arrays
    test_folds: list = field(default_factory=list)
    states: list = field(default_factory=list, repr=False)

    @property
    def mean_test_ll(self):
        return float(np.mean(self.test_ll))

    @property
    def std_test_ll(self):
        return float(np.std(self.test_ll))

    def summary(self):
        doc = {
            "train_ll": self.train_ll,
            "test_ll": self.test_ll,
            "test_ll_mean": self.mean_test_ll,
            "test_ll_std": self.std_test_ll,
            "iterations": self.iterations,
            "test_folds": [f.tolist() for f in self.test_folds],
        }
        if self.evd:
            doc["evd"] = [{str(k): list(v) for k, v in fold.items()} for fold in self.evd]
        if self.accuracy:
            doc["segmentation_accuracy"] = self.accuracy
        return doc


def _fit_fold(mdp, train, config):
    return em.run_em(mdp, train, config)


def cross_validate(mdp, dataset, config, true_rewards=None, start_state=0, keep_states=False,
                   workers=1):
    """Trajectory-level k-fold CV of ``run_em``: held-out per-step LL and, with
    ground truth, per-true-intention EVD and segmentation accuracy.

    Every fold starts from the same seeded initialisation, so results do not
    depend on ``workers`` (folds fitted in parallel processes when > 1).
    """
    report = FoldReport()
    folds = fold_indices(len(dataset), config.folds, config.seed)
    splits = []
    for test_idx in folds:
        train_idx = np.setdiff1d(np.arange(len(dataset)), test_idx)
        splits.append((dataset.subset(train_idx), dataset.subset(test_idx)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            states = list(pool.map(_fit_fold, *zip(*[(mdp, tr, config) for tr, _ in splits])))
    else:
        states = [_fit_fold(mdp, tr, config) for tr, _ in splits]

    for test_idx, (train, test), state in zip(folds, splits, states):
        report.test_folds.append(test_idx)
        report.train_ll.append(state.train_ll)
        report.test_ll.append(em.log_likelihood(state, test))
        report.iterations.append(state.iteration)
        report.argmax.append([w.argmax(axis=1) for w in em.e_step(state, test)])
        if keep_states:
            report.states.append(state)
        if true_rewards is not None and train.has_labels:
            J = len(true_rewards)
            pred = np.concatenate([w.argmax(axis=1) for w in em.e_step(state, train)])
            labels = np.concatenate([t.labels for t in train.trajectories])
            owner = recovered_for_true(pred, labels, state.num_intentions, J)
            report.evd.append({
                j: expected_value_difference(mdp, true_rewards[j], state.rewards[owner[j]],
                                             start_state)
                for j in range(J)
            })
            mapping, _ = match_intentions(pred, labels, state.num_intentions, J)
            test_pred = np.asarray(mapping)[np.concatenate(report.argmax[-1])]
            test_labels = np.concatenate([t.labels for t in test.trajectories])
            report.accuracy.append(float(np.mean(test_pred == test_labels)))
    return report


def segment(state, dataset):
    """Per-trajectory posteriors, argmax labels (ties to the lowest index) and switch counts."""
    if state.net.num_states != dataset.num_states:
        raise DimensionMismatch("checkpoint does not match the dataset's state count")
    if state.log_policies.shape[2] != dataset.num_actions:
        raise DimensionMismatch("checkpoint does not match the dataset's action count")
    out = []
    for w in em.e_step(state, dataset):
        labels = w.argmax(axis=1)
        out.append({
            "posteriors": w,
            "labels": labels,
            "switches": int(np.count_nonzero(np.diff(labels))),
        })
    return out


def greedy_actions(q):
    return q.argmax(axis=1)


def action_confidence(q):
    """Gap between the two largest Boltzmann probabilities in each state."""
    pi = np.sort(boltzmann_policy(q), axis=1)
    if pi.shape[1] == 1:
        return np.ones(pi.shape[0])
    return pi[:, -1] - pi[:, -2]


def greedy_rollout(mdp, q, start, max_steps):
    """States visited by the greedy policy under each action's most likely outcome."""
    greedy = greedy_actions(q)
    path = [start]
    s = start
    for _ in range(max_steps):
        s = int(mdp.transitions[s, greedy[s]].argmax())
        path.append(s)
    return path


MAP_COLUMNS_DOC = (
    "# one row per state: state id, reward for each action, state value "
    "V(s) = max_a Q(s,a), greedy action, confidence (top-1 minus top-2 Boltzmann probability)"
)


def export_maps(state, mdp, out_dir):
    """Write ``intention_<k>.csv`` per intention; returns the file paths."""
    os.makedirs(out_dir, exist_ok=True)
    A = mdp.num_actions
    paths = []
    for k, r in enumerate(state.rewards):
        q = solve_q(mdp, r)
        values = q.max(axis=1)
        greedy = greedy_actions(q)
        conf = action_confidence(q)
        path = os.path.join(out_dir, f"intention_{k}.csv")
        with open(path, "w", newline="") as fh:
            fh.write(MAP_COLUMNS_DOC + "\n")
            writer = csv.writer(fh)
            writer.writerow(["state", *[f"reward_{a}" for a in range(A)],
                             "value", "greedy_action", "confidence"])
            for s in range(mdp.num_states):
                writer.writerow([s, *[repr(float(x)) for x in r[s]], repr(float(values[s])),
                                 int(greedy[s]), repr(float(conf[s]))])
        paths.append(path)
    return paths


def load_map(path):
    """Read an exported intention map back into arrays."""
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(line for line in fh if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    A = sum(1 for h in header if h.startswith("reward_"))
    data = np.array([[float(x) for x in row] for row in body])
    return {
        "rewards": data[:, 1:1 + A],
        "value": data[:, 1 + A],
        "greedy_action": data[:, 2 + A].astype(np.int64),
        "confidence": data[:, 3 + A],
    }


def write_run(out_dir, config, state, dataset=None, dump_responsibilities=False):
    """Run directory: config snapshot, diagnostics log, checkpoint, optional posteriors."""
    os.makedirs(out_dir, exist_ok=True)
    save_config(config, os.path.join(out_dir, "config.json"))
    with open(os.path.join(out_dir, "diagnostics.jsonl"), "w") as fh:
        for record in state.history:
            fh.write(json.dumps(record) + "\n")
    em.save_checkpoint(state, os.path.join(out_dir, "checkpoint.npz"))
    if dump_responsibilities and dataset is not None:
        resp = em.e_step(state, dataset)
        np.savez(os.path.join(out_dir, "responsibilities.npz"),
                 **{f"traj_{i}": w for i, w in enumerate(resp)})
