"""k-means tokenisation of continuous embeddings and discretisation statistics."""

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import BoundsError, DimensionMismatch, NumericalFault, TooFewPoints, ValidationError

STATE_TOKEN_CHOICES = (1024, 2048, 3072, 4096)
ACTION_TOKENS = 32

_HEADER = struct.Struct("<II")
_CHUNK = 4096


@dataclass
class Codebook:
    centroids: np.ndarray
    inertia: float
    seed: int
    iterations: int = 0
    inertia_history: list = field(default_factory=list, repr=False)

    @property
    def k(self):
        return self.centroids.shape[0]

    @property
    def dim(self):
        return self.centroids.shape[1]


def stack_stream(data):
    """One (N, dim) matrix from a matrix or a list of per-trajectory matrices."""
    if isinstance(data, np.ndarray):
        X = np.asarray(data, dtype=np.float64)
    else:
        parts = [np.asarray(m, dtype=np.float64) for m in data]
        if not parts:
            raise TooFewPoints("no embedding vectors supplied")
        dims = {p.shape[1] if p.ndim == 2 else None for p in parts}
        if len(dims) != 1 or None in dims:
            raise DimensionMismatch("every sequence in a stream must be (n_i, dim) with one dim")
        X = np.concatenate(parts, axis=0)
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d matrix of vectors, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("embedding vectors must be finite")
    return X


def _nearest(X, C):
    """(labels, squared distances); exact pairwise differences so ties go to the lowest id."""
    labels = np.empty(len(X), dtype=np.int64)
    dist = np.empty(len(X))
    for lo in range(0, len(X), _CHUNK):
        d = cdist(X[lo:lo + _CHUNK], C, "sqeuclidean")
        idx = d.argmin(axis=1)
        labels[lo:lo + _CHUNK] = idx
        dist[lo:lo + _CHUNK] = d[np.arange(len(idx)), idx]
    return labels, dist


def _plus_plus(X, k, rng):
    centroids = [X[rng.integers(len(X))]]
    closest = cdist(X, centroids[0][None], "sqeuclidean")[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            pick = rng.choice(len(X), p=closest / total)
        else:
            pick = rng.integers(len(X))
        centroids.append(X[pick])
        closest = np.minimum(closest, cdist(X, X[pick][None], "sqeuclidean")[:, 0])
    return np.array(centroids)


def _update(X, labels, dist, k, old):
    counts = np.bincount(labels, minlength=k)
    # mean as anchor + mean offset so a cluster of identical points is exact
    members, first = np.unique(labels, return_index=True)
    anchor = np.zeros_like(old)
    anchor[members] = X[first]
    offset = X - anchor[labels]
    sums = np.stack([np.bincount(labels, weights=offset[:, j], minlength=k)
                     for j in range(X.shape[1])], axis=1)
    C = old.copy()
    filled = counts > 0
    C[filled] = anchor[filled] + sums[filled] / counts[filled, None]
    # reseed empty clusters at the point currently farthest from its centroid
    dist = dist.copy()
    for j in np.flatnonzero(~filled):
        far = int(dist.argmax())
        C[j] = X[far]
        dist[far] = 0.0
    return C


def fit(data, k, seed=0, max_iters=100, tol=1e-6, init=None):
    """Lloyd iterations from k-means++ seeds (or from ``init`` centroids).

    Stops when no centroid moves more than ``tol`` or after ``max_iters``
    updates. The inertia is checked to be non-increasing at every iteration.
    """
    X = stack_stream(data)
    if k < 1:
        raise ValidationError("k must be >= 1")
    if len(X) < k:
        raise TooFewPoints(f"{len(X)} vectors cannot fill {k} clusters")
    rng = np.random.default_rng(seed)
    if init is not None:
        C = np.array(init, dtype=np.float64)
        if C.shape != (k, X.shape[1]):
            raise DimensionMismatch(f"init centroids must be {(k, X.shape[1])}, got {C.shape}")
    else:
        C = _plus_plus(X, k, rng)

    labels, dist = _nearest(X, C)
    history = [float(dist.sum())]
    it = 0
    for it in range(1, max_iters + 1):
        new = _update(X, labels, dist, k, C)
        shift = float(np.sqrt(((new - C) ** 2).sum(axis=1)).max())
        C = new
        labels, dist = _nearest(X, C)
        inertia = float(dist.sum())
        if inertia > history[-1] * (1 + 1e-12) + 1e-12:
            raise NumericalFault(
                f"k-means inertia rose from {history[-1]!r} to {inertia!r}", step=it
            )
        history.append(inertia)
        if shift <= tol:
            break
    return Codebook(C, history[-1], seed, it, history)


def assign(codebook, data):
    """Nearest-centroid token ids; a matrix in gives an array, a list gives a list."""
    single = isinstance(data, np.ndarray)
    seqs = [data] if single else list(data)
    out = []
    for m in seqs:
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != codebook.dim:
            raise DimensionMismatch(
                f"vectors of shape {m.shape} do not match codebook dim {codebook.dim}"
            )
        out.append(_nearest(m, codebook.centroids)[0])
    return out[0] if single else out


@dataclass
class DiscretizationStats:
    coverage_pct: np.ndarray
    avg_revisits: np.ndarray
    singleton_pct: np.ndarray
    num_states: int

    def summary(self):
        doc = {"num_states": self.num_states, "trajectories": len(self.coverage_pct)}
        for name in ("coverage_pct", "avg_revisits", "singleton_pct"):
            values = getattr(self, name)
            doc[name] = {"mean": float(values.mean()), "std": float(values.std())}
        doc["units"] = {
            "coverage_pct": "percent of the codebook visited by one trajectory",
            "avg_revisits": "observations per distinct visited token",
            "singleton_pct": "percent of distinct visited tokens seen exactly once",
        }
        return doc


def discretization_stats(token_seqs, num_states):
    """Per-trajectory coverage, revisit and singleton statistics of a token dataset."""
    cov, rev, single = [], [], []
    for seq in token_seqs:
        seq = np.asarray(seq, dtype=np.int64)
        if len(seq) == 0:
            continue
        if seq.min() < 0 or seq.max() >= num_states:
            raise BoundsError(f"token outside [0, {num_states})")
        counts = np.unique(seq, return_counts=True)[1]
        cov.append(100.0 * len(counts) / num_states)
        rev.append(counts.mean())
        single.append(100.0 * np.count_nonzero(counts == 1) / len(counts))
    return DiscretizationStats(np.array(cov), np.array(rev), np.array(single), num_states)


def save_stats(stats, path):
    with open(path, "w") as fh:
        json.dump(stats.summary(), fh, indent=2)
        fh.write("\n")


def write_embeddings(path, matrix):
    """Binary matrix: little-endian uint32 rows and cols, then row-major float32."""
    matrix = np.asarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise DimensionMismatch("embedding file holds a 2-d matrix")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*matrix.shape))
        fh.write(np.ascontiguousarray(matrix).tobytes())


def read_embeddings(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValidationError(f"{path}: truncated header")
        rows, cols = _HEADER.unpack(head)
        body = np.frombuffer(fh.read(), dtype="<f4")
    if body.size != rows * cols:
        raise ValidationError(f"{path}: expected {rows}x{cols} floats, found {body.size}")
    return body.reshape(rows, cols).astype(np.float64)


def split_rows(matrix, lengths):
    """Cut a stacked matrix back into per-trajectory blocks."""
    lengths = [int(n) for n in lengths]
    if any(n < 1 for n in lengths) or sum(lengths) != len(matrix):
        raise ValidationError(f"lengths sum to {sum(lengths)} but the matrix has {len(matrix)} rows")
    return np.split(matrix, np.cumsum(lengths)[:-1])
