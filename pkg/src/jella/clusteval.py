"""k-means on embedding columns, and the NMI / AdjRI / RMSE metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .mvdata import make_rng

__all__ = [
    "ClusteringResult",
    "EvalReport",
    "kmeans",
    "nmi",
    "adj_rand_index",
    "rmse",
    "evaluate_embedding",
    "derive_seeds",
]


@dataclass
class ClusteringResult:
    labels: np.ndarray  # 1-based
    inertia: float
    restarts_used: int
    inertia_history: List[float] = field(default_factory=list)


@dataclass
class EvalReport:
    nmi_mean: Optional[float] = None
    nmi_std: Optional[float] = None
    adjri_mean: Optional[float] = None
    adjri_std: Optional[float] = None
    rmse: Optional[float] = None
    iterations: Optional[int] = None
    wall_time_seconds: Optional[float] = None

    def to_dict(self):
        return dict(self.__dict__)


def derive_seeds(seed, count):
    """``count`` independent integer sub-seeds from one master seed."""
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1, dtype=np.uint64)[0]) for s in ss.spawn(count)]


def _sq_dists(X, C):
    # X: n x d points, C: k x d centers
    d = (X * X).sum(1)[:, None] - 2 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = _sq_dists(X, np.array(centers))[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, _sq_dists(X, X[idx][None, :])[:, 0])
    return np.array(centers)


def _lloyd(X, centers, max_iter):
    history = []
    labels = None
    for _ in range(max_iter):
        D = _sq_dists(X, centers)
        new_labels = D.argmin(axis=1)
        inertia = float(D[np.arange(X.shape[0]), new_labels].sum())
        history.append(inertia)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(centers.shape[0]):
            members = X[labels == j]
            # empty cluster keeps its previous center
            if len(members):
                centers[j] = members.mean(axis=0)
    D = _sq_dists(X, centers)
    labels = D.argmin(axis=1)
    # exact inertia, not the expanded-square form
    inertia = float(((X - centers[labels]) ** 2).sum())
    return labels, inertia, history


def kmeans(points, k, restarts=10, max_iter=300, seed=0) -> ClusteringResult:
    """Lloyd's algorithm with k-means++ seeding; best inertia over restarts.

    ``points`` is ``r x n``: one sample per column.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or X.size == 0:
        raise ValueError("points must be a non-empty 2-D array")
    X = X.T
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, n={n}], got {k}")
    rng = make_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        centers = _kmeanspp(X, k, rng)
        labels, inertia, history = _lloyd(X, centers, max_iter)
        if best is None or inertia < best[1]:
            best = (labels, inertia, history)
    return ClusteringResult(best[0] + 1, best[1], max(1, restarts), best[2])


def _contingency(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"label vectors must have equal length, got {a.shape} and {b.shape}")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1 if a.size else 0, bi.max() + 1 if b.size else 0))
    np.add.at(table, (ai, bi), 1)
    return table


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(a, b, normalization="sqrt"):
    """Normalized mutual information.

    ``normalization="sqrt"`` divides by ``sqrt(H(a) H(b))``; ``"max"`` by
    ``max(H(a), H(b))``. Returns 0 if either partition has zero entropy.
    """
    table = _contingency(a, b)
    n = table.sum()
    if n == 0:
        raise ValueError("empty label vectors")
    ha = _entropy(table.sum(1), n)
    hb = _entropy(table.sum(0), n)
    if ha == 0 or hb == 0:
        return 0.0
    pij = table / n
    outer = np.outer(table.sum(1), table.sum(0)) / n**2
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    if normalization == "sqrt":
        denom = np.sqrt(ha * hb)
    elif normalization == "max":
        denom = max(ha, hb)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return float(min(max(mi / denom, 0.0), 1.0))


def _comb2(x):
    return x * (x - 1) / 2


def adj_rand_index(a, b):
    """Adjusted Rand index (Hubert-Arabie, permutation model)."""
    table = _contingency(a, b)
    n = table.sum()
    if n == 0:
        raise ValueError("empty label vectors")
    sum_ij = _comb2(table).sum()
    sum_a = _comb2(table.sum(1)).sum()
    sum_b = _comb2(table.sum(0)).sum()
    total = _comb2(n)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = (sum_a + sum_b) / 2
    if max_index == expected:
        # both partitions trivial in the same way (all singletons or one block)
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def rmse(M, Mstar):
    """``||Mstar - M||_F / sqrt(m n)``."""
    M = np.asarray(M, dtype=float)
    Mstar = np.asarray(Mstar, dtype=float)
    if M.shape != Mstar.shape:
        raise ValueError(f"shape mismatch {M.shape} vs {Mstar.shape}")
    if M.size == 0:
        raise ValueError("empty matrices")
    return float(np.linalg.norm(Mstar - M) / np.sqrt(M.size))


def evaluate_embedding(W, truth_labels, k, repeats=20, seed=0, restarts=10,
                       normalization="sqrt") -> EvalReport:
    """Repeat k-means on the columns of ``W`` and summarize NMI / AdjRI."""
    truth = np.asarray(truth_labels)
    W = np.asarray(W, dtype=float)
    if truth.shape != (W.shape[1],):
        raise ValueError(f"need {W.shape[1]} truth labels, got {truth.shape}")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    nmis, aris = [], []
    for sub in derive_seeds(seed, repeats):
        pred = kmeans(W, k, restarts=restarts, seed=sub).labels
        nmis.append(nmi(truth, pred, normalization))
        aris.append(adj_rand_index(truth, pred))
    return EvalReport(
        nmi_mean=float(np.mean(nmis)),
        nmi_std=float(np.std(nmis)),
        adjri_mean=float(np.mean(aris)),
        adjri_std=float(np.std(aris)),
    )
