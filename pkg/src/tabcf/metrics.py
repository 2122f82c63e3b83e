"""Evaluation metrics: classifier quality (AUROC, accuracy) and counterfactual
quality (coverage, validity, proximity, plausibility, outlier probes, timing).

The outlier probes follow the novelty convention: LOF and the isolation
forest are fitted on the train split and score counterfactuals as external
points, so they measure whether generated rows sit inside the data manifold.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from math import ceil, log, log2
from typing import Callable, Sequence

import numpy as np

from .dataio import FeatureGroup

EULER_GAMMA = 0.5772156649


class MetricError(ValueError):
    """Undefined metric request (empty inputs, degenerate labels, bad k)."""


# ---------------------------------------------------------------------------
# classifier metrics

def auroc_binary(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUROC of positive-class scores; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC undefined: labels contain a single class")
    ranks = _average_ranks(scores)
    rank_sum = ranks[labels].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auroc(proba: np.ndarray, labels: np.ndarray) -> float:
    """Binary AUROC from a score vector or (N, 2) matrix; multiclass is the
    macro one-vs-rest average over per-class probability columns."""
    proba = np.asarray(proba, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if proba.ndim == 1:
        return auroc_binary(proba, labels)
    if proba.shape[1] == 2:
        return auroc_binary(proba[:, 1], labels == 1)
    present = np.unique(labels)
    if present.size < 2:
        raise MetricError("AUROC undefined: labels contain a single class")
    vals = [auroc_binary(proba[:, int(c)], labels == c) for c in present]
    return float(np.mean(vals))


def accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    pred = np.asarray(pred).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if pred.size == 0:
        raise MetricError("accuracy undefined on empty input")
    return float((pred == labels).mean())


@dataclass
class ClassifReport:
    auroc: float
    accuracy: float
    class_counts: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"auroc": self.auroc, "accuracy": self.accuracy,
                "class_counts": list(self.class_counts)}


# ---------------------------------------------------------------------------
# counterfactual bookkeeping metrics

def coverage_validity(n_requested: int, predictions: np.ndarray,
                      targets: np.ndarray) -> tuple[float, float]:
    """coverage = produced/requested; validity = fraction of produced whose
    prediction equals the requested target class."""
    if n_requested <= 0:
        raise MetricError("coverage undefined: no counterfactuals requested")
    predictions = np.asarray(predictions).reshape(-1)
    targets = np.asarray(targets).reshape(-1)
    coverage = predictions.size / n_requested
    validity = float((predictions == targets).mean()) if predictions.size else 0.0
    return float(coverage), validity


def proximity_batch(X: np.ndarray, Xp: np.ndarray,
                    groups: Sequence[FeatureGroup]
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row (L1, L2, Hamming): norms over numeric (standardized) coordinates
    only; Hamming = fraction of categorical groups whose block changed."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Xp = np.atleast_2d(np.asarray(Xp, dtype=np.float64))
    num_idx = [g.start for g in groups if g.kind == "numeric"]
    cat_groups = [g for g in groups if g.kind == "categorical"]
    diff = X[:, num_idx] - Xp[:, num_idx] if num_idx else np.zeros((X.shape[0], 0))
    l1 = np.abs(diff).sum(axis=1)
    l2 = np.sqrt((diff ** 2).sum(axis=1))
    if cat_groups:
        changed = np.zeros(X.shape[0])
        for g in cat_groups:
            a = X[:, g.start:g.stop]
            b = Xp[:, g.start:g.stop]
            changed += np.any(a != b, axis=1)
        ham = changed / len(cat_groups)
    else:
        ham = np.zeros(X.shape[0])
    return l1, l2, ham


def proximity(x: np.ndarray, xp: np.ndarray,
              groups: Sequence[FeatureGroup]) -> tuple[float, float, float]:
    l1, l2, ham = proximity_batch(x, xp, groups)
    return float(l1[0]), float(l2[0]), float(ham[0])


def plausibility(flow, thresholds, Xp: np.ndarray,
                 targets: np.ndarray) -> tuple[float, float]:
    """(P.Plaus, mean log density): fraction of counterfactuals whose
    conditional log density clears the global train median, and the mean."""
    if len(Xp) == 0:
        raise MetricError("plausibility undefined on empty input")
    lp = flow.log_prob(Xp, targets)
    return float((lp > thresholds.global_threshold).mean()), float(lp.mean())


# ---------------------------------------------------------------------------
# Local Outlier Factor (novelty convention)

class LofIndex:
    """Classic LOF against a fixed reference set.

    For references, k-distances and local reachability densities are
    precomputed with self excluded; queries are scored as external points
    against those references.
    """

    def __init__(self, X_ref: np.ndarray, k: int = 20):
        X_ref = np.atleast_2d(np.asarray(X_ref, dtype=np.float64))
        n = X_ref.shape[0]
        if k < 1 or k >= n:
            raise MetricError(f"LOF k={k} needs 1 <= k < reference size {n}")
        self.X = X_ref
        self.k = k
        d = _pairwise(X_ref, X_ref)
        np.fill_diagonal(d, np.inf)  # self excluded from reference neighbors
        nn = np.argsort(d, axis=1, kind="stable")[:, :k]
        rows = np.arange(n)[:, None]
        nn_dist = d[rows, nn]
        self.k_dist = nn_dist[:, -1]
        reach = np.maximum(self.k_dist[nn], nn_dist)
        self.lrd = 1.0 / np.maximum(reach.mean(axis=1), 1e-12)
        self._nn = nn

    def score(self, P: np.ndarray) -> np.ndarray:
        """LOF(p) = mean over p's k reference neighbors of lrd(o) / lrd(p)."""
        P = np.atleast_2d(np.asarray(P, dtype=np.float64))
        d = _pairwise(P, self.X)
        nn = np.argsort(d, axis=1, kind="stable")[:, :self.k]
        rows = np.arange(P.shape[0])[:, None]
        reach = np.maximum(self.k_dist[nn], d[rows, nn])
        lrd_p = 1.0 / np.maximum(reach.mean(axis=1), 1e-12)
        return self.lrd[nn].mean(axis=1) / lrd_p


def _pairwise(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    aa = (A ** 2).sum(axis=1)[:, None]
    bb = (B ** 2).sum(axis=1)[None, :]
    sq = np.maximum(aa + bb - 2.0 * A @ B.T, 0.0)
    return np.sqrt(sq)


def lof_score(index: LofIndex, P: np.ndarray) -> float:
    return float(index.score(P).mean())


# ---------------------------------------------------------------------------
# Isolation Forest

def harmonic_path_norm(n: int) -> float:
    """Average unsuccessful-search path length c(n) in a BST of n points."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0  # 2*H(1) - 2*(1/2) with H(1) = 1 exact
    return 2.0 * (log(n - 1.0) + EULER_GAMMA) - 2.0 * (n - 1.0) / n


class _IsoNode:
    __slots__ = ("feature", "threshold", "left", "right", "adjust")

    def __init__(self, feature=-1, threshold=0.0, left=None, right=None,
                 adjust=0.0):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.adjust = adjust  # c(leaf size) at leaves


class IsoForest:
    """T random isolation trees over subsamples of size psi; score(x) =
    0.5 - 2^(-E[h(x)]/c(psi)), so inliers are positive."""

    def __init__(self, X_ref: np.ndarray, n_trees: int = 100,
                 subsample: int = 256, seed: int = 0):
        X_ref = np.atleast_2d(np.asarray(X_ref, dtype=np.float64))
        self.psi = min(subsample, X_ref.shape[0])
        self.c_psi = harmonic_path_norm(self.psi)
        self.height_limit = ceil(log2(max(self.psi, 2)))
        rng = np.random.default_rng(seed)
        self.trees = []
        for _ in range(n_trees):
            idx = rng.choice(X_ref.shape[0], size=self.psi, replace=False)
            self.trees.append(self._build(X_ref[idx], 0, rng))

    def _build(self, X: np.ndarray, depth: int, rng) -> _IsoNode:
        if depth >= self.height_limit or X.shape[0] <= 1:
            return _IsoNode(adjust=harmonic_path_norm(X.shape[0]))
        lo = X.min(axis=0)
        hi = X.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if splittable.size == 0:  # all points identical
            return _IsoNode(adjust=harmonic_path_norm(X.shape[0]))
        f = int(rng.choice(splittable))
        t = float(rng.uniform(lo[f], hi[f]))
        mask = X[:, f] < t
        if not mask.any() or mask.all():  # threshold hit the boundary
            return _IsoNode(adjust=harmonic_path_norm(X.shape[0]))
        return _IsoNode(f, t, self._build(X[mask], depth + 1, rng),
                        self._build(X[~mask], depth + 1, rng))

    def _path(self, x: np.ndarray, node: _IsoNode) -> float:
        depth = 0
        while node.feature >= 0:
            node = node.left if x[node.feature] < node.threshold else node.right
            depth += 1
        return depth + node.adjust

    def mean_depth(self, P: np.ndarray) -> np.ndarray:
        P = np.atleast_2d(np.asarray(P, dtype=np.float64))
        out = np.zeros(P.shape[0])
        for i, x in enumerate(P):
            out[i] = sum(self._path(x, t) for t in self.trees) / len(self.trees)
        return out

    def score(self, P: np.ndarray) -> np.ndarray:
        e_h = self.mean_depth(P)
        return 0.5 - np.power(2.0, -e_h / self.c_psi)


def isoforest_score(model: IsoForest, P: np.ndarray) -> float:
    return float(model.score(P).mean())


# ---------------------------------------------------------------------------
# timing and the report row

def timed(fn: Callable, *args, **kwargs):
    """(result, wall seconds) on the monotonic clock."""
    start = time.perf_counter()
    result = fn(*args, **kwargs)
    return result, time.perf_counter() - start


@dataclass
class CFReport:
    """One benchmark-table row of counterfactual quality numbers."""
    coverage: float
    validity: float
    l1: float
    l2: float
    hamming: float
    p_plaus: float
    log_dens: float
    lof: float
    iso_forest: float
    seconds: float
    has_categorical: bool = False

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage, "validity": self.validity,
            "l1": self.l1, "l2": self.l2, "hamming": self.hamming,
            "p_plaus": self.p_plaus, "log_dens": self.log_dens,
            "lof": self.lof, "iso_forest": self.iso_forest,
            "seconds": self.seconds, "has_categorical": self.has_categorical,
        }

    def format_row(self) -> str:
        parts = [f"Cover. {self.coverage:.2f}", f"Valid. {self.validity:.3f}",
                 f"L1 {self.l1:.3f}", f"L2 {self.l2:.3f}"]
        if self.has_categorical:
            parts.append(f"Ham. {self.hamming:.3f}")
        parts += [f"P.Plaus {self.p_plaus:.3f}", f"LogDens {self.log_dens:.2f}",
                  f"LOF {self.lof:.3f}", f"IsoForest {self.iso_forest:.3f}",
                  f"Time[s] {self.seconds:.3f}"]
        return "  ".join(parts)
