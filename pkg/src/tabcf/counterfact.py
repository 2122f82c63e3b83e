"""Counterfactual generation and its iterative-optimizer baseline.

Generation is a single batched hypernetwork evaluation: the same weight
matrix W that classifies x supplies, for every alternative class m, the
translation x' = x - W_m (weight coordinates). ``generate_arrays`` is that
pure single-pass stage; ``annotate_arrays`` runs the verification pass
(predicted class of each x', its conditional log density), and ``explain``
assembles the full per-row report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .dataio import Preprocessor


# ---------------------------------------------------------------------------
# array-level pipeline

def generate_arrays(net, prep: Preprocessor | None, X: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single-pass counterfactual generation for a batch.

    One hypernetwork forward produces W for every row; returns
    (predicted class (B,), W (B,K,D+1), candidates (B,K,D)) where candidate
    [i, m] = X[i] - W[i, m, 1:] with categorical blocks snapped to one-hot.
    Row i's own class column is present but meaningless (identity shift
    direction) — callers index the m != predicted columns.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    W = net.weights_for(X)  # the one forward pass
    logits = W[:, :, 0] + np.einsum("bkd,bd->bk", W[:, :, 1:], X)
    pred = logits.argmax(axis=1)
    candidates = X[:, None, :] - W[:, :, 1:]
    if prep is not None and prep.categorical_groups:
        B, K, D = candidates.shape
        candidates = prep.snap_categorical(
            candidates.reshape(B * K, D)).reshape(B, K, D)
    return pred, W, candidates


def annotate_arrays(net, flow, candidates: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Verification pass over generated candidates: the model's own predicted
    class of each candidate and its log density under the target class.

    Returns (cf_pred (B,K), log_dens (B,K)); column m annotates the
    candidate aimed at class m.
    """
    B, K, D = candidates.shape
    flat = candidates.reshape(B * K, D)
    cf_pred = net.predict(flat).reshape(B, K)
    targets = np.tile(np.arange(K), B)
    log_dens = flow.log_prob(flat, targets).reshape(B, K)
    return cf_pred, log_dens


def project_categorical(Xp: np.ndarray, prep: Preprocessor) -> np.ndarray:
    """Snap each categorical block to the one-hot of its argmax (ties go to
    the lowest index); numeric coordinates pass through."""
    return prep.snap_categorical(np.atleast_2d(np.asarray(Xp, dtype=np.float64)))


# ---------------------------------------------------------------------------
# full per-row reports

@dataclass
class Alternative:
    """One counterfactual: the row moved into target class ``target``."""
    target: int
    x_encoded: np.ndarray
    x_raw: dict
    predicted: int
    log_density: float
    diffs: dict = field(default_factory=dict)


@dataclass
class CounterfactualSet:
    x_encoded: np.ndarray
    x_raw: dict
    predicted: int
    probabilities: np.ndarray
    alternatives: list[Alternative] = field(default_factory=list)
    weights: np.ndarray | None = None  # (K, D+1) local linear model


def _feature_diffs(schema, raw_from: dict, raw_to: dict) -> dict:
    diffs = {}
    for col in schema.columns:
        a, b = raw_from[col.name], raw_to[col.name]
        if col.kind == "numeric":
            diffs[col.name] = float(b) - float(a)
        else:
            diffs[col.name] = (a != b)
    return diffs


def explain(bundle, X: np.ndarray) -> list[CounterfactualSet]:
    """Generate + annotate + decode: one CounterfactualSet per input row with
    exactly K-1 alternatives."""
    net, flow, prep = bundle.net, bundle.flow, bundle.prep
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    pred, W, candidates = generate_arrays(net, prep, X)
    cf_pred, log_dens = annotate_arrays(net, flow, candidates)
    z = W[:, :, 0] + np.einsum("bkd,bd->bk", W[:, :, 1:], X)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    proba = e / e.sum(axis=1, keepdims=True)
    raw_inputs = prep.inverse_rows(X)
    K = net.n_classes
    sets = []
    for i in range(X.shape[0]):
        alts = []
        for m in range(K):
            if m == pred[i]:
                continue
            raw_m = prep.inverse_rows(candidates[i, m][None, :])[0]
            alts.append(Alternative(
                target=m,
                x_encoded=candidates[i, m].copy(),
                x_raw=raw_m,
                predicted=int(cf_pred[i, m]),
                log_density=float(log_dens[i, m]),
                diffs=_feature_diffs(bundle.schema, raw_inputs[i], raw_m),
            ))
        sets.append(CounterfactualSet(
            x_encoded=X[i].copy(),
            x_raw=raw_inputs[i],
            predicted=int(pred[i]),
            probabilities=proba[i],
            alternatives=alts,
            weights=W[i].copy(),
        ))
    return sets


# ---------------------------------------------------------------------------
# Wachter-style iterative baseline

@dataclass
class WachterResult:
    x_cf: np.ndarray      # (B, D) best iterates
    valid: np.ndarray     # (B,) reached the target class
    distance: np.ndarray  # (B,) L2 to the input of the returned iterate


def wachter_baseline(net, X: np.ndarray, targets: np.ndarray, C: float = 0.1,
                     steps: int = 1000, lr: float = 0.05) -> WachterResult:
    """Gradient-descent counterfactual search: argmin CE(f(x'), target)
    + C * ||x' - x||^2, started at x' = x.

    Runs all rows as one batch (their gradients are independent). Returns,
    per row, the valid iterate closest to the input, or the final iterate
    flagged invalid if the target class was never reached.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    B = X.shape[0]
    x_cf = gc.parameter(X.copy(), name="wachter.x")
    x_orig = gc.Tensor(X)

    best = X.copy()
    best_dist = np.full(B, np.inf)
    valid = np.zeros(B, dtype=bool)

    def consider(current: np.ndarray):
        w = net.weights_for(current)
        z = w[:, :, 0] + np.einsum("bkd,bd->bk", w[:, :, 1:], current)
        hit = z.argmax(axis=1) == targets
        dist = np.sqrt(((current - X) ** 2).sum(axis=1))
        better = hit & (dist < best_dist)
        best[better] = current[better]
        best_dist[better] = dist[better]
        valid[better] = True

    consider(X)  # rows already classified as the target stay at x, d = 0
    for _ in range(steps):
        with gc.Tape() as tape:
            w = net.forward(x_cf, training=False)
            z = net.logits(x_cf, w)
            ce = gc.tsum(gc.softmax_cross_entropy(z, targets))
            dist_sq = gc.sq_l2(gc.sub(x_cf, x_orig))
            loss = gc.add(ce, gc.scale(dist_sq, C))
        grad = gc.differentiate(tape, loss, [x_cf])[x_cf].data
        x_cf.data = x_cf.data - lr * grad
        consider(x_cf.data)

    out = best.copy()
    final_dist = best_dist.copy()
    missed = ~valid
    if missed.any():
        out[missed] = x_cf.data[missed]
        final_dist[missed] = np.sqrt(((x_cf.data[missed] - X[missed]) ** 2)
                                     .sum(axis=1))
    return WachterResult(out, valid, final_dist)
