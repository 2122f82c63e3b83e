"""Hypernetwork that maps each input row to its own linear classifier.

``HyperNet`` is a residual MLP H(x) -> W where W is K x (D+1): per class a
bias (column 0) and a weight vector over the D encoded features. The logit of
class k at input x is the affine form W_{k,0} + W_{k,1:} . x, so W doubles as
a local explanation, and its weight rows are reused as counterfactual
translations (x - W_{m,1:} moves x toward class m).
"""

from __future__ import annotations

import numpy as np

from . import gradcore as gc
from .layers import BatchNorm, Dropout, Linear, Module


class ResidualBlock(Module):
    """batch-norm -> linear -> relu -> dropout -> linear -> additive skip."""

    def __init__(self, width: int, rng: np.random.Generator, name: str,
                 dropout_rate: float, dropout_seed: int, layer_id: int):
        self.bn = BatchNorm(width, f"{name}.bn")
        self.lin1 = Linear(width, width, rng, f"{name}.lin1")
        self.drop = Dropout(dropout_rate, seed=dropout_seed, layer_id=layer_id)
        self.lin2 = Linear(width, width, rng, f"{name}.lin2")

    def __call__(self, h: gc.Tensor, training: bool,
                 update_stats: bool = True) -> gc.Tensor:
        out = self.bn(h, training, update_running=training and update_stats)
        out = gc.relu(self.lin1(out))
        out = self.drop(out, training)
        out = self.lin2(out)
        return gc.add(h, out)

    def parameters(self):
        return self.bn.parameters() + self.lin1.parameters() + self.lin2.parameters()

    def state_arrays(self):
        yield from self.bn.state_arrays()
        yield from self.lin1.state_arrays()
        yield from self.lin2.state_arrays()


class HyperNet(Module):
    """H(.; theta): R^D -> R^{K x (D+1)} with a TabResNet-style backbone."""

    def __init__(self, dim: int, n_classes: int, seed: int, hidden: int = 256,
                 n_blocks: int = 4, dropout_rate: float = 0.25):
        if dim < 1 or n_classes < 2:
            raise ValueError(f"bad dimensions: D={dim}, K={n_classes}")
        self.dim = dim
        self.n_classes = n_classes
        self.hidden = hidden
        self.n_blocks = n_blocks
        self.dropout_rate = dropout_rate
        rng = np.random.default_rng(seed)
        self.input_proj = Linear(dim, hidden, rng, "hyper.in")
        self.blocks = [
            ResidualBlock(hidden, rng, f"hyper.block{i}", dropout_rate,
                          dropout_seed=seed, layer_id=i + 1)
            for i in range(n_blocks)
        ]
        # small head + zero bias: initial W ~ 0, predictions near uniform
        self.head = Linear(hidden, n_classes * (dim + 1), rng, "hyper.head",
                           scale=1e-2, zero_bias=True)

    # ---------------------------------------------------------------- forward

    def forward(self, x: gc.Tensor, training: bool,
                update_stats: bool = True) -> gc.Tensor:
        """Weight batch, flattened: (B, K*(D+1)); class k occupies columns
        [k*(D+1), (k+1)*(D+1)) as (bias, weights...)."""
        if x.data.shape[1] != self.dim:
            raise ValueError(f"input has {x.data.shape[1]} features, "
                             f"model expects {self.dim}")
        h = self.input_proj(x)
        for block in self.blocks:
            h = block(h, training, update_stats)
        return self.head(h)

    def logits(self, x: gc.Tensor, w_flat: gc.Tensor) -> gc.Tensor:
        """z_k = W_{k,0} + sum_d W_{k,d} x_d for every class: (B, K)."""
        span = self.dim + 1
        cols = []
        for k in range(self.n_classes):
            bias = gc.slice_cols(w_flat, k * span, k * span + 1)
            wk = gc.slice_cols(w_flat, k * span + 1, (k + 1) * span)
            cols.append(gc.add(gc.tsum(gc.mul(wk, x), axis=1, keepdims=True), bias))
        return gc.concat(cols, axis=1)

    def class_translation(self, w_flat: gc.Tensor, cls: int) -> gc.Tensor:
        """Weight part (no bias) of class ``cls``'s row: the shift whose
        subtraction from x yields that class's counterfactual."""
        span = self.dim + 1
        return gc.slice_cols(w_flat, cls * span + 1, (cls + 1) * span)

    # ------------------------------------------------------------- inference

    def weights_for(self, X: np.ndarray) -> np.ndarray:
        """Per-row weight matrices in eval mode: (B, K, D+1)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        w = self.forward(gc.Tensor(X), training=False)
        return w.data.reshape(X.shape[0], self.n_classes, self.dim + 1)

    def logits_for(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        W = self.weights_for(X)
        return W[:, :, 0] + np.einsum("bkd,bd->bk", W[:, :, 1:], X)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        z = self.logits_for(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    def feature_importance(self, x: np.ndarray) -> tuple[np.ndarray, int, np.ndarray]:
        """(full W, predicted class, that class's (bias, weights) row)."""
        W = self.weights_for(np.atleast_2d(x))[0]
        z = W[:, 0] + W[:, 1:] @ np.asarray(x, dtype=np.float64).reshape(-1)
        pred = int(z.argmax())
        return W, pred, W[pred]

    # ----------------------------------------------------------------- state

    def parameters(self):
        params = self.input_proj.parameters()
        for b in self.blocks:
            params += b.parameters()
        return params + self.head.parameters()

    def state_arrays(self):
        yield from self.input_proj.state_arrays()
        for b in self.blocks:
            yield from b.state_arrays()
        yield from self.head.state_arrays()

    def config(self) -> dict:
        return {"dim": self.dim, "n_classes": self.n_classes,
                "hidden": self.hidden, "n_blocks": self.n_blocks,
                "dropout_rate": self.dropout_rate}


def local_logits(x: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Affine evaluation z_k = W_{k,0} + W_{k,1:} . x for a single row."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    W = np.asarray(W, dtype=np.float64)
    return W[:, 0] + W[:, 1:] @ x
