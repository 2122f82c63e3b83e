"""Class-conditional masked autoregressive flow for tabular densities.

Each of the 8 layers is a MADE-style affine transform: a masked MLP reads the
layer input in a fixed variable order (alternating between natural and
reversed) plus a one-hot class context, and emits per-coordinate shift mu and
bounded log-scale s. The density direction z = (x - mu) * exp(-s) needs one
pass; the sampling direction runs one sequential pass per coordinate. With
zero-initialized output layers every transform starts as the identity, so an
untrained flow is exactly the standard normal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcore as gc

LOG_TWO_PI = float(np.log(2.0 * np.pi))
SCALE_CLAMP = 10.0  # |log-scale| bound keeping every layer invertible


class FlowError(RuntimeError):
    """Non-finite flow state or diverged fitting."""


def _made_degrees(dim: int, hidden: int) -> tuple[np.ndarray, np.ndarray]:
    """Input degrees 1..D and cycling hidden degrees 1..max(D-1, 1)."""
    in_deg = np.arange(1, dim + 1)
    max_hidden_deg = max(dim - 1, 1)
    hid_deg = (np.arange(hidden) % max_hidden_deg) + 1
    return in_deg, hid_deg


def _perm_matrix(perm: np.ndarray) -> np.ndarray:
    P = np.zeros((perm.size, perm.size))
    P[perm, np.arange(perm.size)] = 1.0
    return P


class MaskedLayer:
    """One MADE transform: 4 masked hidden blocks of ``hidden`` relu units,
    a zero-initialized masked output (mu, log-scale), and unmasked one-hot
    context columns feeding every block."""

    N_BLOCKS = 4

    def __init__(self, dim: int, n_classes: int, hidden: int,
                 rng: np.random.Generator, name: str, reverse: bool):
        self.dim = dim
        self.n_classes = n_classes
        self.hidden = hidden
        self.name = name
        self.perm = np.arange(dim)[::-1].copy() if reverse else np.arange(dim)
        self._P = gc.Tensor(_perm_matrix(self.perm))
        self._Pt = gc.Tensor(_perm_matrix(self.perm).T)
        self._zero_bias = gc.Tensor(np.zeros(dim))

        in_deg, hid_deg = _made_degrees(dim, hidden)
        self.masks: list[np.ndarray] = []
        self.weights: list[gc.Tensor] = []
        self.biases: list[gc.Tensor] = []

        prev_deg = in_deg
        for b in range(self.N_BLOCKS):
            mask = (hid_deg[None, :] >= prev_deg[:, None]).astype(float)
            mask = np.vstack([mask, np.ones((n_classes, hidden))])  # context rows
            fan_in = dim if b == 0 else hidden
            w = gc.parameter(
                rng.normal(0.0, np.sqrt(2.0 / (fan_in + n_classes)),
                           size=(fan_in + n_classes, hidden)),
                name=f"{name}.w{b}")
            self.weights.append(w)
            self.biases.append(gc.parameter(np.zeros(hidden), name=f"{name}.b{b}"))
            self.masks.append(mask)
            prev_deg = hid_deg

        # output: (mu_1..mu_D, s_1..s_D), coordinate i strictly after deg < i
        out_deg = np.tile(np.arange(1, dim + 1), 2)
        out_mask = (out_deg[None, :] > hid_deg[:, None]).astype(float)
        out_mask = np.vstack([out_mask, np.ones((n_classes, 2 * dim))])
        self.out_mask = out_mask
        self.out_w = gc.parameter(np.zeros((hidden + n_classes, 2 * dim)),
                                  name=f"{name}.w_out")
        self.out_b = gc.parameter(np.zeros(2 * dim), name=f"{name}.b_out")

    # ------------------------------------------------------------------ core

    def shift_and_logscale(self, xp: gc.Tensor, onehot: gc.Tensor
                           ) -> tuple[gc.Tensor, gc.Tensor]:
        """MADE pass in this layer's permuted coordinates."""
        h = xp
        for w, b, mask in zip(self.weights, self.biases, self.masks):
            h = gc.relu(gc.masked_affine(gc.concat([h, onehot], axis=1),
                                         w, b, mask))
        out = gc.masked_affine(gc.concat([h, onehot], axis=1),
                               self.out_w, self.out_b, self.out_mask)
        mu = gc.slice_cols(out, 0, self.dim)
        s_hat = gc.slice_cols(out, self.dim, 2 * self.dim)
        s = gc.scale(gc.tanh(gc.scale(s_hat, 1.0 / SCALE_CLAMP)), SCALE_CLAMP)
        return mu, s

    def density_step(self, x: gc.Tensor, onehot: gc.Tensor
                     ) -> tuple[gc.Tensor, gc.Tensor]:
        """x -> (u, per-row log|det du/dx|); one pass."""
        xp = gc.affine(x, self._P, self._zero_bias)
        mu, s = self.shift_and_logscale(xp, onehot)
        u_p = gc.mul(gc.sub(xp, mu), gc.exp(gc.scale(s, -1.0)))
        u = gc.affine(u_p, self._Pt, self._zero_bias)
        logdet = gc.scale(gc.tsum(s, axis=1), -1.0)
        return u, logdet

    def sample_step(self, u: np.ndarray, onehot: np.ndarray) -> np.ndarray:
        """Invert density_step: recover x coordinate by coordinate."""
        u_p = u[:, self.perm]
        x_p = np.zeros_like(u_p)
        onehot_t = gc.Tensor(onehot)
        for _ in range(self.dim):
            mu, s = self.shift_and_logscale(gc.Tensor(x_p), onehot_t)
            x_p = u_p * np.exp(s.data) + mu.data
        x = np.empty_like(x_p)
        x[:, self.perm] = x_p
        return x

    def parameters(self):
        return self.weights + self.biases + [self.out_w, self.out_b]

    def state_arrays(self):
        for t in self.parameters():
            yield t.name, t.data


@dataclass
class DensityThresholds:
    """Log-density acceptance levels: per-class medians and the global one."""
    global_threshold: float
    per_class: np.ndarray  # (K,)

    def for_class(self, cls: int) -> float:
        return float(self.per_class[cls])


class Flow:
    """Stack of masked autoregressive layers conditioned on the class."""

    def __init__(self, dim: int, n_classes: int, seed: int,
                 n_layers: int = 8, hidden: int = 16):
        self.dim = dim
        self.n_classes = n_classes
        self.n_layers = n_layers
        self.hidden = hidden
        rng = np.random.default_rng(seed)
        self.layers = [
            MaskedLayer(dim, n_classes, hidden, rng, f"flow.layer{i}",
                        reverse=(i % 2 == 1))
            for i in range(n_layers)
        ]

    def _onehot(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise FlowError(f"class labels outside [0, {self.n_classes})")
        oh = np.zeros((y.size, self.n_classes))
        oh[np.arange(y.size), y] = 1.0
        return oh

    # -------------------------------------------------------- density (x->z)

    def inverse_t(self, x: gc.Tensor, onehot: gc.Tensor
                  ) -> tuple[gc.Tensor, gc.Tensor]:
        """Tape version: returns (z, accumulated log|det dz/dx|)."""
        u = x
        logdet = None
        for i, layer in enumerate(self.layers):
            u, ld = layer.density_step(u, onehot)
            if not np.all(np.isfinite(u.data)):
                raise FlowError(f"non-finite values after flow layer {i}")
            logdet = ld if logdet is None else gc.add(logdet, ld)
        return u, logdet

    def inverse(self, X: np.ndarray, y: np.ndarray
                ) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        z, logdet = self.inverse_t(gc.Tensor(X), gc.Tensor(self._onehot(y)))
        return z.data, logdet.data

    def log_prob_t(self, x: gc.Tensor, onehot: gc.Tensor) -> gc.Tensor:
        """Per-row log p(x|y) on the tape."""
        z, logdet = self.inverse_t(x, onehot)
        base = gc.add(gc.scale(gc.sq_l2(z, axis=1), -0.5),
                      gc.as_tensor(-0.5 * self.dim * LOG_TWO_PI))
        return gc.add(base, logdet)

    def log_prob(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self.log_prob_t(gc.Tensor(X), gc.Tensor(self._onehot(y))).data

    # -------------------------------------------------------- sampling (z->x)

    def forward(self, Z: np.ndarray, y: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        onehot = self._onehot(y)
        x = Z
        for i in reversed(range(self.n_layers)):
            x = self.layers[i].sample_step(x, onehot)
            if not np.all(np.isfinite(x)):
                raise FlowError(f"non-finite values after flow layer {i}")
        return x

    # ----------------------------------------------------------------- state

    def parameters(self):
        params = []
        for layer in self.layers:
            params += layer.parameters()
        return params

    def state_arrays(self):
        for layer in self.layers:
            yield from layer.state_arrays()

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, arr in self.state_arrays():
            src = arrays[name]
            if src.shape != arr.shape:
                raise FlowError(f"shape mismatch for {name}: "
                                f"{src.shape} vs {arr.shape}")
            arr[...] = src

    def config(self) -> dict:
        return {"dim": self.dim, "n_classes": self.n_classes,
                "n_layers": self.n_layers, "hidden": self.hidden}


def fit_flow(flow: Flow, X: np.ndarray, y: np.ndarray, epochs: int,
             batch_size: int, lr: float, seed: int,
             lr_min: float = 1e-5, log=None) -> float:
    """Maximum-likelihood fit with Adam and cosine-annealed learning rate.

    Returns the final-epoch mean negative log-likelihood. A non-finite loss
    aborts with the offending step index.
    """
    X = np.asarray(X, dtype=np.float64)
    onehot_all = flow._onehot(y)
    n = X.shape[0]
    params = flow.parameters()
    if epochs <= 0:
        z, logdet = flow.inverse(X, y)
        lp = -0.5 * (z ** 2).sum(axis=1) - 0.5 * flow.dim * LOG_TWO_PI + logdet
        return float(-lp.mean())
    state = gc.AdamState(params)
    shuffle_rng = np.random.default_rng(seed)
    steps_per_epoch = max(1, (n + batch_size - 1) // batch_size)
    total_steps = epochs * steps_per_epoch
    step = 0
    final_nll = np.inf
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n)
        epoch_nll, seen = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb = gc.Tensor(X[idx])
            cb = gc.Tensor(onehot_all[idx])
            with gc.Tape() as tape:
                nll = gc.scale(gc.tmean(flow.log_prob_t(xb, cb)), -1.0)
            if not np.isfinite(nll.data):
                raise FlowError(f"flow fit diverged at step {step}")
            grads = gc.differentiate(tape, nll, params)
            gc.adam_step(params, grads, state,
                         gc.cosine_lr(step, total_steps, lr, lr_min))
            epoch_nll += float(nll.data) * len(idx)
            seen += len(idx)
            step += 1
        final_nll = epoch_nll / seen
        if log is not None:
            log({"phase": "flow", "epoch": epoch, "nll": round(final_nll, 6)})
    return final_nll


def density_thresholds(flow: Flow, X: np.ndarray, y: np.ndarray
                       ) -> DensityThresholds:
    """Median train log density, globally and per class, from a frozen flow."""
    lp = flow.log_prob(X, y)
    y = np.asarray(y, dtype=np.int64)
    per_class = np.empty(flow.n_classes)
    for c in range(flow.n_classes):
        vals = lp[y == c]
        per_class[c] = np.median(vals) if vals.size else np.median(lp)
    return DensityThresholds(float(np.median(lp)), per_class)
