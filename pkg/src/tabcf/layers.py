"""Small neural-network building blocks on top of the autodiff tape.

Modules own their parameter tensors, expose them via ``parameters()`` for
optimization and ``state_arrays()`` for serialization (parameters plus
non-trainable buffers such as batch-norm running statistics).
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import gradcore as gc


class Module:
    def parameters(self) -> list[gc.Tensor]:
        raise NotImplementedError

    def state_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        """(name, array) pairs covering everything needed to restore the module."""
        raise NotImplementedError

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, arr in self.state_arrays():
            src = arrays[name]
            if src.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{src.shape} vs {arr.shape}")
            arr[...] = src


class Linear(Module):
    """Dense layer; ``scale`` sets the He-style init width multiplier."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 name: str, scale: float = 1.0, zero_bias: bool = True):
        std = scale * np.sqrt(2.0 / in_dim)
        self.w = gc.parameter(rng.normal(0.0, std, size=(in_dim, out_dim)),
                              name=f"{name}.w")
        bias = np.zeros(out_dim) if zero_bias else rng.normal(0.0, std, size=out_dim)
        self.b = gc.parameter(bias, name=f"{name}.b")
        self.name = name

    def __call__(self, x: gc.Tensor) -> gc.Tensor:
        return gc.affine(x, self.w, self.b)

    def parameters(self):
        return [self.w, self.b]

    def state_arrays(self):
        yield f"{self.name}.w", self.w.data
        yield f"{self.name}.b", self.b.data


class BatchNorm(Module):
    def __init__(self, num_features: int, name: str,
                 momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = gc.parameter(np.ones(num_features), name=f"{name}.gamma")
        self.beta = gc.parameter(np.zeros(num_features), name=f"{name}.beta")
        self.state = gc.BatchNormState(num_features, momentum=momentum, eps=eps)
        self.name = name

    def __call__(self, x: gc.Tensor, training: bool,
                 update_running: bool | None = None) -> gc.Tensor:
        return gc.batchnorm(x, self.gamma, self.beta, self.state, training,
                            update_running)

    def parameters(self):
        return [self.gamma, self.beta]

    def state_arrays(self):
        yield f"{self.name}.gamma", self.gamma.data
        yield f"{self.name}.beta", self.beta.data
        yield f"{self.name}.running_mean", self.state.running_mean
        yield f"{self.name}.running_var", self.state.running_var


class Dropout(Module):
    """Dropout with a counter-based keyed stream: the mask for a given
    (seed, layer_id, step) triple is the same no matter what ran before it."""

    def __init__(self, rate: float, seed: int, layer_id: int):
        self.rate = rate
        self.seed = seed
        self.layer_id = layer_id
        self.step = 0

    def __call__(self, x: gc.Tensor, training: bool) -> gc.Tensor:
        if not training or self.rate == 0.0:
            return x
        bit_gen = np.random.Philox(key=[self.seed, self.layer_id])
        bit_gen.advance(self.step * (1 << 16))
        self.step += 1
        return gc.dropout(x, self.rate, np.random.Generator(bit_gen))

    def parameters(self):
        return []

    def state_arrays(self):
        return iter(())
