"""Parameterised layers and a small module container."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Attribute-walking container for parameters and batch-norm buffers.

    Parameter names follow attribute paths (``blocks.0.conv.kernel``) in
    definition order, which keeps checkpoints byte-stable.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, ops.RunningStats]]:
        for name, value in vars(self).items():
            if isinstance(value, ops.RunningStats):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def trainable(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.named_parameters() if v.requires_grad}

    def freeze(self) -> None:
        for _, p in self.named_parameters():
            p.requires_grad = False

    def unfreeze(self) -> None:
        for _, p in self.named_parameters():
            p.requires_grad = True

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, stats in self.named_buffers():
            state[f"{name}.mean"] = stats.mean.copy()
            state[f"{name}.var"] = stats.var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        expected = set()
        for name, p in self.named_parameters():
            expected.add(name)
            if name in state:
                _assign(p, state[name], name)
            elif strict:
                raise KeyError(f"missing parameter {name}")
        for name, stats in self.named_buffers():
            expected.update((f"{name}.mean", f"{name}.var"))
            if f"{name}.mean" in state:
                stats.mean = np.array(state[f"{name}.mean"], dtype=np.float64)
                stats.var = np.array(state[f"{name}.var"], dtype=np.float64)
            elif strict:
                raise KeyError(f"missing buffer {name}")
        if strict:
            extra = set(state) - expected
            if extra:
                raise KeyError(f"unexpected entries {sorted(extra)}")


def _assign(p: Tensor, value: np.ndarray, name: str) -> None:
    value = np.asarray(value, dtype=np.float64)
    if value.shape != p.shape:
        raise ValueError(f"{name}: shape {value.shape} does not match {p.shape}")
    p.data = value.copy()


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    return Tensor(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Conv2D(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1,
                 dilation: int = 1, padding: str = "same", bias: bool = True):
        self.kernel = he_normal(rng, (k, k, cin, cout), k * k * cin)
        # a bias feeding batch norm is cancelled by the mean subtraction
        self.bias = zeros((cout,)) if bias else None
        self.stride, self.dilation, self.padding = stride, dilation, padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.kernel, self.bias, self.stride, self.dilation, self.padding)


class BatchNorm(Module):
    def __init__(self, channels: int):
        self.scale = Tensor(np.ones(channels), requires_grad=True)
        self.shift = zeros((channels,))
        self.running = ops.RunningStats.init(channels)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.batch_norm(x, self.scale, self.shift, self.running, training)


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = he_normal(rng, (n_out, n_in), n_in)
        self.bias = zeros((n_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.weight, self.bias)


class ConvLSTMCell(Module):
    """Convolutional LSTM step with separate input and recurrent kernels.

    Gate order along the output channels is input, forget, output, candidate.
    """

    def __init__(self, cin: int, filters: int, k: int, rng: np.random.Generator):
        self.filters = filters
        self.kernel = he_normal(rng, (k, k, cin, 4 * filters), k * k * (cin + filters))
        self.recurrent_kernel = he_normal(rng, (k, k, filters, 4 * filters), k * k * (cin + filters))
        bias = np.zeros(4 * filters)
        bias[filters:2 * filters] = 1.0
        self.bias = Tensor(bias, requires_grad=True)

    def input_gates(self, x: Tensor) -> Tensor:
        """Input-side pre-activations (bias included); batched over any leading axis."""
        return ops.conv2d(x, self.kernel, self.bias)

    def step(self, x_gates: Tensor, state: tuple[Tensor, Tensor] | None) -> tuple[Tensor, Tensor]:
        """Advance one step from precomputed input gates; returns ``(hidden, cell)``."""
        if state is None:
            z = x_gates
        else:
            h_prev, c_prev = state
            if h_prev.shape[:3] != x_gates.shape[:3] or h_prev.shape[3] != self.filters:
                raise ValueError("ConvLSTM state shape does not match the input")
            z = x_gates + ops.conv2d(h_prev, self.recurrent_kernel)
        i, f, o, g = ops.split(z, 4, axis=-1)
        i, f, o, g = ops.sigmoid(i), ops.sigmoid(f), ops.sigmoid(o), ops.tanh(g)
        if state is None:
            c = i * g
        else:
            c = f * state[1] + i * g
        h = o * ops.tanh(c)
        return h, c

    def __call__(self, x: Tensor, state: tuple[Tensor, Tensor] | None) -> tuple[Tensor, Tensor]:
        return self.step(self.input_gates(x), state)

    def run(self, xs: Tensor) -> list[Tensor]:
        """Unroll over ``xs`` shaped ``[B, T, h, w, C]``; returns the T hidden states."""
        B, T = xs.shape[:2]
        gates = self.input_gates(xs.reshape(B * T, *xs.shape[2:]))
        gates = gates.reshape(B, T, *gates.shape[1:])
        state = None
        hidden = []
        for t in range(T):
            state = self.step(gates[:, t], state)
            hidden.append(state[0])
        return hidden
