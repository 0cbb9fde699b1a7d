"""Adam with decoupled weight decay, and the per-epoch learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .config import TrainConfig
from .tensor import Tensor

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Geometric decay ``base_lr * lr_decay ** epoch``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.base_lr * cfg.lr_decay ** epoch


def is_decayable(name: str) -> bool:
    """Only convolution kernels carry weight decay."""
    return name.endswith("kernel")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    steps: dict[str, int] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState, lr: float,
              weight_decay: float = 0.0, beta1: float = BETA1, beta2: float = BETA2, eps: float = EPS) -> AdamState:
    """In-place bias-corrected Adam update.

    A parameter whose gradient is identically zero keeps its moments and step
    count and only receives weight decay, so parameters outside the current
    loss stay where they are.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} does not match parameter {p.shape}")
        decay = weight_decay if is_decayable(name) else 0.0
        if not g.any():
            if decay:
                p.data = p.data - lr * decay * p.data
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m, v = np.zeros_like(p.data), np.zeros_like(p.data)
        t = state.steps.get(name, 0) + 1
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        update = m_hat / (np.sqrt(v_hat) + eps)
        if decay:
            update = update + decay * p.data
        p.data = p.data - lr * update
        state.m[name], state.v[name], state.steps[name] = m, v, t
    return state
