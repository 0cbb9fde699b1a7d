"""Segmentation and measure losses.

Mask losses take predicted class probabilities ``[..., c]`` and either
integer labels ``[...]`` or a one-hot array of the same shape as the
prediction. All pixel reductions are means.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import ops
from .config import LossConfig
from .tensor import Tensor, as_tensor

CLIP = 1e-7


def _one_hot_target(pred: Tensor, target) -> np.ndarray:
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    c = pred.shape[-1]
    if target.shape == pred.shape:
        ok = np.isin(target, (0.0, 1.0)).all() and np.all(target.sum(axis=-1) == 1.0)
        if not ok:
            raise ValueError("target is not one-hot")
        return target.astype(np.float64)
    if target.shape == pred.shape[:-1]:
        if not np.issubdtype(target.dtype, np.integer) and not np.all(target == np.round(target)):
            raise ValueError("label target must hold integers")
        return ops.one_hot(target.astype(np.int64), c)
    raise ValueError(f"target shape {target.shape} does not fit prediction {pred.shape}")


def cross_entropy(pred: Tensor, target) -> Tensor:
    onehot = _one_hot_target(pred, target)
    p = ops.clip(pred, CLIP, 1.0 - CLIP)
    return -(ops.log(p) * onehot).sum(axis=-1).mean()


def focal_loss(pred: Tensor, target, gamma: float = 2.0, alpha: float = 0.5, form: str = "canonical") -> Tensor:
    """Alpha-balanced focal loss ``-alpha (1 - p_t)^gamma log p_t`` averaged over pixels.

    ``form="as_printed"`` evaluates ``-alpha x^gamma log x' + (1 - x)^gamma log(1 - x')``
    literally per class (kept for ablation; it is not bounded below).
    """
    onehot = _one_hot_target(pred, target)
    p = ops.clip(pred, CLIP, 1.0 - CLIP)
    if form == "canonical":
        p_t = (p * onehot).sum(axis=-1)
        if gamma == 0.0:
            return -(ops.log(p_t) * alpha).mean()
        return -((1.0 - p_t) ** gamma * ops.log(p_t) * alpha).mean()
    if form == "as_printed":
        pos = np.power(onehot, gamma)
        neg = np.power(1.0 - onehot, gamma)
        per_class = ops.log(p) * (-alpha * pos) + ops.log(1.0 - p) * neg
        return per_class.sum(axis=-1).mean()
    raise ValueError(f"unknown focal form {form!r}")


def combined_loss(pred: Tensor, target, cfg: LossConfig) -> Tensor:
    return focal_loss(pred, target, cfg.gamma, cfg.alpha, cfg.focal_form) + cross_entropy(pred, target)


def logcosh_loss(r_pred, r_true, m: float = 100.0) -> Tensor:
    """Mean of ``log(m cosh(r_pred - r_true))``; minimum ``log m`` at zero error."""
    delta = as_tensor(r_pred) - as_tensor(r_true)
    return ops.logcosh(delta, m).mean()


class LossTerms(NamedTuple):
    total: Tensor
    segment: Tensor
    measure: Tensor


def loss_terms(mask_pred: Tensor, mask_true, r_pred, r_true, cfg: LossConfig) -> LossTerms:
    seg = combined_loss(mask_pred, mask_true, cfg)
    meas = logcosh_loss(r_pred, r_true, cfg.m)
    return LossTerms(seg * cfg.lam + meas, seg, meas)


def total_loss(mask_pred: Tensor, mask_true, r_pred, r_true, cfg: LossConfig) -> Tensor:
    """``lam * (focal + CE) + logcosh``.

    With a horizon axis in the inputs (``[B, t, ...]``) every reduction is a
    mean, so the result is the horizon average.
    """
    return loss_terms(mask_pred, mask_true, r_pred, r_true, cfg).total


def calibrate_lambda(mask_pred: Tensor, mask_true, r_pred, r_true, cfg: LossConfig) -> float:
    """Weight that makes both task terms equal on one batch."""
    seg = combined_loss(mask_pred, mask_true, cfg).item()
    meas = logcosh_loss(r_pred, r_true, cfg.m).item()
    return meas / seg if seg > 0 else cfg.lam
