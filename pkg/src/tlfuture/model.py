"""Now model, future model and the two future baselines.

Shapes carry a leading batch axis: frames ``[B, H, W, 3]``, representations
``[B, h, w, c]``, windows ``[B, t, H, W, 3]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .config import ModelConfig
from .layers import BatchNorm, Conv2D, ConvLSTMCell, Dense, Module
from .tensor import Tensor, as_tensor


@dataclass
class NowOutput:
    mask_probs: Tensor       # [B, H, W, c]
    measure: Tensor          # [B]
    representation: Tensor   # [B, h, w, c]


@dataclass
class FutureOutput:
    mask_probs: Tensor       # [B, t, H, W, c]
    measure: Tensor          # [B, t]
    representation: Tensor   # [B, t, h, w, c]
    attention: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return self.mask_probs.shape[1]

    def horizon(self, k: int) -> NowOutput:
        return NowOutput(self.mask_probs[:, k], self.measure[:, k], self.representation[:, k])

    @property
    def horizons(self) -> list[NowOutput]:
        return [self.horizon(k) for k in range(self.steps)]


class ResidualBlock(Module):
    def __init__(self, cin: int, cout: int, rng, stride: int = 1, dilation: int = 1):
        self.conv = Conv2D(cin, cout, 3, rng, stride=stride, dilation=dilation, bias=False)
        self.bn = BatchNorm(cout)
        self.shortcut = Conv2D(cin, cout, 1, rng, stride=stride) if (cin != cout or stride != 1) else None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        skip = self.shortcut(x) if self.shortcut is not None else x
        return ops.relu(self.bn(self.conv(x), training) + skip)


class Encoder(Module):
    """Stride-2 residual blocks down to the representation grid, one dilated block, 1x1 to classes."""

    def __init__(self, cfg: ModelConfig, rng):
        chans = cfg.encoder_channels
        self.frame_size = cfg.frame_size
        self.blocks = []
        cin = 3
        for cout in chans[:-1]:
            self.blocks.append(ResidualBlock(cin, cout, rng, stride=2))
            cin = cout
        self.blocks.append(ResidualBlock(cin, chans[-1], rng, dilation=cfg.dilation))
        self.to_classes = Conv2D(chans[-1], cfg.classes, 1, rng)

    def __call__(self, frames: Tensor, training: bool) -> Tensor:
        if frames.ndim != 4 or frames.shape[3] != 3:
            raise ValueError(f"frames must be [B,H,W,3], got {frames.shape}")
        if frames.shape[1] != self.frame_size or frames.shape[2] != self.frame_size:
            raise ValueError(f"frame size {frames.shape[1:3]} does not match the configured {self.frame_size}")
        x = frames
        for block in self.blocks:
            x = block(x, training)
        return self.to_classes(x)


class MeasureHead(Module):
    def __init__(self, cfg: ModelConfig, rng):
        if cfg.repr_size < 5:
            raise ValueError("measure head needs repr_size >= 5 for two valid 3x3 convolutions")
        f = cfg.measure_filters
        self.conv1 = Conv2D(cfg.classes, f, 3, rng, padding="valid", bias=False)
        self.bn1 = BatchNorm(f)
        self.conv2 = Conv2D(f, f, 3, rng, padding="valid", bias=False)
        self.bn2 = BatchNorm(f)
        side = cfg.repr_size - 4
        self.dense = Dense(side * side * f, 1, rng)
        self.dropout = cfg.measure_dropout

    def features(self, rep: Tensor, training: bool) -> Tensor:
        x = ops.relu(self.bn1(self.conv1(rep), training))
        return ops.relu(self.bn2(self.conv2(x), training))

    def __call__(self, rep: Tensor, training: bool, rng=None) -> tuple[Tensor, Tensor]:
        feats = self.features(rep, training)
        flat = feats.reshape(feats.shape[0], -1)
        flat = ops.dropout(flat, self.dropout, training, rng)
        return self.dense(flat).reshape(-1), feats

    def contributions(self, rep: Tensor) -> np.ndarray:
        """Per-location partial measures ``[B, h'', w'']`` (infer mode); they sum to measure - bias."""
        feats = self.features(rep, training=False).data
        w = self.dense.weight.data.reshape(feats.shape[1:])
        return (feats * w).sum(axis=-1)


def segment_head(rep: Tensor, factor: int) -> Tensor:
    return ops.softmax(ops.bilinear_upsample(rep, factor), axis=-1)


class NowModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | int = 0):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        self.measure_head = MeasureHead(cfg, rng)

    def encode(self, frames, training: bool = False) -> Tensor:
        return self.encoder(as_tensor(frames), training)

    def decode(self, rep: Tensor, training: bool = False, rng=None) -> NowOutput:
        r, _ = self.measure_head(rep, training, rng)
        return NowOutput(segment_head(rep, self.cfg.factor), r, rep)

    def __call__(self, frames, training: bool = False, rng=None) -> NowOutput:
        return self.decode(self.encode(frames, training), training, rng)

    def contribution_map(self, frames=None, rep: Tensor | None = None) -> np.ndarray:
        if rep is None:
            rep = self.encode(frames, training=False)
        return self.measure_head.contributions(rep)


# ---------------------------------------------------------------------------
# attention over the look-back window
# ---------------------------------------------------------------------------

def _attention_input(reprs: Tensor, cfg: ModelConfig) -> Tensor:
    """Stack the attended channel(s) over time: ``[B, h, w, t]`` (or ``t*c`` for all channels)."""
    B, t, h, w, c = reprs.shape
    if cfg.attention_channels == "cloud":
        return reprs[:, :, :, :, cfg.cloud_index].transpose(0, 2, 3, 1)
    return reprs.transpose(0, 2, 3, 1, 4).reshape(B, h, w, t * c)


def apply_weights(reprs: Tensor, weights: Tensor) -> Tensor:
    """Multiply each step by its weight, replicated over the class axis.

    ``weights`` is ``[B, h, w, t]`` (per pixel) or ``[B, t]`` (per step).
    """
    B, t, h, w, c = reprs.shape
    if weights.ndim == 4:
        if weights.shape[3] != t:
            raise ValueError("attention weights and inputs disagree on t")
        wt = weights.transpose(0, 3, 1, 2).reshape(B, t, h, w, 1)
    else:
        if weights.shape[1] != t:
            raise ValueError("attention weights and inputs disagree on t")
        wt = weights.reshape(B, t, 1, 1, 1)
    return reprs * wt


class SpatialConvAttention(Module):
    def __init__(self, cfg: ModelConfig, rng):
        cin = cfg.look_back * (1 if cfg.attention_channels == "cloud" else cfg.classes)
        self.cfg = cfg
        self.conv = Conv2D(cin, cfg.attention_filters, cfg.attention_kernel, rng, bias=False)
        self.bn = BatchNorm(cfg.attention_filters)
        self.dense = Dense(cfg.attention_filters, cfg.look_back, rng)

    def weights(self, reprs: Tensor, training: bool) -> Tensor:
        x = self.bn(self.conv(_attention_input(reprs, self.cfg)), training)
        return ops.softmax(self.dense(x), axis=-1)


class SpatialConvLSTMAttention(Module):
    def __init__(self, cfg: ModelConfig, rng):
        cin = 1 if cfg.attention_channels == "cloud" else cfg.classes
        self.cfg = cfg
        self.cell = ConvLSTMCell(cin, cfg.attention_filters, cfg.attention_kernel, rng)
        self.bn = BatchNorm(cfg.attention_filters)
        self.dense = Dense(cfg.attention_filters, cfg.look_back, rng)

    def weights(self, reprs: Tensor, training: bool) -> Tensor:
        if self.cfg.attention_channels == "cloud":
            ci = self.cfg.cloud_index
            seq = reprs[:, :, :, :, ci:ci + 1]
        else:
            seq = reprs
        last = self.cell.run(seq)[-1]
        return ops.softmax(self.dense(self.bn(last, training)), axis=-1)


class MeanAttention(Module):
    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        self.dense = Dense(cfg.look_back, cfg.look_back, rng)

    def weights(self, reprs: Tensor, training: bool) -> Tensor:
        cloud = reprs[:, :, :, :, self.cfg.cloud_index]
        means = cloud.mean(axis=(2, 3))
        return ops.softmax(self.dense(means), axis=-1)


ATTENTION = {
    "spatial_conv": SpatialConvAttention,
    "spatial_convlstm": SpatialConvLSTMAttention,
    "mean": MeanAttention,
}


# ---------------------------------------------------------------------------
# future model
# ---------------------------------------------------------------------------

class FutureCore(Module):
    """Stacked ConvLSTM tiers, batch norm over batch x time, per-step conv back to classes."""

    def __init__(self, cfg: ModelConfig, rng):
        self.look_back = cfg.look_back
        self.cells = []
        self.norms = []
        cin = cfg.classes
        for f in cfg.convlstm_filters:
            self.cells.append(ConvLSTMCell(cin, f, cfg.convlstm_kernel, rng))
            self.norms.append(BatchNorm(f))
            cin = f
        self.out = Conv2D(cin, cfg.classes, cfg.convlstm_kernel, rng)

    def __call__(self, reprs: Tensor, training: bool) -> Tensor:
        if reprs.ndim != 5 or reprs.shape[1] != self.look_back:
            raise ValueError(f"future core expects [B, {self.look_back}, h, w, c], got {reprs.shape}")
        x = reprs
        for cell, norm in zip(self.cells, self.norms):
            x = norm(ops.stack(cell.run(x), axis=1), training)
        B, t = x.shape[:2]
        y = self.out(x.reshape(B * t, *x.shape[2:]))
        return y.reshape(B, t, *y.shape[1:])


class FutureModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | int = 0):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        self.measure_head = MeasureHead(cfg, rng)
        variant = cfg.attention_variant
        self.attention = ATTENTION[variant](cfg, rng) if variant != "none" else None
        self.core = FutureCore(cfg, rng)
        if not cfg.train_encoder:
            self.encoder.freeze()

    def init_from_now(self, now: NowModel) -> None:
        state = now.state_dict()
        self.encoder.load_state_dict({k[len("encoder."):]: v for k, v in state.items() if k.startswith("encoder.")})
        self.measure_head.load_state_dict(
            {k[len("measure_head."):]: v for k, v in state.items() if k.startswith("measure_head.")})

    def encode_window(self, window, training: bool = False) -> Tensor:
        window = as_tensor(window)
        if window.ndim != 5 or window.shape[1] != self.cfg.look_back:
            raise ValueError(f"window must hold exactly {self.cfg.look_back} frames, got shape {window.shape}")
        B, t = window.shape[:2]
        rep = self.encoder(window.reshape(B * t, *window.shape[2:]), training and self.cfg.train_encoder)
        return rep.reshape(B, t, *rep.shape[1:])

    def predict_reprs(self, reprs: Tensor, training: bool = False) -> tuple[Tensor, Tensor | None]:
        weights = None
        if self.attention is not None:
            weights = self.attention.weights(reprs, training)
            reprs = apply_weights(reprs, weights)
        return self.core(reprs, training), weights

    def decode(self, pred: Tensor, training: bool = False, rng=None, weights: Tensor | None = None) -> FutureOutput:
        B, t = pred.shape[:2]
        flat = pred.reshape(B * t, *pred.shape[2:])
        masks = segment_head(flat, self.cfg.factor)
        r, _ = self.measure_head(flat, training, rng)
        return FutureOutput(masks.reshape(B, t, *masks.shape[1:]), r.reshape(B, t), pred,
                            None if weights is None else weights.data)

    def from_reprs(self, reprs: Tensor, training: bool = False, rng=None) -> FutureOutput:
        pred, weights = self.predict_reprs(reprs, training)
        return self.decode(pred, training, rng, weights)

    def __call__(self, window, training: bool = False, rng=None) -> FutureOutput:
        return self.from_reprs(self.encode_window(window, training), training, rng)


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def persistence_predict(now: NowModel, window, steps: int | None = None) -> FutureOutput:
    """Repeat the now-prediction of the last input frame at every horizon."""
    window = as_tensor(window)
    steps = steps or window.shape[1]
    out = now(window[:, -1], training=False)
    return _repeat(out, steps)


def _repeat(out: NowOutput, steps: int) -> FutureOutput:
    masks = np.repeat(out.mask_probs.data[:, None], steps, axis=1)
    measure = np.repeat(out.measure.data[:, None], steps, axis=1)
    reps = np.repeat(out.representation.data[:, None], steps, axis=1)
    return FutureOutput(Tensor(masks), Tensor(measure), Tensor(reps))


class NextReprNet(Module):
    """Feed-forward next-representation model over the last ``k`` representations (residual)."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | int = 0):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.context = cfg.ar_context
        k, c, f = cfg.ar_context, cfg.classes, cfg.ar_filters
        self.conv1 = Conv2D(k * c, f, 5, rng)
        self.conv2 = Conv2D(f, f, 5, rng)
        self.conv3 = Conv2D(f, c, 5, rng)

    def __call__(self, context: Tensor) -> Tensor:
        """``context`` is ``[B, k, h, w, c]``; returns the next ``[B, h, w, c]``."""
        B, k, h, w, c = context.shape
        if k != self.context:
            raise ValueError(f"expected {self.context} context steps, got {k}")
        x = context.transpose(0, 2, 3, 1, 4).reshape(B, h, w, k * c)
        x = ops.relu(self.conv1(x))
        x = ops.relu(self.conv2(x))
        return context[:, -1] + self.conv3(x)


def autoregressive_rollout(reprs: Tensor, next_fn: Callable[[Tensor], Tensor], context: int, steps: int) -> Tensor:
    """Predict ``steps`` representations, feeding each prediction back as input."""
    if reprs.shape[1] < context:
        raise ValueError(f"window shorter than the autoregressive context {context}")
    history = [reprs[:, i] for i in range(reprs.shape[1] - context, reprs.shape[1])]
    preds = []
    for _ in range(steps):
        nxt = next_fn(ops.stack(history[-context:], axis=1))
        preds.append(nxt)
        history.append(nxt)
    return ops.stack(preds, axis=1)


def autoregressive_predict(now: NowModel, net: NextReprNet | Callable[[Tensor], Tensor], window,
                           context: int | None = None, steps: int | None = None) -> FutureOutput:
    window = as_tensor(window)
    B, t = window.shape[:2]
    steps = steps or t
    context = context or getattr(net, "context", 1)
    reps = now.encode(window.reshape(B * t, *window.shape[2:]))
    reps = reps.reshape(B, t, *reps.shape[1:])
    pred = autoregressive_rollout(reps, net, context, steps)
    flat = pred.reshape(B * steps, *pred.shape[2:])
    out = now.decode(flat)
    return FutureOutput(out.mask_probs.reshape(B, steps, *out.mask_probs.shape[1:]),
                        out.measure.reshape(B, steps), pred)
