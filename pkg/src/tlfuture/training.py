"""Training loops for the now model, the future model and the autoregressive baseline."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import checkpoint
from .config import ModelConfig, TrainConfig
from .layers import Module
from .losses import LossTerms, loss_terms
from .model import FutureModel, NextReprNet, NowModel
from .optim import AdamState, adam_step, lr_schedule
from .synth import VideoSequence
from .tensor import Tensor, backward

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "lr", "total_loss", "segment_loss", "measure_loss")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: Module
    log: list[tuple] = field(default_factory=list)

    def log_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for epoch, step, lr, total, seg, meas in self.log:
            writer.writerow([epoch, step, repr(lr), repr(total), repr(seg), repr(meas)])
        return buf.getvalue()

    def epoch_means(self) -> list[float]:
        epochs = sorted({row[0] for row in self.log})
        return [float(np.mean([row[3] for row in self.log if row[0] == e])) for e in epochs]

    def checkpoint_bytes(self) -> bytes:
        return checkpoint.dumps(self.model.state_dict())


def make_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent generators for parameter init, data order and dropout."""
    init, order, drop = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(order), np.random.default_rng(drop)


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _step(model: Module, terms, epoch: int, step: int, lr: float, state: AdamState, cfg: TrainConfig,
          where: str) -> tuple:
    total = terms.total.item()
    if not np.isfinite(total):
        raise TrainingError(f"non-finite loss at {where}")
    params = model.trainable()
    grads = backward(terms.total, params)
    adam_step(params, grads, state, lr, cfg.weight_decay)
    return (epoch, step, lr, total, terms.segment.item(), terms.measure.item())


def _guarded(fn, where: str):
    try:
        return fn()
    except FloatingPointError as exc:
        raise TrainingError(f"non-finite value at {where}: {exc}") from exc


# ---------------------------------------------------------------------------
# now model
# ---------------------------------------------------------------------------

def stack_frames(seqs: Sequence[VideoSequence]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    frames = np.concatenate([s.frames for s in seqs])
    masks = np.concatenate([s.masks for s in seqs])
    irr = np.concatenate([s.irradiance for s in seqs])
    return frames, masks, irr


def train_now(seqs: Sequence[VideoSequence], model_cfg: ModelConfig, cfg: TrainConfig,
              model: NowModel | None = None) -> TrainResult:
    frames, masks, irr = stack_frames(seqs)
    if len(frames) == 0:
        raise TrainingError("empty training set")
    init_rng, order_rng, drop_rng = make_rngs(cfg.seed)
    model = model or NowModel(model_cfg, init_rng)
    state = AdamState()
    result = TrainResult(model)
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        for step, idx in enumerate(_batches(len(frames), cfg.batch_size, order_rng)):
            where = f"epoch {epoch} step {step} (frames {idx.tolist()})"

            def run():
                out = model(Tensor(frames[idx]), training=True, rng=drop_rng)
                terms = loss_terms(out.mask_probs, masks[idx], out.measure, irr[idx], cfg.loss)
                return _step(model, terms, epoch, step, lr, state, cfg, where)

            result.log.append(_guarded(run, where))
        log.info("now epoch %d mean loss %.6f", epoch, result.epoch_means()[-1])
    return result


# ---------------------------------------------------------------------------
# windows over sequences
# ---------------------------------------------------------------------------

@dataclass
class WindowSet:
    """All ``2 * look_back`` windows of a list of sequences, with cached representations."""

    seqs: Sequence[VideoSequence]
    look_back: int
    index: list[tuple[int, int]] = field(default_factory=list)
    reprs: list[np.ndarray] | None = None

    def __post_init__(self):
        if not self.index:
            span = 2 * self.look_back
            self.index = [(i, s) for i, seq in enumerate(self.seqs) for s in range(len(seq) - span + 1)]

    def __len__(self) -> int:
        return len(self.index)

    def encode(self, now: NowModel | FutureModel, batch: int = 32) -> "WindowSet":
        """Cache infer-mode representations of every frame."""
        self.reprs = [encode_frames(now, seq.frames, batch) for seq in self.seqs]
        return self

    def inputs(self, ids) -> np.ndarray:
        t = self.look_back
        return np.stack([self.seqs[i].frames[s:s + t] for i, s in (self.index[k] for k in ids)])

    def input_reprs(self, ids) -> np.ndarray:
        t = self.look_back
        return np.stack([self.reprs[i][s:s + t] for i, s in (self.index[k] for k in ids)])

    def targets(self, ids) -> tuple[np.ndarray, np.ndarray]:
        t = self.look_back
        pairs = [self.index[k] for k in ids]
        masks = np.stack([self.seqs[i].masks[s + t:s + 2 * t] for i, s in pairs])
        irr = np.stack([self.seqs[i].irradiance[s + t:s + 2 * t] for i, s in pairs])
        return masks, irr


def encode_frames(model, frames: np.ndarray, batch: int = 32) -> np.ndarray:
    out = [model.encoder(Tensor(frames[i:i + batch]), False).data for i in range(0, len(frames), batch)]
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# future model
# ---------------------------------------------------------------------------

def train_future(seqs: Sequence[VideoSequence], now: NowModel, model_cfg: ModelConfig, cfg: TrainConfig,
                 windows: WindowSet | None = None) -> TrainResult:
    """Train attention + ConvLSTM stack + heads on horizon-averaged loss.

    The encoder (and measure head) start from ``now``; the encoder stays frozen
    unless ``model_cfg.train_encoder``.
    """
    if windows is None:
        windows = WindowSet(seqs, model_cfg.look_back)
    if len(windows) == 0:
        raise TrainingError(f"no windows of {2 * model_cfg.look_back} consecutive frames")
    init_rng, order_rng, drop_rng = make_rngs(cfg.seed)
    model = FutureModel(model_cfg, init_rng)
    model.init_from_now(now)
    frozen = not model_cfg.train_encoder
    if frozen and windows.reprs is None:
        windows.encode(model)
    state = AdamState()
    result = TrainResult(model)
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        for step, ids in enumerate(_batches(len(windows), cfg.batch_size, order_rng)):
            where = f"epoch {epoch} step {step} (windows {ids.tolist()})"

            def run():
                if frozen:
                    reprs = Tensor(windows.input_reprs(ids))
                else:
                    reprs = model.encode_window(Tensor(windows.inputs(ids)), training=True)
                out = model.from_reprs(reprs, training=True, rng=drop_rng)
                masks, irr = windows.targets(ids)
                terms = loss_terms(out.mask_probs, masks, out.measure, irr, cfg.loss)
                return _step(model, terms, epoch, step, lr, state, cfg, where)

            result.log.append(_guarded(run, where))
        log.info("future[%s] epoch %d mean loss %.6f", model_cfg.attention_variant, epoch, result.epoch_means()[-1])
    return result


# ---------------------------------------------------------------------------
# autoregressive baseline
# ---------------------------------------------------------------------------

def train_autoregressive(seqs: Sequence[VideoSequence], now: NowModel, model_cfg: ModelConfig,
                         cfg: TrainConfig, reprs: list[np.ndarray] | None = None) -> TrainResult:
    """Fit the next-representation net on (k last reprs -> next repr) pairs, mean squared error."""
    reprs = reprs if reprs is not None else [encode_frames(now, s.frames) for s in seqs]
    k = model_cfg.ar_context
    pairs = [(i, j) for i, r in enumerate(reprs) for j in range(k - 1, len(r) - 1)]
    if not pairs:
        raise TrainingError("sequences too short for autoregressive pairs")
    init_rng, order_rng, _ = make_rngs(cfg.seed)
    net = NextReprNet(model_cfg, init_rng)
    state = AdamState()
    result = TrainResult(net)
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        for step, ids in enumerate(_batches(len(pairs), cfg.batch_size, order_rng)):
            where = f"epoch {epoch} step {step}"
            ctx = np.stack([reprs[pairs[q][0]][pairs[q][1] - k + 1:pairs[q][1] + 1] for q in ids])
            tgt = np.stack([reprs[pairs[q][0]][pairs[q][1] + 1] for q in ids])

            def run():
                diff = net(Tensor(ctx)) - Tensor(tgt)
                mse = (diff * diff).mean()
                return _step(net, LossTerms(mse, Tensor(0.0), mse), epoch, step, lr, state, cfg, where)

            result.log.append(_guarded(run, where))
    return result


def load_model(cls, model_cfg: ModelConfig, blob: bytes):
    model = cls(model_cfg, 0)
    model.load_state_dict(checkpoint.loads(blob))
    return model
