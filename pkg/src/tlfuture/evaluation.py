"""Now and horizon-wise future evaluation, with the persistence and autoregressive baselines."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .metrics import MetricsAccumulator, MetricsReport
from .model import FutureModel, FutureOutput, NextReprNet, NowModel, autoregressive_rollout
from .synth import STEP_MINUTES, VideoSequence
from .tensor import Tensor
from .training import WindowSet, encode_frames, stack_frames


def labels_of(probs) -> np.ndarray:
    data = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return np.argmax(data, axis=-1)


def evaluate_now(now: NowModel, seqs: Sequence[VideoSequence], batch: int = 32) -> MetricsReport:
    frames, masks, irr = stack_frames(seqs)
    if len(frames) == 0:
        raise ValueError("empty evaluation set")
    acc = MetricsAccumulator(now.cfg.classes, 1, STEP_MINUTES)
    for i in range(0, len(frames), batch):
        out = now(Tensor(frames[i:i + batch]), training=False)
        acc.update(0, labels_of(out.mask_probs), masks[i:i + batch], out.measure.data, irr[i:i + batch])
    return acc.report(first_horizon_min=0)


def _accumulate(acc: MetricsAccumulator, out: FutureOutput, masks: np.ndarray, irr: np.ndarray) -> None:
    labels = labels_of(out.mask_probs)
    for h in range(out.steps):
        acc.update(h, labels[:, h], masks[:, h], out.measure.data[:, h], irr[:, h])


def decode_reprs(now: NowModel, pred: np.ndarray) -> FutureOutput:
    B, t = pred.shape[:2]
    out = now.decode(Tensor(pred.reshape(B * t, *pred.shape[2:])))
    return FutureOutput(out.mask_probs.reshape(B, t, *out.mask_probs.shape[1:]), out.measure.reshape(B, t),
                        Tensor(pred))


def evaluate_future(model: FutureModel | None, now: NowModel, seqs: Sequence[VideoSequence],
                    ar_net: NextReprNet | Callable | None = None, baselines: bool = True,
                    batch: int = 8, windows: WindowSet | None = None) -> dict[str, MetricsReport]:
    """Score every horizon separately on all ``2t`` windows of ``seqs``.

    Returns reports keyed ``model``, ``persistence`` and ``autoregressive``
    (the latter two when ``baselines`` is set; autoregressive needs ``ar_net``).
    """
    cfg = now.cfg
    t = cfg.look_back
    if windows is None:
        windows = WindowSet(seqs, t)
    if len(windows) == 0:
        raise ValueError("empty evaluation set")
    now_reprs = [encode_frames(now, s.frames) for s in windows.seqs]
    model_reprs = [encode_frames(model, s.frames) for s in windows.seqs] if model is not None else None
    accs: dict[str, MetricsAccumulator] = {}
    if model is not None:
        accs["model"] = MetricsAccumulator(cfg.classes, t, STEP_MINUTES)
    if baselines:
        accs["persistence"] = MetricsAccumulator(cfg.classes, t, STEP_MINUTES)
        if ar_net is not None:
            accs["autoregressive"] = MetricsAccumulator(cfg.classes, t, STEP_MINUTES)
    for start in range(0, len(windows), batch):
        ids = list(range(start, min(start + batch, len(windows))))
        pairs = [windows.index[k] for k in ids]
        masks, irr = windows.targets(ids)
        if model is not None:
            reps = np.stack([model_reprs[i][s:s + t] for i, s in pairs])
            _accumulate(accs["model"], model.from_reprs(Tensor(reps), training=False), masks, irr)
        if baselines:
            reps = np.stack([now_reprs[i][s:s + t] for i, s in pairs])
            last = np.repeat(reps[:, -1:], t, axis=1)
            _accumulate(accs["persistence"], decode_reprs(now, last), masks, irr)
            if ar_net is not None:
                context = getattr(ar_net, "context", 1)
                pred = autoregressive_rollout(Tensor(reps), ar_net, context, t).data
                _accumulate(accs["autoregressive"], decode_reprs(now, pred), masks, irr)
    return {name: acc.report() for name, acc in accs.items()}


def evaluate(model, seqs: Sequence[VideoSequence], protocol: str = "now", now: NowModel | None = None,
             ar_net=None, baselines: bool = True):
    if protocol == "now":
        return evaluate_now(model, seqs)
    if protocol == "future":
        if now is None:
            raise ValueError("future protocol needs the now model for the baselines")
        return evaluate_future(model, now, seqs, ar_net, baselines)
    raise ValueError(f"unknown protocol {protocol!r}")
