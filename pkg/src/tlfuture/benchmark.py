"""Seed-pinned synthetic benchmark comparing future models against the baselines.

200 training and 50 test sequences of 12 frames (one 6-in/6-out window
each) with 64x64 frames, 3 px/step advection along one of four axis
directions per sequence, and blob radius 6.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

from .config import ModelConfig, SynthConfig, TrainConfig
from .evaluation import evaluate_future, evaluate_now
from .metrics import MetricsReport
from .model import NowModel
from .synth import VideoSequence, synth_collection
from .training import WindowSet, train_autoregressive, train_future, train_now

log = logging.getLogger(__name__)

BENCH_SYNTH = SynthConfig(seed=11, direction="axis4", velocity=(3.0, 0.0), radius=6.0)
TEST_SEED = 12
# single-core budget: the ConvLSTM tiers are a quarter of the full-size widths
BENCH_MODEL = ModelConfig(convlstm_filters=(32, 16, 16), attention_filters=16)


def benchmark_data(train: int = 200, test: int = 50,
                   synth: SynthConfig = BENCH_SYNTH) -> tuple[list[VideoSequence], list[VideoSequence]]:
    return synth_collection(synth, train), synth_collection(replace(synth, seed=TEST_SEED), test)


@dataclass
class BenchmarkResult:
    now: MetricsReport
    future: dict[str, MetricsReport] = field(default_factory=dict)
    persistence: MetricsReport | None = None
    autoregressive: MetricsReport | None = None
    seconds: dict[str, float] = field(default_factory=dict)

    def mean_cloud_iou(self, name: str) -> float:
        rows = self.future[name].cloud_iou()
        return sum(rows) / len(rows)


def train_now_model(train: list[VideoSequence], epochs: int = 5, seed: int = 0,
                    model_cfg: ModelConfig = BENCH_MODEL) -> NowModel:
    return train_now(train, model_cfg, TrainConfig(epochs=epochs, seed=seed)).model


def run_benchmark(now_epochs: int = 5, future_epochs: int = 15, variants=("none", "spatial_conv"),
                  seed: int = 0, model_cfg: ModelConfig = BENCH_MODEL,
                  data: tuple[list, list] | None = None) -> BenchmarkResult:
    train, test = data if data is not None else benchmark_data()
    seconds = {}
    t0 = time.perf_counter()
    now = train_now_model(train, now_epochs, seed, model_cfg)
    seconds["now"] = time.perf_counter() - t0
    result = BenchmarkResult(evaluate_now(now, test), seconds=seconds)

    train_windows = WindowSet(train, model_cfg.look_back).encode(now)
    test_windows = WindowSet(test, model_cfg.look_back)
    t0 = time.perf_counter()
    ar = train_autoregressive(train, now, model_cfg, TrainConfig(epochs=future_epochs, seed=seed),
                              reprs=train_windows.reprs).model
    seconds["autoregressive"] = time.perf_counter() - t0

    for i, variant in enumerate(variants):
        t0 = time.perf_counter()
        cfg = replace(model_cfg, attention_variant=variant)
        model = train_future(train, now, cfg, TrainConfig(epochs=future_epochs, seed=seed),
                             windows=train_windows).model
        seconds[variant] = time.perf_counter() - t0
        reports = evaluate_future(model, now, test, ar_net=ar, baselines=i == 0, windows=test_windows)
        result.future[variant] = reports["model"]
        if i == 0:
            result.persistence = reports["persistence"]
            result.autoregressive = reports["autoregressive"]
        log.info("benchmark %s cloud IoU %s", variant, [round(v, 4) for v in reports["model"].cloud_iou()])
    return result
