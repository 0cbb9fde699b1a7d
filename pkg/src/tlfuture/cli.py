"""Command-line entry point: ``tlfuture <command> [--config FILE] [--key value ...] --out DIR``.

Settings resolve in increasing priority: built-in defaults, ``TLF_SEED``,
the ``--config`` file, then individual ``--key value`` flags. Every run
writes ``manifest.json`` into its ``--out`` directory and nothing outside it.
Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__, checkpoint, config
from .config import ConfigError, ModelConfig, SynthConfig, TrainConfig
from .dataio import (DatasetError, encode_pnm, read_collection, read_dataset, write_collection)
from .model import FutureModel, NextReprNet, NowModel, persistence_predict
from .synth import STEP_MINUTES, synth_collection
from .tensor import Tensor

log = logging.getLogger("tlfuture")

ATTENTION_FLAGS = {"none": "none", "mean": "mean", "spatial-conv": "spatial_conv",
                   "spatial-convlstm": "spatial_convlstm"}
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# settings
# ---------------------------------------------------------------------------

def _field_names(cls) -> set[str]:
    return set(config.flatten(cls()))


def parse_overrides(extra: Sequence[str]) -> dict[str, str]:
    """``--key value`` / ``--key=value`` pairs left over by argparse."""
    out: dict[str, str] = {}
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--") or len(token) == 2:
            raise UsageError(f"unexpected argument {token!r}")
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"flag --{key} needs a value")
            value = extra[i + 1]
            i += 2
        out[key.replace("-", "_")] = value
    return out


def resolve(classes: Sequence[type], args, extra: Sequence[str], bases: dict[type, Any] | None = None) -> list:
    """Build one config per class from defaults/bases, TLF_SEED, the config file and flags."""
    known = [_field_names(cls) for cls in classes]
    values: dict[str, str] = {}
    seed = os.environ.get("TLF_SEED")
    if seed is not None and any("seed" in names for names in known):
        values["seed"] = seed
    if args.config:
        try:
            values.update(config.parse_text(Path(args.config).read_text(encoding="utf-8")))
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    values.update(parse_overrides(extra))
    unknown = sorted(k for k in values if not any(k in names for names in known))
    if unknown:
        raise UsageError(f"unknown setting(s): {', '.join(unknown)}")
    out = []
    for cls, names in zip(classes, known):
        base = config.flatten(bases[cls]) if bases and cls in bases else {}
        mine = {k: v for k, v in values.items() if k in names}
        out.append(config.build(cls, {**base, **mine}))
    return out


# ---------------------------------------------------------------------------
# run directories
# ---------------------------------------------------------------------------

def _flat_strings(*cfgs) -> dict[str, str]:
    flat: dict[str, str] = {}
    for cfg in cfgs:
        flat.update({k: config.format_value(v) for k, v in config.flatten(cfg).items()})
    return flat


def write_manifest(out: Path, command: str, cfgs: Sequence, seed: int | None, inputs: dict[str, str],
                   started: str) -> None:
    outputs = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file() and p.name != MANIFEST)
    manifest = {
        "command": command,
        "config": _flat_strings(*cfgs),
        "seed": seed,
        "version": __version__,
        "inputs": inputs,
        "outputs": outputs,
        "started": started,
        "finished": _now(),
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def load_run(run: Path, cls):
    """Model of type ``cls`` from a training run directory."""
    cfg = config.load(ModelConfig, run / "model.cfg")
    model = cls(cfg, 0)
    model.load_state_dict(checkpoint.load(run / "model.tlf"))
    return model


def read_sequences(path: Path, classes: int):
    if (path / "meta.csv").exists():
        return [read_dataset(path, classes)]
    seqs = read_collection(path, classes)
    if not seqs:
        raise DatasetError(f"no sequences under {path}")
    return seqs


def _save_training(out: Path, result, model_cfg: ModelConfig, train_cfg: TrainConfig) -> None:
    checkpoint.save(out / "model.tlf", result.model.state_dict())
    config.save(model_cfg, out / "model.cfg")
    config.save(train_cfg, out / "train.cfg")
    (out / "loss_log.csv").write_text(result.log_csv(), encoding="utf-8")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args, extra) -> int:
    (cfg,) = resolve([SynthConfig], args, extra)
    out = Path(args.out)
    started = _now()
    out.mkdir(parents=True, exist_ok=True)
    write_collection(synth_collection(cfg, args.count), out)
    config.save(cfg, out / "synth.cfg")
    write_manifest(out, "synth", [cfg], cfg.seed, {}, started)
    return 0


def cmd_train_now(args, extra) -> int:
    from .training import train_now
    model_cfg, train_cfg = resolve([ModelConfig, TrainConfig], args, extra)
    seqs = read_sequences(Path(args.data), model_cfg.classes)
    out = Path(args.out)
    started = _now()
    out.mkdir(parents=True, exist_ok=True)
    _save_training(out, train_now(seqs, model_cfg, train_cfg), model_cfg, train_cfg)
    write_manifest(out, "train-now", [model_cfg, train_cfg], train_cfg.seed, {"data": args.data}, started)
    return 0


def cmd_train_future(args, extra) -> int:
    from .training import train_future
    now_dir = Path(args.now)
    base = config.load(ModelConfig, now_dir / "model.cfg")
    model_cfg, train_cfg = resolve([ModelConfig, TrainConfig], args, extra, {ModelConfig: base})
    if args.attention is not None:
        model_cfg = dataclasses.replace(model_cfg, attention_variant=ATTENTION_FLAGS[args.attention])
    now = load_run(now_dir, NowModel)
    seqs = read_sequences(Path(args.data), model_cfg.classes)
    out = Path(args.out)
    started = _now()
    out.mkdir(parents=True, exist_ok=True)
    _save_training(out, train_future(seqs, now, model_cfg, train_cfg), model_cfg, train_cfg)
    write_manifest(out, "train-future", [model_cfg, train_cfg], train_cfg.seed,
                   {"data": args.data, "now": args.now}, started)
    return 0


def cmd_train_ar(args, extra) -> int:
    from .training import train_autoregressive
    now_dir = Path(args.now)
    base = config.load(ModelConfig, now_dir / "model.cfg")
    model_cfg, train_cfg = resolve([ModelConfig, TrainConfig], args, extra, {ModelConfig: base})
    now = load_run(now_dir, NowModel)
    seqs = read_sequences(Path(args.data), model_cfg.classes)
    out = Path(args.out)
    started = _now()
    out.mkdir(parents=True, exist_ok=True)
    _save_training(out, train_autoregressive(seqs, now, model_cfg, train_cfg), model_cfg, train_cfg)
    write_manifest(out, "train-ar", [model_cfg, train_cfg], train_cfg.seed,
                   {"data": args.data, "now": args.now}, started)
    return 0


def cmd_eval(args, extra) -> int:
    from .evaluation import evaluate_future, evaluate_now
    if extra or args.config:
        resolve([], args, extra)  # evaluation takes no settings; reject stray flags
    out = Path(args.out)
    inputs = {"data": args.data}
    if args.protocol == "now":
        if not args.model:
            raise UsageError("eval --protocol now needs --model")
        now = load_run(Path(args.model), NowModel)
        seqs = read_sequences(Path(args.data), now.cfg.classes)
        reports = {"metrics": evaluate_now(now, seqs)}
        inputs["model"] = args.model
    else:
        if not args.now:
            raise UsageError("eval --protocol future needs --now (the now-model run)")
        if not args.model and not args.baselines:
            raise UsageError("eval --protocol future needs --model and/or --baselines")
        now = load_run(Path(args.now), NowModel)
        model = load_run(Path(args.model), FutureModel) if args.model else None
        ar = load_run(Path(args.ar), NextReprNet) if args.ar else None
        seqs = read_sequences(Path(args.data), now.cfg.classes)
        found = evaluate_future(model, now, seqs, ar_net=ar, baselines=args.baselines)
        reports = {("metrics" if k == "model" else k): v for k, v in found.items()}
        inputs.update({k: v for k, v in (("model", args.model), ("now", args.now), ("ar", args.ar)) if v})
    started = _now()
    out.mkdir(parents=True, exist_ok=True)
    for name, report in reports.items():
        report.write_csv(out / f"{name}.csv")
    sys.stdout.write("".join(f"# {name}\n{r.to_csv()}" for name, r in reports.items()))
    write_manifest(out, f"eval --protocol {args.protocol}", [], None, inputs, started)
    return 0


def _gray(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def cmd_predict(args, extra) -> int:
    if extra or args.config:
        resolve([], args, extra)
    if args.persistence:
        if not args.now:
            raise UsageError("predict --persistence needs --now")
        now = load_run(Path(args.now), NowModel)
        cfg, model = now.cfg, None
    else:
        if not args.model:
            raise UsageError("predict needs --model (or --persistence with --now)")
        model = load_run(Path(args.model), FutureModel)
        cfg = model.cfg
    seq = read_dataset(Path(args.window), cfg.classes)
    t = cfg.look_back
    if args.start < 0 or len(seq) - args.start < t:
        raise ValueError(f"window needs {t} frames from index {args.start}, {args.window} has {len(seq)}")
    window = seq.frames[args.start:args.start + t][None]
    out_data = persistence_predict(now, window) if model is None else model(Tensor(window), training=False)

    out = Path(args.out)
    started = _now()
    out.mkdir(parents=True, exist_ok=True)
    labels = np.argmax(out_data.mask_probs.data[0], axis=-1).astype(np.uint8)
    for h in range(t):
        (out / f"mask_h{h + 1:02d}.pgm").write_bytes(encode_pnm(labels[h]))
    if out_data.attention is not None:
        weights = out_data.attention[0]
        if weights.ndim == 1:  # mean attention: one weight per step, shown as a flat map
            weights = np.broadcast_to(weights, (cfg.repr_size, cfg.repr_size, t))
        for k in range(t):
            (out / f"attention_t{k + 1:02d}.pgm").write_bytes(encode_pnm(_gray(weights[..., k])))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["horizon_min", "irradiance"])
    for h in range(t):
        writer.writerow([(h + 1) * STEP_MINUTES, repr(float(out_data.measure.data[0, h]))])
    (out / "irradiance_pred.csv").write_text(buf.getvalue(), encoding="utf-8")
    inputs = {"window": args.window, **({"now": args.now} if args.persistence else {"model": args.model})}
    write_manifest(out, "predict", [cfg], None, inputs, started)
    return 0


def cmd_gradcheck(args, extra) -> int:
    from .gradsuite import DEFAULT_SEED, format_table, run_suite
    if extra or args.config:
        resolve([], args, extra)
    started = _now()
    seed = DEFAULT_SEED if args.seed is None else args.seed
    results = run_suite(tolerance=args.tolerance, seed=seed)
    table = format_table(results)
    print(table)
    ok = all(r.report.passed for r in results)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.txt").write_text(table + "\n", encoding="utf-8")
        write_manifest(out, "gradcheck", [], seed, {}, started)
    return 0 if ok else 1


def cmd_benchmark(args, extra) -> int:
    from .benchmark import run_benchmark
    if extra or args.config:
        resolve([], args, extra)
    started = _now()
    variants = tuple(ATTENTION_FLAGS[v] for v in args.variants.split(","))
    result = run_benchmark(args.now_epochs, args.future_epochs, variants, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.now.write_csv(out / "now.csv")
    for name, report in result.future.items():
        report.write_csv(out / f"future_{name}.csv")
    result.persistence.write_csv(out / "persistence.csv")
    result.autoregressive.write_csv(out / "autoregressive.csv")
    for name in result.future:
        print(f"{name}: mean cloud IoU {result.mean_cloud_iou(name):.4f}")
    write_manifest(out, "benchmark", [], args.seed, {}, started)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _attention_choice(value: str) -> str:
    if value not in ATTENTION_FLAGS:
        raise argparse.ArgumentTypeError(f"choose from {', '.join(ATTENTION_FLAGS)}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tlfuture", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def add(name: str, fn, help_text: str, out_required: bool = True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--out", required=out_required, help="run directory (all outputs go here)")
        p.set_defaults(fn=fn)
        return p

    p = add("synth", cmd_synth, "generate a synthetic dataset")
    p.add_argument("--count", type=int, default=10, help="number of sequences")

    p = add("train-now", cmd_train_now, "train the now model")
    p.add_argument("--data", required=True)

    p = add("train-future", cmd_train_future, "train a future model from a now-model run")
    p.add_argument("--data", required=True)
    p.add_argument("--now", required=True, help="now-model run directory")
    p.add_argument("--attention", type=_attention_choice,
                   help="none, mean, spatial-conv or spatial-convlstm (default: the config's variant)")

    p = add("train-ar", cmd_train_ar, "train the autoregressive next-representation baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--now", required=True)

    p = add("eval", cmd_eval, "score a model (and baselines) on a dataset")
    p.add_argument("--protocol", choices=("now", "future"), default="now")
    p.add_argument("--data", required=True)
    p.add_argument("--model", help="run directory of the evaluated model")
    p.add_argument("--now", help="now-model run (future protocol)")
    p.add_argument("--ar", help="autoregressive baseline run (future protocol)")
    p.add_argument("--baselines", action="store_true", help="also score persistence/autoregressive")

    p = add("predict", cmd_predict, "write predicted masks, attention maps and irradiance for one window")
    p.add_argument("--window", required=True, help="sequence directory holding the input frames")
    p.add_argument("--start", type=int, default=0, help="first input frame")
    p.add_argument("--model", help="future-model run directory")
    p.add_argument("--now", help="now-model run directory (with --persistence)")
    p.add_argument("--persistence", action="store_true", help="repeat the last now-prediction")

    p = add("gradcheck", cmd_gradcheck, "run the finite-difference gradient suite", out_required=False)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=None)

    p = add("benchmark", cmd_benchmark, "run the seed-pinned synthetic benchmark")
    p.add_argument("--now-epochs", type=int, default=5)
    p.add_argument("--future-epochs", type=int, default=15)
    p.add_argument("--variants", default="none,spatial-conv")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args, extra)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"tlfuture: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError, FloatingPointError) as exc:
        print(f"tlfuture: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
