"""On-disk datasets: binary PPM frames, PGM class masks, ``meta.csv``.

Layout of one sequence directory::

    frame_00000.ppm  mask_00000.pgm  ...  meta.csv   (index,timestamp_min,irradiance)
"""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .synth import STEP_MINUTES, VideoSequence


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# portable any-map
# ---------------------------------------------------------------------------

def encode_pnm(pixels: np.ndarray) -> bytes:
    """8-bit binary P6 for ``[H, W, 3]`` or P5 for ``[H, W]`` uint8 arrays."""
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise DatasetError("PNM pixels must be uint8")
    if pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    elif pixels.ndim == 2:
        magic = b"P5"
    else:
        raise DatasetError(f"cannot encode array of shape {pixels.shape}")
    h, w = pixels.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


def decode_pnm(blob: bytes, expect: bytes | None = None) -> np.ndarray:
    magic = blob[:2]
    if magic not in (b"P5", b"P6") or (expect is not None and magic != expect):
        raise DatasetError(f"unexpected PNM magic {magic!r}")
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError("truncated PNM header")
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace before the raster
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise DatasetError("malformed PNM header") from exc
    if maxval != 255:
        raise DatasetError("only 8-bit PNM (maxval 255) is supported")
    channels = 3 if magic == b"P6" else 1
    raster = blob[pos:pos + w * h * channels]
    if len(raster) != w * h * channels:
        raise DatasetError("truncated PNM raster")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape((h, w, 3) if channels == 3 else (h, w))
    return arr.copy()


def frame_to_bytes(frame: np.ndarray) -> np.ndarray:
    return np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------

def write_dataset(seq: VideoSequence, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i in range(len(seq)):
        (d / f"frame_{i:05d}.ppm").write_bytes(encode_pnm(frame_to_bytes(seq.frames[i])))
        (d / f"mask_{i:05d}.pgm").write_bytes(encode_pnm(np.asarray(seq.masks[i], dtype=np.uint8)))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "timestamp_min", "irradiance"])
    for i in range(len(seq)):
        writer.writerow([i, int(seq.timestamps[i]), repr(float(seq.irradiance[i]))])
    (d / "meta.csv").write_text(buf.getvalue(), encoding="utf-8")


def read_meta(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with path.open(encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        idx = np.array([int(r["index"]) for r in rows], dtype=np.int64)
        ts = np.array([int(r["timestamp_min"]) for r in rows], dtype=np.int64)
        irr = np.array([float(r["irradiance"]) for r in rows])
    except (KeyError, ValueError) as exc:
        raise DatasetError(f"{path}: malformed meta.csv") from exc
    return idx, ts, irr


def _read_frame(d: Path, i: int) -> np.ndarray:
    return decode_pnm((d / f"frame_{i:05d}.ppm").read_bytes(), b"P6") / 255.0


def _read_mask(d: Path, i: int, classes: int) -> np.ndarray:
    path = d / f"mask_{i:05d}.pgm"
    if not path.exists():
        raise DatasetError(f"missing mask for frame {i} in {d}")
    mask = decode_pnm(path.read_bytes(), b"P5")
    if mask.size and mask.max() >= classes:
        raise DatasetError(f"{path}: mask value {int(mask.max())} outside [0, {classes})")
    return mask


def read_dataset(directory: str | Path, classes: int = 4) -> VideoSequence:
    d = Path(directory)
    frame_files = sorted(d.glob("frame_*.ppm"))
    idx, ts, irr = read_meta(d / "meta.csv")
    if len(idx) != len(frame_files):
        raise DatasetError(f"{d}: meta.csv has {len(idx)} rows for {len(frame_files)} frames")
    frames = np.stack([_read_frame(d, int(i)) for i in idx]) if len(idx) else np.zeros((0, 0, 0, 3))
    masks = np.stack([_read_mask(d, int(i), classes) for i in idx]) if len(idx) else np.zeros((0, 0, 0), np.uint8)
    return VideoSequence(frames, masks, irr, ts)


def write_collection(seqs: list[VideoSequence], root: str | Path) -> list[Path]:
    root = Path(root)
    out = []
    for i, seq in enumerate(seqs):
        path = root / f"seq_{i:05d}"
        write_dataset(seq, path)
        out.append(path)
    return out


def read_collection(root: str | Path, classes: int = 4) -> list[VideoSequence]:
    root = Path(root)
    return [read_dataset(p, classes) for p in sorted(root.iterdir()) if (p / "meta.csv").exists()]


# ---------------------------------------------------------------------------
# converted archive mirror: one directory per day
# ---------------------------------------------------------------------------

TRAIN_YEARS = range(2010, 2013)
TEST_YEARS = range(2013, 2015)


@dataclass
class ArchiveWindow:
    day: str
    split: str
    start: int
    sequence: VideoSequence


def split_for_year(year: int) -> str:
    if year in TRAIN_YEARS:
        return "train"
    if year in TEST_YEARS:
        return "test"
    return "other"


def load_real_archive(root: str | Path, look_back: int = 6, daylight_filter: bool = False,
                      daylight_threshold: float = 0.0, irradiance_scale: float = 1000.0,
                      classes: int = 4) -> Iterator[ArchiveWindow]:
    """Yield ``2 * look_back``-frame windows at exact 10-minute spacing.

    Irradiance is converted to normalised units by ``irradiance_scale``.
    Windows never straddle a timestamp gap. With ``daylight_filter`` a window
    is kept only if every irradiance value exceeds ``daylight_threshold`` (W/m²).
    """
    root = Path(root)
    if not root.exists():
        return
    length = 2 * look_back
    for day_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        meta = day_dir / "meta.csv"
        if not meta.exists():
            continue
        idx, ts, irr = read_meta(meta)
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise DatasetError(f"{day_dir}: timestamps are not strictly increasing")
        year_match = re.match(r"(\d{4})", day_dir.name)
        split = split_for_year(int(year_match.group(1))) if year_match else "other"
        for i in idx:
            if not (day_dir / f"mask_{int(i):05d}.pgm").exists():
                raise DatasetError(f"missing mask for frame {int(i)} in {day_dir}")
        for start in range(0, len(ts) - length + 1):
            span = ts[start:start + length]
            if not np.all(np.diff(span) == STEP_MINUTES):
                continue
            values = irr[start:start + length]
            if daylight_filter and not np.all(values > daylight_threshold):
                continue
            rows = idx[start:start + length]
            seq = VideoSequence(
                np.stack([_read_frame(day_dir, int(i)) for i in rows]),
                np.stack([_read_mask(day_dir, int(i), classes) for i in rows]),
                values / irradiance_scale,
                span.copy(),
            )
            yield ArchiveWindow(day_dir.name, split, start, seq)
