"""Synthetic advecting-cloud sky videos with coupled irradiance.

Clouds are thresholded sums of Gaussian blobs that translate by a constant
velocity (wrapping around the frame) and may grow. A sun disc follows a fixed
arc over the sequence, a tracker arm shades it, and the irradiance is a
half-sine clear-sky curve attenuated by the cloud cover.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SynthConfig

SKY, CLOUD, SUN, TRACKER = 0, 1, 2, 3
BASE_COLORS = np.array([
    [0.35, 0.55, 0.85],   # sky
    [0.85, 0.85, 0.88],   # cloud
    [1.00, 0.95, 0.70],   # sun
    [0.10, 0.10, 0.12],   # tracker
])
STEP_MINUTES = 10
_HALF_LEVEL_SIGMA = 1.0 / math.sqrt(2.0 * math.log(2.0))  # blob field is 0.5 at its radius


@dataclass
class VideoSequence:
    frames: np.ndarray       # [N, H, W, 3] on the 8-bit grid k/255
    masks: np.ndarray        # [N, H, W] uint8 class labels
    irradiance: np.ndarray   # [N]
    timestamps: np.ndarray   # [N] minutes

    def __post_init__(self):
        n = len(self.frames)
        if not (len(self.masks) == len(self.irradiance) == len(self.timestamps) == n):
            raise ValueError("frames, masks, irradiance and timestamps must have equal lengths")
        if n > 1 and not np.all(np.diff(self.timestamps) == STEP_MINUTES):
            raise ValueError(f"timestamps must increase by {STEP_MINUTES} minutes")

    def __len__(self) -> int:
        return len(self.frames)

    def window(self, start: int, length: int) -> "VideoSequence":
        sl = slice(start, start + length)
        return VideoSequence(self.frames[sl], self.masks[sl], self.irradiance[sl], self.timestamps[sl])

    def cloud_cover(self) -> np.ndarray:
        return (self.masks == CLOUD).mean(axis=(1, 2))


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    return xs, ys


def _delta(p: np.ndarray, c: float, size: int, wrap: bool) -> np.ndarray:
    d = p - c
    if wrap:
        d = np.mod(d + size / 2.0, size) - size / 2.0
    return d


def cloud_layer(centers: np.ndarray, radii: np.ndarray, size: int, wrap: bool = True) -> np.ndarray:
    """Boolean cloud mask from blob centres ``[n, 2]`` (x, y) and radii."""
    xs, ys = _grid(size)
    field = np.zeros((size, size))
    for (cx, cy), r in zip(centers, radii):
        if r <= 0:
            continue
        s = r * _HALF_LEVEL_SIGMA
        dx = _delta(xs, cx, size, wrap)
        dy = _delta(ys, cy, size, wrap)
        field += np.exp(-(dx * dx + dy * dy) / (2.0 * s * s))
    return field >= 0.5


def sun_position(cfg: SynthConfig, k: int) -> tuple[float, float]:
    frac = k / (cfg.steps - 1) if cfg.steps > 1 else 0.0
    theta = math.radians(cfg.sun_arc_start + cfg.sun_arc_span * frac)
    mid = cfg.frame_size / 2.0
    return mid + cfg.sun_arc_radius * math.cos(theta), mid + cfg.sun_arc_radius * math.sin(theta)


def overlay_labels(cfg: SynthConfig, k: int) -> np.ndarray:
    """Sun and tracker labels at step ``k`` (sky elsewhere); tracker wins over sun."""
    size = cfg.frame_size
    xs, ys = _grid(size)
    out = np.full((size, size), SKY, dtype=np.uint8)
    sx, sy = sun_position(cfg, k)
    if cfg.sun_radius > 0:
        out[(xs - sx) ** 2 + (ys - sy) ** 2 <= cfg.sun_radius ** 2] = SUN
    if cfg.tracker_width > 0:
        mid = size / 2.0
        ux, uy = sx - mid, sy - mid
        norm = math.hypot(ux, uy) or 1.0
        ux, uy = ux / norm, uy / norm
        px, py = xs - mid, ys - mid
        along = px * ux + py * uy
        across = np.abs(px * uy - py * ux)
        out[(along >= 0) & (across <= cfg.tracker_width / 2.0)] = TRACKER
    return out


def compose(cloud: np.ndarray, overlay: np.ndarray) -> np.ndarray:
    mask = np.where(cloud, CLOUD, SKY).astype(np.uint8)
    occluded = overlay != SKY
    mask[occluded] = overlay[occluded]
    return mask


def clearsky(cfg: SynthConfig, k: int) -> float:
    return cfg.clearsky_peak * math.sin(math.pi * (k + 1) / (cfg.steps + 1))


def sequence_velocity(cfg: SynthConfig, rng: np.random.Generator) -> tuple[float, float]:
    vx, vy = cfg.velocity
    if cfg.direction == "axis4":
        for _ in range(int(rng.integers(4))):
            vx, vy = -vy, vx
    return float(vx), float(vy)


def render(mask: np.ndarray, rng: np.random.Generator | None, noise: float) -> np.ndarray:
    img = BASE_COLORS[mask]
    if noise > 0 and rng is not None:
        img = img + rng.normal(0.0, noise, img.shape)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def synth_sequence(cfg: SynthConfig, seed: int | None = None) -> VideoSequence:
    """Generate one sequence; a pure function of ``cfg`` (and ``seed`` if given)."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    size, n = cfg.frame_size, cfg.steps
    count = int(rng.integers(cfg.blobs_min, cfg.blobs_max + 1))
    # dyadic centres keep integer advection exact in floating point
    centers = np.round(rng.uniform(0.0, size, (count, 2)) * 256.0) / 256.0
    radii = cfg.radius + rng.uniform(-cfg.radius_jitter, cfg.radius_jitter, count)
    vx, vy = sequence_velocity(cfg, rng)
    wrap = not cfg.open_boundary
    frames, masks, irr = [], [], []
    for k in range(n):
        pos = centers + np.array([vx, vy]) * k
        if wrap:
            pos = np.mod(pos, size)
        cloud = cloud_layer(pos, radii + cfg.growth * k, size, wrap)
        mask = compose(cloud, overlay_labels(cfg, k))
        cover = float(np.mean(mask == CLOUD))
        eps = float(np.clip(rng.standard_normal(), -3.0, 3.0)) * cfg.irradiance_noise
        irr.append(clearsky(cfg, k) * (1.0 - cfg.cover_coeff * cover) + eps)
        masks.append(mask)
        frames.append(render(mask, rng, cfg.pixel_noise))
    timestamps = cfg.start_minute + STEP_MINUTES * np.arange(n)
    return VideoSequence(np.stack(frames), np.stack(masks), np.array(irr), timestamps.astype(np.int64))


def synth_collection(cfg: SynthConfig, count: int) -> list[VideoSequence]:
    """``count`` independent sequences seeded from ``(cfg.seed, i)``."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(count)
    return [synth_sequence(cfg, int(s.generate_state(1)[0])) for s in seeds]


def advect_oracle(mask: np.ndarray, v: tuple[int, int], steps: int, cfg: SynthConfig | None = None,
                  index: int | None = None) -> np.ndarray:
    """Future mask under pure translation: cloud pixels shift cyclically by ``v * steps``.

    With ``cfg`` and the source ``index`` the sun and tracker are redrawn at
    ``index + steps``; otherwise the source's sun/tracker pixels are kept in place.
    """
    vx, vy = v
    if int(vx) != vx or int(vy) != vy:
        raise ValueError("advect_oracle needs integer velocity components")
    cloud = np.roll(mask == CLOUD, (int(vy) * steps, int(vx) * steps), axis=(0, 1))
    if cfg is not None and index is not None:
        overlay = overlay_labels(cfg, index + steps)
    else:
        overlay = np.where((mask == SUN) | (mask == TRACKER), mask, SKY).astype(np.uint8)
    return compose(cloud, overlay)
