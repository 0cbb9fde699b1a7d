"""Central finite-difference checks of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward

STEP = 1e-3
FLOOR = 1e-8


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FLOOR)
    return np.abs(analytic - numeric) / denom


@dataclass
class GradReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.errors.values())

    def failing(self) -> list[str]:
        return [name for name, err in self.errors.items() if not err < self.tolerance]


def grad_check(closure: Callable[[], Tensor], inputs: Mapping[str, Tensor], tolerance: float = 1e-4,
               step: float = STEP, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> GradReport:
    """Compare ``backward`` against central differences for every named input.

    ``closure`` must rebuild the scalar loss from the current ``.data`` of the
    inputs each time it is called. ``max_entries`` caps the number of
    coordinates probed per input (sampled with ``rng``); ``None`` probes all.
    """
    loss = closure()
    analytic = backward(loss, dict(inputs))
    report = GradReport(tolerance)
    for name, tensor in inputs.items():
        tensor.data = np.ascontiguousarray(tensor.data)
        flat = tensor.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            rng = rng or np.random.default_rng(0)
            coords = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        a = analytic[name].reshape(-1)[coords]
        f = np.empty(len(coords))
        for k, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + step
            up = closure().item()
            flat[c] = orig - step
            down = closure().item()
            flat[c] = orig
            f[k] = (up - down) / (2.0 * step)
        report.errors[name] = float(relative_error(a, f).max()) if len(coords) else 0.0
    return report
