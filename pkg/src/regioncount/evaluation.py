"""Count estimation, MAE/MSE metrics, and heatmap export.

A predicted count grid integrates to k*k times the count (k is the window
coverage factor of the labeling geometry), so the estimate is sum / k^2.
MAE is the mean absolute count error; MSE here is the root of the mean
squared count error, reported in the same units as MAE.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import PointAnnotation, write_pgm
from .errors import DimensionError, ValidationError
from .labeling import coverage_factor
from .model import ModelConfig, model_forward
from .tensor import Tensor


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def estimate_count(pred, k: int) -> float:
    """sum(pred) / k^2; k in {1, 2} per the labeling geometry (1 for density)."""
    if k not in (1, 2):
        raise ValidationError(f"coverage factor must be 1 or 2, got {k}")
    return float(_as_array(pred).sum()) / (k * k)


@dataclass
class PerImage:
    image_id: str
    z: float        # true count
    zhat: float     # estimated count

    @property
    def abs_error(self) -> float:
        return abs(self.z - self.zhat)


@dataclass
class Metrics:
    mae: float
    mse: float  # root of mean squared error, same units as mae
    per_image: list[PerImage]

    @property
    def n(self) -> int:
        return len(self.per_image)


def compute_metrics(pairs: list[tuple[float, float]],
                    ids: list[str] | None = None) -> Metrics:
    """MAE and root-MSE over (true, estimated) count pairs."""
    if not pairs:
        raise ValidationError("compute_metrics needs at least one pair")
    if ids is not None and len(ids) != len(pairs):
        raise ValidationError("ids and pairs must have equal length")
    per = [PerImage(image_id=(ids[i] if ids else str(i)), z=float(z), zhat=float(zh))
           for i, (z, zh) in enumerate(pairs)]
    errs = np.array([p.z - p.zhat for p in per], dtype=np.float64)
    return Metrics(mae=float(np.abs(errs).mean()),
                   mse=float(math.sqrt((errs ** 2).mean())),
                   per_image=per)


def metrics_to_dict(m: Metrics) -> dict:
    return {"mae": m.mae, "mse": m.mse, "n": m.n,
            "per_image": [{"id": p.image_id, "z": p.z, "zhat": p.zhat}
                          for p in m.per_image]}


def write_metrics(path: str | Path, m: Metrics) -> None:
    Path(path).write_text(json.dumps(metrics_to_dict(m), indent=2) + "\n",
                          encoding="utf-8")


def export_heatmap(pred, gt, path: str | Path) -> None:
    """Write prediction and ground truth side by side as one P5 image.

    Both halves share one scale, 255 / max(max(pred), max(gt), 1e-12), so
    their brightnesses are comparable; values are clamped to [0, 255] and
    rounded half up. A 2-pixel white column separates prediction (left)
    from ground truth (right).
    """
    p = _as_array(pred)
    g = _as_array(gt)
    if p.ndim == 3 and p.shape[0] == 1:
        p = p[0]
    if g.ndim == 3 and g.shape[0] == 1:
        g = g[0]
    if p.shape != g.shape or p.ndim != 2:
        raise DimensionError(f"heatmap halves must be equal 2-d grids, got {p.shape} and {g.shape}")
    scale = 255.0 / max(float(p.max()), float(g.max()), 1e-12)

    def quantize(arr: np.ndarray) -> np.ndarray:
        v = np.clip(arr * scale, 0.0, 255.0)
        return np.minimum(np.floor(v + 0.5), 255.0).astype(np.uint8)

    h, w = p.shape
    canvas = np.full((h, 2 * w + 2), 255, dtype=np.uint8)
    canvas[:, :w] = quantize(p)
    canvas[:, w + 2:] = quantize(g)
    write_pgm(path, canvas)


def evaluate_model(params: dict, cfg: ModelConfig,
                   dataset: list[tuple[Tensor, PointAnnotation]],
                   label_kind: str = "count_map") -> Metrics:
    """Run the model over a dataset and compare estimated vs true counts.

    label_kind chooses the coverage factor: count_map uses the labeling
    geometry's k, density_map integrates plainly (k = 1).
    """
    pairs: list[tuple[float, float]] = []
    ids: list[str] = []
    for image, ann in dataset:
        pred, _ = model_forward(image, params, cfg)
        if label_kind == "density_map":
            k = 1
        else:
            k = coverage_factor(ann.height, ann.width, cfg.label)
        pairs.append((float(ann.count), estimate_count(pred, k)))
        ids.append(ann.image_id)
    return compute_metrics(pairs, ids)
