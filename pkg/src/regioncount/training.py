"""Losses, SGD with weight decay, and the deterministic training loop.

Both losses are per-cell means by default so their magnitudes stay balanced
across grid sizes under one learning rate; the literal summed forms sit
behind loss_mode = "sum". Training is strictly sequential at batch size 1 and
bitwise reproducible for a given seed: every random choice (crop offsets,
patch order) comes from its own counter-keyed stream.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .data import Patch, PointAnnotation, augment
from .errors import NumericError, ValidationError
from .evaluation import evaluate_model
from .labeling import (LabelConfig, LocationMap, make_class_map, make_count_map,
                       make_density_map, points_to_location_grid)
from .model import ModelConfig, init_params, model_forward
from .rng import MASK64, Stream
from .tensor import Tensor

# keeps the shuffle stream disjoint from the seed ^ epoch ^ image crop streams
_SHUFFLE_SALT = 0x5348_5546_464C_4531


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.0005
    epochs: int = 10
    seed: int = 0
    loss_mode: str = "mean"          # "mean" | "sum"
    label_kind: str = "count_map"    # "count_map" | "density_map"
    rram_enabled: bool = True
    cls_enabled: bool = True

    def __post_init__(self) -> None:
        if self.lr < 0.0:
            raise ValidationError(f"lr must be >= 0, got {self.lr}")
        if self.weight_decay < 0.0:
            raise ValidationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.loss_mode not in ("mean", "sum"):
            raise ValidationError(f"loss_mode must be mean or sum, got {self.loss_mode!r}")
        if self.label_kind not in ("count_map", "density_map"):
            raise ValidationError(f"unknown label_kind {self.label_kind!r}")


@dataclass
class TrainRecord:
    epoch: int
    loss: float
    mae: float
    mse: float
    seconds: float

    def to_dict(self) -> dict:
        def clean(v: float):
            return v if np.isfinite(v) else None
        return {"epoch": self.epoch, "loss": clean(self.loss), "mae": clean(self.mae),
                "mse": clean(self.mse), "seconds": self.seconds}


def reg_loss(pred: Tensor, target: np.ndarray, mode: str = "mean") -> Tensor:
    """Squared-difference loss between predicted and target grids."""
    tgt = Tensor(np.asarray(target, dtype=np.float64))
    if pred.dims != tgt.dims:
        raise ValidationError(f"reg_loss dims differ: {pred.dims} vs {tgt.dims}")
    diff = T.add(pred, T.scale(tgt, -1.0))
    total = T.sum_all(T.mul(diff, diff))
    if mode == "sum":
        return total
    return T.scale(total, 1.0 / pred.size)


def cls_loss(logits: Tensor, class_ids: np.ndarray, mode: str = "mean") -> Tensor:
    """Softmax cross-entropy between per-cell logits and integer class ids."""
    return T.cross_entropy_logits(logits, class_ids, mode=mode)


def total_loss(reg: Tensor, cls: Tensor | None, cls_enabled: bool) -> Tensor:
    if cls_enabled:
        if cls is None:
            raise ValidationError("cls_enabled but no classification loss given")
        return T.add(reg, cls)
    return reg


def sgd_step(params: dict[str, Tensor], lr: float, weight_decay: float) -> None:
    """theta <- theta - lr * (grad + weight_decay * theta) for every tensor.

    Parameters that received no gradient this step still decay. Gradients are
    consumed (reset to None). Non-finite gradients abort naming the tensor.
    """
    for name, t in params.items():
        g = t.grad
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        upd = weight_decay * t.data
        if g is not None:
            upd = upd + g
        t.data = t.data - lr * upd
        t.grad = None


def _patch_targets(patch: Patch, label_cfg: LabelConfig, label_kind: str,
                   need_classes: bool) -> tuple[np.ndarray, np.ndarray | None]:
    _, ph, pw = patch.image.dims
    loc = LocationMap(points_to_location_grid(patch.points, ph, pw, label_cfg.stride))
    count = make_count_map(loc, label_cfg)
    if label_kind == "density_map":
        reg_target = make_density_map(patch.points, ph, pw, label_cfg).grid
    else:
        reg_target = count.grid
    ids = make_class_map(count, label_cfg).ids if need_classes else None
    return reg_target, ids


def train_step(patch: Patch, params: dict[str, Tensor], model_cfg: ModelConfig,
               train_cfg: TrainConfig) -> float:
    """One forward/backward/update on a single patch; returns the loss."""
    pred, logits = model_forward(patch.image, params, model_cfg)
    reg_target, ids = _patch_targets(patch, model_cfg.label, train_cfg.label_kind,
                                     train_cfg.cls_enabled)
    loss = reg_loss(pred, reg_target, train_cfg.loss_mode)
    if train_cfg.cls_enabled:
        loss = total_loss(loss, cls_loss(logits, ids, train_cfg.loss_mode), True)
    loss.backward()
    value = loss.item()
    sgd_step(params, train_cfg.lr, train_cfg.weight_decay)
    return value


def fit(train_set: list[tuple[Tensor, PointAnnotation]],
        eval_set: list[tuple[Tensor, PointAnnotation]],
        model_cfg: ModelConfig, train_cfg: TrainConfig,
        params: dict[str, Tensor] | None = None,
        ) -> tuple[dict[str, Tensor], list[TrainRecord]]:
    """Train for train_cfg.epochs epochs; returns (params, per-epoch records).

    Each epoch regenerates 18 patches per image from the stream keyed by
    seed ^ epoch ^ image index, shuffles them with a salted epoch stream,
    takes one SGD step per patch, then scores MAE/MSE on the eval set.
    """
    if not train_set:
        raise ValidationError("fit needs a nonempty training set")
    cfg = replace(model_cfg, rram_enabled=train_cfg.rram_enabled)
    if params is None:
        params = init_params(cfg, train_cfg.seed, in_channels=train_set[0][0].dims[0])
    stride = cfg.label.stride
    records: list[TrainRecord] = []
    for epoch in range(train_cfg.epochs):
        t0 = time.perf_counter()
        patches: list[Patch] = []
        for idx, (image, ann) in enumerate(train_set):
            crop_rng = Stream((train_cfg.seed ^ epoch ^ idx) & MASK64)
            patches.extend(augment(image, ann, crop_rng, stride))
        order = Stream((train_cfg.seed ^ epoch ^ _SHUFFLE_SALT) & MASK64).permutation(len(patches))
        epoch_loss = 0.0
        for pi in order:
            try:
                epoch_loss += train_step(patches[pi], params, cfg, train_cfg)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, patch {int(pi)}: {exc}") from exc
        metrics = evaluate_model(params, cfg, eval_set, train_cfg.label_kind) \
            if eval_set else None
        records.append(TrainRecord(
            epoch=epoch,
            loss=epoch_loss / len(patches),
            mae=metrics.mae if metrics else float("nan"),
            mse=metrics.mse if metrics else float("nan"),
            seconds=time.perf_counter() - t0))
    return params, records
