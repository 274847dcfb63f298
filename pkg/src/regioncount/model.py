"""The counting network and its checkpoint container.

Backbone: three stages of two 3x3 conv + relu layers followed by 2x2 max
pooling, so features come out at 1/8 resolution. An optional region-relation
block refines the features, they are bilinearly resized to the label grid,
and two heads finish the job: a regression head (3x3 conv to head_width,
relu, 1x1 conv to 1 channel) predicting the per-cell count, and a
classification head of the same shape ending in one channel per count class.

Checkpoints are a flat binary container: magic "RRPC", u32 version 1, u32
tensor count, then per tensor a u16 name length, the UTF-8 name, u8 ndim,
ndim u32 dims, and the float32 little-endian row-major values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import DimensionError, FormatError, ValidationError
from .labeling import LabelConfig, label_grid_dims
from .rng import Stream
from .rram import RramConfig, rram_forward
from .tensor import Tensor, parameter

_POOL_STAGES = 3
_DOWNSAMPLE = 2 ** _POOL_STAGES


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple[int, int, int] = (32, 64, 128)
    head_width: int = 256
    rram_enabled: bool = True
    rram: RramConfig = field(default_factory=RramConfig)
    label: LabelConfig = field(default_factory=LabelConfig)
    init_std: float = 0.01
    init_scheme: str = "fixed"  # "fixed": N(0, init_std^2); "fan_in": relu-scaled

    def __post_init__(self) -> None:
        ch = tuple(int(c) for c in self.channels)
        if len(ch) != _POOL_STAGES or any(c < 1 for c in ch):
            raise ValidationError(f"channels must be {_POOL_STAGES} positive ints, got {self.channels}")
        object.__setattr__(self, "channels", ch)
        if self.head_width < 1:
            raise ValidationError(f"head_width must be >= 1, got {self.head_width}")
        if self.init_std <= 0.0:
            raise ValidationError(f"init_std must be positive, got {self.init_std}")
        if self.init_scheme not in ("fixed", "fan_in"):
            raise ValidationError(f"unknown init_scheme {self.init_scheme!r}")

    @property
    def n_classes(self) -> int:
        return self.label.n_classes

    @property
    def downsample(self) -> int:
        return _DOWNSAMPLE


def param_spec(cfg: ModelConfig, in_channels: int = 1) -> list[tuple[str, tuple[int, ...]]]:
    """Deterministic (name, dims) enumeration of every trainable tensor."""
    spec: list[tuple[str, tuple[int, ...]]] = []
    prev = in_channels
    for si, ch in enumerate(cfg.channels):
        for ci in range(2):
            spec.append((f"backbone.s{si}.c{ci}.w", (ch, prev, 3, 3)))
            spec.append((f"backbone.s{si}.c{ci}.b", (ch,)))
            prev = ch
    feat = cfg.channels[-1]
    if cfg.rram_enabled:
        n, d = cfg.rram.nodes, cfg.rram.dim
        spec.append(("rram.theta.w", (n, feat, 1, 1)))
        spec.append(("rram.theta.b", (n,)))
        spec.append(("rram.phi.w", (d, feat, 1, 1)))
        spec.append(("rram.phi.b", (d,)))
        spec.append(("rram.adj", (n, n)))
        for li in range(cfg.rram.gcn_layers):
            spec.append((f"rram.gcn{li}.w", (d, d)))
        spec.append(("rram.psi.w", (feat, d, 1, 1)))
        spec.append(("rram.psi.b", (feat,)))
    for head, out_ch in (("reg", 1), ("cls", cfg.n_classes)):
        spec.append((f"head.{head}.c0.w", (cfg.head_width, feat, 3, 3)))
        spec.append((f"head.{head}.c0.b", (cfg.head_width,)))
        spec.append((f"head.{head}.c1.w", (out_ch, cfg.head_width, 1, 1)))
        spec.append((f"head.{head}.c1.b", (out_ch,)))
    return spec


def _fan_in(name: str, dims: tuple[int, ...]) -> int:
    if len(dims) == 4:
        return dims[1] * dims[2] * dims[3]
    return dims[-1]


def init_params(cfg: ModelConfig, seed: int, in_channels: int = 1) -> dict[str, Tensor]:
    """Fresh parameters, deterministic in (cfg, seed).

    Weights and the adjacency draw from N(0, init_std^2) under the default
    "fixed" scheme; biases are zero. Under "fan_in" the conv and graph
    weights use N(0, 2 / fan_in) instead (stable activation magnitudes
    through relu stacks, which is what the training experiments use), while
    the adjacency keeps the small fixed std: its softmax sees an added
    identity, and near-zero entries mean self-favoring mixing at the start.
    """
    rng = Stream(seed)
    params: dict[str, Tensor] = {}
    for name, dims in param_spec(cfg, in_channels):
        n_vals = int(np.prod(dims))
        if name.endswith(".b"):
            params[name] = parameter(np.zeros(dims))
            continue
        draw = rng.normal(n_vals)
        if cfg.init_scheme == "fan_in" and name != "rram.adj":
            std = float(np.sqrt(2.0 / _fan_in(name, dims)))
        else:
            std = cfg.init_std
        params[name] = parameter((draw * std).reshape(dims))
    return params


def backbone_forward(x: Tensor, params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    if x.data.ndim != 3:
        raise DimensionError(f"backbone input must be [c, h, w], got {x.dims}")
    _, h, w = x.dims
    if h % _DOWNSAMPLE or w % _DOWNSAMPLE:
        raise DimensionError(f"input dims {h}x{w} must be divisible by {_DOWNSAMPLE}")
    out = x
    for si in range(len(cfg.channels)):
        for ci in range(2):
            out = T.conv2d(out, params[f"backbone.s{si}.c{ci}.w"],
                           params[f"backbone.s{si}.c{ci}.b"], padding=1)
            out = T.relu(out)
        out = T.maxpool2(out)
    return out


def _head_forward(feat: Tensor, params: dict[str, Tensor], head: str) -> Tensor:
    out = T.conv2d(feat, params[f"head.{head}.c0.w"], params[f"head.{head}.c0.b"], padding=1)
    out = T.relu(out)
    return T.conv2d(out, params[f"head.{head}.c1.w"], params[f"head.{head}.c1.b"], padding=0)


def model_forward(x: Tensor, params: dict[str, Tensor],
                  cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Predict (count grid [1, hc, wc], class logits [C, hc, wc]) for image x."""
    _, h, w = x.dims
    s = cfg.label.stride
    if h % s or w % s:
        raise DimensionError(f"input dims {h}x{w} must be divisible by label stride {s}")
    feat = backbone_forward(x, params, cfg)
    if cfg.rram_enabled:
        feat = rram_forward(feat, params, cfg.rram)
    hc, wc = label_grid_dims(h, w, cfg.label)
    up = T.bilinear_resize(feat, hc, wc)
    return _head_forward(up, params, "reg"), _head_forward(up, params, "cls")


# ---------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"RRPC"
_CKPT_VERSION = 1


def save_checkpoint(path: str | Path, params: dict[str, Tensor]) -> None:
    """Write parameters as float32 in insertion order."""
    chunks = [_CKPT_MAGIC, struct.pack("<II", _CKPT_VERSION, len(params))]
    for name, t in params.items():
        name_b = name.encode("utf-8")
        if len(name_b) > 0xFFFF:
            raise ValidationError(f"parameter name too long: {name!r}")
        arr = t.data
        if arr.ndim > 0xFF:
            raise ValidationError(f"too many dims for {name!r}")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> dict[str, Tensor]:
    """Read a checkpoint back to float64 parameter tensors."""
    p = Path(path)
    raw = p.read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{p.name}: too short for a checkpoint header")
    if raw[:4] != _CKPT_MAGIC:
        raise FormatError(f"{p.name}: bad magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != _CKPT_VERSION:
        raise FormatError(f"{p.name}: unsupported version {version}")
    pos = 12
    params: dict[str, Tensor] = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + name_len].decode("utf-8")
            if len(raw[pos:pos + name_len]) != name_len:
                raise FormatError(f"{p.name}: truncated name")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            n_vals = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            end = pos + 4 * n_vals
            if end > len(raw):
                raise FormatError(f"{p.name}: truncated values for {name!r}")
            vals = np.frombuffer(raw, dtype="<f4", count=n_vals, offset=pos)
            pos = end
        except struct.error as exc:
            raise FormatError(f"{p.name}: truncated checkpoint") from exc
        if name in params:
            raise FormatError(f"{p.name}: duplicate tensor name {name!r}")
        params[name] = parameter(vals.astype(np.float64).reshape(dims))
    if pos != len(raw):
        raise FormatError(f"{p.name}: {len(raw) - pos} trailing bytes")
    return params


def check_params_match(params: dict[str, Tensor], cfg: ModelConfig,
                       in_channels: int = 1) -> None:
    """Raise FormatError when a loaded checkpoint does not fit a config."""
    expected = dict(param_spec(cfg, in_channels))
    got = {name: t.dims for name, t in params.items()}
    missing = sorted(set(expected) - set(got))
    extra = sorted(set(got) - set(expected))
    if missing or extra:
        raise FormatError(f"checkpoint does not match config: missing {missing}, unexpected {extra}")
    for name, dims in expected.items():
        if got[name] != dims:
            raise FormatError(f"checkpoint tensor {name} has dims {got[name]}, config wants {dims}")
