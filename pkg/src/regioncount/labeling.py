"""Ground-truth label maps: location, count, density, and class grids.

The central object is the count map: a 2-d sum pooling of the point location
map with window r and stride s = r / 2, zero-padded by s on every side. With
that geometry every location-map cell is covered by exactly two windows per
axis, so the count map total is exactly 4 times the true count and dividing
by 4 recovers it. All window sums are integer-valued and stay below 2**53,
so the identity holds exactly in float64, not just approximately.

Two boundary regimes are handled specially: r = 1 leaves the location map
unchanged (identity pooling, no padding), and an r larger than the padded
grid in both axes degenerates to a single unpadded full-coverage window
whose value is the true count (coverage factor 1).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import PointAnnotation
from .errors import DimensionError, FormatError, ValidationError


@dataclass(frozen=True)
class LabelConfig:
    """Geometry of the label grids.

    r is the pooling window side (1, or an even number >= 2); the stride is
    max(1, r // 2). class_bins are strictly increasing count boundaries that
    split [0, inf) into len(bins) + 1 classes; a value v belongs to class
    k = #(bins <= v). density_sigma is the Gaussian width, in output-grid
    cells, used by the density alternative.
    """

    r: int = 8
    density_sigma: float = 2.0
    class_bins: tuple[float, ...] = (0.5, 1.5, 3.5)

    def __post_init__(self) -> None:
        if self.r != 1 and (self.r < 2 or self.r % 2 != 0):
            raise ValidationError(f"window r must be 1 or even and >= 2, got {self.r}")
        if self.density_sigma <= 0.0:
            raise ValidationError(f"density_sigma must be positive, got {self.density_sigma}")
        bins = tuple(float(b) for b in self.class_bins)
        if not bins:
            raise ValidationError("class_bins must not be empty")
        if any(b2 <= b1 for b1, b2 in zip(bins, bins[1:])):
            raise ValidationError(f"class_bins must be strictly increasing, got {bins}")
        object.__setattr__(self, "class_bins", bins)

    @property
    def stride(self) -> int:
        return max(1, self.r // 2)

    @property
    def n_classes(self) -> int:
        return len(self.class_bins) + 1


@dataclass
class LocationMap:
    """Integer point-mass grid [1, he, we]; cell value = heads rounded there."""

    grid: np.ndarray

    @property
    def total(self) -> float:
        return float(self.grid.sum())


@dataclass
class CountMap:
    """Pooled count grid [1, hc, wc] with its coverage factor k (each head is
    counted k*k times across the grid)."""

    grid: np.ndarray
    k: int

    @property
    def total(self) -> float:
        return float(self.grid.sum())


@dataclass
class DensityMap:
    """Smooth per-cell density [1, hc, wc]; sums to the true count."""

    grid: np.ndarray


@dataclass
class ClassMap:
    """Integer class ids [hc, wc] from binning the count map."""

    ids: np.ndarray
    n_classes: int


def extended_dims(h: int, w: int, stride: int) -> tuple[int, int]:
    """Grid dims rounded up to multiples of stride (zero-extension right/bottom)."""
    he = -(-h // stride) * stride
    we = -(-w // stride) * stride
    return he, we


def _degenerate(r: int, he: int, we: int) -> bool:
    # strictly larger than the extended grid on both axes: one unpadded
    # window covers everything exactly once
    return r > he and r > we


def label_grid_dims(h: int, w: int, cfg: LabelConfig) -> tuple[int, int]:
    """Output grid dims for count/density/class maps on an h x w image."""
    s = cfg.stride
    he, we = extended_dims(h, w, s)
    if cfg.r == 1:
        return he, we
    if _degenerate(cfg.r, he, we):
        return 1, 1
    return he // s + 1, we // s + 1


def coverage_factor(h: int, w: int, cfg: LabelConfig) -> int:
    """How many windows per axis cover each cell (the k in sum = k*k*m)."""
    if cfg.r == 1:
        return 1
    he, we = extended_dims(h, w, cfg.stride)
    if _degenerate(cfg.r, he, we):
        return 1
    return 2


def points_to_location_grid(points: list[tuple[float, float]], h: int, w: int,
                            stride: int) -> np.ndarray:
    """Rasterize points onto the stride-extended grid [1, he, we].

    Coordinates round half up (floor(x + 0.5)) and clip to the grid, so a
    subpixel point just past the last pixel center stays inside. Coincident
    points add.
    """
    he, we = extended_dims(h, w, stride)
    grid = np.zeros((1, he, we), dtype=np.float64)
    if points:
        xs = np.array([p[0] for p in points], dtype=np.float64)
        ys = np.array([p[1] for p in points], dtype=np.float64)
        cols = np.clip(np.floor(xs + 0.5).astype(np.int64), 0, we - 1)
        rows = np.clip(np.floor(ys + 0.5).astype(np.int64), 0, he - 1)
        np.add.at(grid, (0, rows, cols), 1.0)
    return grid


def build_location_map(ann: PointAnnotation, cfg: LabelConfig) -> LocationMap:
    ann.validate()
    return LocationMap(points_to_location_grid(ann.points, ann.height, ann.width,
                                               cfg.stride))


def _window_sums(grid: np.ndarray, r: int, s: int) -> np.ndarray:
    """Sums of r x r windows at stride s via an integral image (exact for
    integer-valued grids)."""
    h, w = grid.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(grid, axis=0, out=integral[1:, 1:])
    np.cumsum(integral[1:, 1:], axis=1, out=integral[1:, 1:])
    oi = np.arange(0, h - r + 1, s)
    oj = np.arange(0, w - r + 1, s)
    i0 = oi[:, None]
    j0 = oj[None, :]
    return (integral[i0 + r, j0 + r] - integral[i0, j0 + r]
            - integral[i0 + r, j0] + integral[i0, j0])


def make_count_map(loc: LocationMap, cfg: LabelConfig) -> CountMap:
    """Pool the location map into overlapping-window counts.

    pre: location grid dims are multiples of the stride.
    """
    grid = loc.grid[0]
    he, we = grid.shape
    s = cfg.stride
    if he % s or we % s:
        raise DimensionError(f"location grid {he}x{we} not divisible by stride {s}")
    if cfg.r == 1:
        return CountMap(grid=grid.copy()[None], k=1)
    if _degenerate(cfg.r, he, we):
        return CountMap(grid=np.array([[[grid.sum()]]], dtype=np.float64), k=1)
    padded = np.pad(grid, s)
    out = _window_sums(padded, cfg.r, s)
    return CountMap(grid=out[None], k=2)


def make_density_map(loc_points: list[tuple[float, float]], h: int, w: int,
                     cfg: LabelConfig) -> DensityMap:
    """Gaussian density on the count-map grid; each head integrates to 1.

    Heads land at (x / s, y / s) in grid coordinates. Each stencil is
    truncated at radius 4 * sigma (in cells) and renormalized after both the
    truncation and any clipping at the grid border, so the total is exact.
    """
    hc, wc = label_grid_dims(h, w, cfg)
    grid = np.zeros((hc, wc), dtype=np.float64)
    s = cfg.stride
    sigma = cfg.density_sigma
    rad = 4.0 * sigma
    for x, y in loc_points:
        cx, cy = x / s, y / s
        i0 = max(0, int(np.ceil(cy - rad)))
        i1 = min(hc - 1, int(np.floor(cy + rad)))
        j0 = max(0, int(np.ceil(cx - rad)))
        j1 = min(wc - 1, int(np.floor(cx + rad)))
        if i0 > i1 or j0 > j1:
            # stencil entirely clipped: drop the full mass on the nearest cell
            grid[min(hc - 1, max(0, round(cy))), min(wc - 1, max(0, round(cx)))] += 1.0
            continue
        ii = np.arange(i0, i1 + 1, dtype=np.float64)[:, None]
        jj = np.arange(j0, j1 + 1, dtype=np.float64)[None, :]
        d2 = (ii - cy) ** 2 + (jj - cx) ** 2
        stencil = np.where(d2 <= rad * rad, np.exp(-d2 / (2.0 * sigma * sigma)), 0.0)
        total = stencil.sum()
        if total <= 0.0:
            grid[min(hc - 1, max(0, round(cy))), min(wc - 1, max(0, round(cx)))] += 1.0
            continue
        grid[i0:i1 + 1, j0:j1 + 1] += stencil / total
    return DensityMap(grid=grid[None])


def make_class_map(count: CountMap, cfg: LabelConfig) -> ClassMap:
    """Bin each count-map cell: class k means bins[k-1] <= value < bins[k]."""
    bins = np.asarray(cfg.class_bins, dtype=np.float64)
    ids = np.searchsorted(bins, count.grid[0], side="right").astype(np.int64)
    return ClassMap(ids=ids, n_classes=cfg.n_classes)


# ---------------------------------------------------------------------------
# label file containers: magic + u32 version + u32 height + u32 width +
# h*w float32 little-endian row-major values

_LABEL_MAGICS = {b"CMAP": "count", b"DMAP": "density", b"KMAP": "class"}
_LABEL_VERSION = 1


def write_label_file(path: str | Path, magic: bytes, grid: np.ndarray) -> None:
    if magic not in _LABEL_MAGICS:
        raise FormatError(f"unknown label magic {magic!r}")
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise DimensionError(f"label grid must be 2-d, got shape {arr.shape}")
    h, w = arr.shape
    payload = arr.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<III", _LABEL_VERSION, h, w))
        fh.write(payload)


def read_label_file(path: str | Path) -> tuple[str, np.ndarray]:
    """Returns (kind, float32 grid [h, w]); kind is count/density/class."""
    p = Path(path)
    raw = p.read_bytes()
    if len(raw) < 16:
        raise FormatError(f"{p.name}: too short for a label file header")
    magic = raw[:4]
    if magic not in _LABEL_MAGICS:
        raise FormatError(f"{p.name}: bad magic {magic!r}")
    version, h, w = struct.unpack_from("<III", raw, 4)
    if version != _LABEL_VERSION:
        raise FormatError(f"{p.name}: unsupported version {version}")
    need = 16 + 4 * h * w
    if len(raw) != need:
        raise FormatError(f"{p.name}: {len(raw)} bytes, expected {need}")
    grid = np.frombuffer(raw, dtype="<f4", offset=16).reshape(h, w)
    return _LABEL_MAGICS[magic], grid.copy()
