"""Images, point annotations, synthetic scenes, and training-time cropping.

Images travel as binary PGM (P5) or PPM (P6) with maxval 255. Annotations are
JSON Lines, one object per image: {"image": "name.pgm", "points": [[x, y], ...]}
with x along width and y along height, 0 <= x < W and 0 <= y < H. Pixel values
enter the pipeline as v / 255 - 0.5.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, GenerationError, ValidationError
from .rng import MASK64, Stream
from .tensor import Tensor


# ---------------------------------------------------------------------------
# netpbm images


def _parse_netpbm(raw: bytes, where: str) -> tuple[bytes, int, int, bytes]:
    """Parse P5/P6 bytes into (magic, width, height, payload)."""
    if len(raw) < 2 or raw[:2] not in (b"P5", b"P6"):
        raise FormatError(f"{where}: not a binary PGM/PPM (bad magic)")
    magic = raw[:2]
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        if pos >= len(raw):
            raise FormatError(f"{where}: truncated header")
        ch = raw[pos]
        if ch in b" \t\r\n":
            pos += 1
        elif ch == ord("#"):
            while pos < len(raw) and raw[pos] != ord("\n"):
                pos += 1
        elif ord("0") <= ch <= ord("9"):
            start = pos
            while pos < len(raw) and ord("0") <= raw[pos] <= ord("9"):
                pos += 1
            fields.append(int(raw[start:pos]))
        else:
            raise FormatError(f"{where}: unexpected byte {raw[pos]!r} in header")
    if pos >= len(raw) or raw[pos] not in b" \t\r\n":
        raise FormatError(f"{where}: missing whitespace after maxval")
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{where}: only maxval 255 is supported, got {maxval}")
    if width < 1 or height < 1:
        raise FormatError(f"{where}: empty image {width}x{height}")
    depth = 3 if magic == b"P6" else 1
    need = width * height * depth
    payload = raw[pos:pos + need]
    if len(payload) != need:
        raise FormatError(f"{where}: payload has {len(raw) - pos} bytes, expected {need}")
    return magic, width, height, payload


def read_image_bytes(path: str | Path) -> np.ndarray:
    """Read a P5/P6 file to uint8 [h, w] (gray) or [h, w, 3] (rgb)."""
    p = Path(path)
    magic, w, h, payload = _parse_netpbm(p.read_bytes(), p.name)
    arr = np.frombuffer(payload, dtype=np.uint8)
    if magic == b"P6":
        return arr.reshape(h, w, 3)
    return arr.reshape(h, w)


def image_dims(path: str | Path) -> tuple[int, int]:
    """(height, width) of a P5/P6 file, validating the whole container."""
    p = Path(path)
    _, w, h, _ = _parse_netpbm(p.read_bytes(), p.name)
    return h, w


def load_image(path: str | Path) -> Tensor:
    """Read an image file to a [c, h, w] tensor with values byte/255 - 0.5."""
    raw = read_image_bytes(path)
    if raw.ndim == 2:
        chw = raw[None, :, :]
    else:
        chw = raw.transpose(2, 0, 1)
    return Tensor(chw.astype(np.float64) / 255.0 - 0.5)


def write_pgm(path: str | Path, gray: np.ndarray) -> None:
    """Write uint8 [h, w] as binary PGM (P5, maxval 255)."""
    arr = np.asarray(gray)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise ValidationError(f"write_pgm needs uint8 [h, w], got {arr.dtype} {arr.shape}")
    h, w = arr.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes())


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    """Write uint8 [h, w, 3] as binary PPM (P6, maxval 255)."""
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValidationError(f"write_ppm needs uint8 [h, w, 3], got {arr.dtype} {arr.shape}")
    h, w, _ = arr.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + arr.tobytes())


# ---------------------------------------------------------------------------
# annotations


@dataclass
class PointAnnotation:
    """Head positions for one image, in pixel coordinates (x right, y down)."""

    image_id: str
    points: list[tuple[float, float]]
    height: int
    width: int

    @property
    def count(self) -> int:
        return len(self.points)

    def validate(self) -> None:
        for x, y in self.points:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValidationError(f"{self.image_id}: non-finite point ({x}, {y})")
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValidationError(
                    f"{self.image_id}: point ({x}, {y}) outside {self.width}x{self.height}")


def load_annotations(path: str | Path) -> list[PointAnnotation]:
    """Read a JSONL annotation file; image dims come from the referenced
    image files, resolved relative to the annotation file's directory."""
    p = Path(path)
    root = p.parent
    out: list[PointAnnotation] = []
    with open(p, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{p.name} line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or "image" not in obj or "points" not in obj:
                raise FormatError(f"{p.name} line {lineno}: need 'image' and 'points' keys")
            image_id = obj["image"]
            pts_raw = obj["points"]
            if not isinstance(image_id, str) or not isinstance(pts_raw, list):
                raise FormatError(f"{p.name} line {lineno}: malformed record")
            points: list[tuple[float, float]] = []
            for entry in pts_raw:
                if not (isinstance(entry, list) and len(entry) == 2):
                    raise FormatError(f"{p.name} line {lineno}: each point must be [x, y]")
                points.append((float(entry[0]), float(entry[1])))
            h, w = image_dims(root / image_id)
            ann = PointAnnotation(image_id=image_id, points=points, height=h, width=w)
            ann.validate()
            out.append(ann)
    return out


def write_annotations(path: str | Path, annotations: list[PointAnnotation]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ann in annotations:
            rec = {"image": ann.image_id, "points": [[x, y] for x, y in ann.points]}
            fh.write(json.dumps(rec) + "\n")


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass(frozen=True)
class SceneConfig:
    """Controls the deterministic synthetic crowd generator.

    Scenes are grayscale: dark background, bright discs for heads. Disc radius
    grows linearly toward the bottom of the frame (near the camera) and head
    positions are bottom-biased the same way, so depth statistics resemble a
    tilted surveillance view at miniature scale.
    """

    height: int = 64
    width: int = 64
    count_min: int = 5
    count_max: int = 80
    radius_min: float = 2.0
    radius_max: float = 5.0
    background: float = 0.1
    foreground: float = 0.8
    noise_sigma: float = 0.03
    seed: int = 0

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValidationError(f"scene dims must be positive, got {self.height}x{self.width}")
        if not (0 <= self.count_min <= self.count_max):
            raise ValidationError(f"bad count range [{self.count_min}, {self.count_max}]")
        if not (0.0 < self.radius_min <= self.radius_max):
            raise ValidationError(f"bad radius range [{self.radius_min}, {self.radius_max}]")
        if self.noise_sigma < 0.0:
            raise ValidationError("noise_sigma must be non-negative")


_PLACEMENT_ATTEMPTS = 1000


def synth_scene_bytes(cfg: SceneConfig, index: int) -> tuple[np.ndarray, PointAnnotation]:
    """Render scene `index` to (uint8 image [h, w], annotation).

    Deterministic in (cfg.seed, index) only: the stream key is seed XOR index.
    Placement draws y with a bottom-weighted density (pdf proportional to
    depth t = y / (H - 1), via y = sqrt(u) * (H - 1)), x uniform, then accepts
    if the disc of radius rho(y) = rmin + (rmax - rmin) * y / H fits inside
    the frame. An index whose discs cannot be placed raises GenerationError.
    """
    rng = Stream((cfg.seed ^ index) & MASK64)
    h, w = cfg.height, cfg.width
    m = rng.randint(cfg.count_min, cfg.count_max)
    points: list[tuple[float, float]] = []
    radii: list[float] = []
    for _ in range(m):
        for _attempt in range(_PLACEMENT_ATTEMPTS):
            u = rng.uniform(2)
            y = math.sqrt(u[0]) * (h - 1)
            x = u[1] * (w - 1)
            rho = cfg.radius_min + (cfg.radius_max - cfg.radius_min) * (y / h)
            if rho <= x <= (w - 1) - rho and rho <= y <= (h - 1) - rho:
                points.append((x, y))
                radii.append(rho)
                break
        else:
            raise GenerationError(
                f"scene {index}: could not place disc {len(points) + 1}/{m} "
                f"after {_PLACEMENT_ATTEMPTS} attempts")

    canvas = np.full((h, w), cfg.background, dtype=np.float64)
    for (x, y), rho in zip(points, radii):
        j0, j1 = max(0, int(math.floor(x - rho))), min(w - 1, int(math.ceil(x + rho)))
        i0, i1 = max(0, int(math.floor(y - rho))), min(h - 1, int(math.ceil(y + rho)))
        ii = np.arange(i0, i1 + 1, dtype=np.float64)[:, None]
        jj = np.arange(j0, j1 + 1, dtype=np.float64)[None, :]
        inside = (ii - y) ** 2 + (jj - x) ** 2 <= rho * rho
        patch = canvas[i0:i1 + 1, j0:j1 + 1]
        patch[inside] = cfg.foreground
    if cfg.noise_sigma > 0.0:
        canvas += rng.normal(h * w, cfg.noise_sigma).reshape(h, w)
    np.clip(canvas, 0.0, 1.0, out=canvas)
    img = np.floor(canvas * 255.0 + 0.5).astype(np.uint8)  # round half up

    ann = PointAnnotation(image_id=f"scene_{index:05d}.pgm", points=points,
                          height=h, width=w)
    ann.validate()
    return img, ann


def synth_scene(cfg: SceneConfig, index: int) -> tuple[Tensor, PointAnnotation]:
    """Scene as a [1, h, w] tensor (quantized through the byte grid, so the
    in-memory image matches a save/load round trip exactly)."""
    img, ann = synth_scene_bytes(cfg, index)
    return Tensor(img[None].astype(np.float64) / 255.0 - 0.5), ann


def synth_dataset(cfg: SceneConfig, n_images: int) -> list[tuple[Tensor, PointAnnotation]]:
    return [synth_scene(cfg, i) for i in range(n_images)]


# ---------------------------------------------------------------------------
# augmentation


@dataclass
class Patch:
    """One training crop. Points are kept raw (subpixel flips may land a
    coordinate fractionally outside the grid; label rounding clips them)."""

    image: Tensor
    points: list[tuple[float, float]]
    flipped: bool


def augment(image: Tensor, annotation: PointAnnotation, rng: Stream,
            stride: int) -> list[Patch]:
    """9 random half-size crops plus a horizontal flip of each (18 patches).

    Crop dims are half the image rounded down to a multiple of stride, so
    every patch fits the labeling grid. Points are kept when they fall inside
    the half-open crop window, shifted to crop coordinates; flips map
    x -> cw - 1 - x. An image smaller than one stride-aligned half crop in
    either direction is rejected.
    """
    arr = image.data
    if arr.ndim != 3:
        raise ValidationError(f"augment expects [c, h, w] images, got {arr.shape}")
    _, h, w = arr.shape
    ch = (h // 2 // stride) * stride
    cw = (w // 2 // stride) * stride
    if ch < stride or cw < stride:
        raise ValidationError(
            f"{annotation.image_id}: image {h}x{w} too small for stride-{stride} crops")
    patches: list[Patch] = []
    for _ in range(9):
        oy = rng.randint(0, h - ch)
        ox = rng.randint(0, w - cw)
        crop = arr[:, oy:oy + ch, ox:ox + cw].copy()
        pts = [(x - ox, y - oy) for x, y in annotation.points
               if ox <= x < ox + cw and oy <= y < oy + ch]
        patches.append(Patch(image=Tensor(crop), points=pts, flipped=False))
        flipped = crop[:, :, ::-1].copy()
        fpts = [(cw - 1 - x, y) for x, y in pts]
        patches.append(Patch(image=Tensor(flipped), points=fpts, flipped=True))
    return patches
