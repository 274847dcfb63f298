"""Run configuration: one JSON document, strict keys, documented defaults.

Every experiment is described by a RunConfig. Unknown keys anywhere in the
document are rejected (silent typos invalidate experiments), every field has
a default, and commands echo the fully resolved config into their output
directory so a run can always be reproduced from its artifacts.

Seeds resolve top-down: the single top-level "seed" feeds scene generation
and training; --seed on the command line overrides it. rram_enabled lives in
the model section and is mirrored into the training config, so there is one
switch for the block.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import SceneConfig
from .errors import ConfigError
from .labeling import LabelConfig
from .model import ModelConfig
from .rram import RramConfig
from .training import TrainConfig


@dataclass(frozen=True)
class SynthSection:
    n_images: int = 20

    def __post_init__(self) -> None:
        if self.n_images < 0:
            raise ConfigError(f"n_images must be >= 0, got {self.n_images}")


@dataclass(frozen=True)
class PathsSection:
    train_dir: str = "data/train"
    eval_dir: str = "data/eval"


@dataclass(frozen=True)
class AblateSection:
    seeds: tuple[int, ...] = (0, 1, 2)
    r_values: tuple[int, ...] = (4, 8, 16, 32)
    gcn_layers_values: tuple[int, ...] = (0, 1, 2, 3)

    def __post_init__(self) -> None:
        for name in ("seeds", "r_values", "gcn_layers_values"):
            vals = getattr(self, name)
            if not vals:
                raise ConfigError(f"ablate.{name} must not be empty")
            object.__setattr__(self, name, tuple(int(v) for v in vals))


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    synth: SynthSection = field(default_factory=SynthSection)
    label: LabelConfig = field(default_factory=LabelConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsSection = field(default_factory=PathsSection)
    ablate: AblateSection = field(default_factory=AblateSection)


_TUPLE_FIELDS = {"channels", "class_bins", "seeds", "r_values", "gcn_layers_values"}


def _build(cls, section: dict, where: str, forbidden: set[str] = frozenset(),
           **resolved):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected an object, got {type(section).__name__}")
    allowed = {f.name for f in fields(cls)} - set(resolved) - forbidden
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in section.items():
        if key in _TUPLE_FIELDS:
            if not isinstance(value, list):
                raise ConfigError(f"{where}.{key}: expected a list")
            value = tuple(value)
        kwargs[key] = value
    kwargs.update(resolved)
    return cls(**kwargs)


def parse_run_config(doc: dict, seed_override: int | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    top_allowed = {f.name for f in fields(RunConfig)}
    unknown = set(doc) - top_allowed
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")

    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    if seed_override is not None:
        seed = seed_override

    scene = _build(SceneConfig, doc.get("scene", {}), "scene", seed=seed)
    synth = _build(SynthSection, doc.get("synth", {}), "synth")
    label = _build(LabelConfig, doc.get("label", {}), "label")

    model_section = dict(doc.get("model", {}))
    rram_section = model_section.pop("rram", {})
    rram = _build(RramConfig, rram_section, "model.rram")
    model = _build(ModelConfig, model_section, "model", rram=rram, label=label)

    train = _build(TrainConfig, doc.get("train", {}), "train",
                   forbidden={"rram_enabled"},
                   seed=seed, rram_enabled=model.rram_enabled)
    paths = _build(PathsSection, doc.get("paths", {}), "paths")
    ablate = _build(AblateSection, doc.get("ablate", {}), "ablate")
    return RunConfig(seed=seed, scene=scene, synth=synth, label=label,
                     model=model, train=train, paths=paths, ablate=ablate)


def load_run_config(path: str | Path | None,
                    seed_override: int | None = None) -> RunConfig:
    """Parse a config file (or pure defaults when path is None)."""
    if path is None:
        return parse_run_config({}, seed_override)
    p = Path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p.name}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return parse_run_config(doc, seed_override)


def config_to_dict(cfg: RunConfig) -> dict:
    doc = asdict(cfg)
    # the label geometry is configured once at top level; drop the mirror
    doc["model"].pop("label", None)
    return doc


def echo_config(cfg: RunConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "config.json"
    target.write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n",
                      encoding="utf-8")
    return target


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    """A copy of cfg with every derived seed re-resolved."""
    return replace(cfg,
                   seed=seed,
                   scene=replace(cfg.scene, seed=seed),
                   train=replace(cfg.train, seed=seed))
