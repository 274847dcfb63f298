"""Command-line entry point wiring the modules into reproducible experiments.

Subcommands: synth, label, train, eval, gradcheck, ablate. Every command
parses one JSON config (strict keys, documented defaults), echoes the fully
resolved config next to its outputs, and is deterministic for a given config
in single-threaded mode. Exit codes: 0 success, 1 validation/config error,
2 runtime numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checks import run_suite
from .config import RunConfig, config_to_dict, echo_config, load_run_config
from .data import (PointAnnotation, load_annotations, load_image, synth_scene_bytes,
                   write_annotations, write_pgm)
from .errors import (ConfigError, DimensionError, FormatError, GenerationError,
                     NumericError, ValidationError)
from .evaluation import (estimate_count, evaluate_model, export_heatmap,
                         metrics_to_dict, write_metrics)
from .labeling import (build_location_map, coverage_factor, make_class_map,
                       make_count_map, make_density_map, write_label_file)
from .model import check_params_match, load_checkpoint, model_forward, save_checkpoint
from .tensor import Tensor
from .training import fit

Dataset = list[tuple[Tensor, PointAnnotation]]


def _load_dataset(dir_path: str | Path) -> Dataset:
    root = Path(dir_path)
    ann_path = root / "annotations.jsonl"
    if not ann_path.exists():
        raise ValidationError(f"no annotations.jsonl found in {root}")
    return [(load_image(root / ann.image_id), ann) for ann in load_annotations(ann_path)]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out = _out_dir(args)
    anns = []
    total = 0
    for i in range(cfg.synth.n_images):
        img, ann = synth_scene_bytes(cfg.scene, i)
        write_pgm(out / ann.image_id, img)
        anns.append(ann)
        total += ann.count
    write_annotations(out / "annotations.jsonl", anns)
    echo_config(cfg, out)
    print(f"synth: wrote {len(anns)} images ({total} heads) to {out}")
    return 0


def cmd_label(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    for kind in kinds:
        if kind not in ("count", "class", "density"):
            raise ValidationError(f"unknown label kind {kind!r}")
    out = _out_dir(args)
    anns = load_annotations(Path(args.data) / "annotations.jsonl")
    exact = 0
    density_ok = 0
    for ann in anns:
        stem = Path(ann.image_id).stem
        loc = build_location_map(ann, cfg.label)
        count = make_count_map(loc, cfg.label)
        if count.total == (count.k ** 2) * ann.count:
            exact += 1
        if "count" in kinds:
            write_label_file(out / f"{stem}.cmap", b"CMAP", count.grid)
        if "class" in kinds:
            ids = make_class_map(count, cfg.label).ids
            write_label_file(out / f"{stem}.kmap", b"KMAP", ids.astype(np.float64))
        if "density" in kinds:
            dens = make_density_map(ann.points, ann.height, ann.width, cfg.label)
            if abs(float(dens.grid.sum()) - ann.count) <= 1e-3 * max(ann.count, 1):
                density_ok += 1
            write_label_file(out / f"{stem}.dmap", b"DMAP", dens.grid)
    echo_config(cfg, out)
    print(f"label: exact: {exact}/{len(anns)}")
    if "density" in kinds:
        print(f"label: density sums within 1e-3*m: {density_ok}/{len(anns)}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out = _out_dir(args)
    train_set = _load_dataset(cfg.paths.train_dir)
    eval_set = _load_dataset(cfg.paths.eval_dir)
    echo_config(cfg, out)
    params, records = fit(train_set, eval_set, cfg.model, cfg.train)
    ckpt_path = out / "checkpoint.rrpc"
    save_checkpoint(ckpt_path, params)
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict()) + "\n")
    # final metrics come from the saved checkpoint, so cmd_eval on the same
    # split reproduces them bit for bit
    loaded = load_checkpoint(ckpt_path)
    eval_model_cfg = replace(cfg.model, rram_enabled=cfg.train.rram_enabled)
    metrics = evaluate_model(loaded, eval_model_cfg, eval_set, cfg.train.label_kind)
    write_metrics(out / "metrics.json", metrics)
    print(f"train: {len(records)} epochs on {len(train_set)} images; "
          f"final eval mae={metrics.mae:.4f} mse={metrics.mse:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out = _out_dir(args)
    params = load_checkpoint(args.checkpoint)
    model_cfg = replace(cfg.model, rram_enabled=cfg.train.rram_enabled)
    check_params_match(params, model_cfg)
    dataset = _load_dataset(args.data)
    metrics = evaluate_model(params, model_cfg, dataset, cfg.train.label_kind)
    write_metrics(out / "metrics.json", metrics)
    echo_config(cfg, out)
    if args.heatmap:
        n_files = 0
        for image, ann in dataset:
            pred, _ = model_forward(image, params, model_cfg)
            if cfg.train.label_kind == "density_map":
                gt = make_density_map(ann.points, ann.height, ann.width, cfg.label).grid
            else:
                loc = build_location_map(ann, cfg.label)
                gt = make_count_map(loc, cfg.label).grid
            export_heatmap(pred, gt, out / f"heatmap_{Path(ann.image_id).stem}.pgm")
            n_files += 1
        print(f"eval: wrote {n_files} heatmaps")
    print(f"eval: n={metrics.n} mae={metrics.mae:.4f} mse={metrics.mse:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    print("config: " + json.dumps(config_to_dict(cfg), sort_keys=True))
    results = run_suite(n_seeds=args.seeds, base_seed=cfg.seed)
    for res in results:
        print(res.line())
    failed = [r.op for r in results if not r.passed]
    if failed:
        print(f"gradcheck: FAILED ops: {', '.join(failed)}")
        return 2
    print(f"gradcheck: all {len(results)} ops passed")
    return 0


_ABLATE_VARIANTS = (
    # (variant name, label_kind, rram_enabled, cls_enabled)
    ("density_map", "density_map", False, False),
    ("count_map", "count_map", False, True),
    ("count_map_rram", "count_map", True, True),
)


def cmd_ablate(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out = _out_dir(args)
    train_set = _load_dataset(cfg.paths.train_dir)
    eval_set = _load_dataset(cfg.paths.eval_dir)
    echo_config(cfg, out)

    cache: dict[tuple, tuple[float, float]] = {}

    def run_once(variant: str, label_kind: str, rram_on: bool, cls_on: bool,
                 r: int, layers: int, seed: int) -> tuple[float, float]:
        key = (label_kind, rram_on, cls_on, r, layers, seed)
        if key in cache:
            return cache[key]
        label_cfg = replace(cfg.label, r=r)
        model_cfg = replace(cfg.model, label=label_cfg, rram_enabled=rram_on,
                            rram=replace(cfg.model.rram, gcn_layers=layers))
        train_cfg = replace(cfg.train, seed=seed, label_kind=label_kind,
                            rram_enabled=rram_on, cls_enabled=cls_on)
        params, _records = fit(train_set, eval_set, model_cfg, train_cfg)
        metrics = evaluate_model(params, replace(model_cfg, rram_enabled=rram_on),
                                 eval_set, label_kind)
        cache[key] = (metrics.mae, metrics.mse)
        print(f"ablate: {variant} r={r} gcn_layers={layers} seed={seed} "
              f"mae={metrics.mae:.4f} mse={metrics.mse:.4f}")
        return cache[key]

    rows: list[dict] = []

    def add_row(variant: str, label_kind: str, rram_on: bool, cls_on: bool,
                r: int, layers: int, seed: int) -> None:
        mae, mse = run_once(variant, label_kind, rram_on, cls_on, r, layers, seed)
        rows.append({"variant": variant, "r": r, "gcn_layers": layers,
                     "seed": seed, "mae": mae, "mse": mse})

    base_r = cfg.label.r
    base_layers = cfg.model.rram.gcn_layers
    for variant, label_kind, rram_on, cls_on in _ABLATE_VARIANTS:
        layers = base_layers if rram_on else 0
        for seed in cfg.ablate.seeds:
            add_row(variant, label_kind, rram_on, cls_on, base_r, layers, seed)
    for r in cfg.ablate.r_values:
        for seed in cfg.ablate.seeds:
            add_row("count_map", "count_map", False, True, r, 0, seed)
    for layers in cfg.ablate.gcn_layers_values:
        for seed in cfg.ablate.seeds:
            add_row("count_map_rram", "count_map", True, True, base_r, layers, seed)

    csv_path = out / "ablation.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "r", "gcn_layers",
                                                "seed", "mae", "mse"])
        writer.writeheader()
        writer.writerows(rows)

    medians = {}
    for variant, _lk, rram_on, _cls in _ABLATE_VARIANTS:
        layers = base_layers if rram_on else 0
        maes = [row["mae"] for row in rows
                if row["variant"] == variant and row["r"] == base_r
                and row["gcn_layers"] == layers][:len(cfg.ablate.seeds)]
        medians[variant] = statistics.median(maes)
    expectations = [
        ("count_map <= density_map", medians["count_map"] <= medians["density_map"]),
        ("count_map_rram <= count_map", medians["count_map_rram"] <= medians["count_map"]),
    ]
    print("ablate: median eval MAE per variant:")
    for variant, med in medians.items():
        print(f"  {variant:<16} {med:.4f}")
    deviations = []
    for claim, held in expectations:
        if held:
            print(f"ablate: expected direction held: {claim}")
        else:
            deviations.append(claim)
            print(f"ablate: DEVIATION from expected direction: {claim} did not hold")
    report = {"medians": medians,
              "expected_directions": [c for c, _h in expectations],
              "deviations": deviations}
    (out / "ablation_report.json").write_text(json.dumps(report, indent=2) + "\n",
                                              encoding="utf-8")
    print(f"ablate: wrote {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regioncount",
        description="Crowd counting with overlapping-window count maps and a "
                    "region-relation GCN.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
        p.add_argument("--config", default=None, help="JSON run config (defaults apply)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if out_required:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("label", help="write label maps for a dataset")
    p.add_argument("data", help="dataset directory (with annotations.jsonl)")
    p.add_argument("--kinds", default="count", help="comma list: count,class,density")
    common(p)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train a model on the configured dataset")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("checkpoint", help="RRPC checkpoint path")
    p.add_argument("data", help="dataset directory (with annotations.jsonl)")
    p.add_argument("--heatmap", action="store_true", help="write per-image heatmaps")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--seeds", type=int, default=3, help="random seeds per op")
    common(p, out_required=False)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="labeling/architecture ablation sweep")
    common(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValidationError, FormatError, DimensionError,
            GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
