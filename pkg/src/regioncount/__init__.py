"""Crowd counting with overlapping-window count maps and a region-relation GCN.

Importing this package pins the BLAS thread pools to one thread (before numpy
first loads) so results are bitwise reproducible; set the environment
variables yourself beforehand to override.
"""

import os as _os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

from .errors import (ConfigError, DimensionError, FormatError, GenerationError,
                     NumericError, ValidationError)
from .rng import Stream
from .tensor import Tensor, grad_check, parameter
from .data import PointAnnotation, SceneConfig, augment, load_annotations, load_image, synth_scene
from .labeling import (ClassMap, CountMap, DensityMap, LabelConfig, LocationMap,
                       build_location_map, make_class_map, make_count_map,
                       make_density_map)
from .rram import RramConfig, rram_forward
from .model import ModelConfig, init_params, load_checkpoint, model_forward, save_checkpoint
from .training import TrainConfig, TrainRecord, fit
from .evaluation import Metrics, compute_metrics, estimate_count, evaluate_model, export_heatmap
from .config import RunConfig, load_run_config

__version__ = "0.1.0"

__all__ = [
    "ClassMap", "ConfigError", "CountMap", "DensityMap", "DimensionError",
    "FormatError", "GenerationError", "LabelConfig", "LocationMap", "Metrics",
    "ModelConfig", "NumericError", "PointAnnotation", "RramConfig", "RunConfig",
    "SceneConfig", "Stream", "Tensor", "TrainConfig", "TrainRecord",
    "ValidationError", "augment", "build_location_map", "compute_metrics",
    "estimate_count", "evaluate_model", "export_heatmap", "fit", "grad_check",
    "init_params", "load_annotations", "load_checkpoint", "load_image",
    "load_run_config", "make_class_map", "make_count_map", "make_density_map",
    "model_forward", "parameter", "rram_forward", "save_checkpoint", "synth_scene",
]
