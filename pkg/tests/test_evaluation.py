"""Counting metrics and the heatmap exporter."""

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from regioncount.data import read_image_bytes, synth_dataset, SceneConfig
from regioncount.errors import DimensionError, ValidationError
from regioncount.evaluation import (Metrics, PerImage, compute_metrics,
                                    estimate_count, evaluate_model,
                                    export_heatmap, metrics_to_dict,
                                    write_metrics)
from regioncount.labeling import LabelConfig
from regioncount.model import ModelConfig, init_params
from regioncount.rram import RramConfig
from regioncount.tensor import Tensor


pair_lists = st.lists(
    st.tuples(st.floats(min_value=0, max_value=500),
              st.floats(min_value=0, max_value=500)),
    min_size=1, max_size=30,
)


def test_estimate_count_divides_by_coverage_squared():
    grid = np.ones((1, 4, 4))
    assert estimate_count(grid, k=2) == 4.0
    assert estimate_count(grid, k=1) == 16.0
    assert estimate_count(Tensor(grid), k=2) == 4.0


def test_estimate_count_rejects_other_factors():
    with pytest.raises(ValidationError):
        estimate_count(np.ones((1, 2, 2)), k=3)


def test_metrics_reference_values():
    m = compute_metrics([(10.0, 12.0), (20.0, 17.0)])
    assert abs(m.mae - 2.5) < 1e-12
    assert abs(m.mse - math.sqrt(6.5)) < 1e-12
    assert m.n == 2


def test_metrics_ids_and_per_image():
    m = compute_metrics([(1.0, 2.0)], ids=["img_7"])
    assert m.per_image[0].image_id == "img_7"
    assert m.per_image[0].abs_error == 1.0
    assert compute_metrics([(1.0, 2.0)]).per_image[0].image_id == "0"


def test_metrics_validation():
    with pytest.raises(ValidationError):
        compute_metrics([])
    with pytest.raises(ValidationError):
        compute_metrics([(1.0, 1.0)], ids=["a", "b"])


def test_metrics_permutation_invariant():
    pairs = [(3.0, 1.0), (10.0, 14.0), (7.0, 7.5)]
    a = compute_metrics(pairs)
    b = compute_metrics(pairs[::-1])
    assert a.mae == b.mae and a.mse == b.mse


@given(pair_lists)
def test_root_mse_dominates_mae(pairs):
    m = compute_metrics(pairs)
    assert m.mse >= m.mae - 1e-9


def test_metrics_dict_schema(tmp_path):
    m = compute_metrics([(10.0, 12.0)], ids=["x"])
    doc = metrics_to_dict(m)
    assert set(doc) == {"mae", "mse", "n", "per_image"}
    assert doc["per_image"] == [{"id": "x", "z": 10.0, "zhat": 12.0}]
    write_metrics(tmp_path / "m.json", m)
    assert json.loads((tmp_path / "m.json").read_text()) == doc


# ---------------------------------------------------------------------------
# heatmaps


def test_heatmap_layout_and_rounding(tmp_path):
    p = tmp_path / "h.pgm"
    export_heatmap(np.array([[1.0, 0.5]]), np.array([[1.0, 1.0]]), p)
    img = read_image_bytes(p)
    assert img.shape == (1, 6)
    # joint scale 255; 0.5 maps to 127.5 which rounds half up to 128
    assert img.tolist() == [[255, 128, 255, 255, 255, 255]]


def test_heatmap_joint_scaling(tmp_path):
    p = tmp_path / "h.pgm"
    # gt peak dominates, so pred's 1.0 lands at a quarter of the range
    export_heatmap(np.array([[1.0]]), np.array([[4.0]]), p)
    img = read_image_bytes(p)
    assert img[0, 0] == 64   # floor(63.75 + 0.5)
    assert img[0, 3] == 255


def test_heatmap_all_zero_grids(tmp_path):
    p = tmp_path / "h.pgm"
    export_heatmap(np.zeros((2, 2)), np.zeros((2, 2)), p)
    img = read_image_bytes(p)
    assert img.shape == (2, 6)
    assert np.all(img[:, :2] == 0) and np.all(img[:, 4:] == 0)
    assert np.all(img[:, 2:4] == 255)  # separator column stays white


def test_heatmap_accepts_channel_leading_grids(tmp_path):
    export_heatmap(np.ones((1, 3, 3)), np.ones((1, 3, 3)), tmp_path / "h.pgm")
    assert read_image_bytes(tmp_path / "h.pgm").shape == (3, 8)


def test_heatmap_shape_mismatch(tmp_path):
    with pytest.raises(DimensionError):
        export_heatmap(np.ones((2, 2)), np.ones((3, 3)), tmp_path / "h.pgm")


# ---------------------------------------------------------------------------
# whole-model evaluation


def test_evaluate_model_constant_prediction():
    cfg = ModelConfig(channels=(2, 2, 2), head_width=2,
                      rram=RramConfig(nodes=2, dim=2, gcn_layers=1),
                      label=LabelConfig(r=8))
    params = init_params(cfg, 0)
    params["head.reg.c1.w"].data[:] = 0.0
    params["head.reg.c1.b"].data[:] = 0.0  # model always answers zero
    data = synth_dataset(SceneConfig(seed=2), 3)
    m = evaluate_model(params, cfg, data, "count_map")
    true_counts = [ann.count for _, ann in data]
    assert m.mae == pytest.approx(np.mean(true_counts))
    assert [p.image_id for p in m.per_image] == [ann.image_id for _, ann in data]


def test_evaluate_model_density_uses_unit_coverage():
    cfg = ModelConfig(channels=(2, 2, 2), head_width=2, rram_enabled=False,
                      label=LabelConfig(r=8))
    params = init_params(cfg, 0)
    params["head.reg.c1.w"].data[:] = 0.0
    params["head.reg.c1.b"].data[:] = 1.0  # constant grid of ones, 17x17
    data = synth_dataset(SceneConfig(seed=3), 1)
    count_est = evaluate_model(params, cfg, data, "count_map").per_image[0].zhat
    density_est = evaluate_model(params, cfg, data, "density_map").per_image[0].zhat
    assert count_est == pytest.approx(289.0 / 4.0)
    assert density_est == pytest.approx(289.0)
