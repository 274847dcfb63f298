"""Label geometry: the overlapping-window count map and its exact identities."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regioncount.data import PointAnnotation
from regioncount.errors import DimensionError, FormatError, ValidationError
from regioncount.labeling import (ClassMap, CountMap, LabelConfig, LocationMap,
                                  build_location_map, coverage_factor,
                                  extended_dims, label_grid_dims, make_class_map,
                                  make_count_map, make_density_map,
                                  points_to_location_grid, read_label_file,
                                  write_label_file)
from regioncount.rng import Stream

from oracles import count_map_ref


point_sets = st.lists(
    st.tuples(st.floats(min_value=0, max_value=31.99),
              st.floats(min_value=0, max_value=31.99)),
    max_size=60,
)


# ---------------------------------------------------------------------------
# config and geometry


def test_config_validation():
    assert LabelConfig(r=1).stride == 1
    assert LabelConfig(r=8).stride == 4
    assert LabelConfig().n_classes == 4
    for bad in (0, 3, -2, 7):
        with pytest.raises(ValidationError):
            LabelConfig(r=bad)
    with pytest.raises(ValidationError):
        LabelConfig(class_bins=(1.0, 1.0))
    with pytest.raises(ValidationError):
        LabelConfig(class_bins=())
    with pytest.raises(ValidationError):
        LabelConfig(density_sigma=0.0)


def test_extended_dims_rounds_up_to_stride():
    assert extended_dims(64, 64, 4) == (64, 64)
    assert extended_dims(30, 33, 4) == (32, 36)
    assert extended_dims(1, 1, 1) == (1, 1)


@pytest.mark.parametrize("h,w,r,expect", [
    (64, 64, 8, (17, 17)),
    (32, 32, 8, (9, 9)),
    (128, 128, 8, (33, 33)),
    (64, 64, 1, (64, 64)),   # identity pooling keeps the grid
    (4, 4, 8, (1, 1)),       # window swallows the whole grid
    (4, 64, 8, (2, 17)),     # only one axis small: regular pooling
])
def test_label_grid_dims(h, w, r, expect):
    assert label_grid_dims(h, w, LabelConfig(r=r)) == expect


def test_coverage_factor():
    assert coverage_factor(64, 64, LabelConfig(r=8)) == 2
    assert coverage_factor(64, 64, LabelConfig(r=1)) == 1
    assert coverage_factor(4, 4, LabelConfig(r=8)) == 1


# ---------------------------------------------------------------------------
# location map


def test_location_rounding_half_up():
    grid = points_to_location_grid([(3.5, 0.0), (3.49, 0.0), (0.0, 2.5)], 8, 8, 4)
    assert grid[0, 0, 4] == 1.0   # 3.5 rounds up
    assert grid[0, 0, 3] == 1.0   # 3.49 rounds down
    assert grid[0, 3, 0] == 1.0   # y rounds the same way
    assert grid.sum() == 3.0


def test_location_clips_to_grid():
    grid = points_to_location_grid([(63.7, 63.7), (-0.4, 0.0)], 64, 64, 4)
    assert grid[0, 63, 63] == 1.0
    assert grid[0, 0, 0] == 1.0


def test_location_coincident_points_add():
    grid = points_to_location_grid([(2.0, 2.0)] * 5, 8, 8, 4)
    assert grid[0, 2, 2] == 5.0


def test_build_location_map_validates():
    ann = PointAnnotation("a.pgm", [(99.0, 0.0)], 8, 8)
    with pytest.raises(ValidationError):
        build_location_map(ann, LabelConfig())


# ---------------------------------------------------------------------------
# count map


def test_count_map_matches_window_enumeration():
    st_ = Stream(0)
    pts = [(float(x) * 31, float(y) * 31)
           for x, y in zip(st_.uniform(40), st_.uniform(40))]
    for r in (2, 4, 8):
        cfg = LabelConfig(r=r)
        got = make_count_map(LocationMap(points_to_location_grid(pts, 32, 32, cfg.stride)), cfg)
        want, k = count_map_ref(pts, 32, 32, r)
        assert np.array_equal(got.grid[0], want)
        assert got.k == k


def test_count_map_total_is_exactly_four_m():
    st_ = Stream(1)
    pts = [(float(x) * 63, float(y) * 63)
           for x, y in zip(st_.uniform(150), st_.uniform(150))]
    cfg = LabelConfig(r=8)
    cm = make_count_map(LocationMap(points_to_location_grid(pts, 64, 64, cfg.stride)), cfg)
    assert cm.total == 4.0 * len(pts)   # exact, not approximate
    assert cm.k == 2


def test_count_map_r1_is_the_location_map():
    cfg = LabelConfig(r=1)
    loc = points_to_location_grid([(5.0, 3.0), (5.0, 3.0)], 10, 12, 1)
    cm = make_count_map(LocationMap(loc), cfg)
    assert np.array_equal(cm.grid, loc)
    assert cm.k == 1


def test_count_map_degenerate_single_window():
    cfg = LabelConfig(r=8)
    loc = points_to_location_grid([(1.0, 1.0)] * 7, 4, 4, cfg.stride)
    cm = make_count_map(LocationMap(loc), cfg)
    assert cm.grid.shape == (1, 1, 1)
    assert cm.grid[0, 0, 0] == 7.0
    assert cm.k == 1


def test_count_map_rejects_unaligned_grid():
    with pytest.raises(DimensionError):
        make_count_map(LocationMap(np.zeros((1, 7, 8))), LabelConfig(r=8))


@settings(max_examples=40)
@given(point_sets, st.sampled_from([2, 4, 8]))
def test_count_map_oracle_property(pts, r):
    cfg = LabelConfig(r=r)
    loc = points_to_location_grid(pts, 32, 32, cfg.stride)
    got = make_count_map(LocationMap(loc), cfg)
    want, k = count_map_ref(pts, 32, 32, r)
    assert np.array_equal(got.grid[0], want)
    assert got.total == k * k * len(pts)


@settings(max_examples=40)
@given(point_sets,
       st.tuples(st.floats(min_value=0, max_value=31.99),
                 st.floats(min_value=0, max_value=31.99)))
def test_count_map_monotone_in_points(pts, extra):
    cfg = LabelConfig(r=8)
    before = make_count_map(
        LocationMap(points_to_location_grid(pts, 32, 32, cfg.stride)), cfg).grid
    after = make_count_map(
        LocationMap(points_to_location_grid(pts + [extra], 32, 32, cfg.stride)), cfg).grid
    assert np.all(after >= before)


@settings(max_examples=40)
@given(st.lists(st.tuples(st.integers(min_value=0, max_value=31),
                          st.integers(min_value=0, max_value=31)), max_size=40))
def test_count_map_flip_equivariance_integer_points(ipts):
    # mirroring integer coordinates mirrors the count grid column order
    cfg = LabelConfig(r=8)
    pts = [(float(x), float(y)) for x, y in ipts]
    mirrored = [(float(31 - x), float(y)) for x, y in ipts]
    a = make_count_map(LocationMap(points_to_location_grid(pts, 32, 32, cfg.stride)), cfg).grid
    b = make_count_map(LocationMap(points_to_location_grid(mirrored, 32, 32, cfg.stride)), cfg).grid
    assert np.array_equal(b, a[:, :, ::-1])


# ---------------------------------------------------------------------------
# density and class maps


def test_density_sums_to_count():
    st_ = Stream(2)
    pts = [(float(x) * 63, float(y) * 63)
           for x, y in zip(st_.uniform(30), st_.uniform(30))]
    dm = make_density_map(pts, 64, 64, LabelConfig(r=8))
    assert dm.grid.shape == (1, 17, 17)
    assert dm.grid.sum() == pytest.approx(30.0, abs=1e-9)
    assert np.all(dm.grid >= 0.0)


def test_density_empty_points():
    dm = make_density_map([], 64, 64, LabelConfig(r=8))
    assert dm.grid.sum() == 0.0


def test_density_single_head_is_a_unit_bump():
    dm = make_density_map([(32.0, 32.0)], 64, 64, LabelConfig(r=8))
    assert dm.grid.sum() == pytest.approx(1.0, abs=1e-12)
    assert dm.grid[0].max() == dm.grid[0, 8, 8]  # centered at 32/4


def test_class_map_binning():
    cfg = LabelConfig(r=8, class_bins=(0.5, 1.5, 3.5))
    grid = np.array([[[0.0, 0.4, 0.5, 1.5, 3.4, 3.5, 10.0]]])
    ids = make_class_map(CountMap(grid=grid, k=2), cfg).ids
    assert ids.tolist() == [[0, 0, 1, 2, 2, 3, 3]]
    assert make_class_map(CountMap(grid=grid, k=2), cfg).n_classes == 4


def test_class_map_dtype_is_integer():
    cfg = LabelConfig(r=8)
    ids = make_class_map(CountMap(grid=np.zeros((1, 3, 3)), k=2), cfg).ids
    assert ids.dtype == np.int64


# ---------------------------------------------------------------------------
# label files


@pytest.mark.parametrize("magic,kind", [(b"CMAP", "count"), (b"DMAP", "density"),
                                        (b"KMAP", "class")])
def test_label_file_round_trip(tmp_path, magic, kind):
    grid = np.arange(12.0).reshape(3, 4) / 7.0
    p = tmp_path / "x.lbl"
    write_label_file(p, magic, grid)
    got_kind, got = read_label_file(p)
    assert got_kind == kind
    assert got.dtype == np.float32
    assert np.array_equal(got, grid.astype(np.float32))


def test_label_file_accepts_leading_channel(tmp_path):
    p = tmp_path / "x.cmap"
    write_label_file(p, b"CMAP", np.ones((1, 2, 2)))
    _, got = read_label_file(p)
    assert got.shape == (2, 2)


def test_label_file_bad_magic(tmp_path):
    p = tmp_path / "x.cmap"
    write_label_file(p, b"CMAP", np.ones((2, 2)))
    raw = bytearray(p.read_bytes())
    raw[:4] = b"XXXX"
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        read_label_file(p)


def test_label_file_bad_version(tmp_path):
    p = tmp_path / "x.cmap"
    write_label_file(p, b"CMAP", np.ones((2, 2)))
    raw = bytearray(p.read_bytes())
    raw[4] = 9
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        read_label_file(p)


def test_label_file_truncation_and_trailing(tmp_path):
    p = tmp_path / "x.cmap"
    write_label_file(p, b"CMAP", np.ones((2, 2)))
    raw = p.read_bytes()
    p.write_bytes(raw[:-2])
    with pytest.raises(FormatError):
        read_label_file(p)
    p.write_bytes(raw + b"\x00")
    with pytest.raises(FormatError):
        read_label_file(p)


def test_write_label_file_rejects_unknown_magic(tmp_path):
    with pytest.raises(FormatError):
        write_label_file(tmp_path / "x", b"ZZZZ", np.ones((2, 2)))


def test_write_label_file_rejects_bad_rank(tmp_path):
    with pytest.raises(DimensionError):
        write_label_file(tmp_path / "x", b"CMAP", np.ones((2, 2, 2)))
