"""RAW + sidecar persistence roundtrips and failure modes."""

import json

import numpy as np
import pytest

from cfmar import io as cfio
from cfmar.errors import FormatError
from cfmar.forward_model import ProjectionStack
from cfmar.segmentation_2d import MaskStack, ScoreStack
from cfmar.volume import GridSpec, Mask3D, Volume


def test_volume_roundtrip(tmp_path, small_grid):
    rng = np.random.default_rng(0)
    vol = Volume(rng.random(small_grid.dims), small_grid, unit="HU")
    path = tmp_path / "vol"
    cfio.save_volume(vol, path)
    loaded = cfio.load_volume(path)
    assert isinstance(loaded, Volume)
    assert loaded.unit == "HU"
    assert loaded.grid == small_grid
    # float32 storage: exact after one float32 round
    assert np.array_equal(loaded.values, vol.values.astype(np.float32).astype(np.float64))
    # stems with either suffix resolve to the same files
    assert np.array_equal(cfio.load_volume(str(path) + ".raw").values, loaded.values)
    assert np.array_equal(cfio.load_volume(str(path) + ".json").values, loaded.values)


def test_mask_roundtrip(tmp_path, small_grid):
    rng = np.random.default_rng(1)
    mask = Mask3D(rng.random(small_grid.dims) < 0.3, small_grid)
    path = tmp_path / "mask"
    cfio.save_volume(mask, path)
    loaded = cfio.load_volume(path)
    assert isinstance(loaded, Mask3D)
    assert np.array_equal(loaded.values, mask.values)


def test_stack_roundtrips(tmp_path, small_geom):
    rng = np.random.default_rng(2)
    det = small_geom.detector
    shape = (small_geom.num_views, det.rows, det.cols)
    for stack in (
        ProjectionStack(rng.random(shape), "line_integral", small_geom),
        ProjectionStack(rng.random(shape) + 1.0, "raw_intensity", small_geom),
        MaskStack(rng.random(shape) < 0.5, small_geom),
        ScoreStack(rng.standard_normal(shape), small_geom),
    ):
        path = tmp_path / type(stack).__name__
        cfio.save_stack(stack, path, extras={"note": "x"})
        loaded = cfio.load_stack(path, geom=small_geom)
        assert type(loaded) is type(stack)
        if isinstance(stack, MaskStack):
            assert np.array_equal(loaded.data, stack.data)
        else:
            assert np.array_equal(
                loaded.data, stack.data.astype(np.float32).astype(np.float64)
            )
        assert cfio.load_sidecar(path)["note"] == "x"


def test_stack_geometry_check(tmp_path, small_geom):
    from cfmar.geometry import ScanGeometry

    det = small_geom.detector
    shape = (small_geom.num_views, det.rows, det.cols)
    stack = MaskStack(np.zeros(shape, bool), small_geom)
    path = tmp_path / "m"
    cfio.save_stack(stack, path)
    other = ScanGeometry(
        small_geom.num_views, 3.0, small_geom.angular_increment,
        small_geom.source_to_isocenter, small_geom.source_to_detector, det,
    )
    with pytest.raises(FormatError):
        cfio.load_stack(path, geom=other)


def test_hit_counts_dtype_selection(tmp_path, small_grid):
    v_hit = np.full(small_grid.dims, 3, np.uint16)
    v_max = np.full(small_grid.dims, 9, np.uint16)
    cfio.save_hit_counts(v_hit, v_max, small_grid, tmp_path / "hits")
    assert cfio.load_sidecar(tmp_path / "hits_max")["dtype"] == "<u2"
    big = np.full(small_grid.dims, 70000, np.uint32)
    cfio.save_hit_counts(big, big, small_grid, tmp_path / "big")
    assert cfio.load_sidecar(tmp_path / "big_max")["dtype"] == "<u4"


def test_missing_and_malformed_sidecars(tmp_path, small_grid):
    with pytest.raises(FormatError):
        cfio.load_volume(tmp_path / "absent")
    bad = tmp_path / "bad"
    bad.with_suffix(".json").write_text("{not json")
    with pytest.raises(FormatError):
        cfio.load_sidecar(bad)
    # size mismatch between raw payload and sidecar promise
    vol = Volume(np.zeros(small_grid.dims), small_grid)
    cfio.save_volume(vol, tmp_path / "short")
    data = (tmp_path / "short.raw").read_bytes()
    (tmp_path / "short.raw").write_bytes(data[:-8])
    with pytest.raises(FormatError):
        cfio.load_volume(tmp_path / "short")
    # a stack sidecar is not a volume
    sidecar = json.loads((tmp_path / "short.json").read_text())
    sidecar["type"] = "stack"
    (tmp_path / "short.json").write_text(json.dumps(sidecar))
    with pytest.raises(FormatError):
        cfio.load_volume(tmp_path / "short")


def test_save_slice_png(tmp_path, small_grid):
    rng = np.random.default_rng(3)
    vol = Volume(rng.random(small_grid.dims) * 2000 - 1000, small_grid, unit="HU")
    out = tmp_path / "slice.png"
    cfio.save_slice_png(vol, 8, out, window="-500,1500")
    assert out.exists() and out.stat().st_size > 0
    cfio.save_slice_png(vol, 0, tmp_path / "auto.png")
    with pytest.raises(FormatError):
        cfio.save_slice_png(vol, 0, tmp_path / "bad.png", window="oops")
