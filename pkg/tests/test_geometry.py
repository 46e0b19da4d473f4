"""Projection geometry: closed-form checks and matrix/scalar agreement."""

import json
import math

import numpy as np
import pytest

from cfmar.errors import ParameterError
from cfmar.geometry import (
    DetectorSpec,
    ScanGeometry,
    detector_contains,
    make_circular_trajectory,
    project_point,
    project_points,
    projection_matrices,
    trajectory_arrays,
)


def test_isocenter_projects_to_principal_point(small_geom):
    for i in range(small_geom.num_views):
        u, v = project_point(small_geom, i, (0.0, 0.0, 0.0))
        u0, v0 = small_geom.detector.principal_point
        assert u == pytest.approx(u0, abs=1e-9)
        assert v == pytest.approx(v0, abs=1e-9)


def test_magnification_closed_form(small_geom):
    """A tangential offset d at the isocenter maps to d * sdd / sid pixels."""
    d = 7.5
    mag = small_geom.source_to_detector / small_geom.source_to_isocenter
    for i in (0, 3, 7):
        u_axis, v_axis, _ = small_geom.detector_axes(i)
        u, v = project_point(small_geom, i, d * u_axis)
        u0, v0 = small_geom.detector.principal_point
        assert u - u0 == pytest.approx(d * mag / small_geom.detector.pixel_pitch, abs=1e-9)
        assert v == pytest.approx(v0, abs=1e-9)
        u, v = project_point(small_geom, i, d * v_axis)
        assert v - v0 == pytest.approx(d * mag / small_geom.detector.pixel_pitch, abs=1e-9)
        assert u == pytest.approx(u0, abs=1e-9)


def test_behind_source_is_nan(small_geom):
    src = small_geom.source_position(0)
    u, v = project_point(small_geom, 0, 2.0 * src)
    assert math.isnan(u) and math.isnan(v)
    u_arr, v_arr, in_front = project_points(small_geom, 0, [2.0 * src, [0, 0, 0]])
    assert not in_front[0] and in_front[1]
    assert np.isnan(u_arr[0]) and np.isnan(v_arr[0])


def test_vectorized_matches_scalar(small_geom):
    rng = np.random.default_rng(1)
    pts = rng.uniform(-80, 80, (40, 3))
    for i in range(small_geom.num_views):
        u_arr, v_arr, in_front = project_points(small_geom, i, pts)
        for k, p in enumerate(pts):
            u, v = project_point(small_geom, i, p)
            if in_front[k]:
                assert u == pytest.approx(u_arr[k], abs=1e-12)
                assert v == pytest.approx(v_arr[k], abs=1e-12)
            else:
                assert math.isnan(u)


def test_projection_matrices_match_scalar(small_geom):
    mats = projection_matrices(small_geom)
    rng = np.random.default_rng(2)
    pts = rng.uniform(-100, 100, (25, 3))
    for i in range(small_geom.num_views):
        for p in pts:
            hom = mats[i] @ np.append(p, 1.0)
            u, v = project_point(small_geom, i, p)
            if hom[2] > 1e-12:
                assert hom[0] / hom[2] == pytest.approx(u, abs=1e-9)
                assert hom[1] / hom[2] == pytest.approx(v, abs=1e-9)
            else:
                assert math.isnan(u)


def test_projection_matrix_w_is_ray_depth(small_geom):
    """The homogeneous w equals the distance along the central ray."""
    mats = projection_matrices(small_geom)
    rng = np.random.default_rng(3)
    for i in range(small_geom.num_views):
        src = small_geom.source_position(i)
        _, _, ray_dir = small_geom.detector_axes(i)
        p = rng.uniform(-60, 60, 3)
        w = mats[i, 2] @ np.append(p, 1.0)
        assert w == pytest.approx(float((p - src) @ ray_dir), abs=1e-9)


def test_detector_contains_rounding_edges(small_geom):
    from cfmar.geometry import PixelCoord

    cols = small_geom.detector.cols
    assert detector_contains(small_geom, PixelCoord(-0.5, 0.0))
    assert not detector_contains(small_geom, PixelCoord(-0.51, 0.0))
    assert not detector_contains(small_geom, PixelCoord(cols - 0.5, 0.0))
    assert detector_contains(small_geom, PixelCoord(cols - 0.51, 0.0))
    assert not detector_contains(small_geom, PixelCoord(math.nan, math.nan))


def test_trajectory_arrays_consistent(small_geom):
    srcs, det_centers, u_axes, v_axes, ray_dirs = trajectory_arrays(small_geom)
    for i in range(small_geom.num_views):
        assert np.allclose(srcs[i], small_geom.source_position(i))
        ua, va, rd = small_geom.detector_axes(i)
        assert np.allclose(u_axes[i], ua)
        assert np.allclose(v_axes[i], va)
        assert np.allclose(ray_dirs[i], rd)
        assert np.allclose(
            det_centers[i], srcs[i] + small_geom.source_to_detector * rd
        )
        # orthonormal frame
        assert abs(ua @ va) < 1e-12 and abs(ua @ rd) < 1e-12


def test_angles_and_fan_angle(small_geom):
    assert small_geom.angular_range == pytest.approx(240.0)
    assert np.allclose(small_geom.angles_deg, 20.0 * np.arange(12))
    half_width = small_geom.detector.cols / 2.0 * small_geom.detector.pixel_pitch
    assert small_geom.fan_half_angle == pytest.approx(
        math.atan2(half_width, small_geom.source_to_detector)
    )


def test_dict_and_file_roundtrip(tmp_path, small_geom):
    d = small_geom.to_dict()
    assert ScanGeometry.from_dict(d) == small_geom
    path = tmp_path / "geom.json"
    small_geom.save(path)
    assert ScanGeometry.load(path) == small_geom
    with open(path) as f:
        assert json.load(f)["num_views"] == 12


def test_make_circular_trajectory(small_geom):
    geom = make_circular_trajectory(
        12, 0.0, 20.0, 300.0, 600.0, small_geom.detector
    )
    assert geom == small_geom


def test_parameter_validation():
    det = DetectorSpec(rows=4, cols=4, pixel_pitch=1.0)
    with pytest.raises(ParameterError):
        DetectorSpec(rows=0, cols=4, pixel_pitch=1.0)
    with pytest.raises(ParameterError):
        DetectorSpec(rows=4, cols=4, pixel_pitch=0.0)
    with pytest.raises(ParameterError):
        ScanGeometry(0, 0.0, 1.0, 300.0, 600.0, det)
    with pytest.raises(ParameterError):
        ScanGeometry(4, 0.0, -1.0, 300.0, 600.0, det)
    with pytest.raises(ParameterError):
        ScanGeometry(4, 0.0, 1.0, 700.0, 600.0, det)
    geom = ScanGeometry(4, 0.0, 1.0, 300.0, 600.0, det)
    with pytest.raises(ParameterError):
        project_point(geom, 4, (0, 0, 0))


def test_default_principal_point_is_detector_center():
    det = DetectorSpec(rows=5, cols=9, pixel_pitch=1.0)
    assert det.principal_point == (4.0, 2.0)
