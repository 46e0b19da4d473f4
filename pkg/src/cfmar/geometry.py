"""Circular short-scan cone-beam geometry.

World frame: the rotation axis is +z through the isocenter (origin). For
view i at angle theta the source sits at ``sid * (cos t, sin t, 0)`` and a
flat detector perpendicular to the central ray at distance ``sdd`` from the
source. Detector u runs along the tangential direction ``(-sin t, cos t, 0)``
and v along +z; pixel indices are (row, col) = (v, u).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ParameterError


class PixelCoord(NamedTuple):
    """Continuous detector coordinates in pixels. NaN marks behind-source."""

    u: float
    v: float


@dataclass(frozen=True)
class DetectorSpec:
    rows: int
    cols: int
    pixel_pitch: float  # mm
    principal_point: tuple[float, float] = None  # (u0, v0) in pixels

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ParameterError("detector rows and cols must be >= 1")
        if self.pixel_pitch <= 0:
            raise ParameterError("pixel_pitch must be > 0")
        if self.principal_point is None:
            object.__setattr__(
                self,
                "principal_point",
                ((self.cols - 1) / 2.0, (self.rows - 1) / 2.0),
            )
        else:
            object.__setattr__(self, "principal_point", tuple(self.principal_point))


@dataclass(frozen=True)
class ScanGeometry:
    num_views: int
    start_angle: float  # degrees
    angular_increment: float  # degrees
    source_to_isocenter: float  # mm
    source_to_detector: float  # mm
    detector: DetectorSpec

    def __post_init__(self):
        if self.num_views < 1:
            raise ParameterError("num_views must be >= 1")
        if self.angular_increment <= 0:
            raise ParameterError("angular_increment must be > 0")
        if not (0 < self.source_to_isocenter < self.source_to_detector):
            raise ParameterError("require 0 < sid < sdd")

    @property
    def angular_range(self) -> float:
        """Total covered range in degrees (N * increment)."""
        return self.num_views * self.angular_increment

    @property
    def angles_deg(self) -> np.ndarray:
        return self.start_angle + self.angular_increment * np.arange(self.num_views)

    @property
    def angles_rad(self) -> np.ndarray:
        return np.deg2rad(self.angles_deg)

    @property
    def fan_half_angle(self) -> float:
        """Half fan angle (radians) subtended by the detector columns."""
        half_width = (self.detector.cols / 2.0) * self.detector.pixel_pitch
        return math.atan2(half_width, self.source_to_detector)

    def source_position(self, view_index: int) -> np.ndarray:
        t = math.radians(self.start_angle + view_index * self.angular_increment)
        return self.source_to_isocenter * np.array([math.cos(t), math.sin(t), 0.0])

    def detector_axes(self, view_index: int):
        """Unit vectors (u_axis, v_axis, ray_dir) for one view.

        ray_dir points from the source toward the detector center.
        """
        t = math.radians(self.start_angle + view_index * self.angular_increment)
        u_axis = np.array([-math.sin(t), math.cos(t), 0.0])
        v_axis = np.array([0.0, 0.0, 1.0])
        ray_dir = np.array([-math.cos(t), -math.sin(t), 0.0])
        return u_axis, v_axis, ray_dir

    def to_dict(self) -> dict:
        return {
            "num_views": self.num_views,
            "start_angle_deg": self.start_angle,
            "angular_increment_deg": self.angular_increment,
            "source_to_isocenter_mm": self.source_to_isocenter,
            "source_to_detector_mm": self.source_to_detector,
            "detector": {
                "rows": self.detector.rows,
                "cols": self.detector.cols,
                "pixel_pitch_mm": self.detector.pixel_pitch,
                "principal_point_px": list(self.detector.principal_point),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScanGeometry":
        det = d["detector"]
        return cls(
            num_views=int(d["num_views"]),
            start_angle=float(d["start_angle_deg"]),
            angular_increment=float(d["angular_increment_deg"]),
            source_to_isocenter=float(d["source_to_isocenter_mm"]),
            source_to_detector=float(d["source_to_detector_mm"]),
            detector=DetectorSpec(
                rows=int(det["rows"]),
                cols=int(det["cols"]),
                pixel_pitch=float(det["pixel_pitch_mm"]),
                principal_point=tuple(det["principal_point_px"]),
            ),
        )

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path) -> "ScanGeometry":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def make_circular_trajectory(
    num_views: int,
    start_angle: float,
    angular_increment: float,
    sid: float,
    sdd: float,
    detector: DetectorSpec,
) -> ScanGeometry:
    """Build an ideal circular trajectory with equiangular views."""
    return ScanGeometry(
        num_views=num_views,
        start_angle=start_angle,
        angular_increment=angular_increment,
        source_to_isocenter=sid,
        source_to_detector=sdd,
        detector=detector,
    )


def project_point(geom: ScanGeometry, view_index: int, point_xyz_mm) -> PixelCoord:
    """Perspective projection of a 3D point onto one view's detector.

    Returns continuous pixel coordinates; a point at or behind the source
    plane yields (nan, nan) which never passes detector_contains.
    """
    if not (0 <= view_index < geom.num_views):
        raise ParameterError(f"view_index {view_index} out of range")
    p = np.asarray(point_xyz_mm, dtype=float)
    src = geom.source_position(view_index)
    u_axis, v_axis, ray_dir = geom.detector_axes(view_index)
    d = p - src
    t = float(d @ ray_dir)
    if t <= 1e-12:
        return PixelCoord(math.nan, math.nan)
    mag = geom.source_to_detector / (t * geom.detector.pixel_pitch)
    u0, v0 = geom.detector.principal_point
    return PixelCoord(u0 + float(d @ u_axis) * mag, v0 + float(d @ v_axis) * mag)


def project_points(geom: ScanGeometry, view_index: int, points):
    """Vectorized projection of (M, 3) points for one view.

    Returns (u, v, in_front) arrays; u/v are NaN where in_front is False.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    src = geom.source_position(view_index)
    u_axis, v_axis, ray_dir = geom.detector_axes(view_index)
    d = pts - src
    t = d @ ray_dir
    in_front = t > 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        mag = geom.source_to_detector / (t * geom.detector.pixel_pitch)
        u0, v0 = geom.detector.principal_point
        u = u0 + (d @ u_axis) * mag
        v = v0 + (d @ v_axis) * mag
    u[~in_front] = np.nan
    v[~in_front] = np.nan
    return u, v, in_front


def detector_contains(geom: ScanGeometry, pixel: PixelCoord) -> bool:
    """Round-to-nearest detector membership (a point owns exactly one pixel)."""
    u, v = pixel
    if not (math.isfinite(u) and math.isfinite(v)):
        return False
    col = math.floor(u + 0.5)
    row = math.floor(v + 0.5)
    return 0 <= col < geom.detector.cols and 0 <= row < geom.detector.rows


def trajectory_arrays(geom: ScanGeometry):
    """Per-view (sources, detector centers, u axes, v axes, ray dirs), (N, 3) each."""
    n = geom.num_views
    srcs = np.empty((n, 3))
    det_centers = np.empty((n, 3))
    u_axes = np.empty((n, 3))
    v_axes = np.empty((n, 3))
    ray_dirs = np.empty((n, 3))
    for i in range(n):
        srcs[i] = geom.source_position(i)
        u_axes[i], v_axes[i], ray_dirs[i] = geom.detector_axes(i)
        det_centers[i] = srcs[i] + geom.source_to_detector * ray_dirs[i]
    return srcs, det_centers, u_axes, v_axes, ray_dirs


def projection_matrices(geom: ScanGeometry) -> np.ndarray:
    """Per-view 3x4 homogeneous matrices mapping world points to (u*w, v*w, w).

    w equals the distance from the source measured along the central ray,
    so w <= 0 flags behind-source points.
    """
    mats = np.empty((geom.num_views, 3, 4), dtype=np.float64)
    f = geom.source_to_detector / geom.detector.pixel_pitch
    u0, v0 = geom.detector.principal_point
    for i in range(geom.num_views):
        src = geom.source_position(i)
        u_axis, v_axis, ray_dir = geom.detector_axes(i)
        r0 = f * u_axis + u0 * ray_dir
        r1 = f * v_axis + v0 * ray_dir
        r2 = ray_dir
        mats[i, 0, :3] = r0
        mats[i, 1, :3] = r1
        mats[i, 2, :3] = r2
        mats[i, 0, 3] = -r0 @ src
        mats[i, 1, 3] = -r1 @ src
        mats[i, 2, 3] = -r2 @ src
    return mats
