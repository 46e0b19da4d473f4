"""Analytic phantoms: anatomy and metal primitives with exact geometry.

Primitives are convex solids (ellipsoid, finite cylinder, box) with a rigid
pose. Overlaps resolve by list order: the last primitive covering a point
wins. Ray chords are computed analytically, so line integrals and per-view
metal traces are exact and independent of any voxel grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import _kernels
from .errors import FormatError, ParameterError
from .geometry import ScanGeometry
from .volume import GridSpec, Mask3D, Volume

_SHAPES = {"ellipsoid": 0, "cylinder": 1, "box": 2}

PRESET_NAMES = (
    "knee_screws",
    "spine_pedicle",
    "kwire_outside_fov",
    "towers_heavy_metal",
)


@dataclass(frozen=True)
class Material:
    name: str
    mu_mono: float  # 1/mm at the reference energy
    is_metal: bool = False
    # per-material scale on the quadratic beam-hardening partial integral;
    # defaults to 1 for metals so the partial equals the metal line integral
    beam_hardening_coeff: float = None

    def __post_init__(self):
        if self.mu_mono < 0:
            raise ParameterError("mu_mono must be >= 0")
        if self.beam_hardening_coeff is None:
            object.__setattr__(
                self, "beam_hardening_coeff", 1.0 if self.is_metal else 0.0
            )


@dataclass(frozen=True)
class Primitive:
    shape: str  # ellipsoid | cylinder | box
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    material: Material
    # columns are the local axes in world coordinates; cylinder axis = local z
    orientation: tuple = None

    def __post_init__(self):
        if self.shape not in _SHAPES:
            raise ParameterError(f"unknown primitive shape {self.shape!r}")
        if any(h <= 0 for h in self.half_extents):
            raise ParameterError("half_extents must be > 0")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(
            self, "half_extents", tuple(float(h) for h in self.half_extents)
        )
        R = np.eye(3) if self.orientation is None else np.asarray(self.orientation, float)
        if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise ParameterError("orientation must be a 3x3 orthonormal matrix")
        object.__setattr__(self, "orientation", tuple(map(tuple, R.tolist())))

    @property
    def rotation(self) -> np.ndarray:
        return np.asarray(self.orientation, dtype=float)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean inside-test for an (M, 3) array of world points."""
        pts = np.atleast_2d(points)
        local = (pts - np.asarray(self.center)) @ self.rotation
        hx, hy, hz = self.half_extents
        if self.shape == "ellipsoid":
            return (
                (local[:, 0] / hx) ** 2
                + (local[:, 1] / hy) ** 2
                + (local[:, 2] / hz) ** 2
            ) <= 1.0
        if self.shape == "cylinder":
            radial = (local[:, 0] / hx) ** 2 + (local[:, 1] / hy) ** 2
            return (radial <= 1.0) & (np.abs(local[:, 2]) <= hz)
        return np.all(np.abs(local) <= np.array(self.half_extents), axis=1)


@dataclass(frozen=True)
class Phantom:
    name: str
    primitives: tuple

    def __post_init__(self):
        prims = tuple(self.primitives)
        if not prims:
            raise ParameterError("phantom needs at least one primitive")
        object.__setattr__(self, "primitives", prims)

    def metal_primitives(self) -> tuple:
        return tuple(p for p in self.primitives if p.material.is_metal)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "primitives": [
                {
                    "shape": p.shape,
                    "center_mm": list(p.center),
                    "half_extents_mm": list(p.half_extents),
                    "orientation": [list(r) for r in p.orientation],
                    "material": {
                        "name": p.material.name,
                        "mu_mono_per_mm": p.material.mu_mono,
                        "is_metal": p.material.is_metal,
                        "beam_hardening_coeff": p.material.beam_hardening_coeff,
                    },
                }
                for p in self.primitives
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Phantom":
        try:
            prims = tuple(
                Primitive(
                    shape=p["shape"],
                    center=tuple(p["center_mm"]),
                    half_extents=tuple(p["half_extents_mm"]),
                    orientation=p.get("orientation"),
                    material=Material(
                        name=p["material"]["name"],
                        mu_mono=float(p["material"]["mu_mono_per_mm"]),
                        is_metal=bool(p["material"]["is_metal"]),
                        beam_hardening_coeff=p["material"].get("beam_hardening_coeff"),
                    ),
                )
                for p in d["primitives"]
            )
        except KeyError as e:
            raise FormatError(f"phantom document missing key {e}") from e
        return cls(name=d["name"], primitives=prims)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path) -> "Phantom":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def metal_free_twin(phantom: Phantom) -> Phantom:
    """The matched second scan: identical phantom minus all metal primitives."""
    prims = tuple(p for p in phantom.primitives if not p.material.is_metal)
    return Phantom(name=f"metal_free_twin({phantom.name})", primitives=prims)


def build_preset(preset_name: str) -> Phantom:
    """Load a named phantom preset shipped with the package.

    ``metal_free_twin(<preset>)`` yields the matching metal-free phantom.
    """
    name = preset_name.strip()
    if name.startswith("metal_free_twin(") and name.endswith(")"):
        return metal_free_twin(build_preset(name[len("metal_free_twin(") : -1]))
    if name not in PRESET_NAMES:
        raise ParameterError(f"unknown preset {preset_name!r}", code="unknown_preset")
    data = resources.files("cfmar.presets").joinpath(f"{name}.json").read_text()
    return Phantom.from_dict(json.loads(data))


def rotation_from_axis(axis) -> np.ndarray:
    """Rotation whose local z axis equals the given world direction."""
    z = np.asarray(axis, dtype=float)
    n = np.linalg.norm(z)
    if n == 0:
        raise ParameterError("axis must be nonzero")
    z = z / n
    helper = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def _grid_points(grid: GridSpec) -> np.ndarray:
    xs = grid.voxel_centers_1d(0)
    ys = grid.voxel_centers_1d(1)
    zs = grid.voxel_centers_1d(2)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])


def voxelize(phantom: Phantom, grid: GridSpec) -> Volume:
    """Sample mu at voxel centers; the last covering primitive wins."""
    pts = _grid_points(grid)
    values = np.zeros(pts.shape[0], dtype=np.float64)
    for prim in phantom.primitives:
        inside = prim.contains(pts)
        values[inside] = prim.material.mu_mono
    return Volume(values=values.reshape(grid.dims), grid=grid, unit="1/mm")


def metal_mask_3d(phantom: Phantom, grid: GridSpec) -> Mask3D:
    """Binary grid: voxel center inside any metal primitive."""
    pts = _grid_points(grid)
    mask = np.zeros(pts.shape[0], dtype=bool)
    for prim in phantom.metal_primitives():
        mask |= prim.contains(pts)
    return Mask3D(values=mask.reshape(grid.dims), grid=grid)


def pack_primitives(phantom: Phantom):
    """Flatten primitives into arrays consumed by the ray-casting kernels."""
    prims = phantom.primitives
    n = len(prims)
    types = np.empty(n, dtype=np.int8)
    centers = np.empty((n, 3), dtype=np.float64)
    rot = np.empty((n, 3, 3), dtype=np.float64)  # world -> local (R^T)
    half = np.empty((n, 3), dtype=np.float64)
    mu = np.empty(n, dtype=np.float64)
    metal = np.empty(n, dtype=np.uint8)
    bh = np.empty(n, dtype=np.float64)
    for k, p in enumerate(prims):
        types[k] = _SHAPES[p.shape]
        centers[k] = p.center
        rot[k] = p.rotation.T
        half[k] = p.half_extents
        mu[k] = p.material.mu_mono
        metal[k] = 1 if p.material.is_metal else 0
        bh[k] = p.material.beam_hardening_coeff
    return types, centers, rot, half, mu, metal, bh


def _view_frame(geom: ScanGeometry, view_index: int):
    src = geom.source_position(view_index)
    u_axis, v_axis, ray_dir = geom.detector_axes(view_index)
    det_center = src + geom.source_to_detector * ray_dir
    return src, det_center, u_axis, v_axis


def metal_trace_2d(phantom: Phantom, geom: ScanGeometry, view_index: int) -> np.ndarray:
    """Exact per-view metal trace: pixel true iff its central ray crosses metal."""
    if not (0 <= view_index < geom.num_views):
        raise ParameterError(f"view_index {view_index} out of range")
    packed = pack_primitives(phantom)
    src, det_center, u_axis, v_axis = _view_frame(geom, view_index)
    u0, v0 = geom.detector.principal_point
    _, _, _, chord_metal = _kernels.analytic_view(
        *packed,
        src,
        det_center,
        u_axis,
        v_axis,
        geom.detector.pixel_pitch,
        u0,
        v0,
        geom.detector.rows,
        geom.detector.cols,
    )
    return chord_metal > 1e-9
