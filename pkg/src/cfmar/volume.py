"""3D scalar grids: GridSpec, Volume and binary Mask3D containers.

Array layout is (nx, ny, nz) indexed [ix, iy, iz]; axial slices are
``values[:, :, iz]``. ``origin`` is the world position (mm) of the center of
voxel (0, 0, 0); voxel centers are ``origin + index * spacing``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParameterError


@dataclass(frozen=True)
class GridSpec:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]  # mm
    origin: tuple[float, float, float]  # mm, center of voxel (0,0,0)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if any(n < 1 for n in self.dims):
            raise ParameterError("grid dims must be >= 1")
        if any(s <= 0 for s in self.spacing):
            raise ParameterError("grid spacing must be > 0")

    @classmethod
    def centered(cls, dims, spacing) -> "GridSpec":
        """Grid whose voxel-center cloud is centered on the isocenter."""
        dims = tuple(int(n) for n in dims)
        if np.isscalar(spacing):
            spacing = (float(spacing),) * 3
        origin = tuple(-(n - 1) / 2.0 * s for n, s in zip(dims, spacing))
        return cls(dims=dims, spacing=tuple(spacing), origin=origin)

    def voxel_centers_1d(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing[axis] * np.arange(self.dims[axis])

    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    def bounds(self):
        """AABB of the voxel cell extents: (lo, hi) arrays in mm."""
        lo = np.array(self.origin) - 0.5 * np.array(self.spacing)
        hi = lo + np.array(self.dims) * np.array(self.spacing)
        return lo, hi

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "spacing_mm": list(self.spacing),
            "origin_mm": list(self.origin),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            dims=tuple(d["dims"]),
            spacing=tuple(d["spacing_mm"]),
            origin=tuple(d["origin_mm"]),
        )


@dataclass
class Volume:
    values: np.ndarray  # float, shape = grid.dims
    grid: GridSpec
    unit: str = "1/mm"  # or "HU"

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.grid.dims:
            raise ContractError(
                f"volume shape {self.values.shape} != grid dims {self.grid.dims}",
                code="grid_mismatch",
            )

    def same_grid(self, other) -> bool:
        return self.grid == other.grid


@dataclass
class Mask3D:
    values: np.ndarray  # bool, shape = grid.dims
    grid: GridSpec

    def __post_init__(self):
        self.values = np.asarray(self.values).astype(bool)
        if self.values.shape != self.grid.dims:
            raise ContractError(
                f"mask shape {self.values.shape} != grid dims {self.grid.dims}",
                code="grid_mismatch",
            )

    def count(self) -> int:
        return int(self.values.sum())


def require_same_grid(a, b):
    if a.grid != b.grid:
        raise ContractError("inputs are on different grids", code="grid_mismatch")
