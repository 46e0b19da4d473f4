"""View-consistency filtering of per-view metal masks.

Back-project the binary 2D masks into an extended hit-counter grid, count
per voxel how many views segment it (V_hit) versus how many views can see
it at all (V_max), threshold the normalized count, and reproject the
resulting 3D envelope to a clean, view-consistent mask stack.

The hit-counter grid deliberately extends well beyond the reconstruction
FoV so metal outside it still accumulates consistently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ContractError, ParameterError
from .geometry import ScanGeometry, projection_matrices, trajectory_arrays
from .segmentation_2d import MaskStack
from .volume import GridSpec, Mask3D

# lateral/axial growth of the hit-counter grid relative to the
# reconstruction grid (1500/512 and 600/512 at full scale)
DEFAULT_LATERAL_FACTOR = 1500.0 / 512.0
DEFAULT_AXIAL_FACTOR = 600.0 / 512.0


@dataclass
class HitVolumes:
    v_hit: np.ndarray  # uint16
    v_max: np.ndarray  # uint16
    v_norm: np.ndarray  # float in [0, 1]; 0 where v_max == 0
    grid: GridSpec
    num_views: int


def extended_grid_for(
    recon_grid: GridSpec,
    lateral_factor: float = DEFAULT_LATERAL_FACTOR,
    axial_factor: float = DEFAULT_AXIAL_FACTOR,
) -> GridSpec:
    """Hit-counter grid: same spacing and center, scaled lateral/axial extents."""
    if lateral_factor < 1 or axial_factor <= 0:
        raise ParameterError("grid factors must be >= 1 laterally and > 0 axially")
    dims = recon_grid.dims
    new_dims = (
        int(round(dims[0] * lateral_factor)),
        int(round(dims[1] * lateral_factor)),
        int(round(dims[2] * axial_factor)),
    )
    center = tuple(
        o + (n - 1) / 2.0 * s
        for o, n, s in zip(recon_grid.origin, dims, recon_grid.spacing)
    )
    origin = tuple(
        c - (n - 1) / 2.0 * s for c, n, s in zip(center, new_dims, recon_grid.spacing)
    )
    return GridSpec(dims=new_dims, spacing=recon_grid.spacing, origin=origin)


def accumulate_hits(
    masks: MaskStack, geom: ScanGeometry, extended_grid: GridSpec
) -> HitVolumes:
    """Per-voxel hit counting over all views with nearest-pixel association."""
    if masks.geometry != geom:
        raise ContractError("mask stack geometry mismatch", code="geometry_mismatch")
    mats = projection_matrices(geom)
    v_hit, v_max = _kernels.accumulate_hits(
        np.ascontiguousarray(masks.data.astype(np.uint8)),
        mats,
        *extended_grid.dims,
        *extended_grid.origin,
        *extended_grid.spacing,
    )
    with np.errstate(invalid="ignore"):
        v_norm = np.where(v_max > 0, v_hit / np.maximum(v_max, 1), 0.0)
    return HitVolumes(
        v_hit=v_hit, v_max=v_max, v_norm=v_norm, grid=extended_grid, num_views=geom.num_views
    )


def binarize_consistency(
    hitvols: HitVolumes, tau: float, min_support: int = None
) -> Mask3D:
    """Threshold the normalized hit counter into the overestimated 3D envelope.

    min_support excludes voxels visible in too few views (V_norm is trivially
    1 there); defaults to num_views // 10, set 1 for strict hit-count
    semantics.
    """
    if not (0.0 < tau <= 1.0):
        raise ParameterError("tau must lie in (0, 1]")
    if min_support is None:
        min_support = max(1, hitvols.num_views // 10)
    if min_support < 1:
        raise ParameterError("min_support must be >= 1")
    mask = (hitvols.v_norm >= tau) & (hitvols.v_max >= min_support)
    return Mask3D(mask, hitvols.grid)


def _true_bounds(mask3d: Mask3D):
    """World AABB around the true voxels (half-voxel margin); None if empty."""
    vals = mask3d.values
    if not vals.any():
        return None
    grid = mask3d.grid
    lo = np.empty(3)
    hi = np.empty(3)
    for ax, axes in enumerate([(1, 2), (0, 2), (0, 1)]):
        proj = vals.any(axis=axes)
        idx = np.flatnonzero(proj)
        lo[ax] = grid.origin[ax] + (idx[0] - 0.5) * grid.spacing[ax]
        hi[ax] = grid.origin[ax] + (idx[-1] + 0.5) * grid.spacing[ax]
    return lo, hi


def reproject_mask(
    mask3d: Mask3D, geom: ScanGeometry, step: float = None
) -> MaskStack:
    """Any-hit forward projection of a 3D mask to per-view detector masks.

    A pixel is metal as soon as its central ray meets one true voxel; the
    envelope carries no thickness information, so no weighting is applied.
    """
    det = geom.detector
    shape = (geom.num_views, det.rows, det.cols)
    bounds = _true_bounds(mask3d)
    if bounds is None:
        return MaskStack(np.zeros(shape, dtype=bool), geom)
    if step is None:
        step = 0.5 * min(mask3d.grid.spacing)
    srcs, det_centers, u_axes, v_axes, _ = trajectory_arrays(geom)
    u0, v0 = det.principal_point
    out = _kernels.reproject_mask_views(
        np.ascontiguousarray(mask3d.values.astype(np.uint8)),
        *mask3d.grid.origin,
        *mask3d.grid.spacing,
        bounds[0],
        bounds[1],
        srcs,
        det_centers,
        u_axes,
        v_axes,
        det.pixel_pitch,
        u0,
        v0,
        det.rows,
        det.cols,
        step,
    )
    return MaskStack(out.astype(bool), geom)


def consistency_filter(
    masks: MaskStack,
    geom: ScanGeometry,
    extended_grid: GridSpec,
    tau: float = 0.96,
    min_support: int = None,
):
    """Full filter: accumulate, binarize at tau, reproject.

    Returns (clean MaskStack, intermediate 3D envelope Mask3D).
    """
    hitvols = accumulate_hits(masks, geom, extended_grid)
    envelope = binarize_consistency(hitvols, tau, min_support=min_support)
    return reproject_mask(envelope, geom), envelope
