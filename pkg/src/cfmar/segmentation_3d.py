"""Baseline 3D metal segmentation: HU thresholding in the reconstruction.

This is the path the view-consistent 2D approach is compared against. It is
structurally blind to metal outside the reconstruction grid and degrades
when starvation artifacts erase the metal contrast.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .consistency_filter import reproject_mask
from .errors import ContractError
from .geometry import ScanGeometry
from .segmentation_2d import MaskStack
from .volume import Mask3D, Volume

DEFAULT_HU_THRESHOLD = 3000.0


def threshold_segment_3d(
    volume: Volume, hu_threshold: float = DEFAULT_HU_THRESHOLD, min_size: int = 10
) -> Mask3D:
    """mask = volume >= threshold, with small connected components removed."""
    if volume.unit != "HU":
        raise ContractError("threshold_segment_3d expects an HU volume", code="unit_mismatch")
    mask = volume.values >= hu_threshold
    if min_size > 1 and mask.any():
        labels, n = ndimage.label(mask)
        if n:
            sizes = np.bincount(labels.ravel())
            keep = sizes >= min_size
            keep[0] = False
            mask = keep[labels]
    return Mask3D(mask, volume.grid)


def forward_project_mask3d(mask3d: Mask3D, geom: ScanGeometry) -> MaskStack:
    """Per-view 2D masks from a 3D mask (shared any-hit reprojection)."""
    return reproject_mask(mask3d, geom)
