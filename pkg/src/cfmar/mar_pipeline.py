"""Inpainting-based MAR: standard (3D-threshold masks) and modified
(view-consistent 2D masks) variants of the frequency-split method.

Both variants share: projection-domain inpainting inside the 2D metal
masks, a corrected reconstruction, Gaussian frequency-split recombination
with the uncorrected volume, and metal insertion through a 3D mask. They
differ only in where the 2D masks come from.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .consistency_filter import (
    DEFAULT_AXIAL_FACTOR,
    DEFAULT_LATERAL_FACTOR,
    consistency_filter,
    extended_grid_for,
)
from .errors import ContractError, NumericalError, ParameterError
from .forward_model import (
    KIND_LINE_INTEGRAL,
    ProjectionStack,
    to_line_integrals,
)
from .recon_fdk import fdk_reconstruct, to_hounsfield
from .segmentation_2d import MaskStack, ScoreStack, binarize
from .segmentation_3d import forward_project_mask3d, threshold_segment_3d
from .volume import GridSpec, Mask3D, Volume, require_same_grid

INPAINT_METHODS = ("row_linear", "harmonic2d")
INSERTION_MASKS = ("threshold_3d", "cf_envelope")


@dataclass(frozen=True)
class MarParams:
    inpaint_method: str = "row_linear"
    freq_split_sigma: float = 3.0  # voxels
    insertion_source: str = "original_volume"
    # hybrid insertion (3D threshold mask) is the documented default and
    # reproduces the disappearing-metal failure; cf_envelope is the fix
    insertion_mask: str = "threshold_3d"
    cf_tau: float = 0.96
    hu_threshold: float = 3000.0
    seg_threshold: float = 0.0  # binarization cut for score inputs
    cf_min_support: int = None
    cf_lateral_factor: float = DEFAULT_LATERAL_FACTOR
    cf_axial_factor: float = DEFAULT_AXIAL_FACTOR
    min_component_size: int = 10
    mu_water: float = 0.02  # 1/mm

    def __post_init__(self):
        if self.freq_split_sigma < 0:
            raise ParameterError("freq_split_sigma must be >= 0")
        if not (0.0 < self.cf_tau <= 1.0):
            raise ParameterError("cf_tau must lie in (0, 1]")
        if self.inpaint_method not in INPAINT_METHODS:
            raise ParameterError(f"unknown inpaint method {self.inpaint_method!r}")
        if self.insertion_mask not in INSERTION_MASKS:
            raise ParameterError(f"unknown insertion mask {self.insertion_mask!r}")
        if self.insertion_source != "original_volume":
            raise ParameterError(f"unknown insertion source {self.insertion_source!r}")

    def to_dict(self) -> dict:
        return {
            "inpaint_method": self.inpaint_method,
            "freq_split_sigma": self.freq_split_sigma,
            "insertion_source": self.insertion_source,
            "insertion_mask": self.insertion_mask,
            "cf_tau": self.cf_tau,
            "hu_threshold": self.hu_threshold,
            "seg_threshold": self.seg_threshold,
            "cf_min_support": self.cf_min_support,
            "cf_lateral_factor": self.cf_lateral_factor,
            "cf_axial_factor": self.cf_axial_factor,
            "min_component_size": self.min_component_size,
            "mu_water": self.mu_water,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarParams":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class MarResult:
    """Final volume (HU) plus the 3D mask and the inspectable intermediates."""

    volume: Volume  # final MAR output, HU
    mask3d: Mask3D  # the variant's 3D metal mask (envelope for modified)
    nomar_volume: Volume  # uncorrected reconstruction, HU
    inpaint_masks: MaskStack  # 2D masks that drove the inpainting
    corrected_volume: Volume  # post-inpainting reconstruction, HU
    insertion_mask: Mask3D  # mask actually used for metal insertion
    envelope_recon: Mask3D = None  # CF envelope cropped to the recon grid


def _harmonic_inpaint_view(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Discrete Laplace fill of the masked region (Jacobi iteration)."""
    out = image.copy()
    if not mask.any():
        return out
    boundary = image[~mask]
    scale = float(boundary.max() - boundary.min())
    tol = 1e-4 * (scale if scale > 0 else 1.0)
    out[mask] = float(boundary.mean())
    for it in range(20000):
        padded = np.pad(out, 1, mode="edge")
        avg = 0.25 * (
            padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]
        )
        delta = avg[mask] - out[mask]
        out[mask] += delta
        if it % 25 == 0 and np.abs(delta).max() < tol:
            break
    else:
        raise NumericalError("harmonic inpainting did not converge")
    return out


def inpaint_projections(
    proj: ProjectionStack, masks: MaskStack, method: str = "row_linear"
) -> ProjectionStack:
    """Replace values inside the 2D masks; unmasked pixels stay bit-exact.

    row_linear interpolates per detector row between the nearest unmasked
    neighbors (clamping at the row ends); a fully masked row falls back to
    the harmonic fill for that view. A fully masked view is an error.
    """
    if proj.kind != KIND_LINE_INTEGRAL:
        raise ContractError("inpainting expects line integrals", code="kind_mismatch")
    if proj.geometry != masks.geometry:
        raise ContractError("mask/projection geometry mismatch", code="geometry_mismatch")
    if method not in INPAINT_METHODS:
        raise ParameterError(f"unknown inpaint method {method!r}")
    out = proj.data.copy()
    cols_idx = np.arange(out.shape[2])
    for i in range(out.shape[0]):
        m = masks.data[i]
        if not m.any():
            continue
        if m.all():
            raise ContractError(f"view {i} is fully masked; nothing to inpaint from")
        if method == "harmonic2d":
            out[i] = _harmonic_inpaint_view(out[i], m)
            continue
        full_rows = m.all(axis=1)
        for r in np.flatnonzero(m.any(axis=1) & ~full_rows):
            good = ~m[r]
            out[i, r, m[r]] = np.interp(
                cols_idx[m[r]], cols_idx[good], out[i, r, good]
            )
        if full_rows.any():
            out[i] = _harmonic_inpaint_view(out[i], m & full_rows[:, None])
    return ProjectionStack(out, KIND_LINE_INTEGRAL, proj.geometry)


def frequency_split(
    corrected_vol: Volume, original_vol: Volume, sigma: float
) -> Volume:
    """Low frequencies from the corrected volume, high ones from the original.

    out = lowpass(corrected) + original - lowpass(original), with a separable
    Gaussian of the given sigma (voxels); sigma 0 returns the original.
    """
    require_same_grid(corrected_vol, original_vol)
    if sigma < 0:
        raise ParameterError("sigma must be >= 0")
    if sigma == 0:
        return Volume(original_vol.values.copy(), original_vol.grid, original_vol.unit)
    lp_corr = ndimage.gaussian_filter(corrected_vol.values, sigma)
    lp_orig = ndimage.gaussian_filter(original_vol.values, sigma)
    return Volume(
        lp_corr + original_vol.values - lp_orig, original_vol.grid, original_vol.unit
    )


def metal_insertion(mar_vol: Volume, original_vol: Volume, mask3d: Mask3D) -> Volume:
    """Write the original voxel values back inside the 3D metal mask."""
    require_same_grid(mar_vol, original_vol)
    if mar_vol.grid != mask3d.grid:
        raise ContractError("insertion mask grid mismatch", code="grid_mismatch")
    out = np.where(mask3d.values, original_vol.values, mar_vol.values)
    return Volume(out, mar_vol.grid, mar_vol.unit)


def crop_mask_to_grid(mask3d: Mask3D, grid: GridSpec) -> Mask3D:
    """Nearest-voxel restriction of a mask to another same-spacing grid."""
    src = mask3d.grid
    out = np.zeros(grid.dims, dtype=bool)
    idx = []
    for ax in range(3):
        centers = grid.origin[ax] + grid.spacing[ax] * np.arange(grid.dims[ax])
        j = np.round((centers - src.origin[ax]) / src.spacing[ax]).astype(int)
        idx.append(np.clip(j, 0, src.dims[ax] - 1))
    out[:, :, :] = mask3d.values[np.ix_(idx[0], idx[1], idx[2])]
    # voxels genuinely outside the source grid must stay false
    for ax in range(3):
        centers = grid.origin[ax] + grid.spacing[ax] * np.arange(grid.dims[ax])
        outside = (centers < src.origin[ax] - 0.5 * src.spacing[ax]) | (
            centers > src.origin[ax] + (src.dims[ax] - 0.5) * src.spacing[ax]
        )
        if outside.any():
            sl = [slice(None)] * 3
            sl[ax] = outside
            out[tuple(sl)] = False
    return Mask3D(out, grid)


def _reconstruct_hu(p: ProjectionStack, grid: GridSpec, mu_water: float) -> Volume:
    return to_hounsfield(fdk_reconstruct(p, grid), mu_water)


def run_standard_fsmar(
    raw_metal: ProjectionStack,
    grid: GridSpec,
    params: MarParams,
    I0: float,
) -> MarResult:
    """Standard variant: 3D HU threshold mask, forward-projected to 2D."""
    geom = raw_metal.geometry
    p = to_line_integrals(raw_metal, I0)
    nomar = _reconstruct_hu(p, grid, params.mu_water)
    mask3d = threshold_segment_3d(
        nomar, params.hu_threshold, min_size=params.min_component_size
    )
    masks2d = forward_project_mask3d(mask3d, geom)
    p_inpainted = inpaint_projections(p, masks2d, params.inpaint_method)
    corrected = _reconstruct_hu(p_inpainted, grid, params.mu_water)
    fused = frequency_split(corrected, nomar, params.freq_split_sigma)
    final = metal_insertion(fused, nomar, mask3d)
    return MarResult(
        volume=final,
        mask3d=mask3d,
        nomar_volume=nomar,
        inpaint_masks=masks2d,
        corrected_volume=corrected,
        insertion_mask=mask3d,
    )


def run_modified_fsmar(
    raw_metal: ProjectionStack,
    grid: GridSpec,
    seg_source,
    params: MarParams,
    I0: float,
    apply_cf: bool = True,
) -> MarResult:
    """Modified variant: data-driven 2D masks cleaned by the consistency filter.

    seg_source is a ScoreStack (binarized at params.seg_threshold) or a
    ready MaskStack. Metal insertion keeps the 3D threshold mask by default
    (the hybrid that can make starved metal disappear); set
    params.insertion_mask = "cf_envelope" for the consistent alternative.
    apply_cf=False feeds the masks straight to inpainting (diagnostic mode;
    with baseline masks the pipelines coincide).
    """
    geom = raw_metal.geometry
    if isinstance(seg_source, ScoreStack):
        masks_in = binarize(seg_source, params.seg_threshold)
    elif isinstance(seg_source, MaskStack):
        masks_in = seg_source
    else:
        raise ContractError("seg_source must be a ScoreStack or MaskStack")
    p = to_line_integrals(raw_metal, I0)
    nomar = _reconstruct_hu(p, grid, params.mu_water)
    threshold_mask = threshold_segment_3d(
        nomar, params.hu_threshold, min_size=params.min_component_size
    )
    if apply_cf:
        ext_grid = extended_grid_for(
            grid, params.cf_lateral_factor, params.cf_axial_factor
        )
        cf_masks, envelope = consistency_filter(
            masks_in, geom, ext_grid, params.cf_tau, min_support=params.cf_min_support
        )
        envelope_recon = crop_mask_to_grid(envelope, grid)
    else:
        cf_masks = masks_in
        envelope_recon = threshold_mask
        envelope = threshold_mask
    p_inpainted = inpaint_projections(p, cf_masks, params.inpaint_method)
    corrected = _reconstruct_hu(p_inpainted, grid, params.mu_water)
    fused = frequency_split(corrected, nomar, params.freq_split_sigma)
    if params.insertion_mask == "cf_envelope":
        insertion = envelope_recon
    else:
        insertion = threshold_mask
    final = metal_insertion(fused, nomar, insertion)
    return MarResult(
        volume=final,
        mask3d=envelope,
        nomar_volume=nomar,
        inpaint_masks=cf_masks,
        corrected_volume=corrected,
        insertion_mask=insertion,
        envelope_recon=envelope_recon,
    )
