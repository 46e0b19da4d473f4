"""Evaluation battery: joint 3D mask, masked per-slice SSIM/PSNR,
precision/recall/F-score for 2D masks, and pixel-level ROC AUC.

Masked metrics zero the joint-mask region in both volumes before
computation, so neither compared method is favored by its own mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ContractError, ParameterError
from .segmentation_2d import MaskStack, ScoreStack
from .volume import Mask3D, Volume, require_same_grid

DEFAULT_DATA_RANGE = 4096.0  # HU span used for PSNR/SSIM comparability


@dataclass
class SliceReport:
    """Per-axial-slice metric values plus the metal-containing flags.

    Aggregates (mean/median) run over metal-containing slices only, and
    skip slices flagged infinite (identical content).
    """

    slice_index: np.ndarray
    contains_metal: np.ndarray
    ssim: np.ndarray = None
    psnr_db: np.ndarray = None

    def _values(self, metric: str) -> np.ndarray:
        vals = getattr(self, metric)
        if vals is None:
            raise ParameterError(f"report holds no {metric} values")
        sel = self.contains_metal & np.isfinite(vals)
        return vals[sel]

    def mean(self, metric: str) -> float:
        v = self._values(metric)
        return float(v.mean()) if v.size else math.nan

    def median(self, metric: str) -> float:
        v = self._values(metric)
        return float(np.median(v)) if v.size else math.nan


def max_slice_difference(a: SliceReport, b: SliceReport, metric: str) -> float:
    """Largest per-slice advantage of report a over report b (metal slices)."""
    va = getattr(a, metric)
    vb = getattr(b, metric)
    sel = a.contains_metal & np.isfinite(va) & np.isfinite(vb)
    if not sel.any():
        return math.nan
    return float((va[sel] - vb[sel]).max())


def joint_mask(m_fsmar: Mask3D, m_mod: Mask3D) -> Mask3D:
    """Voxelwise OR of both methods' 3D masks."""
    if m_fsmar.grid != m_mod.grid:
        raise ContractError("joint mask inputs on different grids", code="grid_mismatch")
    return Mask3D(m_fsmar.values | m_mod.values, m_fsmar.grid)


def _masked_pair(test_vol: Volume, ref_vol: Volume, mask3d: Mask3D):
    require_same_grid(test_vol, ref_vol)
    if test_vol.grid != mask3d.grid:
        raise ContractError("metric mask grid mismatch", code="grid_mismatch")
    t = np.where(mask3d.values, 0.0, test_vol.values)
    r = np.where(mask3d.values, 0.0, ref_vol.values)
    contains = mask3d.values.any(axis=(0, 1))
    return t, r, contains


def masked_psnr(
    test_vol: Volume, ref_vol: Volume, mask3d: Mask3D, data_range: float = DEFAULT_DATA_RANGE
) -> SliceReport:
    """Per-axial-slice PSNR after zeroing the masked region in both inputs.

    Slices with zero MSE are flagged +inf and excluded from aggregates.
    """
    if data_range <= 0:
        raise ParameterError("data_range must be > 0")
    t, r, contains = _masked_pair(test_vol, ref_vol, mask3d)
    nz = t.shape[2]
    psnr = np.empty(nz)
    for iz in range(nz):
        mse = np.mean((t[:, :, iz] - r[:, :, iz]) ** 2)
        psnr[iz] = math.inf if mse == 0 else 10.0 * math.log10(data_range**2 / mse)
    return SliceReport(
        slice_index=np.arange(nz), contains_metal=contains, psnr_db=psnr
    )


def _ssim_2d(
    x: np.ndarray,
    y: np.ndarray,
    data_range: float,
    window: int,
    sigma: float,
    k1: float,
    k2: float,
) -> float:
    """Mean local SSIM of one slice with a Gaussian window (Wang et al. form)."""
    pad = (window - 1) // 2
    truncate = pad / sigma
    blur = lambda a: ndimage.gaussian_filter(a, sigma, mode="nearest", truncate=truncate)
    ux = blur(x)
    uy = blur(y)
    uxx = blur(x * x)
    uyy = blur(y * y)
    uxy = blur(x * y)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux**2 + uy**2 + c1) * (vx + vy + c2))
    return float(s[pad:-pad, pad:-pad].mean())


def masked_ssim(
    test_vol: Volume,
    ref_vol: Volume,
    mask3d: Mask3D,
    window: int = 11,
    data_range: float = DEFAULT_DATA_RANGE,
    k1: float = 0.01,
    k2: float = 0.03,
    sigma: float = 1.5,
) -> SliceReport:
    """Per-axial-slice SSIM after zeroing the masked region in both inputs."""
    if window < 3 or window % 2 == 0:
        raise ParameterError("window must be odd and >= 3")
    t, r, contains = _masked_pair(test_vol, ref_vol, mask3d)
    nz = t.shape[2]
    ssim = np.empty(nz)
    for iz in range(nz):
        ssim[iz] = _ssim_2d(
            t[:, :, iz].astype(np.float64),
            r[:, :, iz].astype(np.float64),
            data_range,
            window,
            sigma,
            k1,
            k2,
        )
    return SliceReport(slice_index=np.arange(nz), contains_metal=contains, ssim=ssim)


def mask_prf(pred: MaskStack, gt: MaskStack):
    """Pooled pixelwise (precision, recall, f_score).

    Precision of an empty prediction is 0 by convention (an empty mask is a
    failure in the threshold-sweep semantics).
    """
    if pred.data.shape != gt.data.shape:
        raise ContractError("mask stacks differ in shape", code="geometry_mismatch")
    tp = int(np.count_nonzero(pred.data & gt.data))
    fp = int(np.count_nonzero(pred.data & ~gt.data))
    fn = int(np.count_nonzero(~pred.data & gt.data))
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    f_score = (
        2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    )
    return precision, recall, f_score


def roc_auc(scores: ScoreStack, gt: MaskStack) -> float:
    """Pooled pixel-level AUC via the Mann-Whitney rank statistic.

    Ties get midranks. Returns NaN when the ground truth is single-class.
    """
    if scores.data.shape != gt.data.shape:
        raise ContractError("score/mask stacks differ in shape", code="geometry_mismatch")
    s = scores.data.ravel()
    y = gt.data.ravel()
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    # midranks for ties
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum_pos = ranks[y].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
