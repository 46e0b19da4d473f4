"""Per-view metal score/mask sources.

Four ways to obtain 2D masks: ground-truth labels by dividing the matched
projection pair, a deliberately imperfect heuristic segmenter (stand-in for
a trained network; emits real-valued scores), controlled perturbation for
consistency-filter stress tests, and ingestion of externally produced masks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ContractError, ParameterError
from .forward_model import (
    KIND_LINE_INTEGRAL,
    KIND_RAW_INTENSITY,
    ProjectionStack,
)
from .geometry import ScanGeometry


@dataclass
class MaskStack:
    data: np.ndarray  # (N, rows, cols) bool
    geometry: ScanGeometry

    def __post_init__(self):
        self.data = np.asarray(self.data).astype(bool)
        expected = (
            self.geometry.num_views,
            self.geometry.detector.rows,
            self.geometry.detector.cols,
        )
        if self.data.shape != expected:
            raise ContractError(
                f"mask stack shape {self.data.shape} != geometry {expected}",
                code="geometry_mismatch",
            )

    @property
    def num_views(self) -> int:
        return self.data.shape[0]


@dataclass
class ScoreStack:
    data: np.ndarray  # (N, rows, cols) float, higher = more metal-like
    geometry: ScanGeometry

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        expected = (
            self.geometry.num_views,
            self.geometry.detector.rows,
            self.geometry.detector.cols,
        )
        if self.data.shape != expected:
            raise ContractError(
                f"score stack shape {self.data.shape} != geometry {expected}",
                code="geometry_mismatch",
            )


@dataclass(frozen=True)
class PerturbationSpec:
    fp_blob_count: int = 0  # per affected view
    fp_blob_radius: float = 0.0  # pixels
    fp_view_fraction: float = 0.0
    fn_erosion: int = 0  # pixels
    fn_view_fraction: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not (0 <= self.fp_view_fraction <= 1 and 0 <= self.fn_view_fraction <= 1):
            raise ParameterError("view fractions must lie in [0, 1]")
        if self.fp_blob_radius < 0 or self.fp_blob_count < 0 or self.fn_erosion < 0:
            raise ParameterError("blob counts/radii must be >= 0")


def generate_gt_labels(
    proj_metal: ProjectionStack,
    proj_clean: ProjectionStack,
    ratio_threshold: float = 0.98,
) -> MaskStack:
    """Ground-truth labels from the matched pair: divide, then binarize.

    Metal attenuates, so the intensity ratio with/without drops below 1
    under metal; pixels with ratio < ratio_threshold are labeled metal.
    """
    for s in (proj_metal, proj_clean):
        if s.kind != KIND_RAW_INTENSITY:
            raise ContractError("GT labels need raw intensity stacks", code="kind_mismatch")
    if proj_metal.geometry != proj_clean.geometry:
        raise ContractError("matched stacks have different geometry", code="geometry_mismatch")
    if np.any(proj_clean.data <= 0):
        raise ContractError("metal-free intensities must be positive")
    ratio = proj_metal.data / proj_clean.data
    return MaskStack(ratio < ratio_threshold, proj_metal.geometry)


def heuristic_segment(
    line_integrals: ProjectionStack,
    kernel_size: int = 31,
    offset: float = 0.5,
) -> ScoreStack:
    """Local-excess detector-domain score: p minus its median neighborhood.

    Metal paths exceed the anatomy around them, so score = p - median(p, k)
    - offset is positive over metal (and over some dense anatomy; the
    consistency filter is expected to clean those up). Not a serious
    segmenter by design.
    """
    if line_integrals.kind != KIND_LINE_INTEGRAL:
        raise ContractError("heuristic segmenter expects line integrals", code="kind_mismatch")
    if kernel_size < 1:
        raise ParameterError("kernel_size must be >= 1")
    p = line_integrals.data
    scores = np.empty_like(p)
    for i in range(p.shape[0]):
        background = ndimage.median_filter(p[i], size=kernel_size, mode="nearest")
        scores[i] = p[i] - background - offset
    return ScoreStack(scores, line_integrals.geometry)


def binarize(scores: ScoreStack, threshold: float) -> MaskStack:
    """mask = score > threshold (strict, so threshold 0 drops exact zeros)."""
    return MaskStack(scores.data > threshold, scores.geometry)


def _disk(radius: float) -> np.ndarray:
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (yy**2 + xx**2) <= radius**2


def perturb_masks_with_record(masks: MaskStack, spec: PerturbationSpec):
    """Seeded perturbation; also returns the injected false-positive pixels.

    False-positive blobs are placed away from the existing mask (so they are
    false by construction); false negatives erode the true regions.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.rng_seed]))
    n = masks.num_views
    out = masks.data.copy()
    fp_record = np.zeros_like(out)

    n_fp = int(round(spec.fp_view_fraction * n))
    n_fn = int(round(spec.fn_view_fraction * n))
    fp_views = rng.permutation(n)[:n_fp]
    fn_views = rng.permutation(n)[:n_fn]

    if spec.fn_erosion > 0 and n_fn > 0:
        struct = _disk(spec.fn_erosion)
        for i in fn_views:
            out[i] = ndimage.binary_erosion(out[i], structure=struct)

    if spec.fp_blob_count > 0 and spec.fp_blob_radius > 0 and n_fp > 0:
        rows, cols = out.shape[1:]
        blob = _disk(spec.fp_blob_radius)
        br = blob.shape[0] // 2
        margin = _disk(spec.fp_blob_radius + 4)
        for i in fp_views:
            keepout = ndimage.binary_dilation(masks.data[i], structure=margin)
            placed = 0
            for _ in range(200):
                if placed >= spec.fp_blob_count:
                    break
                r = int(rng.integers(br, rows - br))
                c = int(rng.integers(br, cols - br))
                if keepout[r, c]:
                    continue
                sl = (slice(r - br, r + br + 1), slice(c - br, c + br + 1))
                out[i][sl] |= blob
                fp_record[i][sl] |= blob
                placed += 1
    fp_record &= ~masks.data
    return MaskStack(out, masks.geometry), fp_record


def perturb_masks(masks: MaskStack, spec: PerturbationSpec) -> MaskStack:
    """Seeded false-positive/false-negative perturbation of a mask stack."""
    perturbed, _ = perturb_masks_with_record(masks, spec)
    return perturbed


def load_external_masks(path, geom: ScanGeometry):
    """Ingest a mask or score stack produced by any external model.

    Dispatches on the sidecar kind tag; dimensions must match the geometry.
    Returns MaskStack or ScoreStack.
    """
    from . import io as cfio

    return cfio.load_stack(path, geom=geom)
