"""View-consistent projection-domain metal segmentation and MAR for CBCT.

Simulates matched metal / metal-free cone-beam scans from analytic phantoms,
filters per-view 2D metal masks through a multi-view consistency check, and
compares inpainting-based MAR driven by 3D-threshold masks against the
view-consistent 2D alternative.
"""

from .config import ExperimentConfig, default_geometry, default_grid
from .consistency_filter import (
    HitVolumes,
    accumulate_hits,
    binarize_consistency,
    consistency_filter,
    extended_grid_for,
    reproject_mask,
)
from .errors import (
    CfmarError,
    ContractError,
    FormatError,
    NumericalError,
    ParameterError,
)
from .forward_model import (
    PhysicsParams,
    ProjectionStack,
    analytic_line_integrals,
    analytic_partials,
    apply_physics,
    backproject_adjoint,
    make_matched_pair,
    to_line_integrals,
    voxel_forward_project,
)
from .geometry import (
    DetectorSpec,
    PixelCoord,
    ScanGeometry,
    detector_contains,
    make_circular_trajectory,
    project_point,
    project_points,
)
from .mar_pipeline import (
    MarParams,
    MarResult,
    frequency_split,
    inpaint_projections,
    metal_insertion,
    run_modified_fsmar,
    run_standard_fsmar,
)
from .metrics import (
    SliceReport,
    joint_mask,
    mask_prf,
    masked_psnr,
    masked_ssim,
    roc_auc,
)
from .phantom import (
    Material,
    Phantom,
    Primitive,
    build_preset,
    metal_free_twin,
    metal_mask_3d,
    metal_trace_2d,
    voxelize,
)
from .recon_fdk import fdk_reconstruct, to_hounsfield
from .segmentation_2d import (
    MaskStack,
    PerturbationSpec,
    ScoreStack,
    binarize,
    generate_gt_labels,
    heuristic_segment,
    load_external_masks,
    perturb_masks,
)
from .segmentation_3d import forward_project_mask3d, threshold_segment_3d
from .volume import GridSpec, Mask3D, Volume

__version__ = "0.1.0"
