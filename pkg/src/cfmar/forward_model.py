"""Matched metal / metal-free projection simulation.

Produces the artifact-inducing physics the downstream MAR has to fight:
a quadratic beam-hardening surrogate on the metal partial integral,
Poisson noise, and a hard intensity floor standing in for photon
starvation. Line integrals themselves are exact (analytic chords).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .errors import ContractError, ParameterError
from .geometry import ScanGeometry, trajectory_arrays
from .phantom import Phantom, metal_free_twin, pack_primitives
from .volume import Volume

KIND_LINE_INTEGRAL = "line_integral"
KIND_RAW_INTENSITY = "raw_intensity"


@dataclass(frozen=True)
class PhysicsParams:
    I0: float = 1.0e5  # photons per pixel at zero attenuation
    beam_hardening_alpha: float = 0.0  # two-term surrogate; 0 disables
    poisson_noise: bool = False
    rng_seed: int = 0
    intensity_floor: float = 0.0  # photons; models starvation clipping

    def __post_init__(self):
        if self.I0 <= 0:
            raise ParameterError("I0 must be > 0")
        if self.beam_hardening_alpha < 0:
            raise ParameterError("beam_hardening_alpha must be >= 0")
        if not (0 <= self.intensity_floor < self.I0):
            raise ParameterError("require 0 <= intensity_floor < I0")

    def to_dict(self) -> dict:
        return {
            "I0": self.I0,
            "beam_hardening_alpha": self.beam_hardening_alpha,
            "poisson_noise": self.poisson_noise,
            "rng_seed": self.rng_seed,
            "intensity_floor": self.intensity_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhysicsParams":
        return cls(
            I0=float(d.get("I0", 1.0e5)),
            beam_hardening_alpha=float(d.get("beam_hardening_alpha", 0.0)),
            poisson_noise=bool(d.get("poisson_noise", False)),
            rng_seed=int(d.get("rng_seed", 0)),
            intensity_floor=float(d.get("intensity_floor", 0.0)),
        )


@dataclass
class ProjectionStack:
    data: np.ndarray  # (N, rows, cols)
    kind: str  # line_integral | raw_intensity
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
                f"stack shape {self.data.shape} != geometry {expected}",
                code="geometry_mismatch",
            )
        if self.kind not in (KIND_LINE_INTEGRAL, KIND_RAW_INTENSITY):
            raise ParameterError(f"unknown stack kind {self.kind!r}")

    @property
    def num_views(self) -> int:
        return self.data.shape[0]


def _require_kind(stack: ProjectionStack, kind: str):
    if stack.kind != kind:
        raise ContractError(
            f"expected {kind} stack, got {stack.kind}", code="kind_mismatch"
        )


def analytic_partials(phantom: Phantom, geom: ScanGeometry):
    """Exact per-pixel (total, metal, bh-weighted, metal chord) stacks.

    total resolves overlaps across all primitives, metal/chord among the
    metal primitives only; bh weights metal segments with their material's
    beam-hardening coefficient.
    """
    packed = pack_primitives(phantom)
    det = geom.detector
    u0, v0 = det.principal_point
    srcs, det_centers, u_axes, v_axes, _ = trajectory_arrays(geom)
    n = geom.num_views
    shape = (n, det.rows, det.cols)
    p_total = np.empty(shape)
    p_metal = np.empty(shape)
    p_bh = np.empty(shape)
    chord = np.empty(shape)
    for i in range(n):
        p_total[i], p_metal[i], p_bh[i], chord[i] = _kernels.analytic_view(
            *packed,
            srcs[i],
            det_centers[i],
            u_axes[i],
            v_axes[i],
            det.pixel_pitch,
            u0,
            v0,
            det.rows,
            det.cols,
        )
    mk = lambda a: ProjectionStack(a, KIND_LINE_INTEGRAL, geom)
    return mk(p_total), mk(p_metal), mk(p_bh), chord


def analytic_line_integrals(phantom: Phantom, geom: ScanGeometry) -> ProjectionStack:
    """Exact forward projection of the analytic phantom (central rays)."""
    total, _, _, _ = analytic_partials(phantom, geom)
    return total


def voxel_forward_project(
    volume: Volume, geom: ScanGeometry, step: float = None
) -> ProjectionStack:
    """Ray integral through a voxel grid with trilinear interpolation.

    Step defaults to half the smallest voxel spacing.
    """
    grid = volume.grid
    if step is None:
        step = 0.5 * min(grid.spacing)
    if step <= 0:
        raise ParameterError("step must be > 0")
    det = geom.detector
    u0, v0 = det.principal_point
    srcs, det_centers, u_axes, v_axes, _ = trajectory_arrays(geom)
    data = _kernels.forward_project_views(
        np.ascontiguousarray(volume.values, dtype=np.float64),
        *grid.origin,
        *grid.spacing,
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
    return ProjectionStack(data, KIND_LINE_INTEGRAL, geom)


def backproject_adjoint(
    stack: ProjectionStack, grid, step: float = None
) -> Volume:
    """Unweighted backprojection: the exact adjoint of voxel_forward_project."""
    geom = stack.geometry
    if step is None:
        step = 0.5 * min(grid.spacing)
    det = geom.detector
    u0, v0 = det.principal_point
    srcs, det_centers, u_axes, v_axes, _ = trajectory_arrays(geom)
    vol = _kernels.splat_backproject_views(
        np.ascontiguousarray(stack.data),
        *grid.dims,
        *grid.origin,
        *grid.spacing,
        srcs,
        det_centers,
        u_axes,
        v_axes,
        det.pixel_pitch,
        u0,
        v0,
        step,
    )
    return Volume(vol, grid, unit="arb")


def _noisy_intensity(mean: np.ndarray, seed_key) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed_key))
    return rng.poisson(mean).astype(np.float64)


def apply_physics(
    line_integrals: ProjectionStack,
    physics: PhysicsParams,
    metal_partials: ProjectionStack = None,
    stream_id: int = 0,
) -> ProjectionStack:
    """Turn line integrals into detected intensities.

    I = max(floor, Poisson(I0 * exp(-p - alpha * p_metal^2))). The Poisson
    draw uses a per-view seeded stream derived from (rng_seed, stream_id,
    view), so stacks are reproducible independent of evaluation order.
    """
    _require_kind(line_integrals, KIND_LINE_INTEGRAL)
    p = line_integrals.data
    alpha = physics.beam_hardening_alpha
    if alpha > 0.0:
        if metal_partials is None:
            raise ContractError(
                "beam hardening enabled but no metal partial integrals supplied"
            )
        _require_kind(metal_partials, KIND_LINE_INTEGRAL)
        if metal_partials.geometry != line_integrals.geometry:
            raise ContractError("partial stack geometry mismatch", code="geometry_mismatch")
        p_eff = p + alpha * metal_partials.data**2
    else:
        p_eff = p
    mean = physics.I0 * np.exp(-p_eff)
    if physics.poisson_noise:
        out = np.empty_like(mean)
        for i in range(mean.shape[0]):
            out[i] = _noisy_intensity(mean[i], [physics.rng_seed, stream_id, i])
    else:
        out = mean
    np.maximum(out, physics.intensity_floor, out=out)
    return ProjectionStack(out, KIND_RAW_INTENSITY, line_integrals.geometry)


def to_line_integrals(
    raw: ProjectionStack, I0: float, floor_eps: float = 0.5
) -> ProjectionStack:
    """Lambert-Beer conversion p = -ln(I / I0), clamped at I = floor_eps."""
    _require_kind(raw, KIND_RAW_INTENSITY)
    if np.any(raw.data <= 0):
        raise ContractError("raw intensities must be positive")
    p = -np.log(np.maximum(raw.data, floor_eps) / I0)
    return ProjectionStack(p, KIND_LINE_INTEGRAL, raw.geometry)


def make_matched_pair(
    phantom: Phantom, geom: ScanGeometry, physics: PhysicsParams
):
    """Simulate the two consecutive scans: with metal and the metal-free twin.

    Identical geometry and physics; independent noise streams derived from
    the same root seed.
    """
    if not phantom.metal_primitives():
        raise ParameterError("phantom contains no metal primitives")
    total, _, p_bh, _ = analytic_partials(phantom, geom)
    with_metal = apply_physics(total, physics, metal_partials=p_bh, stream_id=0)
    clean_total = analytic_line_integrals(metal_free_twin(phantom), geom)
    metal_free = apply_physics(
        clean_total, replace(physics, beam_hardening_alpha=0.0), stream_id=1
    )
    return with_metal, metal_free
