"""Experiment configuration: one JSON document drives a full run.

Schema (all sections optional unless noted):

{
  "phantom": "towers_heavy_metal",      // preset name or path to phantom JSON (required)
  "geometry": { ... ScanGeometry dict, or path string },
  "grid": {"dims": [128,128,128], "spacing": [1.0,1.0,1.0]},  // centered
  "physics": { ... PhysicsParams dict },
  "seed": 0,                            // overrides physics.rng_seed
  "mar": { ... MarParams dict },
  "segmentation": {"method": "labels" | "heuristic" | "external",
                   "ratio_threshold": 0.98,          // labels
                   "kernel_size": 31, "offset": 0.5, // heuristic
                   "path": "masks"},                  // external
  "perturb": { ... PerturbationSpec dict },           // optional mask stress
  "evaluate": {"data_range": 4096.0}
}

Omitted geometry/grid fall back to the desk-scale defaults below, sized so
the whole pipeline runs in minutes on one core.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .errors import FormatError, ParameterError
from .forward_model import PhysicsParams
from .geometry import DetectorSpec, ScanGeometry
from .mar_pipeline import MarParams
from .phantom import PRESET_NAMES, Phantom, build_preset
from .segmentation_2d import PerturbationSpec
from .volume import GridSpec

SEGMENTATION_METHODS = ("labels", "heuristic", "external")


def default_geometry() -> ScanGeometry:
    """Desk-scale short scan: 180 views over 200 degrees, 256^2 detector."""
    return ScanGeometry(
        num_views=180,
        start_angle=0.0,
        angular_increment=200.0 / 180.0,
        source_to_isocenter=622.0,
        source_to_detector=1164.0,
        detector=DetectorSpec(rows=256, cols=256, pixel_pitch=1.2),
    )


def default_grid() -> GridSpec:
    return GridSpec.centered(dims=(128, 128, 128), spacing=(1.0, 1.0, 1.0))


def full_scale_geometry() -> ScanGeometry:
    """The clinical-scale setting; provided for completeness, hours on one core."""
    return ScanGeometry(
        num_views=400,
        start_angle=0.0,
        angular_increment=0.5,
        source_to_isocenter=622.0,
        source_to_detector=1164.0,
        detector=DetectorSpec(rows=976, cols=976, pixel_pitch=0.310),
    )


def full_scale_grid() -> GridSpec:
    return GridSpec.centered(dims=(512, 512, 512), spacing=(0.313, 0.313, 0.313))


@dataclass(frozen=True)
class ExperimentConfig:
    phantom: str
    geometry: ScanGeometry
    grid: GridSpec
    physics: PhysicsParams
    mar: MarParams
    segmentation: dict
    perturb: PerturbationSpec = None
    data_range: float = 4096.0
    seed: int = 0

    def __post_init__(self):
        method = self.segmentation.get("method", "labels")
        if method not in SEGMENTATION_METHODS:
            raise ParameterError(f"unknown segmentation method {method!r}")
        if method == "external" and "path" not in self.segmentation:
            raise ParameterError("external segmentation needs a 'path'")
        if self.data_range <= 0:
            raise ParameterError("data_range must be > 0")

    def resolve_phantom(self) -> Phantom:
        name = self.phantom
        base = name[len("metal_free_twin(") : -1] if name.startswith("metal_free_twin(") else name
        if base in PRESET_NAMES:
            return build_preset(name)
        if os.path.exists(name):
            return Phantom.load(name)
        raise ParameterError(f"unknown preset {name!r}", code="unknown_preset")

    def to_dict(self) -> dict:
        d = {
            "phantom": self.phantom,
            "geometry": self.geometry.to_dict(),
            "grid": self.grid.to_dict(),
            "physics": self.physics.to_dict(),
            "seed": self.seed,
            "mar": self.mar.to_dict(),
            "segmentation": dict(self.segmentation),
            "evaluate": {"data_range": self.data_range},
        }
        if self.perturb is not None:
            d["perturb"] = {
                "fp_blob_count": self.perturb.fp_blob_count,
                "fp_blob_radius": self.perturb.fp_blob_radius,
                "fp_view_fraction": self.perturb.fp_view_fraction,
                "fn_erosion": self.perturb.fn_erosion,
                "fn_view_fraction": self.perturb.fn_view_fraction,
                "rng_seed": self.perturb.rng_seed,
            }
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "ExperimentConfig":
        if "phantom" not in d:
            raise FormatError("config needs a 'phantom' entry")
        geo = d.get("geometry")
        if geo is None:
            geometry = default_geometry()
        elif isinstance(geo, str):
            geometry = ScanGeometry.load(os.path.join(base_dir, geo))
        else:
            geometry = ScanGeometry.from_dict(geo)
        gr = d.get("grid")
        if gr is None:
            grid = default_grid()
        elif "origin_mm" in gr:
            grid = GridSpec.from_dict(gr)
        else:
            spacing = gr.get("spacing", gr.get("spacing_mm"))
            grid = GridSpec.centered(dims=tuple(gr["dims"]), spacing=tuple(spacing))
        physics = PhysicsParams.from_dict(d.get("physics", {}))
        seed = int(d.get("seed", physics.rng_seed))
        if seed != physics.rng_seed:
            from dataclasses import replace

            physics = replace(physics, rng_seed=seed)
        mar = MarParams.from_dict(d.get("mar", {}))
        seg = dict(d.get("segmentation", {"method": "labels"}))
        seg.setdefault("method", "labels")
        perturb = None
        if "perturb" in d:
            perturb = PerturbationSpec(
                **{
                    k: d["perturb"][k]
                    for k in PerturbationSpec.__dataclass_fields__
                    if k in d["perturb"]
                }
            )
        data_range = float(d.get("evaluate", {}).get("data_range", 4096.0))
        return cls(
            phantom=str(d["phantom"]),
            geometry=geometry,
            grid=grid,
            physics=physics,
            mar=mar,
            segmentation=seg,
            perturb=perturb,
            data_range=data_range,
            seed=seed,
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as f:
                d = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"invalid config JSON: {e}") from e
        return cls.from_dict(d, base_dir=os.path.dirname(os.path.abspath(path)))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
