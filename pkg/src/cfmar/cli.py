"""Command line front end: every experiment stage as a subcommand.

Exit codes: 0 ok, 2 usage/config/contract error, 3 numerical failure.
Failures print one machine-readable JSON object to stderr:
``{"code": "...", "message": "..."}``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io as cfio
from .config import ExperimentConfig, default_geometry, default_grid
from .consistency_filter import consistency_filter, extended_grid_for
from .errors import CfmarError, NumericalError, ParameterError
from .forward_model import (
    KIND_RAW_INTENSITY,
    PhysicsParams,
    make_matched_pair,
    to_line_integrals,
)
from .geometry import ScanGeometry
from .mar_pipeline import MarResult, crop_mask_to_grid, run_modified_fsmar, run_standard_fsmar
from .metrics import joint_mask, masked_psnr, masked_ssim
from .phantom import Phantom, build_preset
from .recon_fdk import fdk_reconstruct, to_hounsfield
from .reporting import (
    plot_slice_metric,
    plot_tau_sweep,
    summarize_runs,
    write_slice_csv,
    write_summary_json,
    write_tau_csv,
)
from .segmentation_2d import (
    MaskStack,
    ScoreStack,
    binarize,
    generate_gt_labels,
    heuristic_segment,
    load_external_masks,
    perturb_masks,
)
from .segmentation_3d import forward_project_mask3d, threshold_segment_3d
from .volume import GridSpec, Mask3D


def _err(code: str, message: str):
    print(json.dumps({"code": code, "message": message}), file=sys.stderr)


def _ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _parse_grid(spec: str) -> GridSpec:
    """Grid from a JSON file or an inline 'nx,ny,nz@sx,sy,sz' (centered)."""
    if spec is None:
        return default_grid()
    if os.path.exists(spec):
        with open(spec) as f:
            d = json.load(f)
        if "origin_mm" in d:
            return GridSpec.from_dict(d)
        spacing = d.get("spacing", d.get("spacing_mm"))
        return GridSpec.centered(dims=tuple(d["dims"]), spacing=tuple(spacing))
    if "@" in spec:
        dims_s, sp_s = spec.split("@", 1)
        dims = [int(x) for x in dims_s.split(",")]
        sp = [float(x) for x in sp_s.split(",")]
        if len(dims) == 1:
            dims *= 3
        if len(sp) == 1:
            sp *= 3
        return GridSpec.centered(dims=tuple(dims), spacing=tuple(sp))
    raise ParameterError(f"cannot parse grid spec {spec!r}")


def _load_geometry(path: str) -> ScanGeometry:
    return ScanGeometry.load(path) if path else default_geometry()


def _load_phantom(name: str) -> Phantom:
    if os.path.exists(name):
        return Phantom.load(name)
    return build_preset(name)


def _line_integrals_from_file(path: str, i0: float = None):
    """Load a projection file, converting raw intensities via the sidecar I0."""
    stack = cfio.load_stack(path)
    if stack.kind != KIND_RAW_INTENSITY:
        return stack
    if i0 is None:
        i0 = cfio.load_sidecar(path).get("physics", {}).get("I0")
    if i0 is None:
        raise ParameterError(
            "raw intensity stack without I0 (sidecar lacks physics; pass --i0)"
        )
    return to_line_integrals(stack, float(i0))


def _pair_paths(pair_dir: str):
    return os.path.join(pair_dir, "raw_metal"), os.path.join(pair_dir, "raw_clean")


def _seg_source(cfg: ExperimentConfig, raw_metal, raw_clean):
    """Build the modified variant's 2D input per the config's segmentation block."""
    seg = cfg.segmentation
    method = seg.get("method", "labels")
    if method == "labels":
        masks = generate_gt_labels(
            raw_metal, raw_clean, float(seg.get("ratio_threshold", 0.98))
        )
        if cfg.perturb is not None:
            masks = perturb_masks(masks, cfg.perturb)
        return masks
    if method == "heuristic":
        p = to_line_integrals(raw_metal, cfg.physics.I0)
        return heuristic_segment(
            p,
            kernel_size=int(seg.get("kernel_size", 31)),
            offset=float(seg.get("offset", 0.5)),
        )
    return load_external_masks(seg["path"], raw_metal.geometry)


# 2D threshold and tau used when overestimating the joint evaluation mask;
# deliberately generous so neither method's residuals leak into the metrics
JOINT_SEG_THRESHOLD = -5.0
JOINT_TAU = 0.95


def _joint_component(variant: str, result: MarResult, seg_source, cfg: ExperimentConfig):
    """The per-run 3D mask contributed to the evaluation joint mask."""
    if variant == "standard":
        return result.mask3d
    if isinstance(seg_source, ScoreStack):
        masks = binarize(seg_source, JOINT_SEG_THRESHOLD)
    else:
        masks = seg_source
    ext = extended_grid_for(
        cfg.grid, cfg.mar.cf_lateral_factor, cfg.mar.cf_axial_factor
    )
    _, env = consistency_filter(
        masks, masks.geometry, ext, tau=JOINT_TAU, min_support=cfg.mar.cf_min_support
    )
    return crop_mask_to_grid(env, cfg.grid)


def _save_mar(result: MarResult, out_dir: str, joint_component: Mask3D):
    _ensure_dir(out_dir)
    cfio.save_volume(result.volume, os.path.join(out_dir, "volume"))
    cfio.save_volume(result.mask3d, os.path.join(out_dir, "mask3d"))
    cfio.save_volume(result.nomar_volume, os.path.join(out_dir, "nomar_volume"))
    cfio.save_volume(result.corrected_volume, os.path.join(out_dir, "corrected_volume"))
    cfio.save_volume(result.insertion_mask, os.path.join(out_dir, "insertion_mask"))
    cfio.save_stack(result.inpaint_masks, os.path.join(out_dir, "inpaint_masks"))
    if result.envelope_recon is not None:
        cfio.save_volume(result.envelope_recon, os.path.join(out_dir, "envelope_recon"))
    cfio.save_volume(joint_component, os.path.join(out_dir, "jointmask_component"))


def _run_variant(cfg, variant, raw_metal, raw_clean, out_dir):
    seg_source = None
    if variant == "standard":
        result = run_standard_fsmar(raw_metal, cfg.grid, cfg.mar, cfg.physics.I0)
    else:
        seg_source = _seg_source(cfg, raw_metal, raw_clean)
        result = run_modified_fsmar(
            raw_metal, cfg.grid, seg_source, cfg.mar, cfg.physics.I0
        )
    _save_mar(result, out_dir, _joint_component(variant, result, seg_source, cfg))
    return result


def _evaluate_runs(label_vol, runs: dict, data_range: float, out_dir: str) -> dict:
    """runs maps name -> (Volume, Mask3D joint component). Writes all reports."""
    _ensure_dir(out_dir)
    components = [m for _, m in runs.values()]
    jm = components[0]
    for m in components[1:]:
        jm = joint_mask(jm, m)
    reports = {}
    for name, (vol, _) in runs.items():
        reports[name] = {
            "ssim": masked_ssim(vol, label_vol, jm, data_range=data_range),
            "psnr": masked_psnr(vol, label_vol, jm, data_range=data_range),
        }
        write_slice_csv(
            os.path.join(out_dir, f"{name}_slices.csv"),
            reports[name]["ssim"],
            reports[name]["psnr"],
        )
    summary = summarize_runs(reports)
    write_summary_json(os.path.join(out_dir, "summary.json"), summary)
    plot_slice_metric(
        os.path.join(out_dir, "ssim.png"),
        {k: v["ssim"] for k, v in reports.items()},
        "ssim",
        "masked SSIM",
    )
    plot_slice_metric(
        os.path.join(out_dir, "psnr_db.png"),
        {k: v["psnr"] for k, v in reports.items()},
        "psnr_db",
        "masked PSNR [dB]",
    )
    cfio.save_volume(jm, os.path.join(out_dir, "joint_mask"))
    return summary


def _simulate_to_dir(cfg: ExperimentConfig, phantom: Phantom, out_dir: str):
    raw_metal, raw_clean = make_matched_pair(phantom, cfg.geometry, cfg.physics)
    extras = {"physics": cfg.physics.to_dict(), "phantom": phantom.name}
    metal_path, clean_path = _pair_paths(out_dir)
    cfio.save_stack(raw_metal, metal_path, extras=dict(extras, stream_id=0))
    cfio.save_stack(raw_clean, clean_path, extras=dict(extras, stream_id=1))
    return raw_metal, raw_clean


# --------------------------------------------------------------------------
# subcommand handlers


def cmd_phantom_build(args) -> int:
    ph = build_preset(args.preset)
    out = _ensure_dir(args.out)
    path = os.path.join(out, f"{args.preset}.json")
    ph.save(path)
    print(path)
    return 0


def cmd_simulate(args) -> int:
    phantom = _load_phantom(args.phantom)
    geom = _load_geometry(args.geom)
    if args.physics:
        with open(args.physics) as f:
            physics = PhysicsParams.from_dict(json.load(f))
    else:
        physics = PhysicsParams()
    if args.seed is not None:
        from dataclasses import replace

        physics = replace(physics, rng_seed=int(args.seed))
    out = _ensure_dir(args.out)
    raw_metal, raw_clean = make_matched_pair(phantom, geom, physics)
    extras = {"physics": physics.to_dict(), "phantom": phantom.name}
    metal_path, clean_path = _pair_paths(out)
    cfio.save_stack(raw_metal, metal_path, extras=dict(extras, stream_id=0))
    cfio.save_stack(raw_clean, clean_path, extras=dict(extras, stream_id=1))
    geom.save(os.path.join(out, "geometry.json"))
    with open(os.path.join(out, "physics.json"), "w") as f:
        json.dump(physics.to_dict(), f, indent=2)
    print(out)
    return 0


def cmd_reconstruct(args) -> int:
    p = _line_integrals_from_file(args.proj, args.i0)
    grid = _parse_grid(args.grid)
    vol = fdk_reconstruct(p, grid)
    if args.unit == "hu":
        vol = to_hounsfield(vol, args.mu_water)
    cfio.save_volume(vol, args.out)
    print(args.out)
    return 0


def cmd_labels(args) -> int:
    metal_path, clean_path = _pair_paths(args.pair)
    raw_metal = cfio.load_stack(metal_path)
    raw_clean = cfio.load_stack(clean_path)
    gt = generate_gt_labels(raw_metal, raw_clean, ratio_threshold=args.ratio)
    cfio.save_stack(gt, args.out)
    print(args.out)
    return 0


def cmd_segment2d(args) -> int:
    if args.method == "external":
        geom = cfio.load_stack(args.proj).geometry
        stack = load_external_masks(args.external, geom)
    else:
        p = _line_integrals_from_file(args.proj, args.i0)
        stack = heuristic_segment(p, kernel_size=args.kernel_size, offset=args.offset)
        if args.threshold is not None:
            stack = binarize(stack, args.threshold)
    cfio.save_stack(stack, args.out)
    print(args.out)
    return 0


def cmd_cf(args) -> int:
    stack = cfio.load_stack(args.masks)
    if isinstance(stack, ScoreStack):
        stack = binarize(stack, args.threshold if args.threshold is not None else 0.0)
    elif not isinstance(stack, MaskStack):
        raise ParameterError("cf expects a mask or score stack")
    if args.grid:
        ext = _parse_grid(args.grid)
    else:
        ext = extended_grid_for(_parse_grid(args.recon_grid))
    cf_masks, envelope = consistency_filter(
        stack, stack.geometry, ext, tau=args.tau, min_support=args.min_support
    )
    out = _ensure_dir(args.out)
    cfio.save_stack(cf_masks, os.path.join(out, "cf_masks"))
    cfio.save_volume(envelope, os.path.join(out, "envelope"))
    print(out)
    return 0


def cmd_segment3d(args) -> int:
    vol = cfio.load_volume(args.vol)
    mask = threshold_segment_3d(vol, args.hu, min_size=args.min_size)
    geom = _load_geometry(args.geom)
    masks2d = forward_project_mask3d(mask, geom)
    out = _ensure_dir(args.out)
    cfio.save_volume(mask, os.path.join(out, "mask3d"))
    cfio.save_stack(masks2d, os.path.join(out, "masks2d"))
    print(out)
    return 0


def cmd_mar(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    phantom = cfg.resolve_phantom()
    out = _ensure_dir(args.out)
    if args.pair:
        metal_path, clean_path = _pair_paths(args.pair)
        raw_metal = cfio.load_stack(metal_path, geom=cfg.geometry)
        raw_clean = cfio.load_stack(clean_path, geom=cfg.geometry)
    else:
        raw_metal, raw_clean = _simulate_to_dir(cfg, phantom, out)
    cfg.save(os.path.join(out, "config.json"))
    _run_variant(cfg, args.variant, raw_metal, raw_clean, os.path.join(out, args.variant))
    print(os.path.join(out, args.variant))
    return 0


def cmd_evaluate(args) -> int:
    label = cfio.load_volume(args.label)
    runs = {}
    for entry in args.runs.split(","):
        run_dir = entry.strip()
        name = os.path.basename(os.path.normpath(run_dir))
        vol = cfio.load_volume(os.path.join(run_dir, "volume"))
        comp_path = os.path.join(run_dir, "jointmask_component")
        if not os.path.exists(comp_path + ".json"):
            comp_path = os.path.join(run_dir, "mask3d")
        runs[name] = (vol, cfio.load_volume(comp_path))
    if args.jointmask != "auto":
        jm = cfio.load_volume(args.jointmask)
        runs = {k: (v, jm) for k, (v, _) in runs.items()}
    _evaluate_runs(label, runs, args.data_range, _ensure_dir(args.out))
    print(os.path.join(args.out, "summary.json"))
    return 0


def cmd_pipeline(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    phantom = cfg.resolve_phantom()
    out = _ensure_dir(args.out)
    cfg.save(os.path.join(out, "config.json"))
    raw_metal, raw_clean = _simulate_to_dir(cfg, phantom, out)
    gt = generate_gt_labels(
        raw_metal, raw_clean, float(cfg.segmentation.get("ratio_threshold", 0.98))
    )
    cfio.save_stack(gt, os.path.join(out, "labels"))
    p_clean = to_line_integrals(raw_clean, cfg.physics.I0)
    label_vol = to_hounsfield(fdk_reconstruct(p_clean, cfg.grid), cfg.mar.mu_water)
    cfio.save_volume(label_vol, os.path.join(out, "label_volume"))
    runs = {}
    for variant in ("standard", "modified"):
        result = _run_variant(
            cfg, variant, raw_metal, raw_clean, os.path.join(out, variant)
        )
        comp = cfio.load_volume(os.path.join(out, variant, "jointmask_component"))
        runs[variant] = (result.volume, comp)
    summary = _evaluate_runs(
        label_vol, runs, cfg.data_range, os.path.join(out, "report")
    )
    print(json.dumps(summary["pairwise_max_slice_difference"].get("modified-standard", {})))
    return 0


def cmd_sweep_tau(args) -> int:
    from .consistency_filter import accumulate_hits, binarize_consistency, reproject_mask
    from .mar_pipeline import frequency_split, inpaint_projections, metal_insertion
    from .metrics import mask_prf
    from .phantom import metal_mask_3d

    cfg = ExperimentConfig.load(args.config)
    phantom = cfg.resolve_phantom()
    taus = [float(t) for t in args.taus.split(",")]
    if any(not (0 < t <= 1) for t in taus):
        raise ParameterError("taus must lie in (0, 1]")
    out = _ensure_dir(args.out)
    cfg.save(os.path.join(out, "config.json"))

    raw_metal, raw_clean = make_matched_pair(phantom, cfg.geometry, cfg.physics)
    gt = generate_gt_labels(
        raw_metal, raw_clean, float(cfg.segmentation.get("ratio_threshold", 0.98))
    )
    masks_in = perturb_masks(gt, cfg.perturb) if cfg.perturb is not None else gt

    ext = extended_grid_for(cfg.grid, cfg.mar.cf_lateral_factor, cfg.mar.cf_axial_factor)
    hitvols = accumulate_hits(masks_in, cfg.geometry, ext)

    p = to_line_integrals(raw_metal, cfg.physics.I0)
    nomar = to_hounsfield(fdk_reconstruct(p, cfg.grid), cfg.mar.mu_water)
    p_clean = to_line_integrals(raw_clean, cfg.physics.I0)
    label_vol = to_hounsfield(fdk_reconstruct(p_clean, cfg.grid), cfg.mar.mu_water)
    # fixed evaluation mask so SSIM values are comparable across taus
    oracle = metal_mask_3d(phantom, cfg.grid)

    rows = []
    for tau in taus:
        env = binarize_consistency(hitvols, tau, min_support=cfg.mar.cf_min_support)
        cf_masks = reproject_mask(env, cfg.geometry)
        precision, recall, f_score = mask_prf(cf_masks, gt)
        p_in = inpaint_projections(p, cf_masks, cfg.mar.inpaint_method)
        corrected = to_hounsfield(fdk_reconstruct(p_in, cfg.grid), cfg.mar.mu_water)
        fused = frequency_split(corrected, nomar, cfg.mar.freq_split_sigma)
        final = metal_insertion(fused, nomar, crop_mask_to_grid(env, cfg.grid))
        ssim = masked_ssim(final, label_vol, oracle, data_range=cfg.data_range)
        rows.append(
            {
                "tau": tau,
                "precision": precision,
                "recall": recall,
                "f_score": f_score,
                "ssim": ssim.mean("ssim"),
            }
        )
    write_tau_csv(os.path.join(out, "sweep_tau.csv"), rows)
    plot_tau_sweep(os.path.join(out, "sweep_tau.png"), rows)
    print(os.path.join(out, "sweep_tau.csv"))
    return 0


def cmd_config_check(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    phantom = cfg.resolve_phantom()
    print(
        json.dumps(
            {
                "ok": True,
                "phantom": phantom.name,
                "num_views": cfg.geometry.num_views,
                "grid_dims": list(cfg.grid.dims),
                "seed": cfg.seed,
            }
        )
    )
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfmar",
        description="View-consistent projection-domain metal segmentation and MAR.",
    )
    parser.add_argument(
        "--threads", type=int, default=0, help="compute threads (0 = all cores)"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_phantom = sub.add_parser("phantom", help="phantom utilities")
    phantom_sub = p_phantom.add_subparsers(dest="phantom_command", required=True)
    p_build = phantom_sub.add_parser("build", help="write a preset phantom JSON")
    p_build.add_argument("--preset", required=True)
    p_build.add_argument("--out", required=True)
    p_build.set_defaults(func=cmd_phantom_build)

    p_sim = sub.add_parser("simulate", help="matched metal/metal-free raw pair")
    p_sim.add_argument("--phantom", required=True, help="preset name or phantom JSON")
    p_sim.add_argument("--geom", help="geometry JSON (default: desk scale)")
    p_sim.add_argument("--physics", help="physics JSON (default: noiseless)")
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_rec = sub.add_parser("reconstruct", help="FDK reconstruction")
    p_rec.add_argument("--proj", required=True)
    p_rec.add_argument("--grid", help="grid JSON or 'nx,ny,nz@sx,sy,sz'")
    p_rec.add_argument("--out", required=True)
    p_rec.add_argument("--unit", choices=("hu", "mu"), default="hu")
    p_rec.add_argument("--mu-water", type=float, default=0.02)
    p_rec.add_argument("--i0", type=float, help="override I0 for raw inputs")
    p_rec.set_defaults(func=cmd_reconstruct)

    p_lab = sub.add_parser("labels", help="ground-truth 2D metal labels from a pair")
    p_lab.add_argument("--pair", required=True, help="simulate output directory")
    p_lab.add_argument("--ratio", type=float, default=0.98)
    p_lab.add_argument("--out", required=True)
    p_lab.set_defaults(func=cmd_labels)

    p_seg = sub.add_parser("segment2d", help="per-view metal scores/masks")
    p_seg.add_argument("--proj", required=True)
    p_seg.add_argument("--method", choices=("heuristic", "external"), default="heuristic")
    p_seg.add_argument("--external", help="external mask/score stack (method=external)")
    p_seg.add_argument("--kernel-size", type=int, default=31)
    p_seg.add_argument("--offset", type=float, default=0.5)
    p_seg.add_argument("--threshold", type=float, help="binarize scores at this value")
    p_seg.add_argument("--i0", type=float)
    p_seg.add_argument("--out", required=True)
    p_seg.set_defaults(func=cmd_segment2d)

    p_cf = sub.add_parser("cf", help="consistency-filter a mask stack")
    p_cf.add_argument("--masks", required=True)
    p_cf.add_argument("--tau", type=float, default=0.96)
    p_cf.add_argument("--grid", help="explicit extended grid JSON")
    p_cf.add_argument(
        "--recon-grid", help="recon grid to extend (default: desk scale)"
    )
    p_cf.add_argument("--min-support", type=int)
    p_cf.add_argument("--threshold", type=float, help="binarize score inputs")
    p_cf.add_argument("--out", required=True)
    p_cf.set_defaults(func=cmd_cf)

    p_s3 = sub.add_parser("segment3d", help="HU-threshold 3D segmentation")
    p_s3.add_argument("--vol", required=True)
    p_s3.add_argument("--hu", type=float, default=3000.0)
    p_s3.add_argument("--min-size", type=int, default=10)
    p_s3.add_argument("--geom", help="geometry for the projected masks")
    p_s3.add_argument("--out", required=True)
    p_s3.set_defaults(func=cmd_segment3d)

    p_mar = sub.add_parser("mar", help="run one MAR variant from a config")
    p_mar.add_argument("--variant", choices=("standard", "modified"), required=True)
    p_mar.add_argument("--config", required=True)
    p_mar.add_argument("--pair", help="reuse a simulate output directory")
    p_mar.add_argument("--out", required=True)
    p_mar.set_defaults(func=cmd_mar)

    p_eval = sub.add_parser("evaluate", help="masked SSIM/PSNR reports")
    p_eval.add_argument("--label", required=True, help="reference volume")
    p_eval.add_argument("--runs", required=True, help="comma-separated run dirs")
    p_eval.add_argument("--jointmask", default="auto")
    p_eval.add_argument("--data-range", type=float, default=4096.0)
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=cmd_evaluate)

    p_pipe = sub.add_parser("pipeline", help="simulate + both MAR variants + reports")
    p_pipe.add_argument("--config", required=True)
    p_pipe.add_argument("--out", required=True)
    p_pipe.set_defaults(func=cmd_pipeline)

    p_tau = sub.add_parser("sweep-tau", help="precision/recall/F/SSIM vs tau")
    p_tau.add_argument("--config", required=True)
    p_tau.add_argument(
        "--taus",
        default="0.8,0.85,0.9,0.95,0.96,0.97,0.98,0.99,0.992,0.994,0.996,0.998",
    )
    p_tau.add_argument("--out", required=True)
    p_tau.set_defaults(func=cmd_sweep_tau)

    p_cfg = sub.add_parser("config", help="config utilities")
    cfg_sub = p_cfg.add_subparsers(dest="config_command", required=True)
    p_chk = cfg_sub.add_parser("check", help="validate a config document")
    p_chk.add_argument("--config", required=True)
    p_chk.set_defaults(func=cmd_config_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads and args.threads > 0:
        os.environ.setdefault("NUMBA_NUM_THREADS", str(args.threads))
    try:
        return args.func(args)
    except NumericalError as e:
        _err(e.code, str(e))
        return 3
    except CfmarError as e:
        _err(e.code, str(e))
        return 2
    except FileNotFoundError as e:
        _err("missing_input", str(e))
        return 2
    except FloatingPointError as e:
        _err("numerical_failure", str(e))
        return 3


if __name__ == "__main__":
    sys.exit(main())
