"""RAW + JSON sidecar persistence for volumes, masks and projection stacks.

Every array lives as a little-endian binary blob next to a JSON sidecar
describing dims, kind/unit, geometry and provenance. ``path`` may be given
with or without the .raw/.json suffix; both files share the stem.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import FormatError
from .forward_model import ProjectionStack
from .geometry import ScanGeometry
from .segmentation_2d import MaskStack, ScoreStack
from .volume import GridSpec, Mask3D, Volume

_STACK_KINDS = {
    "line_integral": ("<f4", "projection"),
    "raw_intensity": ("<f4", "projection"),
    "mask": ("|u1", "mask"),
    "score": ("<f4", "score"),
}


def _stem(path) -> str:
    path = os.fspath(path)
    for suffix in (".raw", ".json"):
        if path.endswith(suffix):
            return path[: -len(suffix)]
    return path


def _write(stem: str, array: np.ndarray, dtype: str, sidecar: dict):
    os.makedirs(os.path.dirname(os.path.abspath(stem)), exist_ok=True)
    array.astype(dtype).tofile(stem + ".raw")
    sidecar = dict(sidecar, dtype=dtype)
    with open(stem + ".json", "w") as f:
        json.dump(sidecar, f, indent=2)


def _read(stem: str):
    try:
        with open(stem + ".json") as f:
            sidecar = json.load(f)
    except FileNotFoundError as e:
        raise FormatError(f"missing sidecar {stem}.json") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid sidecar {stem}.json: {e}") from e
    data = np.fromfile(stem + ".raw", dtype=sidecar.get("dtype", "<f4"))
    return sidecar, data


def _reshape(data: np.ndarray, shape, stem: str) -> np.ndarray:
    expected = int(np.prod(shape))
    if data.size != expected:
        raise FormatError(
            f"{stem}.raw holds {data.size} values, sidecar promises {expected}"
        )
    return data.reshape(shape)


def load_sidecar(path) -> dict:
    """Read just the JSON sidecar (provenance: physics, seeds, geometry)."""
    stem = _stem(path)
    try:
        with open(stem + ".json") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise FormatError(f"missing sidecar {stem}.json") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid sidecar {stem}.json: {e}") from e


def save_volume(volume, path):
    """Persist a Volume (float32) or Mask3D (uint8)."""
    stem = _stem(path)
    if isinstance(volume, Mask3D):
        _write(
            stem,
            volume.values,
            "|u1",
            {"type": "mask3d", "grid": volume.grid.to_dict()},
        )
    else:
        _write(
            stem,
            volume.values,
            "<f4",
            {"type": "volume", "grid": volume.grid.to_dict(), "unit": volume.unit},
        )


def load_volume(path):
    """Load a Volume or Mask3D, dispatching on the sidecar type tag."""
    stem = _stem(path)
    sidecar, data = _read(stem)
    kind = sidecar.get("type")
    if kind not in ("volume", "mask3d"):
        raise FormatError(f"{stem}.json is not a volume sidecar (type={kind!r})")
    grid = GridSpec.from_dict(sidecar["grid"])
    values = _reshape(data, grid.dims, stem)
    if kind == "mask3d":
        return Mask3D(values.astype(bool), grid)
    return Volume(values.astype(np.float64), grid, unit=sidecar.get("unit", "1/mm"))


def save_hit_counts(v_hit: np.ndarray, v_max: np.ndarray, grid: GridSpec, path):
    """Persist the integer hit-counter grids (uint16 holds N <= 65535 views)."""
    stem = _stem(path)
    dtype = "<u2" if int(v_max.max(initial=0)) <= np.iinfo(np.uint16).max else "<u4"
    _write(
        stem + "_hit", v_hit, dtype, {"type": "hit_counts", "grid": grid.to_dict()}
    )
    _write(
        stem + "_max", v_max, dtype, {"type": "hit_counts", "grid": grid.to_dict()}
    )


def save_stack(stack, path, extras: dict = None):
    """Persist a ProjectionStack / MaskStack / ScoreStack."""
    stem = _stem(path)
    if isinstance(stack, ProjectionStack):
        kind = stack.kind
        data = stack.data
    elif isinstance(stack, MaskStack):
        kind = "mask"
        data = stack.data
    elif isinstance(stack, ScoreStack):
        kind = "score"
        data = stack.data
    else:
        raise FormatError(f"cannot persist {type(stack).__name__} as a stack")
    dtype, _ = _STACK_KINDS[kind]
    sidecar = {
        "type": "stack",
        "kind": kind,
        "num_views": data.shape[0],
        "rows": data.shape[1],
        "cols": data.shape[2],
        "geometry": stack.geometry.to_dict(),
    }
    if extras:
        sidecar.update(extras)
    _write(stem, data, dtype, sidecar)


def load_stack(path, geom: ScanGeometry = None):
    """Load a stack; returns the class matching the sidecar kind tag.

    If geom is given, the stored geometry must match it.
    """
    stem = _stem(path)
    sidecar, data = _read(stem)
    if sidecar.get("type") != "stack":
        raise FormatError(f"{stem}.json is not a stack sidecar")
    kind = sidecar.get("kind")
    if kind not in _STACK_KINDS:
        raise FormatError(f"unknown stack kind {kind!r}")
    shape = (sidecar["num_views"], sidecar["rows"], sidecar["cols"])
    data = _reshape(data, shape, stem)
    stored_geom = ScanGeometry.from_dict(sidecar["geometry"])
    if geom is not None and stored_geom != geom:
        raise FormatError("stored geometry does not match the requested geometry")
    if kind == "mask":
        return MaskStack(data.astype(bool), stored_geom)
    if kind == "score":
        return ScoreStack(data.astype(np.float64), stored_geom)
    return ProjectionStack(data.astype(np.float64), kind, stored_geom)


def save_slice_png(volume: Volume, slice_index: int, path, window: str = None):
    """Export one axial slice as a grayscale PNG with optional HU windowing.

    window is "wmin,wmax"; values are clipped into that range.
    """
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import image as mpimg

    sl = np.asarray(volume.values[:, :, slice_index], dtype=np.float64).T
    if window:
        try:
            wmin, wmax = (float(x) for x in window.split(","))
        except ValueError as e:
            raise FormatError(f"bad window spec {window!r}, expected 'wmin,wmax'") from e
    else:
        wmin, wmax = float(sl.min()), float(max(sl.max(), sl.min() + 1e-9))
    mpimg.imsave(os.fspath(path), np.clip(sl, wmin, wmax), cmap="gray", vmin=wmin, vmax=wmax)
