"""Voxel-grid data model: Hounsfield volumes, resampling, rotation, disk I/O.

Conventions used throughout the toolkit:

* Volumes are stored as ``int16`` arrays of shape ``(nx, ny, nz)`` indexed
  ``data[x, y, z]``.  The on-disk / linear order is x-fastest, i.e.
  ``index = x + nx * (y + ny * z)``, which is Fortran order for this shape.
* The orientation tag ``"LPS"`` declares +x -> patient-left, +y -> posterior,
  +z -> superior.
* Wherever fractional HU values are turned back into integers we round
  half away from zero, so every implementation of these operations agrees
  bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError

HU_MIN = -2048
HU_MAX = 3071
ORIENTATION_LPS = "LPS"


class Axis(Enum):
    """Projection/rotation axis. X/Y give sagittal/coronal views, Z axial."""

    X = "x"
    Y = "y"
    Z = "z"


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves away from zero (e.g. 3.5 -> 4, -3.5 -> -4)."""
    return np.trunc(x + np.copysign(0.5, x))


def _to_hu_int16(x: np.ndarray) -> np.ndarray:
    return np.clip(round_half_away(x), HU_MIN, HU_MAX).astype(np.int16)


@dataclass(frozen=True)
class HuVolume:
    """3D grid of Hounsfield samples with physical spacing and orientation."""

    dims: tuple[int, int, int]
    spacing_mm: tuple[float, float, float]
    data: np.ndarray
    orientation: str = ORIENTATION_LPS

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing_mm)
        if any(d <= 0 for d in dims):
            raise InvalidArgumentError(f"dims must be positive, got {dims}")
        if any(s <= 0 for s in spacing):
            raise InvalidArgumentError(f"spacing must be positive, got {spacing}")
        arr = np.asarray(self.data, dtype=np.int16)
        if arr.shape != dims:
            raise InvalidArgumentError(
                f"data shape {arr.shape} does not match dims {dims}")
        if arr.size and (arr.min() < HU_MIN or arr.max() > HU_MAX):
            raise InvalidArgumentError(
                f"HU samples outside [{HU_MIN}, {HU_MAX}]")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing_mm", spacing)
        object.__setattr__(self, "data", arr)


@dataclass(frozen=True)
class BinaryMask:
    """Per-voxel boolean mask aligned to a companion HuVolume."""

    dims: tuple[int, int, int]
    data: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        arr = np.asarray(self.data, dtype=bool)
        if arr.shape != dims:
            raise InvalidArgumentError(
                f"mask shape {arr.shape} does not match dims {dims}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", arr)

    def count(self) -> int:
        return int(self.data.sum())


def linear_index(dims: tuple[int, int, int], x: int, y: int, z: int) -> int:
    """x-fastest linear index: x + nx*(y + ny*z)."""
    nx, ny, _ = dims
    return x + nx * (y + ny * z)


def _source_coords(n_out: int, n_in: int) -> np.ndarray:
    # Voxel-center (half-pixel) mapping through the physical extent,
    # clipped so border rays sample the edge voxel.
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    return np.clip(src, 0.0, n_in - 1)


def resample(v: HuVolume, target_dims: tuple[int, int, int]) -> HuVolume:
    """Trilinear resample to ``target_dims``, preserving the physical extent.

    Output voxel centers map proportionally through the volume extent;
    spacing is rescaled so ``dims * spacing`` is unchanged.
    """
    target = tuple(int(d) for d in target_dims)
    if any(d <= 0 for d in target):
        raise InvalidArgumentError(f"target dims must be positive, got {target}")
    if target == v.dims:
        return v
    cx = _source_coords(target[0], v.dims[0])
    cy = _source_coords(target[1], v.dims[1])
    cz = _source_coords(target[2], v.dims[2])
    grid = np.meshgrid(cx, cy, cz, indexing="ij")
    out = ndimage.map_coordinates(
        v.data.astype(np.float64), np.stack(grid), order=1, mode="nearest")
    spacing = tuple(s * n / t for s, n, t in zip(v.spacing_mm, v.dims, target))
    return HuVolume(target, spacing, _to_hu_int16(out), v.orientation)


def downsample2(v: HuVolume) -> HuVolume:
    """Halve each dimension by averaging 2x2x2 blocks; spacing doubles."""
    nx, ny, nz = v.dims
    if nx % 2 or ny % 2 or nz % 2:
        raise InvalidArgumentError(f"all dims must be even, got {v.dims}")
    blocks = v.data.astype(np.float64).reshape(nx // 2, 2, ny // 2, 2, nz // 2, 2)
    means = blocks.mean(axis=(1, 3, 5))
    spacing = tuple(2 * s for s in v.spacing_mm)
    return HuVolume((nx // 2, ny // 2, nz // 2), spacing,
                    _to_hu_int16(means), v.orientation)


def _rotation_matrix(ax_deg: float, ay_deg: float, az_deg: float) -> np.ndarray:
    """Right-handed rotation, composed X then Y then Z, acting on (x, y, z)."""
    ax, ay, az = np.deg2rad([ax_deg, ay_deg, az_deg])
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


ROTATE_MAX_DEG = 45.0


def rotate3d(v: HuVolume, angles_deg: tuple[float, float, float],
             fill_hu: int) -> HuVolume:
    """Rotate about the volume center (axis order X, Y, Z), trilinear resample.

    Out-of-bounds samples take ``fill_hu``.  The all-zero angle triple is an
    identity shortcut and returns the input without resampling.
    """
    angles = tuple(float(a) for a in angles_deg)
    if any(abs(a) > ROTATE_MAX_DEG for a in angles):
        raise InvalidArgumentError(
            f"|angle| must be <= {ROTATE_MAX_DEG} deg, got {angles}")
    if angles == (0.0, 0.0, 0.0):
        return v
    rot = _rotation_matrix(*angles)
    inv = rot.T
    center = (np.array(v.dims, dtype=np.float64) - 1.0) / 2.0
    offset = center - inv @ center
    out = ndimage.affine_transform(
        v.data.astype(np.float64), inv, offset=offset, order=1,
        mode="constant", cval=float(fill_hu))
    return HuVolume(v.dims, v.spacing_mm, _to_hu_int16(out), v.orientation)


# ---------------------------------------------------------------------------
# On-disk container: meta.json + data.raw (x-fastest little-endian samples).

def save_volume(v: HuVolume, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "dims": list(v.dims),
        "spacing_mm": list(v.spacing_mm),
        "dtype": "i16le",
        "unit": "HU",
        "orientation": v.orientation,
    }
    (path / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    (path / "data.raw").write_bytes(
        v.data.ravel(order="F").astype("<i2").tobytes())


def load_volume(path: str | Path) -> HuVolume:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    if meta.get("dtype") != "i16le":
        raise InvalidArgumentError(f"expected dtype i16le, got {meta.get('dtype')}")
    dims = tuple(int(d) for d in meta["dims"])
    raw = np.frombuffer((path / "data.raw").read_bytes(), dtype="<i2")
    if raw.size != dims[0] * dims[1] * dims[2]:
        raise InvalidArgumentError("data.raw size does not match dims")
    data = raw.reshape(dims, order="F")
    return HuVolume(dims, tuple(meta["spacing_mm"]), data,
                    meta.get("orientation", ORIENTATION_LPS))


def save_mask(m: BinaryMask, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {"dims": list(m.dims), "dtype": "u8", "unit": "mask"}
    (path / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    (path / "data.raw").write_bytes(
        m.data.ravel(order="F").astype(np.uint8).tobytes())


def load_mask(path: str | Path) -> BinaryMask:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    if meta.get("dtype") != "u8":
        raise InvalidArgumentError(f"expected dtype u8, got {meta.get('dtype')}")
    dims = tuple(int(d) for d in meta["dims"])
    raw = np.frombuffer((path / "data.raw").read_bytes(), dtype=np.uint8)
    if raw.size != dims[0] * dims[1] * dims[2]:
        raise InvalidArgumentError("data.raw size does not match dims")
    if raw.size and raw.max() > 1:
        raise InvalidArgumentError("mask samples must be 0 or 1")
    return BinaryMask(dims, raw.reshape(dims, order="F").astype(bool))
