"""Average-intensity projections of masked volumes, grayscale or HU-banded.

Image conventions (right-handed slice views, array shape (height, width)):

    axis Z (axial):    img[y, x], ray along z
    axis Y (coronal):  img[z, x], ray along y
    axis X (sagittal): img[z, y], ray along x

HU values are clamped to [-1400, 240] before any averaging.  The banded
projection splits the clamped range into three channels; the defaults
are air-like [-1400, -900), lung [-900, -160) and soft tissue
[-160, 240], a half-open partition with a closed top on the final band so
every clamped value belongs to exactly one channel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidArgumentError
from .volume import Axis, BinaryMask, HuVolume

CLAMP_LO = -1400
CLAMP_HI = 240


@dataclass(frozen=True)
class HuRangeSet:
    """Three disjoint, contiguous, ordered HU bands given by 4 edges."""

    edges: tuple[int, int, int, int] = (-1400, -900, -160, 240)

    def __post_init__(self):
        e = tuple(int(x) for x in self.edges)
        if len(e) != 4 or any(a >= b for a, b in zip(e, e[1:])):
            raise InvalidArgumentError(f"band edges must be strictly increasing, got {e}")
        object.__setattr__(self, "edges", e)

    @property
    def bands(self) -> list[tuple[int, int]]:
        e = self.edges
        return [(e[0], e[1]), (e[1], e[2]), (e[2], e[3])]

    def membership(self, hu: np.ndarray) -> list[np.ndarray]:
        """Per-band membership of clamped HU values; the final band is closed on top."""
        hu = np.clip(hu, self.edges[0], self.edges[3])
        out = []
        for i, (lo, hi) in enumerate(self.bands):
            if i < 2:
                out.append((hu >= lo) & (hu < hi))
            else:
                out.append((hu >= lo) & (hu <= hi))
        return out


DEFAULT_BANDS = HuRangeSet()


@dataclass(frozen=True)
class ProjectionImage:
    """2D projection; samples are float64, shape (h, w) or (h, w, 3)."""

    width: int
    height: int
    channels: int
    samples: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise InvalidArgumentError("channels must be 1 or 3")
        arr = np.asarray(self.samples, dtype=np.float64)
        expect = (self.height, self.width) if self.channels == 1 else (
            self.height, self.width, 3)
        if arr.shape != expect:
            raise InvalidArgumentError(
                f"sample shape {arr.shape} does not match {expect}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)


def _ray_axis(axis: Axis) -> tuple[int, tuple[int, int]]:
    """Volume axis index to project along, plus (row, col) volume axes."""
    if axis is Axis.Z:
        return 2, (1, 0)   # img[y, x]
    if axis is Axis.Y:
        return 1, (2, 0)   # img[z, x]
    return 0, (2, 1)       # img[z, y]


def _check_pair(v: HuVolume, m: BinaryMask) -> None:
    if v.dims != m.dims:
        raise InvalidArgumentError(
            f"volume dims {v.dims} and mask dims {m.dims} differ")


def aip(v: HuVolume, m: BinaryMask, axis: Axis) -> ProjectionImage:
    """Masked average-intensity projection (1 channel, unnormalized HU means).

    Rays with no masked voxel output the clamp floor (-1400).
    """
    _check_pair(v, m)
    ray, (row_ax, col_ax) = _ray_axis(axis)
    hu = np.clip(v.data.astype(np.float64), CLAMP_LO, CLAMP_HI)
    mask = m.data
    total = (hu * mask).sum(axis=ray)
    count = mask.sum(axis=ray)
    with np.errstate(invalid="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), float(CLAMP_LO))
    # After ray reduction the remaining axes keep their relative order.
    remaining = [a for a in (0, 1, 2) if a != ray]
    img = np.transpose(mean, (remaining.index(row_ax), remaining.index(col_ax)))
    h, w = img.shape
    prov = {"axis": axis.value, "mode": "grayscale", "normalized": False}
    return ProjectionImage(w, h, 1, img, prov)


def aip_channels(v: HuVolume, m: BinaryMask, axis: Axis,
                 ranges: HuRangeSet = DEFAULT_BANDS) -> ProjectionImage:
    """Three-channel banded projection.

    Channel c averages (HU - band lower bound) over masked voxels whose
    clamped HU falls in band c; rays with no such voxel output 0.
    """
    _check_pair(v, m)
    ray, (row_ax, col_ax) = _ray_axis(axis)
    hu = np.clip(v.data.astype(np.float64), ranges.edges[0], ranges.edges[3])
    members = ranges.membership(hu)
    remaining = [a for a in (0, 1, 2) if a != ray]
    perm = (remaining.index(row_ax), remaining.index(col_ax))
    chans = []
    for (lo, _), member in zip(ranges.bands, members):
        sel = member & m.data
        total = ((hu - lo) * sel).sum(axis=ray)
        count = sel.sum(axis=ray)
        mean = np.where(count > 0, total / np.maximum(count, 1), 0.0)
        chans.append(np.transpose(mean, perm))
    img = np.stack(chans, axis=-1)
    h, w = img.shape[:2]
    prov = {"axis": axis.value, "mode": "bands", "bands": [list(b) for b in ranges.bands],
            "normalized": False}
    return ProjectionImage(w, h, 3, img, prov)


def normalize01(img: ProjectionImage) -> ProjectionImage:
    """Per-channel min-max rescale to [0, 1]; constant channels map to zeros."""
    arr = img.samples.astype(np.float64)
    expanded = arr[..., None] if img.channels == 1 else arr
    out = np.empty_like(expanded)
    mins, maxs = [], []
    for c in range(expanded.shape[-1]):
        ch = expanded[..., c]
        lo, hi = float(ch.min()), float(ch.max())
        mins.append(lo)
        maxs.append(hi)
        out[..., c] = 0.0 if hi == lo else (ch - lo) / (hi - lo)
    if img.channels == 1:
        out = out[..., 0]
    prov = dict(img.provenance)
    prov.update(normalized=True, norm_min=mins, norm_max=maxs)
    return ProjectionImage(img.width, img.height, img.channels,
                           out, prov)


# ---------------------------------------------------------------------------
# Export: raw float32 little-endian samples + JSON sidecar, and 8-bit PNG.

def save_projection(img: ProjectionImage, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "width": img.width,
        "height": img.height,
        "channels": img.channels,
        "dtype": "f32le",
        "order": "row-major, channel-last",
        "provenance": img.provenance,
    }
    (path / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    (path / "data.raw").write_bytes(img.samples.astype("<f4").tobytes())
    png_export(img, path / "preview.png")


def load_projection(path: str | Path) -> ProjectionImage:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    w, h, c = meta["width"], meta["height"], meta["channels"]
    raw = np.frombuffer((path / "data.raw").read_bytes(), dtype="<f4")
    shape = (h, w) if c == 1 else (h, w, 3)
    return ProjectionImage(w, h, c, raw.reshape(shape), meta.get("provenance", {}))


def png_export(img: ProjectionImage, path: str | Path) -> None:
    """8-bit PNG with value = round(sample * 255); samples must lie in [0, 1]."""
    arr = img.samples
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise InvalidArgumentError("PNG export needs samples in [0, 1]; normalize first")
    u8 = np.rint(arr * 255.0).astype(np.uint8)
    mode = "L" if img.channels == 1 else "RGB"
    Image.fromarray(u8, mode=mode).save(Path(path), format="PNG")
