"""Augmentation: the 27-element 3D rotation family and random 2D rotate/scale."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError
from .rng import mix64, unit_double
from .volume import HuVolume, rotate3d
from .projection import ProjectionImage

ROTATION_STEP_DEG = 5.0


def rotation27_angles() -> list[tuple[float, float, float]]:
    """The 27 (ax, ay, az) triples over {-5, 0, +5} in lexicographic order."""
    steps = (-ROTATION_STEP_DEG, 0.0, ROTATION_STEP_DEG)
    return [(ax, ay, az) for ax in steps for ay in steps for az in steps]


def rotations27(v: HuVolume, fill_hu: int) -> list[HuVolume]:
    """All 27 rotated volumes; index 13 (the all-zero triple) is the input."""
    return [rotate3d(v, angles, fill_hu) for angles in rotation27_angles()]


@dataclass(frozen=True)
class Augment2Spec:
    max_rotation_deg: float = 20.0
    scale_range: tuple[float, float] = (0.8, 1.2)
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_rotation_deg < 0:
            raise InvalidArgumentError("max_rotation_deg must be >= 0")
        lo, hi = self.scale_range
        if lo <= 0 or hi < lo:
            raise InvalidArgumentError("scale bounds must be positive and ordered")


def augment2d(img: ProjectionImage, spec: Augment2Spec,
              draw_index: int) -> ProjectionImage:
    """Random rotation/scale of a projection image, fully determined by
    (spec.rng_seed, draw_index).

    Two counter-based draws pick angle ~ U[-max, max] and scale ~ U[lo, hi];
    the image is rotated and scaled about its center with bilinear
    interpolation, zero fill and the canvas size unchanged, then re-clamped
    to [0, 1].
    """
    sub = mix64(spec.rng_seed, draw_index)
    u1 = unit_double(mix64(sub, 1))
    u2 = unit_double(mix64(sub, 2))
    angle = -spec.max_rotation_deg + 2.0 * spec.max_rotation_deg * u1
    lo, hi = spec.scale_range
    scale = lo + (hi - lo) * u2
    prov = dict(img.provenance)
    prov.update(augment_draw=draw_index, augment_angle_deg=angle,
                augment_scale=scale)
    if angle == 0.0 and scale == 1.0:
        return ProjectionImage(img.width, img.height, img.channels,
                               img.samples, prov)

    h, w = img.height, img.width
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    a = np.deg2rad(angle)
    c, s = np.cos(a), np.sin(a)
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dy, dx = rows - cy, cols - cx
    # Inverse map: undo the scale, then the rotation.
    src_y = cy + (c * dy + s * dx) / scale
    src_x = cx + (-s * dy + c * dx) / scale
    coords = np.stack([src_y, src_x])

    arr = img.samples.astype(np.float64)
    if img.channels == 1:
        out = ndimage.map_coordinates(arr, coords, order=1, mode="constant", cval=0.0)
    else:
        out = np.stack([
            ndimage.map_coordinates(arr[..., ch], coords, order=1,
                                    mode="constant", cval=0.0)
            for ch in range(3)], axis=-1)
    out = np.clip(out, 0.0, 1.0)
    return ProjectionImage(w, h, img.channels, out, prov)
