"""Deterministic synthetic-CT phantoms with ground-truth lung masks.

The phantom is a soft-tissue body ellipsoid (+40 HU) in background air
(-1000 HU) containing two lung ellipsoids filled with parenchyma at
-850 +/- 30 HU.  Lesions are carved into the lungs:

* ``cavity``            air sphere at -1000 HU inside a lung
* ``fungus_ball``       soft-tissue sphere at +30 HU strictly inside a cavity
* ``pleura_thickening`` soft-tissue shell at +40 HU on a lung boundary patch

The ground-truth mask is the union of the two lung ellipsoids, so fungus
balls and thickened pleura count as lung.  Parenchyma noise is uniform
integer +/-30 HU drawn counter-based from splitmix64 (see :mod:`ctproj.rng`)
keyed on the voxel's x-fastest linear index, which makes identical specs
produce byte-identical phantoms regardless of evaluation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidSpecError
from .rng import mix64_array
from .volume import BinaryMask, HuVolume, ORIENTATION_LPS

HU_AIR = -1000
HU_BODY = 40
HU_LUNG = -850
HU_FUNGUS = 30
NOISE_HU = 30

LESION_KINDS = ("cavity", "fungus_ball", "pleura_thickening")


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]

    def membership(self, dims: tuple[int, int, int]) -> np.ndarray:
        """Boolean voxel-membership grid: normalized radius <= 1."""
        x, y, z = np.ogrid[: dims[0], : dims[1], : dims[2]]
        cx, cy, cz = self.center
        ax, ay, az = self.semi_axes
        q = ((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2 + ((z - cz) / az) ** 2
        return q <= 1.0


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float

    def membership(self, dims: tuple[int, int, int]) -> np.ndarray:
        x, y, z = np.ogrid[: dims[0], : dims[1], : dims[2]]
        cx, cy, cz = self.center
        d2 = (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2
        return d2 <= self.radius ** 2


@dataclass(frozen=True)
class Lesion:
    """One lesion; ``geometry`` is a Sphere for cavity/fungus_ball.

    For ``pleura_thickening`` the patch is described by the owning lung
    index, a unit direction from the lung center, an angular radius (rad)
    and a shell thickness in voxels.
    """

    kind: str
    geometry: Sphere | None = None
    lung: int = 0
    direction: tuple[float, float, float] = (1.0, 0.0, 0.0)
    angular_radius_rad: float = 0.5
    thickness_vox: float = 2.0

    def __post_init__(self):
        if self.kind not in LESION_KINDS:
            raise InvalidSpecError(f"unknown lesion kind {self.kind!r}")
        if self.kind in ("cavity", "fungus_ball") and self.geometry is None:
            raise InvalidSpecError(f"{self.kind} lesion needs a sphere geometry")


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]
    rng_seed: int
    body: Ellipsoid
    lungs: tuple[Ellipsoid, Ellipsoid]
    lesions: tuple[Lesion, ...] = ()
    noise: bool = True

    def __post_init__(self):
        if len(self.lungs) != 2:
            raise InvalidSpecError("exactly two lung ellipsoids required")


def _pleura_membership(spec: PhantomSpec, les: Lesion) -> np.ndarray:
    lung = spec.lungs[les.lung]
    dims = spec.dims
    x, y, z = np.ogrid[: dims[0], : dims[1], : dims[2]]
    cx, cy, cz = lung.center
    ax, ay, az = lung.semi_axes
    dx, dy, dz = (np.asarray(les.direction, dtype=float)
                  / np.linalg.norm(les.direction))
    q = np.sqrt(((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2 + ((z - cz) / az) ** 2)
    # Ellipsoid radius along the patch direction, to convert voxel thickness
    # into a normalized-radius band.
    r_dir = 1.0 / np.sqrt((dx / ax) ** 2 + (dy / ay) ** 2 + (dz / az) ** 2)
    t_norm = les.thickness_vox / r_dir
    rad = np.sqrt((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = ((x - cx) * dx + (y - cy) * dy + (z - cz) * dz) / np.where(rad > 0, rad, 1.0)
    return (q <= 1.0) & (q >= 1.0 - t_norm) & (cosang >= np.cos(les.angular_radius_rad))


@dataclass(frozen=True)
class LesionRecord:
    kind: str
    voxel_count: int
    params: dict


def generate_phantom(spec: PhantomSpec) -> tuple[HuVolume, BinaryMask, list[LesionRecord]]:
    """Rasterize a phantom spec into (volume, ground-truth mask, lesion inventory)."""
    dims = spec.dims
    body = spec.body.membership(dims)
    lung_members = [lung.membership(dims) for lung in spec.lungs]
    mask = lung_members[0] | lung_members[1]
    if not (mask <= body).all():
        raise InvalidSpecError("lung ellipsoids must lie inside the body")

    vol = np.full(dims, HU_AIR, dtype=np.int16)
    vol[body] = HU_BODY
    vol[mask] = HU_LUNG
    if spec.noise:
        idx = np.flatnonzero(mask.ravel(order="F"))
        words = mix64_array(spec.rng_seed, idx)
        noise = ((words >> np.uint64(40)) % np.uint64(2 * NOISE_HU + 1)).astype(np.int64) - NOISE_HU
        flat = vol.ravel(order="F")
        flat[idx] = flat[idx] + noise.astype(np.int16)
        vol = flat.reshape(dims, order="F")

    # Lesion voxel sets, checked for contradictory overlaps before painting.
    sets: list[tuple[Lesion, np.ndarray, int]] = []
    for les in spec.lesions:
        if les.kind == "cavity":
            member = les.geometry.membership(dims)
            inside = member <= mask
            if not inside.all():
                raise InvalidSpecError("cavity must lie inside a lung")
            sets.append((les, member, HU_AIR))
        elif les.kind == "pleura_thickening":
            member = _pleura_membership(spec, les)
            sets.append((les, member, HU_BODY))
    cavity_union = np.zeros(dims, dtype=bool)
    for les, member, _ in sets:
        if les.kind == "cavity":
            cavity_union |= member
    for les in spec.lesions:
        if les.kind == "fungus_ball":
            member = les.geometry.membership(dims)
            # Strictly inside a cavity: the ball plus a 1-voxel margin.
            margin = Sphere(les.geometry.center, les.geometry.radius + 1).membership(dims)
            if not (margin <= cavity_union).all():
                raise InvalidSpecError("fungus ball must lie strictly inside a cavity")
            sets.append((les, member, HU_FUNGUS))
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            li, mi, hi = sets[i]
            lj, mj, hj = sets[j]
            nested = {li.kind, lj.kind} == {"cavity", "fungus_ball"}
            if hi != hj and not nested and (mi & mj).any():
                raise InvalidSpecError(
                    f"overlapping contradictory lesions: {li.kind} vs {lj.kind}")

    inventory = []
    for les, member, hu in sets:
        vol[member] = hu
        params = {"kind": les.kind}
        if les.geometry is not None:
            params.update(center=list(les.geometry.center), radius=les.geometry.radius)
        else:
            params.update(lung=les.lung, direction=list(les.direction),
                          angular_radius_rad=les.angular_radius_rad,
                          thickness_vox=les.thickness_vox)
        inventory.append(LesionRecord(les.kind, int(member.sum()), params))

    volume = HuVolume(dims, (1.0, 1.0, 1.0), vol, ORIENTATION_LPS)
    return volume, BinaryMask(dims, mask), inventory


# ---------------------------------------------------------------------------
# JSON spec file (CLI-facing), mirroring PhantomSpec fields.

def spec_from_dict(d: dict) -> PhantomSpec:
    def ell(e):
        return Ellipsoid(tuple(e["center"]), tuple(e["semi_axes"]))

    lesions = []
    for ld in d.get("lesions", []):
        kind = ld["kind"]
        if kind in ("cavity", "fungus_ball"):
            lesions.append(Lesion(kind, Sphere(tuple(ld["center"]), ld["radius"])))
        else:
            lesions.append(Lesion(
                kind, None, ld.get("lung", 0), tuple(ld.get("direction", (1, 0, 0))),
                ld.get("angular_radius_rad", 0.5), ld.get("thickness_vox", 2.0)))
    return PhantomSpec(
        dims=tuple(d["dims"]),
        rng_seed=int(d["rng_seed"]),
        body=ell(d["body"]),
        lungs=(ell(d["lungs"][0]), ell(d["lungs"][1])),
        lesions=tuple(lesions),
        noise=bool(d.get("noise", True)),
    )


def load_spec(path: str | Path) -> PhantomSpec:
    return spec_from_dict(json.loads(Path(path).read_text()))
