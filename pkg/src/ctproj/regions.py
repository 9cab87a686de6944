"""Sub-region geometry, region labels, patient-disjoint splits, survival labels.

A scan is tiled into 6 geometric sub-regions: half the X extent, the full
Y extent and a third of the Z extent each.  Under the "LPS" orientation
(+x -> patient-left, +z -> superior) low x is the patient's right side and
low z the lower band, so the boxes map to codes RU/RM/RL/LU/LM/LL.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from datetime import date
from enum import Enum
from pathlib import Path
from random import Random

from .errors import DataIntegrityError, InvalidArgumentError
from .volume import ORIENTATION_LPS

SURVIVAL_WINDOW_DAYS = 730  # two years, ignoring leap days


class RegionId(Enum):
    LU = "LU"
    LM = "LM"
    LL = "LL"
    RU = "RU"
    RM = "RM"
    RL = "RL"

    @property
    def side(self) -> str:
        return "left" if self.value[0] == "L" else "right"

    @property
    def band(self) -> str:
        return {"U": "upper", "M": "middle", "L": "lower"}[self.value[1]]


@dataclass(frozen=True)
class RegionLabels:
    """Multi-label binary flags for one sub-region."""

    pre_existing_condition: int = 0
    cavity: int = 0
    pleura_thickening: int = 0
    fungus_ball: int = 0

    def __post_init__(self):
        for name in ("pre_existing_condition", "cavity", "pleura_thickening",
                     "fungus_ball"):
            if getattr(self, name) not in (0, 1):
                raise InvalidArgumentError(f"{name} must be 0 or 1")


@dataclass(frozen=True)
class ScanRecord:
    patient_id: str
    scan_id: str
    acquisition_date: date
    labels: dict
    disease_state: str = "control"
    survival_label: str | None = None

    def __post_init__(self):
        if self.disease_state not in ("control", "cpa"):
            raise InvalidArgumentError(f"bad disease_state {self.disease_state!r}")
        if self.survival_label not in (None, "positive", "negative"):
            raise InvalidArgumentError(f"bad survival_label {self.survival_label!r}")
        if set(self.labels) != set(RegionId):
            raise InvalidArgumentError("labels must cover all 6 regions")


@dataclass(frozen=True)
class DatasetSplit:
    train: frozenset
    test: frozenset

    def __post_init__(self):
        if self.train & self.test:
            raise InvalidArgumentError("train and test scan sets overlap")


@dataclass(frozen=True)
class Box:
    """Half-open voxel box [x0, x1) x [y0, y1) x [z0, z1)."""

    x0: int
    x1: int
    y0: int
    y1: int
    z0: int
    z1: int

    def shape(self) -> tuple[int, int, int]:
        return (self.x1 - self.x0, self.y1 - self.y0, self.z1 - self.z0)


def partition_regions(dims: tuple[int, int, int],
                      orientation: str = ORIENTATION_LPS) -> dict:
    """Tile the volume into the six sub-region boxes."""
    nx, ny, nz = dims
    if nx % 2 or nz % 3:
        raise InvalidArgumentError(
            f"nx must be divisible by 2 and nz by 3, got {dims}")
    if orientation != ORIENTATION_LPS:
        raise InvalidArgumentError(f"unsupported orientation {orientation!r}")
    hx, tz = nx // 2, nz // 3
    # LPS: low x = patient-right, low z = inferior (lower band).
    sides = {"R": (0, hx), "L": (hx, nx)}
    bands = {"L": (0, tz), "M": (tz, 2 * tz), "U": (2 * tz, nz)}
    out = {}
    for rid in RegionId:
        x0, x1 = sides[rid.value[0]]
        z0, z1 = bands[rid.value[1]]
        out[rid] = Box(x0, x1, 0, ny, z0, z1)
    return out


def split_by_patient(records: list[ScanRecord], test_fraction: float,
                     seed: int) -> DatasetSplit:
    """Greedy patient-level split: shuffled patients fill the test set until
    its scan count reaches test_fraction of the total."""
    if not (0.0 < test_fraction < 1.0):
        raise InvalidArgumentError("test_fraction must be in (0, 1)")
    by_patient: dict[str, list[str]] = {}
    for r in records:
        by_patient.setdefault(r.patient_id, []).append(r.scan_id)
    if len(by_patient) < 2:
        raise InvalidArgumentError("need at least 2 patients to split")
    patients = sorted(by_patient)
    Random(seed).shuffle(patients)
    target = test_fraction * len(records)
    test: set[str] = set()
    it = iter(patients)
    while len(test) < target:
        test.update(by_patient[next(it)])
    train = {r.scan_id for r in records} - test
    return DatasetSplit(frozenset(train), frozenset(test))


def balance(records: list, label_fn, seed: int) -> list:
    """Downsample the majority class (seeded) to the minority count,
    preserving the original record order."""
    zeros = [i for i, r in enumerate(records) if label_fn(r) == 0]
    ones = [i for i, r in enumerate(records) if label_fn(r) == 1]
    if not zeros or not ones:
        raise InvalidArgumentError("both classes must be nonempty")
    if len(zeros) > len(ones):
        keep_major = Random(seed).sample(zeros, len(ones))
        kept = set(keep_major) | set(ones)
    elif len(ones) > len(zeros):
        keep_major = Random(seed).sample(ones, len(zeros))
        kept = set(keep_major) | set(zeros)
    else:
        return list(records)
    return [r for i, r in enumerate(records) if i in kept]


def assign_survival_labels(records: list[ScanRecord], death_dates: dict,
                           annotation_date: date) -> list[ScanRecord]:
    """Two-year survival labeling.

    Deceased patients: scans acquired within 730 days before death are
    positive, their other scans stay unlabeled.  Surviving patients: scans
    acquired more than 730 days before the annotation date are negative,
    the rest stay unlabeled.
    """
    out = []
    for r in records:
        death = death_dates.get(r.patient_id)
        if death is not None:
            if death < r.acquisition_date:
                raise DataIntegrityError(
                    f"scan {r.scan_id} acquired after patient death")
            delta = (death - r.acquisition_date).days
            label = "positive" if delta <= SURVIVAL_WINDOW_DAYS else None
        else:
            delta = (annotation_date - r.acquisition_date).days
            label = "negative" if delta > SURVIVAL_WINDOW_DAYS else None
        out.append(replace(r, survival_label=label))
    return out


# ---------------------------------------------------------------------------
# CSV formats.

LABELS_HEADER = ["patient_id", "scan_id", "acquisition_date", "region",
                 "pre_existing", "cavity", "pleura_thickening", "fungus_ball"]


def save_labels_csv(records: list[ScanRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABELS_HEADER)
        for r in records:
            for rid in RegionId:
                lab = r.labels[rid]
                writer.writerow([
                    r.patient_id, r.scan_id, r.acquisition_date.isoformat(),
                    rid.value, lab.pre_existing_condition, lab.cavity,
                    lab.pleura_thickening, lab.fungus_ball])


def load_labels_csv(path: str | Path) -> list[ScanRecord]:
    rows = {}
    order = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != LABELS_HEADER:
            raise InvalidArgumentError(
                f"labels CSV header must be {','.join(LABELS_HEADER)}")
        for row in reader:
            key = row["scan_id"]
            if key not in rows:
                rows[key] = {
                    "patient_id": row["patient_id"],
                    "acquisition_date": date.fromisoformat(row["acquisition_date"]),
                    "labels": {},
                }
                order.append(key)
            rows[key]["labels"][RegionId(row["region"])] = RegionLabels(
                int(row["pre_existing"]), int(row["cavity"]),
                int(row["pleura_thickening"]), int(row["fungus_ball"]))
    return [ScanRecord(rows[s]["patient_id"], s, rows[s]["acquisition_date"],
                       rows[s]["labels"]) for s in order]


def load_roster_csv(path: str | Path) -> dict:
    """Survival roster: patient_id,death_date rows; empty death_date = survivor."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["patient_id", "death_date"]:
            raise InvalidArgumentError("roster CSV header must be patient_id,death_date")
        for row in reader:
            dd = row["death_date"].strip()
            out[row["patient_id"]] = date.fromisoformat(dd) if dd else None
    return out
