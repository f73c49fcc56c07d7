"""Domain types and CSV ingestion.

Recordings consist of two triaxial accelerometer streams (wrist and ankle),
per-breath indirect calorimetry and optional 1 Hz activity annotations, all
timestamped in seconds relative to a per-recording epoch.

On-disk layout of a dataset directory::

    participants.csv              id,age,sex,height_cm,weight_kg,bmi[,has_outdoor]
    <id>/accel_wrist.csv          t,x,y,z
    <id>/accel_ankle.csv          t,x,y,z
    <id>/breaths.csv              t,vo2,vco2[,eem]      (gas volumes in ml/min)
    <id>/annotations.csv          t,label,location      (optional)
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from functools import cached_property
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import (
    FormatError,
    MalformedRow,
    NegativeGasVolume,
    NegativeInput,
    NoOverlap,
    NonMonotonicTime,
    OutOfRange,
)

logger = logging.getLogger(__name__)

ACCEL_RANGE_G = 8.0
NOMINAL_SR = 83.0

# Weir coefficients, kcal per litre of gas
WEIR_O2 = 3.94
WEIR_CO2 = 1.11


class Location(enum.Enum):
    WRIST = "wrist"
    ANKLE = "ankle"


class Sex(enum.Enum):
    FEMALE = "F"
    MALE = "M"


class Activity(enum.Enum):
    LYING_DOWN = "lying_down"
    SITTING = "sitting"
    STANDING = "standing"
    HOUSEHOLD = "household"
    WALKING = "walking"
    CYCLING = "cycling"
    JUMPING = "jumping"


class Place(enum.Enum):
    INDOOR = "indoor"
    OUTDOOR = "outdoor"


class MetBand(enum.Enum):
    SEDENTARY = "sedentary"
    LIGHT = "light"
    MODERATE = "moderate"
    VIGOROUS = "vigorous"


class AccelSample(NamedTuple):
    t: float
    x: float
    y: float
    z: float


@dataclass(frozen=True, eq=False)
class AccelStream:
    """Time-ordered triaxial samples from one body location.

    ``t`` has shape (n,) and ``xyz`` shape (n, 3); both are stored read-only.
    """

    location: Location
    t: np.ndarray
    xyz: np.ndarray
    nominal_sr: float = NOMINAL_SR

    def __post_init__(self):
        t = np.array(self.t, dtype=np.float64)
        xyz = np.array(self.xyz, dtype=np.float64).reshape(-1, 3)
        if t.ndim != 1 or len(t) != len(xyz):
            raise FormatError("t and xyz must have matching lengths")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(xyz))):
            raise FormatError("non-finite sample in accelerometer stream")
        if len(t) and t[0] < 0:
            raise FormatError("timestamps must be non-negative")
        if np.any(np.diff(t) <= 0):
            raise NonMonotonicTime(f"{self.location.value} stream timestamps are not strictly increasing")
        if np.any(np.abs(xyz) > ACCEL_RANGE_G):
            raise OutOfRange(f"acceleration beyond +/-{ACCEL_RANGE_G} g")
        t.flags.writeable = False
        xyz.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "xyz", xyz)

    def __len__(self):
        return len(self.t)

    @property
    def samples(self) -> Iterator[AccelSample]:
        for ti, (x, y, z) in zip(self.t.tolist(), self.xyz.tolist()):
            yield AccelSample(ti, x, y, z)

    @property
    def start(self) -> float:
        return float(self.t[0])

    @property
    def end(self) -> float:
        return float(self.t[-1])

    def trimmed(self, t0: float, t1: float, shift: float = 0.0) -> "AccelStream":
        keep = (self.t >= t0) & (self.t <= t1)
        return AccelStream(self.location, self.t[keep] - shift, self.xyz[keep], self.nominal_sr)


@dataclass(frozen=True)
class BreathRecord:
    t: float
    vo2: float  # ml/min
    vco2: float  # ml/min
    eem: float  # kcal/min

    def __post_init__(self):
        if self.vo2 < 0 or self.vco2 < 0:
            raise NegativeGasVolume(f"negative gas volume at t={self.t}")
        if self.eem < 0:
            raise NegativeInput(f"negative EEm at t={self.t}")


@dataclass(frozen=True)
class ParticipantProfile:
    id: str
    age: float
    sex: Sex
    height: float  # cm
    weight: float  # kg
    bmi: float = math.nan
    has_outdoor: bool = False

    def __post_init__(self):
        expected = self.weight / (self.height / 100.0) ** 2
        if math.isnan(self.bmi):
            object.__setattr__(self, "bmi", expected)
        elif abs(self.bmi - expected) > 1e-6 * expected:
            raise FormatError(f"participant {self.id}: bmi {self.bmi} inconsistent with height/weight ({expected:.6f})")

    @property
    def sex_code(self) -> int:
        return 0 if self.sex is Sex.FEMALE else 1

    def static_vector(self) -> np.ndarray:
        """Raw static features in the fixed order (age, sex, height, weight, bmi)."""
        return np.array([self.age, self.sex_code, self.height, self.weight, self.bmi], dtype=np.float64)


STATIC_FEATURES = ("age", "sex", "height", "weight", "bmi")


@dataclass(frozen=True)
class ActivityAnnotation:
    t: float
    label: Activity
    place: Place


@dataclass(frozen=True, eq=False)
class Recording:
    profile: ParticipantProfile | None
    wrist: AccelStream
    ankle: AccelStream
    breaths: Sequence[BreathRecord]
    annotations: Sequence[ActivityAnnotation] = ()
    epoch_offset: float = 0.0
    subject_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "breaths", tuple(self.breaths))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        if not self.subject_id and self.profile is not None:
            object.__setattr__(self, "subject_id", self.profile.id)

    @property
    def id(self) -> str:
        return self.subject_id

    @cached_property
    def breath_t(self) -> np.ndarray:
        return np.array([b.t for b in self.breaths], dtype=np.float64)

    @cached_property
    def breath_eem(self) -> np.ndarray:
        return np.array([b.eem for b in self.breaths], dtype=np.float64)

    @cached_property
    def annotation_t(self) -> np.ndarray:
        return np.array([a.t for a in self.annotations], dtype=np.float64)

    @property
    def has_annotations(self) -> bool:
        return len(self.annotations) > 0

    @property
    def start(self) -> float:
        return max(self.wrist.start, self.ankle.start)

    @property
    def end(self) -> float:
        return min(self.wrist.end, self.ankle.end)

    def outdoor_at(self, times: np.ndarray) -> np.ndarray | None:
        """Outdoor flag of the latest annotation at or before each time, or None without annotations."""
        if not self.annotations:
            return None
        flags = np.array([a.place is Place.OUTDOOR for a in self.annotations])
        idx = np.searchsorted(self.annotation_t, times, side="right") - 1
        return flags[np.clip(idx, 0, len(flags) - 1)]


# ---------------------------------------------------------------------------
# physiology helpers


def eem_from_weir(vo2: float, vco2: float) -> float:
    """Energy expenditure in kcal/min from gas volumes in L/min."""
    if vo2 < 0 or vco2 < 0:
        raise NegativeGasVolume(f"vo2={vo2}, vco2={vco2}")
    return WEIR_O2 * vo2 + WEIR_CO2 * vco2


def met_band(mets: float) -> MetBand:
    if mets < 0:
        raise NegativeInput(f"mets={mets}")
    if mets < 1.5:
        return MetBand.SEDENTARY
    if mets < 4.0:
        return MetBand.LIGHT
    if mets < 6.0:
        return MetBand.MODERATE
    return MetBand.VIGOROUS


def mets_from_eem(eem: float, weight: float) -> float:
    """1 MET = 1 kcal/kg/h."""
    return eem * 60.0 / weight


# ---------------------------------------------------------------------------
# CSV parsing


def _parse_time(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        try:
            dt = datetime.fromisoformat(text)
        except ValueError:
            # fractional seconds with other than 3 or 6 digits
            ns = np.datetime64(text, "ns").astype(np.int64)
            return int(ns) / 1e9
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return dt.timestamp()


def _rows(path, required, optional=()):
    """Yield (line_number, dict) for each data row after validating the header."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            return
        missing = [c for c in required if c not in header]
        unknown = [c for c in header if c not in required and c not in optional]
        if missing or unknown:
            raise FormatError(f"{path}: bad header {header}; expected {list(required) + list(optional)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MalformedRow(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            yield lineno, dict(zip(header, (c.strip() for c in row)))


def _finite(path, lineno, name, text):
    try:
        value = float(text)
    except ValueError:
        raise MalformedRow(path, lineno, f"{name}={text!r} is not a number") from None
    if not math.isfinite(value):
        raise MalformedRow(path, lineno, f"{name}={text!r} is not finite")
    return value


def parse_accel_csv(path, location: Location) -> AccelStream:
    ts, vals = [], []
    for lineno, row in _rows(path, ("t", "x", "y", "z")):
        try:
            t = _parse_time(row["t"])
        except ValueError:
            raise MalformedRow(path, lineno, f"t={row['t']!r} is not a time") from None
        if not math.isfinite(t):
            raise MalformedRow(path, lineno, "t is not finite")
        xyz = [_finite(path, lineno, k, row[k]) for k in "xyz"]
        if any(abs(v) > ACCEL_RANGE_G for v in xyz):
            raise OutOfRange(f"{path}:{lineno}: acceleration {xyz} beyond +/-{ACCEL_RANGE_G} g")
        if ts and t <= ts[-1]:
            raise NonMonotonicTime(f"{path}:{lineno}: t={t} does not increase")
        ts.append(t)
        vals.append(xyz)
    return AccelStream(location, np.array(ts, dtype=np.float64), np.array(vals, dtype=np.float64).reshape(-1, 3))


def parse_breath_csv(path) -> list[BreathRecord]:
    """Read per-breath calorimetry; gas volumes are in ml/min.

    Missing ``eem`` values are filled in with the Weir formula.
    """
    out: list[BreathRecord] = []
    for lineno, row in _rows(path, ("t", "vo2", "vco2"), ("eem",)):
        try:
            t = _parse_time(row["t"])
        except ValueError:
            raise MalformedRow(path, lineno, f"t={row['t']!r} is not a time") from None
        vo2 = _finite(path, lineno, "vo2", row["vo2"])
        vco2 = _finite(path, lineno, "vco2", row["vco2"])
        if vo2 < 0 or vco2 < 0:
            raise NegativeGasVolume(f"{path}:{lineno}: vo2={vo2}, vco2={vco2}")
        if row.get("eem", ""):
            eem = _finite(path, lineno, "eem", row["eem"])
        else:
            eem = eem_from_weir(vo2 / 1000.0, vco2 / 1000.0)
        if out and t <= out[-1].t:
            raise NonMonotonicTime(f"{path}:{lineno}: t={t} does not increase")
        out.append(BreathRecord(t, vo2, vco2, eem))
    if not out:
        logger.warning("%s: no breath records", path)
    return out


def _parse_flag(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "y"):
        return True
    if t in ("0", "false", "no", "n", ""):
        return False
    raise ValueError(text)


def parse_participants_csv(path) -> dict[str, ParticipantProfile]:
    out = {}
    for lineno, row in _rows(path, ("id", "age", "sex", "height_cm", "weight_kg", "bmi"), ("has_outdoor",)):
        try:
            sex = Sex(row["sex"].upper())
        except ValueError:
            raise MalformedRow(path, lineno, f"sex={row['sex']!r} not in {{F,M}}") from None
        try:
            has_outdoor = _parse_flag(row.get("has_outdoor", ""))
        except ValueError:
            raise MalformedRow(path, lineno, f"has_outdoor={row['has_outdoor']!r}") from None
        bmi = _finite(path, lineno, "bmi", row["bmi"]) if row["bmi"] else math.nan
        out[row["id"]] = ParticipantProfile(
            id=row["id"],
            age=_finite(path, lineno, "age", row["age"]),
            sex=sex,
            height=_finite(path, lineno, "height_cm", row["height_cm"]),
            weight=_finite(path, lineno, "weight_kg", row["weight_kg"]),
            bmi=bmi,
            has_outdoor=has_outdoor,
        )
    return out


def parse_annotations_csv(path) -> list[ActivityAnnotation]:
    out = []
    for lineno, row in _rows(path, ("t", "label", "location")):
        t = _finite(path, lineno, "t", row["t"])
        try:
            label = Activity(row["label"])
            place = Place(row["location"])
        except ValueError as exc:
            raise MalformedRow(path, lineno, str(exc)) from None
        if out and t <= out[-1].t:
            raise NonMonotonicTime(f"{path}:{lineno}: t={t} does not increase")
        out.append(ActivityAnnotation(t, label, place))
    return out


# ---------------------------------------------------------------------------
# CSV writing; repr() gives the shortest text that round-trips exactly


def write_accel_csv(path, stream: AccelStream) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("t,x,y,z\n")
        fh.writelines(f"{t!r},{x!r},{y!r},{z!r}\n" for t, x, y, z in stream.samples)


def write_breath_csv(path, breaths: Sequence[BreathRecord], include_eem: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        if include_eem:
            fh.write("t,vo2,vco2,eem\n")
            fh.writelines(f"{b.t!r},{b.vo2!r},{b.vco2!r},{b.eem!r}\n" for b in breaths)
        else:
            fh.write("t,vo2,vco2\n")
            fh.writelines(f"{b.t!r},{b.vo2!r},{b.vco2!r}\n" for b in breaths)


def write_participants_csv(path, profiles: Sequence[ParticipantProfile]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("id,age,sex,height_cm,weight_kg,bmi,has_outdoor\n")
        for p in profiles:
            fh.write(f"{p.id},{p.age!r},{p.sex.value},{p.height!r},{p.weight!r},{p.bmi!r},{int(p.has_outdoor)}\n")


def write_annotations_csv(path, annotations: Sequence[ActivityAnnotation]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("t,label,location\n")
        fh.writelines(f"{a.t!r},{a.label.value},{a.place.value}\n" for a in annotations)


# ---------------------------------------------------------------------------
# recordings


def align_recording(rec: Recording) -> Recording:
    """Trim every stream to the common time range and move the epoch to its start."""
    if not len(rec.wrist) or not len(rec.ankle) or not rec.breaths:
        raise NoOverlap(f"recording {rec.id}: empty stream")
    t0 = max(rec.wrist.start, rec.ankle.start, rec.breaths[0].t)
    t1 = min(rec.wrist.end, rec.ankle.end, rec.breaths[-1].t)
    if t1 <= t0:
        raise NoOverlap(f"recording {rec.id}: streams do not overlap")
    breaths = [replace(b, t=b.t - t0) for b in rec.breaths if t0 <= b.t <= t1]
    annotations = [replace(a, t=a.t - t0) for a in rec.annotations if t0 <= a.t <= t1]
    return Recording(
        profile=rec.profile,
        wrist=rec.wrist.trimmed(t0, t1, t0),
        ankle=rec.ankle.trimmed(t0, t1, t0),
        breaths=breaths,
        annotations=annotations,
        epoch_offset=rec.epoch_offset + t0,
        subject_id=rec.subject_id,
    )


def load_recording(directory, profile: ParticipantProfile | None = None, subject_id: str | None = None) -> Recording:
    d = Path(directory)
    ann_path = d / "annotations.csv"
    return Recording(
        profile=profile,
        wrist=parse_accel_csv(d / "accel_wrist.csv", Location.WRIST),
        ankle=parse_accel_csv(d / "accel_ankle.csv", Location.ANKLE),
        breaths=parse_breath_csv(d / "breaths.csv"),
        annotations=parse_annotations_csv(ann_path) if ann_path.exists() else (),
        subject_id=subject_id or (profile.id if profile else d.name),
    )


def write_recording(directory, rec: Recording) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_accel_csv(d / "accel_wrist.csv", rec.wrist)
    write_accel_csv(d / "accel_ankle.csv", rec.ankle)
    write_breath_csv(d / "breaths.csv", rec.breaths)
    if rec.annotations:
        write_annotations_csv(d / "annotations.csv", rec.annotations)


def load_dataset(root, align: bool = True) -> list[Recording]:
    """Load every subject directory below ``root``, sorted by subject id.

    Profiles come from ``participants.csv``; without it recordings carry no profile.
    """
    root = Path(root)
    pfile = root / "participants.csv"
    profiles = parse_participants_csv(pfile) if pfile.exists() else {}
    recs = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        if not (d / "breaths.csv").exists():
            continue
        rec = load_recording(d, profiles.get(d.name), d.name)
        recs.append(align_recording(rec) if align else rec)
    if not recs:
        raise FormatError(f"{root}: no subject directories found")
    return recs


def write_dataset(root, recordings: Sequence[Recording]) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    profiles = [r.profile for r in recordings if r.profile is not None]
    if profiles:
        write_participants_csv(root / "participants.csv", profiles)
    for rec in recordings:
        write_recording(root / rec.id, rec)


__all__ = [
    "ACCEL_RANGE_G",
    "NOMINAL_SR",
    "STATIC_FEATURES",
    "AccelSample",
    "AccelStream",
    "Activity",
    "ActivityAnnotation",
    "BreathRecord",
    "Location",
    "MetBand",
    "ParticipantProfile",
    "Place",
    "Recording",
    "Sex",
    "align_recording",
    "eem_from_weir",
    "load_dataset",
    "load_recording",
    "met_band",
    "mets_from_eem",
    "parse_accel_csv",
    "parse_annotations_csv",
    "parse_breath_csv",
    "parse_participants_csv",
    "write_accel_csv",
    "write_annotations_csv",
    "write_breath_csv",
    "write_dataset",
    "write_participants_csv",
    "write_recording",
]
