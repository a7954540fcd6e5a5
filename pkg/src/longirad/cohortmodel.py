"""Patients, timepoints, lesion annotations and outcomes, plus the cohort
directory format.

Cohort directory layout::

    volumes/<series_id>.raw        little-endian float32, x fastest
    volumes/<series_id>.meta.json  dims, spacing, origin, direction
    masks/<mask_id>.pgm            binary lesion masks (origin/spacing in comments)
    annotations.csv
    demographics.csv
    survival.csv
    external_features.csv          optional

All numbers are written with 17 significant digits so that a save/load
round trip is the identity.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CohortLoadError, ReferentialIntegrityError, SchemaError, ValidationError

log = logging.getLogger(__name__)


def fmt(value: float) -> str:
    """Round-trip-exact numeric text."""
    return format(float(value), ".17g")


class Timepoint(enum.IntEnum):
    SCREENING = 0
    WEEK8 = 1
    WEEK16 = 2
    WEEK24 = 3

    @property
    def label(self) -> str:
        return _TP_LABELS[self]

    @property
    def days(self) -> float:
        return _TP_DAYS[self]

    @classmethod
    def parse(cls, text: str | int | "Timepoint") -> "Timepoint":
        if isinstance(text, Timepoint):
            return text
        if isinstance(text, int):
            return cls(text)
        key = str(text).strip()
        for tp in cls:
            if key.lower() in (tp.label.lower(), tp.name.lower(), str(int(tp))):
                return tp
        raise ValidationError(f"unknown timepoint {text!r}")


_TP_LABELS = {
    Timepoint.SCREENING: "Screening",
    Timepoint.WEEK8: "Week8",
    Timepoint.WEEK16: "Week16",
    Timepoint.WEEK24: "Week24",
}
_TP_DAYS = {
    Timepoint.SCREENING: 0.0,
    Timepoint.WEEK8: 56.0,
    Timepoint.WEEK16: 112.0,
    Timepoint.WEEK24: 168.0,
}

# delta block name for each follow-up timepoint
DELTA_BLOCKS = {Timepoint.WEEK8: "Z", Timepoint.WEEK16: "W", Timepoint.WEEK24: "V"}
RADIOMIC_BLOCKS = ("x", "Z", "W", "V")
SOURCE_GROUPS = ("G1", "G2")

DEMOGRAPHIC_NAMES = ("LIVERBL", "PRENGR1", "ENDSNBL", "AST", "ALP", "Age", "Denovo", "HGB", "ARM")
_BINARY_DEMOGRAPHICS = frozenset({"LIVERBL", "PRENGR1", "ENDSNBL", "Denovo", "ARM"})


@dataclass(frozen=True, eq=False)
class ImageVolume:
    """Scalar volume in HU. ``voxels`` has shape (nz, ny, nx)."""

    voxels: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        vox = np.ascontiguousarray(self.voxels, dtype=np.float32)
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        d = np.asarray(self.direction, dtype=float).reshape(3, 3)
        object.__setattr__(self, "direction", d)
        if vox.ndim != 3:
            raise ValidationError("voxels must be a 3D array")
        if any(s <= 0 for s in self.spacing):
            raise ValidationError(f"spacing must be positive, got {self.spacing}")
        if not np.allclose(d.T @ d, np.eye(3), atol=1e-6, rtol=0):
            raise ValidationError("direction matrix is not orthonormal")

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.voxels.shape
        return (nx, ny, nz)

    def index_to_physical(self, ijk) -> np.ndarray:
        """Continuous (i, j, k) = (x, y, z) index to physical mm. Accepts (..., 3)."""
        ijk = np.asarray(ijk, dtype=float)
        return np.asarray(self.origin) + (ijk * np.asarray(self.spacing)) @ self.direction.T

    def physical_to_index(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return ((p - np.asarray(self.origin)) @ self.direction) / np.asarray(self.spacing)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned physical bounding box of the voxel centers."""
        nx, ny, nz = self.dims
        corners = np.array(
            [[i, j, k] for i in (0, nx - 1) for j in (0, ny - 1) for k in (0, nz - 1)], dtype=float
        )
        pts = self.index_to_physical(corners)
        return pts.min(axis=0), pts.max(axis=0)

    def contains(self, p, tol: float = 1e-9) -> bool:
        idx = self.physical_to_index(p)
        nx, ny, nz = self.dims
        upper = np.array([nx - 1, ny - 1, nz - 1], dtype=float)
        return bool(np.all(idx >= -0.5 - tol) and np.all(idx <= upper + 0.5 + tol))

    def __eq__(self, other):
        if not isinstance(other, ImageVolume):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.origin == other.origin
            and np.array_equal(self.direction, other.direction)
            and self.voxels.shape == other.voxels.shape
            and np.array_equal(self.voxels, other.voxels)
        )


@dataclass(frozen=True, eq=False)
class LesionMask:
    """2D binary raster. ``pixels`` is indexed (row=y, col=x).

    ``origin`` is the in-plane position (mm) of pixel (0, 0), measured in the
    owning volume's axis-aligned frame; ``spacing`` is (sx, sy).
    """

    pixels: np.ndarray
    spacing: tuple[float, float]
    origin: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "pixels", np.asarray(self.pixels, dtype=bool))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if self.pixels.ndim != 2:
            raise ValidationError("mask must be 2D")

    def __eq__(self, other):
        if not isinstance(other, LesionMask):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.origin == other.origin
            and np.array_equal(self.pixels, other.pixels)
        )


@dataclass(frozen=True, eq=False)
class LesionAnnotation:
    patient_id: str
    timepoint: Timepoint
    source_group: str
    series_id: str
    lesion_label: str
    centroid: tuple[float, float, float]
    slice_index: int
    mask: LesionMask

    def __post_init__(self):
        object.__setattr__(self, "timepoint", Timepoint.parse(self.timepoint))
        object.__setattr__(self, "centroid", tuple(float(c) for c in self.centroid))
        object.__setattr__(self, "slice_index", int(self.slice_index))
        if self.source_group not in SOURCE_GROUPS:
            raise ValidationError(f"source_group must be one of {SOURCE_GROUPS}, got {self.source_group!r}")
        if not self.mask.pixels.any():
            raise ValidationError(f"empty mask for lesion {self.key}")

    @property
    def key(self) -> tuple[str, str, str, str, str]:
        return (self.patient_id, self.timepoint.label, self.source_group, self.series_id, self.lesion_label)

    @property
    def mask_id(self) -> str:
        raw = "_".join(self.key)
        return re.sub(r"[^A-Za-z0-9_.-]", "-", raw)

    def with_centroid(self, centroid) -> "LesionAnnotation":
        return LesionAnnotation(
            self.patient_id, self.timepoint, self.source_group, self.series_id,
            self.lesion_label, tuple(centroid), self.slice_index, self.mask,
        )

    def __eq__(self, other):
        if not isinstance(other, LesionAnnotation):
            return NotImplemented
        return (
            self.key == other.key
            and self.centroid == other.centroid
            and self.slice_index == other.slice_index
            and self.mask == other.mask
        )

    def __hash__(self):
        return hash(self.key)


@dataclass(frozen=True)
class Demographics:
    LIVERBL: int
    PRENGR1: int
    ENDSNBL: int
    AST: float
    ALP: float
    Age: float
    Denovo: int
    HGB: float
    ARM: int

    def __post_init__(self):
        for name in DEMOGRAPHIC_NAMES:
            value = getattr(self, name)
            if name in _BINARY_DEMOGRAPHICS:
                if value not in (0, 1):
                    raise ValidationError(f"{name} must be 0 or 1, got {value!r}")
                object.__setattr__(self, name, int(value))
            else:
                object.__setattr__(self, name, float(value))

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in DEMOGRAPHIC_NAMES], dtype=float)

    @classmethod
    def from_mapping(cls, row: Mapping[str, object]) -> "Demographics":
        values = {}
        for name in DEMOGRAPHIC_NAMES:
            raw = row[name]
            values[name] = int(float(raw)) if name in _BINARY_DEMOGRAPHICS else float(raw)
        return cls(**values)


@dataclass(frozen=True)
class SurvivalOutcome:
    time: float
    event: int

    def __post_init__(self):
        object.__setattr__(self, "time", float(self.time))
        if not self.time > 0:
            raise ValidationError(f"survival time must be positive, got {self.time}")
        if self.event not in (0, 1):
            raise ValidationError(f"event must be 0 or 1, got {self.event!r}")
        object.__setattr__(self, "event", int(self.event))


@dataclass(frozen=True)
class ExternalFeature:
    patient_id: str
    timepoint: Timepoint
    lesion_label: str
    feature_name: str
    value: float


@dataclass(frozen=True, eq=False)
class Cohort:
    volumes: dict[str, ImageVolume]
    annotations: tuple[LesionAnnotation, ...]
    demographics: dict[str, Demographics]
    outcomes: dict[str, SurvivalOutcome]
    external_features: tuple[ExternalFeature, ...] = ()
    # series_id -> patient_id, for volumes that carry no annotation
    series_patient: dict[str, str] = field(default_factory=dict)

    @property
    def patients(self) -> tuple[str, ...]:
        ids = set(self.demographics) | set(self.outcomes) | {a.patient_id for a in self.annotations}
        return tuple(sorted(ids))

    def annotations_for(self, patient_id: str) -> list[LesionAnnotation]:
        return [a for a in self.annotations if a.patient_id == patient_id]

    def series_for(self, patient_id: str) -> dict[str, Timepoint]:
        """series_id -> timepoint for one patient."""
        out = {}
        for a in self.annotations_for(patient_id):
            out.setdefault(a.series_id, a.timepoint)
        return dict(sorted(out.items()))

    def __eq__(self, other):
        if not isinstance(other, Cohort):
            return NotImplemented
        return (
            self.volumes == other.volumes
            and sorted(self.annotations, key=lambda a: a.key) == sorted(other.annotations, key=lambda a: a.key)
            and self.demographics == other.demographics
            and self.outcomes == other.outcomes
            and sorted(self.external_features, key=_ext_key) == sorted(other.external_features, key=_ext_key)
        )


def _ext_key(e: ExternalFeature):
    return (e.patient_id, int(e.timepoint), e.lesion_label, e.feature_name)


# ---------------------------------------------------------------------------
# persistence


def _write_text(path: Path, text: str) -> None:
    path.write_bytes(text.encode("utf-8"))


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def write_pgm(path: Path, mask: LesionMask) -> None:
    rows, cols = mask.pixels.shape
    header = (
        "P5\n"
        f"# origin_mm {fmt(mask.origin[0])} {fmt(mask.origin[1])}\n"
        f"# spacing_mm {fmt(mask.spacing[0])} {fmt(mask.spacing[1])}\n"
        f"{cols} {rows}\n255\n"
    )
    body = (mask.pixels.astype(np.uint8) * 255).tobytes()
    path.write_bytes(header.encode("ascii") + body)


def read_pgm(path: Path) -> LesionMask:
    data = Path(path).read_bytes()
    pos = 0
    tokens: list[str] = []
    comments: dict[str, list[float]] = {}
    # header: magic, width, height, maxval, with '#' comments anywhere
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            end = data.index(b"\n", pos)
            parts = data[pos + 1 : end].decode("ascii").split()
            if parts:
                comments[parts[0]] = [float(v) for v in parts[1:]]
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == "P5":
        pos += 1
        dtype = np.uint8 if maxval < 256 else ">u2"
        arr = np.frombuffer(data[pos:], dtype=dtype, count=width * height).reshape(height, width)
    elif magic == "P2":
        arr = np.array(data[pos:].split(), dtype=int)[: width * height].reshape(height, width)
    else:
        raise CohortLoadError(f"{path}: unsupported PGM type {magic}")
    origin = comments.get("origin_mm", [0.0, 0.0])
    spacing = comments.get("spacing_mm", [1.0, 1.0])
    return LesionMask(arr > 0, tuple(spacing), tuple(origin))


def write_volume(directory: Path, series_id: str, volume: ImageVolume, patient_id: str | None = None) -> None:
    meta = {
        "dims": list(volume.dims),
        "spacing": list(volume.spacing),
        "origin": list(volume.origin),
        "direction": [float(v) for v in volume.direction.ravel()],
    }
    if patient_id is not None:
        meta["patient_id"] = patient_id
    _write_text(directory / f"{series_id}.meta.json", json.dumps(meta, indent=1, sort_keys=True) + "\n")
    (directory / f"{series_id}.raw").write_bytes(volume.voxels.astype("<f4").tobytes())


def read_volume(directory: Path, series_id: str) -> tuple[ImageVolume, str | None]:
    meta_path = directory / f"{series_id}.meta.json"
    raw_path = directory / f"{series_id}.raw"
    for p in (meta_path, raw_path):
        if not p.exists():
            raise CohortLoadError(f"missing file: {p}")
    meta = json.loads(meta_path.read_text())
    nx, ny, nz = (int(d) for d in meta["dims"])
    vox = np.frombuffer(raw_path.read_bytes(), dtype="<f4")
    if vox.size != nx * ny * nz:
        raise CohortLoadError(f"{raw_path}: expected {nx * ny * nz} voxels, found {vox.size}")
    volume = ImageVolume(
        vox.reshape(nz, ny, nx).astype(np.float32),
        tuple(meta["spacing"]),
        tuple(meta["origin"]),
        np.array(meta["direction"], dtype=float).reshape(3, 3),
    )
    return volume, meta.get("patient_id")


ANNOTATION_HEADER = (
    "patient_id", "timepoint", "source_group", "series_id", "lesion_label",
    "x_mm", "y_mm", "z_mm", "slice_index", "mask_path",
)
SURVIVAL_HEADER = ("patient_id", "time_days", "event")
EXTERNAL_HEADER = ("patient_id", "timepoint", "lesion_label", "feature_name", "value")


def save_cohort(cohort: Cohort, dir_path: str | Path) -> None:
    """Write ``cohort`` in the directory layout; output is byte-deterministic."""
    root = Path(dir_path)
    try:
        (root / "volumes").mkdir(parents=True, exist_ok=True)
        (root / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write cohort to {root}: {exc}") from exc

    owner = dict(cohort.series_patient)
    for a in cohort.annotations:
        owner.setdefault(a.series_id, a.patient_id)
    for sid in sorted(cohort.volumes):
        write_volume(root / "volumes", sid, cohort.volumes[sid], owner.get(sid))

    rows = []
    for a in sorted(cohort.annotations, key=lambda a: (a.patient_id, int(a.timepoint), a.source_group, a.series_id, a.lesion_label)):
        mask_rel = f"masks/{a.mask_id}.pgm"
        write_pgm(root / mask_rel, a.mask)
        rows.append(
            (a.patient_id, a.timepoint.label, a.source_group, a.series_id, a.lesion_label,
             *(fmt(c) for c in a.centroid), a.slice_index, mask_rel)
        )
    _write_text(root / "annotations.csv", _csv_text(ANNOTATION_HEADER, rows))

    demo_rows = []
    for pid in sorted(cohort.demographics):
        d = cohort.demographics[pid]
        vals = [getattr(d, n) if n in _BINARY_DEMOGRAPHICS else fmt(getattr(d, n)) for n in DEMOGRAPHIC_NAMES]
        demo_rows.append((pid, *vals))
    _write_text(root / "demographics.csv", _csv_text(("patient_id", *DEMOGRAPHIC_NAMES), demo_rows))

    surv_rows = [(pid, fmt(o.time), o.event) for pid, o in sorted(cohort.outcomes.items())]
    _write_text(root / "survival.csv", _csv_text(SURVIVAL_HEADER, surv_rows))

    ext = root / "external_features.csv"
    if cohort.external_features:
        ext_rows = [
            (e.patient_id, e.timepoint.label, e.lesion_label, e.feature_name, fmt(e.value))
            for e in sorted(cohort.external_features, key=_ext_key)
        ]
        _write_text(ext, _csv_text(EXTERNAL_HEADER, ext_rows))
    elif ext.exists():
        ext.unlink()


def _read_csv(path: Path, required: Sequence[str]) -> list[dict[str, str]]:
    if not path.exists():
        raise CohortLoadError(f"missing file: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        return list(reader)


def read_external_features(path: str | Path) -> tuple[ExternalFeature, ...]:
    """Parse an ``external_features.csv`` file.

    Row numbers in error messages count the header as row 1.
    """
    path = Path(path)
    rows = _read_csv(path, EXTERNAL_HEADER)
    out = []
    seen: set[tuple] = set()
    for rowno, row in enumerate(rows, start=2):
        try:
            value = float(row["value"])
        except ValueError:
            raise SchemaError(f"{path}: row {rowno}: non-numeric value {row['value']!r}") from None
        tp = Timepoint.parse(row["timepoint"])
        key = (row["patient_id"], int(tp), row["lesion_label"], row["feature_name"])
        if key in seen:
            raise SchemaError(f"{path}: row {rowno}: duplicate entry {key}")
        seen.add(key)
        out.append(ExternalFeature(row["patient_id"], tp, row["lesion_label"], row["feature_name"], value))
    return tuple(out)


def load_cohort(dir_path: str | Path) -> Cohort:
    root = Path(dir_path)
    if not root.is_dir():
        raise CohortLoadError(f"missing cohort directory: {root}")
    ann_rows = _read_csv(root / "annotations.csv", ANNOTATION_HEADER)

    volume_dir = root / "volumes"
    series_ids = sorted(p.name[: -len(".meta.json")] for p in volume_dir.glob("*.meta.json")) if volume_dir.is_dir() else []
    volumes: dict[str, ImageVolume] = {}
    series_patient: dict[str, str] = {}
    for sid in series_ids:
        vol, pid = read_volume(volume_dir, sid)
        volumes[sid] = vol
        if pid is not None:
            series_patient[sid] = pid

    dangling = sorted({r["series_id"] for r in ann_rows if r["series_id"] not in volumes})
    if dangling:
        raise ReferentialIntegrityError(f"annotations reference unknown series: {', '.join(dangling)}")

    annotations = []
    for row in ann_rows:
        mask_path = root / row["mask_path"]
        if not mask_path.exists():
            raise CohortLoadError(f"missing file: {mask_path}")
        annotations.append(
            LesionAnnotation(
                row["patient_id"], Timepoint.parse(row["timepoint"]), row["source_group"],
                row["series_id"], row["lesion_label"],
                (float(row["x_mm"]), float(row["y_mm"]), float(row["z_mm"])),
                int(row["slice_index"]), read_pgm(mask_path),
            )
        )

    outside = [a.key for a in annotations if not volumes[a.series_id].contains(a.centroid)]
    if outside:
        raise ReferentialIntegrityError(f"centroids outside their volume: {outside}")

    demographics = {
        r["patient_id"]: Demographics.from_mapping(r)
        for r in _read_csv(root / "demographics.csv", ("patient_id", *DEMOGRAPHIC_NAMES))
    }
    outcomes = {
        r["patient_id"]: SurvivalOutcome(float(r["time_days"]), int(r["event"]))
        for r in _read_csv(root / "survival.csv", SURVIVAL_HEADER)
    }
    ext_path = root / "external_features.csv"
    external = read_external_features(ext_path) if ext_path.exists() else ()

    return Cohort(volumes, tuple(annotations), demographics, outcomes, external, series_patient)


# ---------------------------------------------------------------------------
# patient-level designs


@dataclass(frozen=True, eq=False)
class PatientDesign:
    """Patient-level covariate blocks.

    ``x`` holds Screening features; ``Z``, ``W``, ``V`` hold Week 8/16/24
    ratios to Screening. A block is ``None`` when absent; NaN entries mark
    degenerate (patient, feature) cells.
    """

    patient_id: str
    feature_names: tuple[str, ...]
    x: np.ndarray
    U: Demographics
    outcome: SurvivalOutcome
    Z: np.ndarray | None = None
    W: np.ndarray | None = None
    V: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.U.ARM

    def block(self, name: str) -> np.ndarray | None:
        return getattr(self, name)

    def present_blocks(self) -> tuple[str, ...]:
        return tuple(b for b in RADIOMIC_BLOCKS if self.block(b) is not None)


def _mean_vector(vectors, names) -> np.ndarray:
    stack = []
    for fv in vectors:
        row = [np.nan if n in fv.degenerate else fv.values[n] for n in names]
        stack.append(row)
    # any degenerate lesion makes the patient-level cell degenerate
    return np.mean(np.array(stack, dtype=float), axis=0)


def aggregate_patient_features(lesion_features: Mapping[tuple, object], patient_id: str):
    """Per-timepoint mean of the lesion feature vectors of one patient.

    ``lesion_features`` maps (patient_id, Timepoint, track_id) to objects with
    ``values`` (name -> value) and ``degenerate`` (set of names).
    Returns (feature_names, {Timepoint: vector}).
    """
    by_tp: dict[Timepoint, list] = {}
    names: tuple[str, ...] | None = None
    for (pid, tp, _track), fv in sorted(lesion_features.items(), key=lambda kv: (kv[0][0], int(kv[0][1]), kv[0][2])):
        if pid != patient_id:
            continue
        if names is None:
            names = tuple(fv.values)
        elif tuple(fv.values) != names:
            raise SchemaError(f"patient {pid}: inconsistent feature naming across lesions")
        by_tp.setdefault(Timepoint.parse(tp), []).append(fv)
    if names is None:
        return (), {}
    return names, {tp: _mean_vector(vs, names) for tp, vs in by_tp.items()}


def assemble_design(
    cohort: Cohort,
    lesion_features: Mapping[tuple, object],
    max_timepoint: Timepoint = Timepoint.WEEK24,
) -> list[PatientDesign]:
    """One :class:`PatientDesign` per patient with Screening features.

    Lesion vectors are averaged over the tracks present at each timepoint;
    deltas are the ratio of the follow-up mean to the Screening mean.
    """
    from .radiomics import delta_features

    max_timepoint = Timepoint.parse(max_timepoint)
    designs = []
    reference_names: tuple[str, ...] | None = None
    for pid in cohort.patients:
        names, agg = aggregate_patient_features(lesion_features, pid)
        if Timepoint.SCREENING not in agg:
            log.warning("patient %s has no Screening lesions; excluded from designs", pid)
            continue
        if reference_names is None:
            reference_names = names
        elif names != reference_names:
            raise SchemaError(f"patient {pid}: feature naming differs from other patients")
        if pid not in cohort.demographics or pid not in cohort.outcomes:
            log.warning("patient %s lacks demographics or outcome; excluded", pid)
            continue
        base = agg[Timepoint.SCREENING]
        blocks = {}
        for tp, block in DELTA_BLOCKS.items():
            if tp > max_timepoint or tp not in agg:
                continue
            blocks[block] = delta_features(base, agg[tp])
        designs.append(
            PatientDesign(pid, names, base, cohort.demographics[pid], cohort.outcomes[pid], **blocks)
        )
    return designs


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Numeric model matrix assembled from patient designs.

    Column names are ``"<block>:<feature>"``; demographic columns use block
    ``U`` and the treatment arm uses block ``T``.
    """

    X: np.ndarray
    columns: tuple[str, ...]
    time: np.ndarray
    event: np.ndarray
    patient_ids: tuple[str, ...]

    @property
    def blocks(self) -> tuple[str, ...]:
        return tuple(c.split(":", 1)[0] for c in self.columns)

    def block_indices(self, *names: str) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.blocks) if b in names], dtype=int)

    def take_rows(self, idx) -> "DesignMatrix":
        idx = np.asarray(idx)
        return DesignMatrix(self.X[idx], self.columns, self.time[idx], self.event[idx],
                            tuple(self.patient_ids[i] for i in idx))

    def take_columns(self, idx) -> "DesignMatrix":
        idx = np.asarray(idx, dtype=int)
        return DesignMatrix(self.X[:, idx], tuple(self.columns[i] for i in idx),
                            self.time, self.event, self.patient_ids)

    @property
    def shape(self):
        return self.X.shape


def design_matrix(
    designs: Sequence[PatientDesign],
    max_timepoint: Timepoint = Timepoint.WEEK24,
    demographics: bool = True,
) -> DesignMatrix:
    """Stack patient designs into a matrix for the blocks up to ``max_timepoint``.

    Patients missing a required block are excluded; feature columns with any
    degenerate (NaN) cell are dropped. Both are logged.
    """
    max_timepoint = Timepoint.parse(max_timepoint)
    needed = ["x"] + [b for tp, b in DELTA_BLOCKS.items() if tp <= max_timepoint]
    kept = [d for d in designs if all(d.block(b) is not None for b in needed)]
    if len(kept) < len(designs):
        log.warning("%d patient(s) lack blocks %s and were excluded", len(designs) - len(kept), needed)
    if not kept:
        raise ValidationError("no patient has all required design blocks")
    names = kept[0].feature_names
    columns = [f"{b}:{n}" for b in needed for n in names]
    rows = [np.concatenate([d.block(b) for b in needed]) for d in kept]
    X = np.array(rows, dtype=float).reshape(len(kept), len(columns))
    if demographics:
        demo_cols = [f"U:{n}" for n in DEMOGRAPHIC_NAMES if n != "ARM"] + ["T:ARM"]
        demo = np.array([[getattr(d.U, n) for n in DEMOGRAPHIC_NAMES if n != "ARM"] + [d.T] for d in kept], dtype=float)
        X = np.hstack([X, demo])
        columns += demo_cols
    bad = ~np.all(np.isfinite(X), axis=0)
    if bad.any():
        log.warning("dropping %d degenerate column(s): %s", int(bad.sum()), [c for c, b in zip(columns, bad) if b])
        X = X[:, ~bad]
        columns = [c for c, b in zip(columns, bad) if not b]
    return DesignMatrix(
        X, tuple(columns),
        np.array([d.outcome.time for d in kept]),
        np.array([d.outcome.event for d in kept], dtype=int),
        tuple(d.patient_id for d in kept),
    )


def write_designs(designs: Sequence[PatientDesign], path: str | Path) -> None:
    """Wide CSV: absent blocks are empty cells, degenerate cells are ``nan``."""
    if not designs:
        _write_text(Path(path), "patient_id,time_days,event\n")
        return
    names = designs[0].feature_names
    header = ["patient_id", "time_days", "event", *DEMOGRAPHIC_NAMES]
    header += [f"{b}:{n}" for b in RADIOMIC_BLOCKS for n in names]
    rows = []
    for d in designs:
        row = [d.patient_id, fmt(d.outcome.time), d.outcome.event]
        row += [getattr(d.U, n) if n in _BINARY_DEMOGRAPHICS else fmt(getattr(d.U, n)) for n in DEMOGRAPHIC_NAMES]
        for b in RADIOMIC_BLOCKS:
            block = d.block(b)
            row += [""] * len(names) if block is None else [fmt(v) for v in block]
        rows.append(row)
    _write_text(Path(path), _csv_text(header, rows))


def read_designs(path: str | Path) -> list[PatientDesign]:
    path = Path(path)
    rows = _read_csv(path, ("patient_id", "time_days", "event"))
    if not rows:
        return []
    fields = list(rows[0].keys())
    names = tuple(c.split(":", 1)[1] for c in fields if c.startswith("x:"))
    out = []
    for row in rows:
        blocks = {}
        for b in RADIOMIC_BLOCKS:
            cells = [row[f"{b}:{n}"] for n in names]
            if all(c == "" for c in cells):
                continue
            blocks[b] = np.array([float(c) for c in cells])
        x = blocks.pop("x")
        out.append(
            PatientDesign(
                row["patient_id"], names, x, Demographics.from_mapping(row),
                SurvivalOutcome(float(row["time_days"]), int(row["event"])), **blocks,
            )
        )
    return out
