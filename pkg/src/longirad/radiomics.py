"""Per-lesion 2D radiomic features: shape, first-order and GLCM families,
delta (ratio) features, and ingestion of externally computed features.

Feature names follow ``<family>_<Name>``, e.g. ``shape2D_Elongation``,
``firstorder_Mean``, ``glcm_Contrast``. Degenerate values are NaN and listed
in :attr:`FeatureVector.degenerate`.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from skimage import measure

from .cohortmodel import (
    Cohort,
    ExternalFeature,
    ImageVolume,
    LesionAnnotation,
    Timepoint,
    fmt,
    read_external_features,
)
from .errors import DegenerateGeometryError, SchemaError, ValidationError

log = logging.getLogger(__name__)

SHAPE2D = (
    "MeshSurface", "PixelSurface", "Perimeter", "PerimeterSurfaceRatio", "Sphericity",
    "MaximumDiameter", "MajorAxisLength", "MinorAxisLength", "Elongation",
)
FIRSTORDER = (
    "Energy", "TotalEnergy", "Entropy", "Minimum", "Maximum", "Mean", "Median", "Range",
    "MeanAbsoluteDeviation", "RootMeanSquared", "StandardDeviation", "Skewness", "Kurtosis",
    "Variance", "Uniformity",
)
GLCM = (
    "Autocorrelation", "JointAverage", "ClusterProminence", "ClusterShade", "ClusterTendency",
    "Contrast", "Correlation", "DifferenceAverage", "DifferenceEntropy", "DifferenceVariance",
    "JointEnergy", "JointEntropy", "Imc1", "Imc2", "Idm", "MCC", "Idmn", "Id", "Idn",
    "InverseVariance", "MaximumProbability", "SumEntropy", "SumSquares",
)
FAMILIES = {"Shape2D": ("shape2D", SHAPE2D), "FirstOrder": ("firstorder", FIRSTORDER), "GLCM": ("glcm", GLCM)}
INTERNAL_FEATURES = tuple(f"{prefix}_{n}" for prefix, names in FAMILIES.values() for n in names)

DEFAULT_BIN_WIDTH = 25.0
DEFAULT_DISTANCE = 1
ZERO_BASELINE = 1e-12
_EPS = np.spacing(1)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: dict[str, float]
    families: dict[str, str]
    degenerate: frozenset[str] = frozenset()

    def names(self) -> tuple[str, ...]:
        return tuple(self.values)

    def as_array(self) -> np.ndarray:
        return np.array([self.values[n] for n in self.values], dtype=float)

    def merged(self, other: "FeatureVector") -> "FeatureVector":
        clash = set(self.values) & set(other.values)
        if clash:
            raise SchemaError(f"feature name collision: {sorted(clash)}")
        return FeatureVector(
            {**self.values, **other.values}, {**self.families, **other.families},
            self.degenerate | other.degenerate,
        )

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        a, b = self.as_array(), other.as_array()
        return (
            tuple(self.values) == tuple(other.values)
            and self.families == other.families
            and self.degenerate == other.degenerate
            and np.array_equal(a, b, equal_nan=True)
        )


@dataclass(frozen=True, eq=False)
class DeltaFeatureVector:
    ratios: dict[str, float]
    degenerate: frozenset[str] = frozenset()
    reference_timepoint: Timepoint = Timepoint.SCREENING


def _vector(family: str, values: Mapping[str, float], degenerate: Iterable[str] = ()) -> FeatureVector:
    prefix, names = FAMILIES[family]
    deg = set(degenerate)
    vals = {f"{prefix}_{n}": (np.nan if n in deg else float(values[n])) for n in names}
    return FeatureVector(vals, {k: family for k in vals}, frozenset(f"{prefix}_{n}" for n in deg))


def _crop(mask: np.ndarray, *images: np.ndarray):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValidationError("mask is empty")
    sl = (slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1))
    return (mask[sl],) + tuple(im[sl] for im in images)


# ---------------------------------------------------------------------------
# shape


def shape2d_features(mask: np.ndarray, spacing: Sequence[float] = (1.0, 1.0)) -> FeatureVector:
    """Nine 2D shape descriptors of a binary mask.

    ``spacing`` is (sx, sy) in mm for (column, row) steps. The principal axes
    use the second moments of the pixel area, so an a x b rectangle has
    eigenvalues a^2/12 and b^2/12.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.sum() < 2:
        raise DegenerateGeometryError("shape features need at least two pixels")
    (m,) = _crop(mask)
    sx, sy = float(spacing[0]), float(spacing[1])

    padded = np.pad(m.astype(float), 1)
    contours = measure.find_contours(padded, 0.5, fully_connected="high", positive_orientation="high")
    area = 0.0
    perimeter = 0.0
    for c in contours:
        x = c[:, 1] * sx
        y = c[:, 0] * sy
        area += 0.5 * float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))
        perimeter += float(np.sum(np.hypot(np.diff(x), np.diff(y))))
    area = abs(area)

    # boundary pixels: mask pixels with a 4-neighbour outside the mask
    p = np.pad(m, 1)
    interior = p[1:-1, 1:-1] & p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    by, bx = np.nonzero(m & ~interior)
    pts = np.column_stack([bx * sx, by * sy])
    diff = pts[:, None, :] - pts[None, :, :]
    max_diameter = float(np.sqrt((diff**2).sum(axis=2).max()))

    yy, xx = np.nonzero(m)
    coords = np.column_stack([xx * sx, yy * sy])
    cov = np.cov(coords, rowvar=False, bias=True) + np.diag([sx * sx, sy * sy]) / 12.0
    lam = np.sort(np.linalg.eigvalsh(cov))[::-1]
    lam = np.clip(lam, 0.0, None)

    pixel_area = sx * sy
    values = {
        "MeshSurface": area,
        "PixelSurface": float(m.sum()) * pixel_area,
        "Perimeter": perimeter,
        "PerimeterSurfaceRatio": perimeter / area,
        "Sphericity": 2.0 * np.sqrt(np.pi * area) / perimeter,
        "MaximumDiameter": max_diameter,
        "MajorAxisLength": 4.0 * np.sqrt(lam[0]),
        "MinorAxisLength": 4.0 * np.sqrt(lam[1]),
        "Elongation": float(np.sqrt(lam[1] / lam[0])),
    }
    return _vector("Shape2D", values)


# ---------------------------------------------------------------------------
# first order


def discretize(values: np.ndarray, bin_width: float) -> np.ndarray:
    """Fixed-bin-width gray levels starting at 1 for the lowest occupied bin."""
    values = np.asarray(values, dtype=float)
    edges = np.floor(values / bin_width)
    return (edges - edges.min() + 1).astype(int)


def firstorder_features(
    mask: np.ndarray,
    image: np.ndarray,
    spacing: Sequence[float] = (1.0, 1.0),
    bin_width: float = DEFAULT_BIN_WIDTH,
) -> FeatureVector:
    mask = np.asarray(mask, dtype=bool)
    image = np.asarray(image, dtype=float)
    if mask.shape != image.shape:
        raise ValidationError("mask and image slice must have the same shape")
    if not mask.any():
        raise ValidationError("mask is empty")
    x = image[mask]
    n = x.size
    mean = float(np.mean(x))
    dev = x - mean
    var = float(np.mean(dev**2))
    energy = float(np.sum(x**2))
    levels = discretize(x, bin_width)
    _, counts = np.unique(levels, return_counts=True)
    p = counts / n
    degenerate = []
    if var == 0.0:
        skew = kurt = np.nan
        degenerate = ["Skewness", "Kurtosis"]
    else:
        skew = float(np.mean(dev**3) / var**1.5)
        kurt = float(np.mean(dev**4) / var**2)
    values = {
        "Energy": energy,
        "TotalEnergy": energy * float(spacing[0]) * float(spacing[1]),
        "Entropy": float(-np.sum(p * np.log2(p + _EPS))),
        "Minimum": float(x.min()),
        "Maximum": float(x.max()),
        "Mean": mean,
        "Median": float(np.median(x)),
        "Range": float(x.max() - x.min()),
        "MeanAbsoluteDeviation": float(np.mean(np.abs(dev))),
        "RootMeanSquared": float(np.sqrt(energy / n)),
        "StandardDeviation": float(np.sqrt(var)),
        "Skewness": skew,
        "Kurtosis": kurt,
        "Variance": var,
        "Uniformity": float(np.sum(p**2)),
    }
    return _vector("FirstOrder", values, degenerate)


# ---------------------------------------------------------------------------
# GLCM

DIRECTIONS_2D = ((0, 1), (-1, 1), (-1, 0), (-1, -1))  # 0, 45, 90, 135 degrees as (drow, dcol)


def cooccurrence(levels: np.ndarray, mask: np.ndarray, offset: tuple[int, int], n_levels: int) -> np.ndarray:
    """Symmetric (unnormalized) co-occurrence counts for one pixel offset.

    ``levels`` holds gray levels 1..n_levels inside ``mask``.
    """
    dr, dc = offset
    rows, cols = levels.shape
    P = np.zeros((n_levels, n_levels))
    r0, r1 = max(0, -dr), min(rows, rows - dr)
    c0, c1 = max(0, -dc), min(cols, cols - dc)
    a = levels[r0:r1, c0:c1]
    b = levels[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
    ok = mask[r0:r1, c0:c1] & mask[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
    np.add.at(P, (a[ok] - 1, b[ok] - 1), 1.0)
    return P + P.T


def _glcm_matrix_features(P: np.ndarray, gray: np.ndarray, n_gray: int) -> tuple[dict[str, float], bool]:
    """Features of one normalized GLCM ``P`` over gray values ``gray``."""
    i = gray[:, None]
    j = gray[None, :]
    px = P.sum(axis=1)
    py = P.sum(axis=0)
    ux = float(np.sum(gray * px))
    uy = float(np.sum(gray * py))
    sx = float(np.sqrt(np.sum(px * (gray - ux) ** 2)))
    sy = float(np.sqrt(np.sum(py * (gray - uy) ** 2)))

    # sum and difference distributions over k = i + j and k = |i - j|
    ksum = (i + j).ravel()
    kdiff = np.abs(i - j).ravel()
    sums, pxy_plus = np.unique(ksum, return_inverse=True)
    pplus = np.bincount(pxy_plus, weights=P.ravel())
    diffs, pxy_minus = np.unique(kdiff, return_inverse=True)
    pminus = np.bincount(pxy_minus, weights=P.ravel())

    hx = -np.sum(px * np.log2(px + _EPS))
    hy = -np.sum(py * np.log2(py + _EPS))
    hxy = -np.sum(P * np.log2(P + _EPS))
    pxpy = px[:, None] * py[None, :]
    hxy1 = -np.sum(P * np.log2(pxpy + _EPS))
    hxy2 = -np.sum(pxpy * np.log2(pxpy + _EPS))

    degenerate = sx * sy == 0
    corr = np.nan if degenerate else float((np.sum(P * i * j) - ux * uy) / (sx * sy))
    denom = max(hx, hy)
    imc1 = float((hxy - hxy1) / denom) if denom > 0 else 0.0
    imc2 = float(np.sqrt(max(0.0, 1 - np.exp(-2 * (hxy2 - hxy))))) if hxy2 > hxy else 0.0

    # maximal correlation coefficient: second largest eigenvalue of Q
    with np.errstate(divide="ignore", invalid="ignore"):
        A = np.where(px[:, None] > 0, P / px[:, None], 0.0)
        B = np.where(py[None, :] > 0, P / py[None, :], 0.0)
    Q = A @ B.T
    if Q.shape[0] < 2:
        mcc = 1.0
    else:
        ev = np.sort(np.abs(np.linalg.eigvals(Q)))[::-1]
        mcc = float(np.sqrt(np.real(ev[1])))

    diff_avg = float(np.sum(diffs * pminus))
    values = {
        "Autocorrelation": float(np.sum(P * i * j)),
        "JointAverage": ux,
        "ClusterProminence": float(np.sum(P * (i + j - ux - uy) ** 4)),
        "ClusterShade": float(np.sum(P * (i + j - ux - uy) ** 3)),
        "ClusterTendency": float(np.sum(P * (i + j - ux - uy) ** 2)),
        "Contrast": float(np.sum(P * (i - j) ** 2)),
        "Correlation": corr,
        "DifferenceAverage": diff_avg,
        "DifferenceEntropy": float(-np.sum(pminus * np.log2(pminus + _EPS))),
        "DifferenceVariance": float(np.sum(pminus * (diffs - diff_avg) ** 2)),
        "JointEnergy": float(np.sum(P**2)),
        "JointEntropy": float(hxy),
        "Imc1": imc1,
        "Imc2": imc2,
        "Idm": float(np.sum(P / (1 + (i - j) ** 2))),
        "MCC": mcc,
        "Idmn": float(np.sum(P / (1 + (i - j) ** 2 / n_gray**2))),
        "Id": float(np.sum(P / (1 + np.abs(i - j)))),
        "Idn": float(np.sum(P / (1 + np.abs(i - j) / n_gray))),
        "InverseVariance": float(np.sum(pminus[diffs > 0] / diffs[diffs > 0] ** 2)),
        "MaximumProbability": float(P.max()),
        "SumEntropy": float(-np.sum(pplus * np.log2(pplus + _EPS))),
        "SumSquares": float(np.sum(P * (i - ux) ** 2)),
    }
    return values, degenerate


def glcm_features(
    mask: np.ndarray,
    image: np.ndarray,
    bin_width: float = DEFAULT_BIN_WIDTH,
    distance: int = DEFAULT_DISTANCE,
    levels: np.ndarray | None = None,
    directions: Sequence[tuple[int, int]] = DIRECTIONS_2D,
) -> FeatureVector:
    """Twenty-three GLCM features averaged over the 2D directions.

    Gray levels come from fixed-width binning unless ``levels`` (already
    discretized, same shape as the mask) is given. Empty gray levels are
    removed; ``n_gray`` in Idmn/Idn is the number of levels present.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.sum() < 2:
        raise ValidationError("GLCM needs at least two pixels")
    if levels is None:
        image = np.asarray(image, dtype=float)
        lv = np.zeros(mask.shape, dtype=int)
        lv[mask] = discretize(image[mask], bin_width)
    else:
        lv = np.where(mask, np.asarray(levels, dtype=int), 0)
    m, lv = _crop(mask, lv)
    n_levels = int(lv[m].max())
    present = np.unique(lv[m])
    gray = present.astype(float)

    per_dir = []
    any_degenerate = False
    for dr, dc in directions:
        P = cooccurrence(lv, m, (dr * distance, dc * distance), n_levels)
        total = P.sum()
        if total == 0:
            continue
        P = P[np.ix_(present - 1, present - 1)] / total
        vals, deg = _glcm_matrix_features(P, gray, len(present))
        any_degenerate |= deg
        per_dir.append(vals)
    if not per_dir:
        raise ValidationError("no pixel pairs inside the mask at this distance")
    values = {k: float(np.mean([d[k] for d in per_dir])) for k in GLCM if k != "Correlation"}
    degenerate = []
    if any_degenerate:
        degenerate.append("Correlation")
    else:
        values["Correlation"] = float(np.mean([d["Correlation"] for d in per_dir]))
    return _vector("GLCM", values, degenerate)


# ---------------------------------------------------------------------------
# lesion-level extraction


@dataclass(frozen=True)
class FeatureConfig:
    bin_width: float = DEFAULT_BIN_WIDTH
    distance: int = DEFAULT_DISTANCE


def lesion_patch(annotation: LesionAnnotation, volume: ImageVolume) -> tuple[np.ndarray, np.ndarray]:
    """Mask and the co-registered image patch from the annotated slice."""
    m = annotation.mask
    sx, sy, _ = volume.spacing
    if not np.allclose(m.spacing, (sx, sy)):
        raise ValidationError(f"mask spacing {m.spacing} differs from volume spacing {(sx, sy)}")
    col0 = int(round((m.origin[0] - volume.origin[0]) / sx))
    row0 = int(round((m.origin[1] - volume.origin[1]) / sy))
    rows, cols = m.pixels.shape
    nz = volume.voxels.shape[0]
    if not 0 <= annotation.slice_index < nz:
        raise ValidationError(f"slice index {annotation.slice_index} outside volume")
    sl = volume.voxels[annotation.slice_index]
    if row0 < 0 or col0 < 0 or row0 + rows > sl.shape[0] or col0 + cols > sl.shape[1]:
        raise ValidationError(f"mask of lesion {annotation.key} falls outside the image")
    return m.pixels, sl[row0 : row0 + rows, col0 : col0 + cols].astype(float)


def _all_degenerate(family: str) -> FeatureVector:
    prefix, names = FAMILIES[family]
    full = [f"{prefix}_{n}" for n in names]
    return FeatureVector({n: np.nan for n in full}, {n: family for n in full}, frozenset(full))


def lesion_features(mask: np.ndarray, image: np.ndarray, spacing, cfg: FeatureConfig = FeatureConfig()) -> FeatureVector:
    # a one-pixel lesion keeps its first-order values; shape and texture are flagged
    tiny = np.count_nonzero(mask) < 2
    if tiny:
        log.warning("single-pixel lesion: shape and GLCM features flagged degenerate")
    shape = _all_degenerate("Shape2D") if tiny else shape2d_features(mask, spacing)
    first = firstorder_features(mask, image, spacing, cfg.bin_width)
    tex = _all_degenerate("GLCM") if tiny else glcm_features(mask, image, cfg.bin_width, cfg.distance)
    return shape.merged(first).merged(tex)


def annotation_features(annotation: LesionAnnotation, volume: ImageVolume, cfg: FeatureConfig = FeatureConfig()) -> FeatureVector:
    mask, patch = lesion_patch(annotation, volume)
    return lesion_features(mask, patch, annotation.mask.spacing, cfg)


def mean_vector(vectors: Sequence[FeatureVector]) -> FeatureVector:
    """Element-wise mean; a feature degenerate in any input stays degenerate."""
    names = vectors[0].names()
    deg = frozenset().union(*(v.degenerate for v in vectors))
    vals = {n: (np.nan if n in deg else float(np.mean([v.values[n] for v in vectors]))) for n in names}
    return FeatureVector(vals, dict(vectors[0].families), deg)


def track_features(
    cohort: Cohort,
    tracks,
    cfg: FeatureConfig = FeatureConfig(),
    external: Mapping[tuple, FeatureVector] | None = None,
) -> dict[tuple[str, Timepoint, str], FeatureVector]:
    """Feature vector per (patient, timepoint, track).

    When both annotator groups segmented the lesion, their vectors are averaged.
    External features keyed by (patient, timepoint, lesion_label) are merged
    into the member carrying that label.
    """
    out = {}
    for tr in tracks:
        for tp in tr.timepoints():
            vecs = []
            for a in tr.members_at(tp):
                fv = annotation_features(a, cohort.volumes[a.series_id], cfg)
                if external is not None:
                    ext = external.get((a.patient_id, a.timepoint, a.lesion_label))
                    if ext is not None:
                        fv = fv.merged(ext)
                vecs.append(fv)
            out[(tr.patient_id, tp, tr.track_id)] = vecs[0] if len(vecs) == 1 else mean_vector(vecs)
    return out


# ---------------------------------------------------------------------------
# deltas and external features


def delta_features(baseline, later):
    """Per-feature ratio ``later / baseline``.

    Accepts :class:`FeatureVector` (returns :class:`DeltaFeatureVector`) or
    plain arrays (returns an array with NaN for degenerate ratios).
    """
    if isinstance(baseline, FeatureVector):
        if tuple(baseline.values) != tuple(later.values):
            raise ValidationError("baseline and follow-up vectors have different features")
        ratios = {}
        deg = set(baseline.degenerate) | set(later.degenerate)
        for name, b in baseline.values.items():
            v = later.values[name]
            if name in deg or not np.isfinite(b) or abs(b) < ZERO_BASELINE:
                ratios[name] = np.nan
                deg.add(name)
            else:
                ratios[name] = v / b
        return DeltaFeatureVector(ratios, frozenset(deg))
    b = np.asarray(baseline, dtype=float)
    v = np.asarray(later, dtype=float)
    if b.shape != v.shape:
        raise ValidationError("baseline and follow-up vectors have different lengths")
    with np.errstate(divide="ignore", invalid="ignore"):
        r = v / b
    r[~(np.abs(b) >= ZERO_BASELINE)] = np.nan
    return r


def external_to_vectors(rows: Sequence[ExternalFeature]) -> dict[tuple[str, Timepoint, str], FeatureVector]:
    grouped: dict[tuple, dict[str, float]] = {}
    for r in rows:
        if r.feature_name in INTERNAL_FEATURES:
            raise SchemaError(f"external feature {r.feature_name!r} collides with an internal feature")
        key = (r.patient_id, r.timepoint, r.lesion_label)
        grouped.setdefault(key, {})[r.feature_name] = r.value
    out = {}
    for key, vals in grouped.items():
        ordered = dict(sorted(vals.items()))
        out[key] = FeatureVector(ordered, {k: "External" for k in ordered})
    return out


def ingest_external_features(path: str | Path) -> dict[tuple[str, Timepoint, str], FeatureVector]:
    return external_to_vectors(read_external_features(path))


FEATURES_HEADER = ("patient_id", "timepoint", "track_id", "feature_name", "family", "value", "degenerate_flag")


def write_features(features: Mapping[tuple, FeatureVector], path: str | Path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FEATURES_HEADER)
    for (pid, tp, tid) in sorted(features, key=lambda k: (k[0], int(k[1]), k[2])):
        fv = features[(pid, tp, tid)]
        for name, value in fv.values.items():
            deg = name in fv.degenerate
            w.writerow((pid, Timepoint.parse(tp).label, tid, name, fv.families[name], "nan" if deg else fmt(value), int(deg)))
    Path(path).write_bytes(buf.getvalue().encode())


def read_features(path: str | Path) -> dict[tuple[str, Timepoint, str], FeatureVector]:
    path = Path(path)
    if not path.exists():
        from .errors import CohortLoadError
        raise CohortLoadError(f"missing file: {path}")
    acc: dict[tuple, tuple[dict, dict, set]] = {}
    with path.open(newline="") as fh:
        for rowno, row in enumerate(csv.DictReader(fh), start=2):
            key = (row["patient_id"], Timepoint.parse(row["timepoint"]), row["track_id"])
            vals, fams, deg = acc.setdefault(key, ({}, {}, set()))
            try:
                vals[row["feature_name"]] = float(row["value"])
            except ValueError:
                raise SchemaError(f"{path}: row {rowno}: non-numeric value {row['value']!r}") from None
            fams[row["feature_name"]] = row["family"]
            if row["degenerate_flag"] == "1":
                deg.add(row["feature_name"])
    return {k: FeatureVector(v, f, frozenset(d)) for k, (v, f, d) in acc.items()}
