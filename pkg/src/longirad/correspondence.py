"""Lesion correspondence: Hungarian matching of registered centroids and
longitudinal track construction.

All centroids of a patient are first mapped into one reference frame (the
lexicographically smallest Screening series); tracks are then chained
Screening -> Week 8 -> Week 16 -> Week 24, matching each timepoint's lesions
against the heads of the tracks still alive.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cohortmodel import Cohort, LesionAnnotation, Timepoint, fmt
from .errors import ConfigError, ValidationError
from .registration import RegistrationConfig, RigidTransform, register_rigid_intensity

log = logging.getLogger(__name__)

DEFAULT_GATE_MM = 30.0

PRESENT, NEW, DISAPPEARED = "present", "new", "disappeared"


@dataclass(frozen=True, eq=False)
class CostMatrix:
    rows: tuple
    cols: tuple
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float).reshape(len(self.rows), len(self.cols))
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise ValidationError("cost entries must be finite and non-negative")
        object.__setattr__(self, "entries", e)


@dataclass(frozen=True)
class CorrespondenceMap:
    pairs: tuple[tuple[object, object, float], ...]
    unmatched_moving: tuple
    unmatched_fixed: tuple
    total_cost: float


def build_cost_matrix(
    moving: Sequence[LesionAnnotation],
    fixed: Sequence[LesionAnnotation],
    t: RigidTransform | None = None,
) -> CostMatrix:
    """Euclidean distances (mm) between transformed moving and fixed centroids."""
    t = t or RigidTransform.identity()
    m = np.array([a.centroid for a in moving], dtype=float).reshape(-1, 3)
    f = np.array([a.centroid for a in fixed], dtype=float).reshape(-1, 3)
    mt = t.apply(m) if len(m) else m
    d = np.sqrt(((mt[:, None, :] - f[None, :, :]) ** 2).sum(axis=2)) if len(m) and len(f) else np.zeros((len(m), len(f)))
    return CostMatrix(tuple(range(len(moving))), tuple(range(len(fixed))), d)


def _hungarian_square(c: np.ndarray) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Shortest-augmenting-path Hungarian method.

    Returns (assignment row -> col, row potentials u, col potentials v) with
    ``c[i, j] - u[i] - v[j] >= 0`` everywhere and zero on the assignment.
    """
    n = c.shape[0]
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[j]: row matched to column j (1-based, 0 = free)
    way = [0] * (n + 1)
    rows = c.tolist()
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = rows[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assign = [0] * n
    for j in range(1, n + 1):
        assign[p[j] - 1] = j - 1
    return assign, np.array(u[1:]), np.array(v[1:])


def _has_perfect_matching(adj: list[list[int]], rows: list[int], cols_free: set[int]) -> bool:
    """Kuhn's augmenting-path check that ``rows`` can be matched into ``cols_free``."""
    match: dict[int, int] = {}

    def augment(r: int, seen: set[int]) -> bool:
        for cidx in adj[r]:
            if cidx in cols_free and cidx not in seen:
                seen.add(cidx)
                if cidx not in match or augment(match[cidx], seen):
                    match[cidx] = r
                    return True
        return False

    return all(augment(r, set()) for r in rows)


def solve_assignment(cost: np.ndarray) -> list[int | None]:
    """Minimum-cost assignment of rows to columns for a rectangular matrix.

    Returns, for each row, its column or ``None``. Among equal-cost optima the
    lexicographically smallest (row, col) pair list is chosen.
    """
    cost = np.asarray(cost, dtype=float)
    nr, nc = cost.shape
    if nr == 0 or nc == 0:
        return [None] * nr
    n = max(nr, nc)
    padded = np.zeros((n, n))
    padded[:nr, :nc] = cost
    _, u, v = _hungarian_square(padded)

    # every optimal assignment lives on the zero-reduced-cost subgraph
    tol = 1e-9 * (1.0 + float(np.abs(cost).max()))
    reduced = padded - u[:, None] - v[None, :]
    adj = [[j for j in range(n) if reduced[i, j] <= tol] for i in range(n)]
    # real columns first in ascending order; dummy columns mean "unmatched"
    free = set(range(n))
    result: list[int | None] = []
    for i in range(n):
        for j in adj[i]:
            if j not in free:
                continue
            free.discard(j)
            if _has_perfect_matching(adj, list(range(i + 1, n)), free):
                if i < nr:
                    result.append(j if j < nc else None)
                break
            free.add(j)
        else:  # pragma: no cover - guaranteed by LP duality
            raise RuntimeError("equality subgraph lost its perfect matching")
    return result


def hungarian_match(c: CostMatrix, gate_mm: float = math.inf) -> CorrespondenceMap:
    """Optimal one-to-one matching; assigned pairs farther than ``gate_mm`` are dropped."""
    if not gate_mm > 0:
        raise ValidationError("gate_mm must be positive")
    assignment = solve_assignment(c.entries)
    pairs = []
    matched_cols = set()
    for i, j in enumerate(assignment):
        if j is None:
            continue
        d = float(c.entries[i, j])
        if d > gate_mm:
            continue
        pairs.append((c.rows[i], c.cols[j], d))
        matched_cols.add(j)
    matched_rows = {c.rows.index(p[0]) for p in pairs}
    unmatched_moving = tuple(r for k, r in enumerate(c.rows) if k not in matched_rows)
    unmatched_fixed = tuple(col for k, col in enumerate(c.cols) if k not in matched_cols)
    total = 0.0
    for p in pairs:
        total += p[2]
    return CorrespondenceMap(tuple(pairs), unmatched_moving, unmatched_fixed, total)


# ---------------------------------------------------------------------------
# tracks


@dataclass
class LesionTrack:
    patient_id: str
    track_id: str
    members: dict[tuple[Timepoint, str], LesionAnnotation] = field(default_factory=dict)
    status: dict[Timepoint, str] = field(default_factory=dict)
    # distance (mm) of each member to the lesion it was linked to
    distances: dict[tuple[Timepoint, str], float] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def timepoints(self) -> list[Timepoint]:
        return sorted({tp for tp, _ in self.members})

    def members_at(self, tp: Timepoint) -> list[LesionAnnotation]:
        return [a for (t, _), a in sorted(self.members.items(), key=lambda kv: kv[0][1]) if t == tp]


def reference_series(cohort: Cohort, patient_id: str) -> str:
    """Lexicographically smallest series at the patient's earliest timepoint."""
    series = cohort.series_for(patient_id)
    if not series:
        raise ValidationError(f"patient {patient_id} has no annotated series")
    first = min(series.values())
    return min(s for s, tp in series.items() if tp == first)


def required_transform_pairs(cohort: Cohort, patient_id: str) -> list[tuple[str, str]]:
    ref = reference_series(cohort, patient_id)
    return [(s, ref) for s in cohort.series_for(patient_id) if s != ref]


def estimate_transforms(
    cohort: Cohort,
    cfg: RegistrationConfig = RegistrationConfig(),
    patients: Sequence[str] | None = None,
    executor=None,
) -> dict[tuple[str, str], RigidTransform]:
    """Intensity-register every series of each patient onto its reference series.

    Keys are ``(series, reference)``; values map series coordinates into the
    reference frame.
    """
    pairs = []
    for pid in patients if patients is not None else cohort.patients:
        for s, ref in required_transform_pairs(cohort, pid):
            if s not in cohort.volumes or ref not in cohort.volumes:
                raise ConfigError(f"no volume for series pair {s} -> {ref}")
            pairs.append((s, ref))

    def run(pair):
        s, ref = pair
        res = register_rigid_intensity(cohort.volumes[ref], cohort.volumes[s], cfg)
        if not res.converged:
            log.warning("registration %s -> %s stopped before convergence", s, ref)
        return res.transform

    mapper = map if executor is None else executor.map
    return dict(zip(pairs, mapper(run, pairs)))


def _to_reference(cohort: Cohort, patient_id: str, transforms: Mapping[tuple[str, str], RigidTransform]):
    ref = reference_series(cohort, patient_id)
    out = []
    for a in cohort.annotations_for(patient_id):
        if a.series_id == ref:
            out.append((a, np.array(a.centroid)))
            continue
        key = (a.series_id, ref)
        if key not in transforms:
            raise ConfigError(f"missing transform for series pair {a.series_id} -> {ref}")
        out.append((a, transforms[key].apply(a.centroid)))
    return out


def _units_at(entries, gate_mm: float, patient_id: str, tp: Timepoint):
    """Reconcile the two annotator groups at one timepoint into lesion units.

    Returns a list of dicts: members {group: (annotation, ref_centroid)},
    position (reference-frame centroid of the representative), distance.
    """
    by_group: dict[str, list] = {}
    for a, p in entries:
        by_group.setdefault(a.source_group, []).append((a, p))
    for g in by_group:
        by_group[g].sort(key=lambda e: (e[0].series_id, e[0].lesion_label))
    g1, g2 = by_group.get("G1", []), by_group.get("G2", [])
    units = [{"members": {"G1": e}, "pos": e[1], "recon": None} for e in g1]
    if g1 and g2:
        d = np.array([[np.linalg.norm(b[1] - a[1]) for a in g1] for b in g2])
        cm = hungarian_match(CostMatrix(tuple(range(len(g2))), tuple(range(len(g1))), d), gate_mm)
        for mi, fi, dist in cm.pairs:
            units[fi]["members"]["G2"] = g2[mi]
            units[fi]["recon"] = dist
        if len(g1) != len(g2) or cm.unmatched_moving or cm.unmatched_fixed:
            log.warning("patient %s %s: annotator groups disagree (%d vs %d lesions, %d reconciled)",
                        patient_id, tp.label, len(g1), len(g2), len(cm.pairs))
        unmatched = [g2[k] for k in cm.unmatched_moving]
    else:
        unmatched = g2
    units += [{"members": {"G2": e}, "pos": e[1], "recon": None} for e in unmatched]
    return units


def build_tracks(
    cohort: Cohort,
    transforms: Mapping[tuple[str, str], RigidTransform],
    gate_mm: float = DEFAULT_GATE_MM,
    patients: Sequence[str] | None = None,
) -> list[LesionTrack]:
    """Chain lesion units across timepoints into tracks, per patient."""
    tracks: list[LesionTrack] = []
    for pid in patients if patients is not None else cohort.patients:
        entries = _to_reference(cohort, pid, transforms)
        if not entries:
            continue
        timepoints = sorted({a.timepoint for a, _ in entries})
        alive: list[tuple[LesionTrack, np.ndarray]] = []
        counter = 0

        def new_track(unit, tp, status):
            nonlocal counter
            counter += 1
            tr = LesionTrack(pid, f"{pid}-T{counter:02d}")
            _add_unit(tr, unit, tp, None)
            tr.status[tp] = status
            tracks.append(tr)
            return tr

        for tp in timepoints:
            units = _units_at([e for e in entries if e[0].timepoint == tp], gate_mm, pid, tp)
            groups_here = {g for u in units for g in u["members"]}
            for u in units:
                if len(u["members"]) == 1 and len(groups_here) == 2:
                    u["flag"] = f"single-group@{tp.label}"
            if not alive and tp == timepoints[0]:
                alive = [(new_track(u, tp, PRESENT), u["pos"]) for u in units]
                continue
            # moving: lesions at this timepoint; fixed: heads of live tracks
            cost = np.array([[np.linalg.norm(u["pos"] - head) for _, head in alive] for u in units]).reshape(len(units), len(alive))
            cm = hungarian_match(CostMatrix(tuple(range(len(units))), tuple(range(len(alive))), cost), gate_mm)
            next_alive = []
            for mi, fi, dist in cm.pairs:
                tr = alive[fi][0]
                _add_unit(tr, units[mi], tp, dist)
                tr.status[tp] = PRESENT
                next_alive.append((tr, units[mi]["pos"]))
            for fi in cm.unmatched_fixed:
                alive[fi][0].status[tp] = DISAPPEARED
            for mi in cm.unmatched_moving:
                next_alive.append((new_track(units[mi], tp, NEW), units[mi]["pos"]))
            alive = sorted(next_alive, key=lambda e: e[0].track_id)
    return tracks


def _add_unit(track: LesionTrack, unit, tp: Timepoint, dist: float | None) -> None:
    for g, (a, _) in unit["members"].items():
        track.members[(tp, g)] = a
        if g == "G2" and unit.get("recon") is not None and "G1" in unit["members"]:
            track.distances[(tp, g)] = unit["recon"]
        elif dist is not None:
            track.distances[(tp, g)] = dist
    if unit.get("flag"):
        track.flags.append(unit["flag"])


TRACKS_HEADER = ("patient_id", "track_id", "timepoint", "source_group", "lesion_label", "status", "matched_distance_mm")


def tracks_to_rows(tracks: Sequence[LesionTrack]) -> list[tuple]:
    rows = []
    for tr in tracks:
        for tp in sorted(tr.status):
            status = tr.status[tp]
            if status == DISAPPEARED:
                rows.append((tr.patient_id, tr.track_id, tp.label, "", "", status, ""))
                continue
            for g in ("G1", "G2"):
                a = tr.members.get((tp, g))
                if a is None:
                    continue
                d = tr.distances.get((tp, g))
                rows.append((tr.patient_id, tr.track_id, tp.label, g, a.lesion_label, status, "" if d is None else fmt(d)))
    return rows


def write_tracks(tracks: Sequence[LesionTrack], path: str | Path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACKS_HEADER)
    w.writerows(tracks_to_rows(tracks))
    Path(path).write_bytes(buf.getvalue().encode())


def read_tracks(path: str | Path, cohort: Cohort) -> list[LesionTrack]:
    """Rebuild tracks from ``tracks.csv`` against the cohort's annotations."""
    index = {(a.patient_id, a.timepoint, a.source_group, a.lesion_label): a for a in cohort.annotations}
    tracks: dict[str, LesionTrack] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            tid = row["track_id"]
            tr = tracks.setdefault(tid, LesionTrack(row["patient_id"], tid))
            tp = Timepoint.parse(row["timepoint"])
            tr.status[tp] = row["status"]
            if row["status"] == DISAPPEARED:
                continue
            key = (row["patient_id"], tp, row["source_group"], row["lesion_label"])
            if key not in index:
                raise ValidationError(f"tracks.csv references unknown annotation {key}")
            tr.members[(tp, row["source_group"])] = index[key]
            if row["matched_distance_mm"]:
                tr.distances[(tp, row["source_group"])] = float(row["matched_distance_mm"])
    return list(tracks.values())
