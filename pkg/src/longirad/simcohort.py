"""Synthetic cohorts with known truth.

Three generators at increasing levels of abstraction:

* :func:`generate_cohort` renders image-level cohorts (phantom volumes,
  lesion masks, annotator groups, series transforms, outcomes) together with
  a :class:`GroundTruth` record, for registration and tracking checks.
* :func:`simulate_designs` draws design-level data (baseline and delta
  feature blocks, demographics, Cox outcomes) with a planted hazard signal.
* :func:`simulate_joint_data` draws longitudinal trajectories and
  discrete-time outcomes from the joint model itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy import optimize

from .cohortmodel import (
    Cohort,
    Demographics,
    ImageVolume,
    LesionAnnotation,
    LesionMask,
    PatientDesign,
    SurvivalOutcome,
    Timepoint,
)
from .errors import GeometryError, ValidationError
from .registration import RigidTransform, euler_matrix

TIMEPOINTS = tuple(Timepoint)
BODY_HU = 40.0
AIR_HU = -1000.0


# ---------------------------------------------------------------------------
# image-level cohorts


@dataclass(frozen=True)
class CohortConfig:
    n_patients: int = 20
    lesions_per_patient: tuple[int, int] = (2, 4)
    jitter_mm: float = 0.0
    transform_magnitude: tuple[float, float] = (3.0, 6.0)  # max degrees per axis, max mm per axis
    signal_spec: tuple[tuple[str, float, tuple[float, float, float]], ...] = (("size", 0.5, (0.2, 0.2, 0.2)),)
    censoring_rate: float = 0.55
    seed: int = 0
    volume_size: int = 64
    spacing_mm: float = 2.0
    min_spacing_mm: float = 25.0
    radius_mm: tuple[float, float] = (4.0, 8.0)
    label_swap_prob: float = 0.5
    p_new: float = 0.0
    p_disappear: float = 0.0
    two_groups: bool = True
    noise_hu: float = 10.0
    annotation_noise_mm: float = 0.0

    def validate(self):
        lo, hi = self.lesions_per_patient
        if self.n_patients < 1 or lo < 1 or hi < lo:
            raise ValidationError("need n_patients >= 1 and 1 <= min lesions <= max lesions")
        if not 0 <= self.censoring_rate < 1:
            raise ValidationError("censoring_rate must lie in [0, 1)")
        if self.jitter_mm < 0 or self.volume_size < 8 or self.spacing_mm <= 0:
            raise ValidationError("invalid jitter, volume size or spacing")
        for name, _, deltas in self.signal_spec:
            if name != "size" or len(deltas) != 3:
                raise ValidationError("image cohorts support the 'size' signal with three delta effects")


@dataclass
class GroundTruth:
    """What the generator knows: identities, transforms, trajectories, hazard."""

    lesion_of: dict[tuple[str, str, str, str], str]  # (pid, timepoint label, group, label) -> true lesion id
    transforms: dict[tuple[str, str], RigidTransform]  # (series, reference series) -> true moving->fixed
    radii: dict[str, dict[str, float]]  # lesion id -> timepoint label -> mean radius (mm)
    hazard: dict[str, object]
    censoring: dict[str, float]
    config: dict

    def to_json(self) -> str:
        doc = {
            "lesion_of": [[*k, v] for k, v in sorted(self.lesion_of.items())],
            "transforms": [[s, r, t.to_dict()] for (s, r), t in sorted(self.transforms.items())],
            "radii": self.radii,
            "hazard": self.hazard,
            "censoring": self.censoring,
            "config": self.config,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        d = json.loads(text)
        return cls(
            {tuple(r[:4]): r[4] for r in d["lesion_of"]},
            {(s, r): RigidTransform.from_dict(t) for s, r, t in d["transforms"]},
            d["radii"], d["hazard"], d["censoring"], d["config"],
        )

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def read(cls, path: str | Path) -> "GroundTruth":
        return cls.from_json(Path(path).read_text())


def _random_rotation(rng, max_deg: float) -> np.ndarray:
    ang = np.deg2rad(rng.uniform(-max_deg, max_deg, 3))
    return euler_matrix(*ang)


def _grid_points(n: int, sp: float) -> np.ndarray:
    zz, yy, xx = np.meshgrid(*(np.arange(n) * sp,) * 3, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)


class _Anatomy:
    """Smooth body with Gaussian blobs plus ellipsoidal lesions, in reference mm."""

    def __init__(self, rng, extent: float):
        self.center = np.full(3, extent / 2)
        self.axes = extent * np.array([0.40, 0.33, 0.37])
        self.blobs = []
        for _ in range(5):
            c = self.center + rng.uniform(-0.5, 0.5, 3) * self.axes
            self.blobs.append((c, rng.uniform(0.06, 0.1) * extent, rng.choice([-1, 1]) * rng.uniform(150, 400)))

    def body(self, a: np.ndarray) -> np.ndarray:
        r = np.linalg.norm((a - self.center) / self.axes, axis=1)
        v = AIR_HU + (BODY_HU - AIR_HU) / (1 + np.exp((r - 1) * 12))
        for c, rad, amp in self.blobs:
            v = v + amp * np.exp(-np.sum((a - c) ** 2, axis=1) / (2 * rad**2))
        return v

    def inside(self, p: np.ndarray, margin: float) -> bool:
        return bool(np.linalg.norm((p - self.center) / (self.axes - margin)) < 1)


def _place_lesions(rng, anatomy: _Anatomy, k: int, min_spacing: float, margin: float, pid: str):
    pts: list[np.ndarray] = []
    for _ in range(5000):
        p = anatomy.center + rng.uniform(-1, 1, 3) * anatomy.axes
        if not anatomy.inside(p, margin):
            continue
        if all(np.linalg.norm(p - q) >= min_spacing for q in pts):
            pts.append(p)
            if len(pts) == k:
                return pts
    raise GeometryError(f"cannot place {k} lesions {min_spacing} mm apart inside the phantom of patient {pid}")


def _ball(rng, radius: float) -> np.ndarray:
    if radius == 0:
        return np.zeros(3)
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v) * radius * rng.uniform() ** (1 / 3)


def _censoring_scale(times: np.ndarray, rate: float) -> float:
    """Mean of exponential censoring giving expected censored fraction ``rate``."""
    if rate <= 0:
        return math.inf

    def frac(log_mean):
        return float(np.mean(1 - np.exp(-times / np.exp(log_mean)))) - rate

    lo, hi = np.log(times.min()) - 20, np.log(times.max()) + 20
    return float(np.exp(optimize.brentq(lambda x: -frac(x), lo, hi)))


def _demographics(rng, arm: int) -> Demographics:
    return Demographics(
        LIVERBL=int(rng.uniform() < 0.4), PRENGR1=int(rng.uniform() < 0.8), ENDSNBL=int(rng.uniform() < 0.3),
        AST=float(np.round(np.exp(rng.normal(3.2, 0.3)), 1)), ALP=float(np.round(np.exp(rng.normal(4.5, 0.3)), 1)),
        Age=float(np.round(rng.normal(56, 10), 0)), Denovo=int(rng.uniform() < 0.3),
        HGB=float(np.round(rng.normal(12.5, 1.3), 1)), ARM=arm,
    )


def generate_cohort(cfg: CohortConfig = CohortConfig()) -> tuple[Cohort, GroundTruth]:
    """Render a synthetic cohort; identical ``cfg`` gives an identical cohort.

    Each patient draws from its own RNG substream. The Screening series is
    the reference frame; every later series is the anatomy seen through a
    random rigid transform. Lesions shrink over time, faster on arm 1.
    """
    cfg.validate()
    n, sp = cfg.volume_size, cfg.spacing_mm
    extent = (n - 1) * sp
    grid = _grid_points(n, sp)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_patients + 1)
    volumes, annotations, demo, lesion_of, transforms, radii = {}, [], {}, {}, {}, {}
    sizes: dict[str, dict[Timepoint, float]] = {}
    arms = {}
    for p in range(cfg.n_patients):
        rng = np.random.default_rng(streams[p])
        pid = f"P{p + 1:03d}"
        arm = int(rng.uniform() < 0.5)
        arms[pid] = arm
        demo[pid] = _demographics(rng, arm)
        anatomy = _Anatomy(rng, extent)
        k = int(rng.integers(cfg.lesions_per_patient[0], cfg.lesions_per_patient[1] + 1))
        margin = cfg.radius_mm[1] + cfg.jitter_mm + 4 * sp
        centers = _place_lesions(rng, anatomy, k, cfg.min_spacing_mm, margin, pid)
        shape = [rng.uniform(0.8, 1.2, 3) for _ in range(k)]
        r0 = rng.uniform(*cfg.radius_mm, k)
        rate = rng.normal(0.15 + 0.25 * arm, 0.1, k)  # relative shrinkage per 168 days
        first_seen = [Timepoint.SCREENING] * k
        last_seen = [Timepoint.WEEK24] * k
        if cfg.p_new > 0 and k > 1 and rng.uniform() < cfg.p_new:
            first_seen[k - 1] = Timepoint(int(rng.integers(1, 4)))
        if cfg.p_disappear > 0 and rng.uniform() < cfg.p_disappear:
            j = int(rng.integers(0, k))
            if first_seen[j] == Timepoint.SCREENING:
                last_seen[j] = Timepoint(int(rng.integers(0, 3)))
        lesion_ids = [f"{pid}-L{j + 1}" for j in range(k)]
        for lid in lesion_ids:
            radii[lid] = {}
        sizes[pid] = {}
        for tp in TIMEPOINTS:
            series = f"{pid}_{tp.label}"
            if tp == Timepoint.SCREENING:
                T = RigidTransform.identity()
            else:
                deg, mm = cfg.transform_magnitude
                T = RigidTransform(_random_rotation(rng, deg), rng.uniform(-mm, mm, 3))
                transforms[(series, f"{pid}_Screening")] = T
            present = [j for j in range(k) if first_seen[j] <= tp <= last_seen[j]]
            pos = {j: centers[j] + (_ball(rng, cfg.jitter_mm) if tp > 0 else np.zeros(3)) for j in present}
            rad = {}
            wobble = rng.normal(0, 0.05, k) if tp > 0 else np.zeros(k)  # keeps per-scan ratios from being collinear
            for j in present:
                factor = max(0.3, 1 - rate[j] * tp.days / 168 + wobble[j])
                rad[j] = r0[j] * factor * shape[j]
                radii[lesion_ids[j]][tp.label] = float(np.mean(rad[j]))
            sizes[pid][tp] = float(np.mean([np.mean(rad[j]) for j in present])) if present else float("nan")
            # render: series point q sits at anatomy point T(q)
            a = T.apply(grid)
            vox = anatomy.body(a)
            tex = rng.normal(0, 15, len(grid))
            for j in present:
                d = np.linalg.norm((a - pos[j]) / rad[j], axis=1)
                vox = vox + 60.0 / (1 + np.exp(np.minimum((d - 1) * 20, 50))) + np.where(d < 1, tex, 0.0)
            vox = vox + rng.normal(0, cfg.noise_hu, len(grid))
            vol = ImageVolume(vox.reshape(n, n, n), (sp, sp, sp), (0.0, 0.0, 0.0))
            volumes[series] = vol
            Tinv = T.inverse()
            groups = ("G1", "G2") if cfg.two_groups else ("G1",)
            order = list(present)
            labels1 = [f"L{i + 1}" for i in range(len(order))]
            if tp > 0 and rng.uniform() < cfg.label_swap_prob:
                labels1 = list(rng.permutation(labels1))
            labels2 = list(rng.permutation([f"R{i + 1}" for i in range(len(order))]))
            for g in groups:
                labels = labels1 if g == "G1" else labels2
                for j, lab in zip(order, labels):
                    c = Tinv.apply(pos[j]) + (rng.normal(0, cfg.annotation_noise_mm, 3) if cfg.annotation_noise_mm else 0)
                    ann = _annotation(pid, tp, g, series, lab, c, vol, T, pos[j], rad[j])
                    annotations.append(ann)
                    lesion_of[(pid, tp.label, g, lab)] = lesion_ids[j]

    # outcomes from the planted size signal
    hz = np.random.default_rng(streams[-1])
    pids = sorted(demo)
    feats = {"x": np.array([sizes[p][Timepoint.SCREENING] for p in pids])}
    for tp in TIMEPOINTS[1:]:
        feats[tp.label] = np.array([sizes[p][tp] / sizes[p][Timepoint.SCREENING] for p in pids])
    eta = np.zeros(len(pids))
    coefs = {}
    for name, base, deltas in cfg.signal_spec:
        cols = [feats["x"]] + [feats[tp.label] for tp in TIMEPOINTS[1:]]
        for c, beta in zip(cols, (base, *deltas)):
            c = np.nan_to_num(c, nan=np.nanmean(c))
            sd = c.std() or 1.0
            eta += beta * (c - c.mean()) / sd
        coefs[name] = [base, *deltas]
    eta += -0.4 * np.array([arms[p] for p in pids])
    T_event = hz.exponential(300.0 * np.exp(-eta))
    cmean = _censoring_scale(T_event, cfg.censoring_rate)
    C = hz.exponential(cmean, len(pids)) if math.isfinite(cmean) else np.full(len(pids), np.inf)
    outcomes = {}
    for p, t, c in zip(pids, T_event, C):
        y = max(min(t, c), 1.0)
        outcomes[p] = SurvivalOutcome(float(np.round(y, 3)), int(t <= c))
    truth = GroundTruth(
        lesion_of, transforms, radii,
        {"signal_spec": [[nme, b, list(d)] for nme, b, d in cfg.signal_spec], "arm_log_hr": -0.4,
         "baseline_scale_days": 300.0, "coefficients": coefs},
        {"distribution": "exponential", "mean_days": cmean if math.isfinite(cmean) else -1.0,
         "target_rate": cfg.censoring_rate},
        _jsonable(asdict(cfg)),
    )
    cohort = Cohort(volumes, tuple(annotations), demo, outcomes)
    return cohort, truth


def _jsonable(d):
    if isinstance(d, dict):
        return {k: _jsonable(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_jsonable(v) for v in d]
    return d


def _annotation(pid, tp, group, series, label, centroid, vol: ImageVolume, T, center_ref, rad) -> LesionAnnotation:
    """Annotation on the axial slice through the centroid; mask from the lesion ellipsoid."""
    idx = vol.physical_to_index(centroid)
    nx, ny, nz = vol.dims
    k = int(np.clip(np.round(idx[2]), 0, nz - 1))
    sx, sy, sz = vol.spacing
    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    pts = vol.index_to_physical(np.stack([ii.ravel(), jj.ravel(), np.full(ii.size, k)], axis=1))
    d = np.linalg.norm((T.apply(pts) - center_ref) / rad, axis=1).reshape(ny, nx)
    inside = d < 1
    if not inside.any():
        # slice grazes the lesion: keep the closest pixel
        inside = d == d.min()
    rows = np.flatnonzero(inside.any(axis=1))
    cols = np.flatnonzero(inside.any(axis=0))
    r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    mask = LesionMask(inside[r0:r1, c0:c1], (sx, sy), (vol.origin[0] + c0 * sx, vol.origin[1] + r0 * sy))
    return LesionAnnotation(pid, tp, group, series, label, tuple(centroid), k, mask)


def score_tracking(tracks, truth: GroundTruth) -> float:
    """Jaccard agreement between predicted and true same-lesion annotation pairs.

    Pairs are formed within a patient. A pair is linked in the prediction when
    both annotations share a track, and in the truth when both belong to the
    same lesion. Perfect tracking scores 1.0.
    """
    pred_of = {}
    for tr in tracks:
        for (tp, g), a in tr.members.items():
            pred_of[(a.patient_id, tp.label, g, a.lesion_label)] = tr.track_id
    truth_pids = {k[0] for k in truth.lesion_of}
    pred_pids = {k[0] for k in pred_of}
    if pred_pids - truth_pids:
        raise ValidationError(f"tracks for patients absent from the truth: {sorted(pred_pids - truth_pids)[:5]}")
    keys_by_pid: dict[str, list] = {}
    for key in truth.lesion_of:
        if key[0] in pred_pids:
            keys_by_pid.setdefault(key[0], []).append(key)
    inter = union = 0
    for pid, keys in keys_by_pid.items():
        for a, b in combinations(sorted(keys), 2):
            t = truth.lesion_of[a] == truth.lesion_of[b]
            p = a in pred_of and b in pred_of and pred_of[a] == pred_of[b]
            inter += t and p
            union += t or p
    return 1.0 if union == 0 else inter / union


def tracks_from_labels(cohort: Cohort):
    """Tracks that link annotations by their label only (no geometry)."""
    from .correspondence import PRESENT, LesionTrack

    out = {}
    for a in sorted(cohort.annotations, key=lambda a: a.key):
        key = (a.patient_id, a.source_group, a.lesion_label)
        tr = out.get(key)
        if tr is None:
            tr = out[key] = LesionTrack(a.patient_id, f"{a.patient_id}-{a.source_group}-{a.lesion_label}")
        tr.members[(a.timepoint, a.source_group)] = a
        tr.status[a.timepoint] = PRESENT
    return list(out.values())


# ---------------------------------------------------------------------------
# design-level data


@dataclass(frozen=True)
class DesignConfig:
    n: int = 200
    n_features: int = 10
    signal: tuple[tuple[int, float, tuple[float, float, float]], ...] = ()  # (feature index, baseline, deltas)
    demographic_log_hr: float = 0.2
    arm_log_hr: float = -0.3
    censoring_rate: float = 0.55
    delta_sd: float = 0.15
    seed: int = 0


def simulate_designs(cfg: DesignConfig) -> tuple[list[PatientDesign], np.ndarray]:
    """Patient designs with x, Z, W, V blocks and a Cox outcome.

    The log hazard is linear in the standardized block values; ``signal``
    lists (feature index, baseline log-HR, (Week 8, 16, 24 delta log-HRs)).
    Returns the designs and the true linear predictor.
    """
    rng = np.random.default_rng(cfg.seed)
    n, p = cfg.n, cfg.n_features
    names = tuple(f"feat{j:02d}" for j in range(p))
    arm = (rng.uniform(size=n) < 0.5).astype(int)
    x = np.exp(rng.normal(3.0, 0.4, (n, p)))
    blocks = {"x": x}
    for b, shrink in zip(("Z", "W", "V"), (0.05, 0.1, 0.15)):
        blocks[b] = np.exp(rng.normal(-shrink * arm[:, None], cfg.delta_sd, (n, p)))
    eta = np.zeros(n)
    for j, base, deltas in cfg.signal:
        for b, beta in zip(("x", "Z", "W", "V"), (base, *deltas)):
            c = blocks[b][:, j]
            eta += beta * (c - c.mean()) / c.std()
    demos = [_demographics(rng, int(a)) for a in arm]
    eta += cfg.demographic_log_hr * np.array([d.LIVERBL for d in demos]) + cfg.arm_log_hr * arm
    T = rng.exponential(np.exp(-eta))
    cmean = _censoring_scale(T, cfg.censoring_rate)
    C = rng.exponential(cmean, n) if math.isfinite(cmean) else np.full(n, np.inf)
    y = np.minimum(T, C) * 365.0 + 1e-6
    event = (T <= C).astype(int)
    designs = [
        PatientDesign(
            f"S{i + 1:04d}", names, blocks["x"][i], demos[i], SurvivalOutcome(y[i], int(event[i])),
            blocks["Z"][i], blocks["W"][i], blocks["V"][i],
        )
        for i in range(n)
    ]
    return designs, eta


def generative_concordance(
    beta: float, censor_mean: float, n_pairs: int = 2_000_000, seed: int = 0
) -> float:
    """Population Harrell C of the true risk for ``T ~ Exp(exp(beta*z))``,
    ``z ~ N(0,1)``, censoring ``Exp(mean=censor_mean)``, from independent pairs."""
    rng = np.random.default_rng(seed)
    num = den = 0.0
    for chunk in range(0, n_pairs, 500_000):
        m = min(500_000, n_pairs - chunk)
        z = rng.standard_normal((2, m))
        t = rng.exponential(np.exp(-beta * z))
        c = rng.exponential(censor_mean, (2, m))
        y, e = np.minimum(t, c), t <= c
        first = np.where(y[0] < y[1], 0, 1)
        idx = np.arange(m)
        usable = (y[0] != y[1]) & e[first, idx]
        conc = z[first, idx] > z[1 - first, idx]
        num += np.sum(usable & conc)
        den += np.sum(usable)
    return float(num / den)


def simulate_risk_cohort(n: int, beta: float, censor_mean: float, seed: int):
    """(risk, time, event) for the one-covariate model used by :func:`generative_concordance`."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    t = rng.exponential(np.exp(-beta * z))
    c = rng.exponential(censor_mean, n)
    return beta * z, np.minimum(t, c), (t <= c).astype(int)


# ---------------------------------------------------------------------------
# joint-model data


@dataclass(frozen=True)
class JointSimConfig:
    n: int = 300
    alpha: tuple[float, ...] = (0.5,)
    n_covariates: int = 2
    sd_random: float = 2.5
    sigma: float = 0.3
    baseline_logit: float = -2.5
    horizon_days: float = 504.0
    corr: float = 0.3
    # extra observed features (source index, correlation of random effects with
    # the source); they share the source's fixed effects but not its hazard effect
    collinear: tuple[tuple[int, float], ...] = ()
    seed: int = 0


def simulate_joint_data(cfg: JointSimConfig):
    """Longitudinal features on the scan grid and discrete-time outcomes.

    Features ``f0..f{L-1}`` drive the hazard through ``alpha``. Each
    collinear extra ``c0..`` follows its source's mean trajectory with a
    random effect correlated ``rho`` with the source's, and carries no
    hazard effect.
    """
    from .jointmodel import SCAN_DAYS, JointData, natural_spline_basis

    rng = np.random.default_rng(cfg.seed)
    n, L, q = cfg.n, len(cfg.alpha), cfg.n_covariates
    cov = rng.standard_normal((n, q))
    arm = (rng.uniform(size=n) < 0.5).astype(float)
    sp = natural_spline_basis(np.array(SCAN_DAYS), 2)
    B = np.array([np.r_[1.0 + 0.5 * l, 0.3 * np.ones(q), -0.2, -0.3, -0.5, 0.2, 0.3] for l in range(L)]).T
    Sig = cfg.sd_random**2 * (cfg.corr * np.ones((L, L)) + (1 - cfg.corr) * np.eye(L))
    b = rng.multivariate_normal(np.zeros(L), Sig, size=n)
    b_extra = np.array([rho * b[:, src] + math.sqrt(1 - rho**2) * cfg.sd_random * rng.standard_normal(n)
                        for src, rho in cfg.collinear]).reshape(len(cfg.collinear), n).T
    grid = np.arange(0.0, cfg.horizon_days + 1, 56.0)
    alpha = np.array(cfg.alpha)

    def design(i, t):
        N = sp(min(t, SCAN_DAYS[-1]))[0]
        return np.r_[1.0, cov[i], arm[i], N, arm[i] * N]

    time = np.empty(n)
    event = np.zeros(n)
    cens = rng.choice(grid[3:], size=n)
    for i in range(n):
        t_ev = None
        for k in range(1, grid.size):
            if grid[k] > cens[i]:
                break
            mu = design(i, grid[k]) @ B + b[i]
            eta = cfg.baseline_logit + 0.3 * cov[i, 0] - 0.5 * arm[i] + mu @ alpha
            if rng.uniform() < 1 / (1 + np.exp(-eta)):
                t_ev = grid[k - 1] + rng.uniform(1, 56)
                break
        if t_ev is None:
            time[i] = cens[i]
        else:
            time[i], event[i] = t_ev, 1.0
    op, ot, Y = [], [], []
    n_extra = len(cfg.collinear)
    for i in range(n):
        for d in SCAN_DAYS:
            if d <= time[i]:
                mu = design(i, d) @ B + b[i]
                y = mu + cfg.sigma * rng.standard_normal(L)
                extra = [mu[src] - b[i, src] + b_extra[i, j] + cfg.sigma * rng.standard_normal()
                         for j, (src, _) in enumerate(cfg.collinear)]
                op.append(i)
                ot.append(d)
                Y.append(np.r_[y, extra])
    names = tuple(f"f{l}" for l in range(L)) + tuple(f"c{j}" for j in range(n_extra))
    return JointData(
        tuple(f"J{i + 1:04d}" for i in range(n)), cov, tuple(f"cov{j}" for j in range(q)), arm, time, event,
        np.array(op, dtype=int), np.array(ot, dtype=float), np.array(Y, dtype=float).reshape(len(op), L + n_extra), names,
    )
