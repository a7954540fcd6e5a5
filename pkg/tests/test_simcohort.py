import numpy as np
import pytest

from longirad.cohortmodel import Timepoint, save_cohort
from longirad.correspondence import DISAPPEARED, NEW, build_tracks
from longirad.errors import GeometryError, ValidationError
from longirad.simcohort import (
    CohortConfig, GroundTruth, generate_cohort, score_tracking, simulate_designs, DesignConfig, tracks_from_labels,
)
from longirad.survival import as_design, fit_cox

# small phantoms: enough room for one or two lesions, cheap to render
SMALL = dict(volume_size=24, spacing_mm=3.0, radius_mm=(3.0, 4.0), min_spacing_mm=12.0, transform_magnitude=(1.0, 1.0))


@pytest.fixture(scope="module")
def big_cohort():
    cfg = CohortConfig(n_patients=500, lesions_per_patient=(1, 1), two_groups=False, seed=3, **SMALL)
    return generate_cohort(cfg)


def test_same_seed_same_bytes(tmp_path):
    cfg = CohortConfig(n_patients=2, lesions_per_patient=(1, 2), seed=9, **SMALL)
    for name in ("a", "b"):
        cohort, truth = generate_cohort(cfg)
        save_cohort(cohort, tmp_path / name)
        truth.write(tmp_path / name / "truth.json")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_truth_json_roundtrip(tiny_truth):
    assert GroundTruth.from_json(tiny_truth.to_json()).to_json() == tiny_truth.to_json()


def test_realized_censoring_near_target(big_cohort):
    cohort, _ = big_cohort
    censored = 1 - np.mean([o.event for o in cohort.outcomes.values()])
    assert abs(censored - 0.55) <= 0.05


def test_outcomes_follow_planted_hazard(big_cohort):
    # rebuild the generator's covariates from the truth record and refit the same family
    cohort, truth = big_cohort
    pids = cohort.patients
    lesion = {k[0]: v for k, v in truth.lesion_of.items()}
    r = {tp: np.array([truth.radii[lesion[p]][tp.label] for p in pids]) for tp in Timepoint}
    cols = [r[Timepoint.SCREENING]] + [r[tp] / r[Timepoint.SCREENING] for tp in list(Timepoint)[1:]]
    X = np.column_stack([(c - c.mean()) / c.std() for c in cols] + [[cohort.demographics[p].ARM for p in pids]])
    time = np.array([cohort.outcomes[p].time for p in pids])
    event = np.array([cohort.outcomes[p].event for p in pids])
    fit = fit_cox(as_design(X, time, event))
    true = np.r_[truth.hazard["coefficients"]["size"], truth.hazard["arm_log_hr"]]
    assert np.all(np.abs(fit.theta - true) <= 3 * fit.se), (fit.theta, fit.se)


def test_infeasible_layout_is_geometry_error():
    cfg = CohortConfig(n_patients=1, lesions_per_patient=(6, 6), **{**SMALL, "min_spacing_mm": 40.0})
    with pytest.raises(GeometryError):
        generate_cohort(cfg)


def test_invalid_config():
    with pytest.raises(ValidationError):
        generate_cohort(CohortConfig(censoring_rate=1.5))


def test_perfect_tracks_score_one(tiny_cohort, tiny_truth):
    tracks = build_tracks(tiny_cohort, tiny_truth.transforms)
    assert score_tracking(tracks, tiny_truth) == 1.0


def test_unknown_patient_in_tracks(tiny_cohort, tiny_truth):
    other, _ = generate_cohort(CohortConfig(n_patients=5, lesions_per_patient=(1, 1), seed=1, **SMALL))
    extra = [t for t in tracks_from_labels(other) if t.patient_id == "P005"]
    with pytest.raises(ValidationError):
        score_tracking(extra, tiny_truth)


def _chance_score(tracks, truth, rng, reps=50):
    """Mean score against truths whose later-timepoint identities are shuffled within each scan."""
    import dataclasses

    groups = {}
    for k in truth.lesion_of:
        if k[1] != Timepoint.SCREENING.label:
            groups.setdefault(k[:3], []).append(k)
    vals = []
    for _ in range(reps):
        lesion_of = dict(truth.lesion_of)
        for keys in groups.values():
            ids = [truth.lesion_of[k] for k in keys]
            lesion_of.update(zip(keys, rng.permutation(ids)))
        vals.append(score_tracking(tracks, dataclasses.replace(truth, lesion_of=lesion_of)))
    return float(np.mean(vals))


def test_shuffled_labels_without_matching_score_near_chance():
    cfg = CohortConfig(n_patients=30, lesions_per_patient=(3, 3), label_swap_prob=1.0, two_groups=False, seed=4,
                       volume_size=32, spacing_mm=3.0, radius_mm=(3.0, 4.0), min_spacing_mm=15.0)
    cohort, truth = generate_cohort(cfg)
    observed = score_tracking(tracks_from_labels(cohort), truth)
    chance = _chance_score(tracks_from_labels(cohort), truth, np.random.default_rng(0))
    assert observed < 0.6
    assert abs(observed - chance) < 0.1


def test_new_and_disappearing_lesions():
    cfg = CohortConfig(n_patients=8, lesions_per_patient=(2, 2), p_new=1.0, p_disappear=1.0, seed=2,
                       volume_size=32, spacing_mm=3.0, radius_mm=(3.0, 4.0), min_spacing_mm=15.0)
    cohort, truth = generate_cohort(cfg)
    # a gate under the lesion spacing keeps an exit and an entry in one scan apart
    tracks = build_tracks(cohort, truth.transforms, gate_mm=10.0)
    statuses = {s for t in tracks for s in t.status.values()}
    assert NEW in statuses and DISAPPEARED in statuses
    assert score_tracking(tracks, truth) == 1.0


def test_design_simulator_censoring():
    designs, eta = simulate_designs(DesignConfig(n=500, censoring_rate=0.55, seed=1))
    assert abs(1 - np.mean([d.outcome.event for d in designs]) - 0.55) <= 0.05
    assert eta.shape == (500,)
