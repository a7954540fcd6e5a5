import shutil

import numpy as np
import pytest
from conftest import DATA

from longirad.cohortmodel import (
    Timepoint, aggregate_patient_features, assemble_design, design_matrix, load_cohort, read_designs, save_cohort,
    write_designs,
)
from longirad.errors import CohortLoadError, ReferentialIntegrityError, ValidationError
from longirad.radiomics import FeatureVector, track_features


def tree_bytes(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_two_timepoint_fixture_loads():
    c = load_cohort(DATA / "two_timepoints")
    assert c.patients == ("P001", "P002")
    assert {a.timepoint for a in c.annotations} == {Timepoint.SCREENING, Timepoint.WEEK8}


def test_save_is_deterministic_and_roundtrips(tmp_path, tiny_cohort):
    save_cohort(tiny_cohort, tmp_path / "a")
    save_cohort(load_cohort(tmp_path / "a"), tmp_path / "b")
    assert load_cohort(tmp_path / "b") == tiny_cohort
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_unknown_series_is_named(tmp_path):
    root = tmp_path / "c"
    shutil.copytree(DATA / "two_timepoints", root)
    ann = root / "annotations.csv"
    lines = ann.read_text().splitlines()
    head, first = lines[0], lines[1].split(",")
    first[3] = "S99"
    ann.write_text("\n".join([head, ",".join(first)] + lines[2:]) + "\n")
    with pytest.raises(ReferentialIntegrityError, match="S99"):
        load_cohort(root)


def test_missing_directory():
    with pytest.raises(CohortLoadError):
        load_cohort(DATA / "does-not-exist")


def test_timepoint_parsing():
    assert Timepoint.parse("Week16") is Timepoint.WEEK16
    assert Timepoint.parse(3) is Timepoint.WEEK24
    assert Timepoint.WEEK8.days == 56
    with pytest.raises(ValidationError):
        Timepoint.parse("Week12")


def _fv(v):
    return FeatureVector({"a": v, "b": 2 * v}, {"a": "X", "b": "X"})


def test_aggregate_is_lesion_mean():
    feats = {("P1", Timepoint.SCREENING, "t1"): _fv(1.0), ("P1", Timepoint.SCREENING, "t2"): _fv(3.0),
             ("P2", Timepoint.SCREENING, "t1"): _fv(5.0)}
    names, agg = aggregate_patient_features(feats, "P1")
    assert names == ("a", "b") and list(agg[Timepoint.SCREENING]) == [2.0, 4.0]
    assert list(aggregate_patient_features(feats, "P2")[1][Timepoint.SCREENING]) == [5.0, 10.0]


@pytest.fixture(scope="module")
def tiny_designs(tiny_cohort, tiny_truth):
    from longirad.correspondence import build_tracks

    feats = track_features(tiny_cohort, build_tracks(tiny_cohort, tiny_truth.transforms))
    return assemble_design(tiny_cohort, feats)


def test_design_blocks_by_horizon(tiny_designs):
    d16 = design_matrix(tiny_designs, Timepoint.WEEK16)
    assert set(d16.blocks) <= {"x", "Z", "W", "U", "T"} and {"x", "Z", "W", "U", "T"} <= set(d16.blocks)
    assert set(design_matrix(tiny_designs, Timepoint.SCREENING).blocks) == {"x", "U", "T"}


def test_designs_roundtrip(tmp_path, tiny_designs):
    write_designs(tiny_designs, tmp_path / "d.csv")
    again = read_designs(tmp_path / "d.csv")
    write_designs(again, tmp_path / "e.csv")
    assert (tmp_path / "d.csv").read_bytes() == (tmp_path / "e.csv").read_bytes()
    a, b = design_matrix(tiny_designs), design_matrix(again)
    assert a.columns == b.columns and np.array_equal(a.X, b.X)


def test_absent_block_survives_roundtrip(tmp_path, tiny_cohort, tiny_truth):
    from longirad.correspondence import build_tracks

    feats = track_features(tiny_cohort, build_tracks(tiny_cohort, tiny_truth.transforms))
    pid = tiny_cohort.patients[0]
    dropped = {k: v for k, v in feats.items() if not (k[0] == pid and k[1] == Timepoint.WEEK24)}
    designs = assemble_design(tiny_cohort, dropped)
    write_designs(designs, tmp_path / "d.csv")
    again = {d.patient_id: d for d in read_designs(tmp_path / "d.csv")}
    assert again[pid].block("V") is None
    assert again[tiny_cohort.patients[1]].block("V") is not None
    assert pid not in design_matrix(list(again.values())).patient_ids
