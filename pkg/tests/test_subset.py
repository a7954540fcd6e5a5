import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import exhaustive_best_subset

from longirad.cohortmodel import design_matrix
from longirad.errors import ValidationError
from longirad.simcohort import DesignConfig, simulate_designs
from longirad.subset import ImportanceTable, bess_select, max_vote_score, select_top4_sequential, vote_importance
from longirad.survival import as_design, fit_cox


def random_design(seed, n=80, p=8):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    b = np.zeros(p)
    b[rng.choice(p, 3, replace=False)] = rng.normal(size=3) * 0.7
    T = rng.exponential(np.exp(-X @ b))
    C = rng.exponential(2, n)
    return as_design(X, np.minimum(T, C), (T <= C).astype(int))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_exhaustive_matches_independent_enumeration(seed, s):
    d = random_design(seed, p=6)

    def deviance(sub):
        return 2 * len(d.time) * fit_cox(d.take_columns(list(sub))).nll

    best, dev = exhaustive_best_subset(deviance, 6, s)
    res = bess_select(d, "x", s, retained=[], method="exhaustive")
    assert res.selected == best
    assert res.deviance == pytest.approx(dev, abs=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(5, 10), st.integers(1, 4))
def test_splicing_agrees_with_exhaustive(seed, p, s):
    d = random_design(seed, p=p)
    a = bess_select(d, "x", s, method="exhaustive")
    b = bess_select(d, "x", s, method="splicing")
    assert abs(a.deviance - b.deviance) <= 1e-8


def test_fit_equals_refit_on_selected_columns():
    ds, _ = simulate_designs(DesignConfig(n=150, seed=3))
    d = design_matrix(ds)
    r = bess_select(d, "x", 3)
    ref = fit_cox(d.take_columns([d.columns.index(c) for c in r.fit.columns]))
    assert np.allclose(r.fit.theta, ref.theta, atol=1e-10)
    assert np.allclose(r.fit.se, ref.se, rtol=1e-8)
    assert {c for c in r.fit.columns if c[0] in "UT"} == {c for c in d.columns if c[0] in "UT"}


def test_size_out_of_range():
    with pytest.raises(ValidationError):
        bess_select(random_design(0, p=4), "x", 5)


def test_sequential_conditions_on_earlier_blocks():
    ds, _ = simulate_designs(DesignConfig(n=150, n_features=6, seed=4))
    sel, widths = select_top4_sequential(design_matrix(ds))
    assert list(sel) == ["x", "Z", "W", "V"]
    assert all(len(v) == 4 for v in sel.values())
    assert list(widths.values()) == [13, 17, 21, 25]


def test_max_vote_score():
    assert max_vote_score() == 76
    assert max_vote_score(range(2, 5), ("x",)) == 3


def test_vote_table_roundtrip(tmp_path):
    ds, _ = simulate_designs(DesignConfig(n=120, n_features=5, seed=5))
    t = vote_importance(design_matrix(ds), sizes=(2, 3))
    assert sum(t.scores.values()) == 4 * (2 + 3)
    assert t.max_score == 8
    t.write(tmp_path / "imp.csv")
    again = ImportanceTable.read(tmp_path / "imp.csv", sizes=(2, 3))
    assert again == t


def test_planted_pair_is_found():
    hits = 0
    for r in range(100):
        rng = np.random.default_rng(1000 + r)
        n = 300
        X = rng.normal(size=(n, 6))
        eta = np.log(3) * X[:, 1] + np.log(2) * X[:, 3]
        T, C = rng.exponential(np.exp(-eta)), rng.exponential(2.0, n)
        d = as_design(X, np.minimum(T, C), (T <= C).astype(int))
        res = bess_select(d, list(range(6)), 2, retained=[])
        hits += set(res.selected) == {1, 3}
    assert hits >= 95


def test_dominant_feature_ranks_first():
    strong = (2, 0.9, (0.9, 0.9, 0.9))
    ds, _ = simulate_designs(DesignConfig(n=300, n_features=6, signal=(strong,), seed=12))
    table = vote_importance(design_matrix(ds), sizes=(1, 2, 3))
    (first, score), (_, runner_up) = table.ranking()[:2]
    assert first == "feat02" and score == table.max_score > runner_up
