import xml.etree.ElementTree as ET
from types import SimpleNamespace

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
import pytest

from longirad.errors import ValidationError
from longirad.report import (
    ARM_COLORS, FigureSpec, box_stats, render_box_by_arm, render_cindex_bars, render_cvpath, render_importance,
    render_trace, render_traces,
)
from longirad.subset import ImportanceTable
from longirad.survival import CIndexEstimate, LassoPath

SVG = "{http://www.w3.org/2000/svg}"


def parse(svg):
    return ET.fromstring(svg)


def test_five_point_quartiles():
    s = box_stats([1, 2, 3, 4, 5])
    assert (s["median"], s["q1"], s["q3"]) == (3.0, 2.0, 4.0)
    assert s["outliers"] == []


def test_constant_data_gives_flat_box():
    s = box_stats([7.0] * 6)
    assert s["q1"] == s["q3"] == s["median"] == s["whisker_low"] == s["whisker_high"] == 7.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=40))
def test_box_stats_against_numpy(vals):
    v = np.array(vals)
    s = box_stats(v)
    q1, q2, q3 = np.percentile(v, [25, 50, 75])
    assert np.allclose([s["q1"], s["median"], s["q3"]], [q1, q2, q3])
    inside = v[(v >= q1 - 1.5 * (q3 - q1)) & (v <= q3 + 1.5 * (q3 - q1))]
    assert s["whisker_low"] == inside.min() and s["whisker_high"] == inside.max()
    assert len(s["outliers"]) + inside.size == v.size


def cells():
    rng = np.random.default_rng(0)
    return {("Screening", 1): rng.lognormal(3, 0.5, 30), ("Screening", 0): rng.lognormal(3, 0.5, 30),
            ("Week8", 1): rng.lognormal(2.8, 0.5, 3), ("Week8", 0): rng.lognormal(3, 0.5, 20)}


def test_box_plot_skips_small_cells_and_is_deterministic():
    spec = FigureSpec("BoxByArm", title="area", log_scale=True)
    a, b = render_box_by_arm(cells(), spec), render_box_by_arm(cells(), spec)
    assert a.svg == b.svg and a.csv == b.csv
    assert a.meta["omitted"] == [("Week8", 1, 3)]
    assert "omitted" in a.svg
    root = parse(a.svg)
    assert root.tag == SVG + "svg"
    assert ARM_COLORS[1] in a.svg and ARM_COLORS[0] in a.svg


def test_box_csv_uses_log_scale_quantiles():
    data = cells()
    fig = render_box_by_arm(data, FigureSpec("BoxByArm", log_scale=True))
    row = fig.csv.splitlines()[1].split(",")
    assert row[:2] == ["Screening", "1"]
    assert float(row[4]) == pytest.approx(np.median(np.log10(data[("Screening", 1)])))


def test_bad_kind():
    with pytest.raises(ValidationError):
        FigureSpec("Pie")


def toy_path(k):
    lam = np.geomspace(1.0, 0.01, k)
    mc = 0.55 + 0.1 * np.sin(np.linspace(0, 3, k))
    return LassoPath(("a",), lam, np.zeros((k, 1)), np.zeros((k, 1)), np.arange(k), np.zeros(k), np.ones(1, bool),
                     np.ones(1), mc, np.full(k, 0.02), float(lam[np.argmax(mc)]))


def test_cvpath_marks_optimum_and_annotates_every_lambda():
    path = toy_path(12)
    fig = render_cvpath(path)
    rows = [r.split(",") for r in fig.csv.splitlines()[1:]]
    assert len(rows) == 12 == fig.meta["n_annotations"]
    assert [int(r[-1]) for r in rows].index(1) == int(np.argmax(path.mean_c))
    parse(fig.svg)


def test_single_lambda_path_has_one_point():
    fig = render_cvpath(toy_path(1))
    root = parse(fig.svg)
    assert len(root.findall(f".//{SVG}circle")) == 1
    assert not root.findall(f".//{SVG}polyline")


def test_cindex_bars_pass_through_ci():
    vals = [0.6073, 0.6171, 0.6204, 0.6415]
    ests = [CIndexEstimate(v, v, 0.02, (v - 0.04, v + 0.04), 1000) for v in vals]
    labels = ["Screening+C", "+Week 8", "+Week 16", "+Week 24"]
    fig = render_cindex_bars(ests, labels)
    rows = [r.split(",") for r in fig.csv.splitlines()[1:]]
    assert [float(r[4]) for r in rows] == [e.ci95[0] for e in ests]
    assert [float(r[5]) for r in rows] == [e.ci95[1] for e in ests]
    assert len(parse(fig.svg).findall(f".//{SVG}rect")) >= 4
    one = render_cindex_bars(ests[:1], labels[:1])
    assert len(one.csv.splitlines()) == 2
    with pytest.raises(ValidationError):
        render_cindex_bars(ests, labels[:2])


def test_importance_bars_order():
    t = ImportanceTable({"b": 9, "a": 3}, {"b": {"x": 9}, "a": {"x": 3}}, (2, 3), ("x",))
    fig = render_importance(t)
    assert [r.split(",")[0] for r in fig.csv.splitlines()[1:]] == ["b", "a"]


def fake_fit(draws):
    draws = np.asarray(draws, dtype=float).reshape(len(draws), -1)
    names = tuple(f"p{j}" for j in range(draws.shape[1]))
    return SimpleNamespace(param_names=names, config=SimpleNamespace(burn_in=100, thin=10),
                           column=lambda n: draws[:, names.index(n)])


def test_trace_files_and_single_draw(tmp_path):
    fit = fake_fit(np.random.default_rng(1).normal(size=(50, 3)))
    paths = render_traces(fit, tmp_path)
    assert len(paths) == 3 == len(list(tmp_path.glob("*.svg")))
    again = render_traces(fit, tmp_path / "b")
    assert [p.read_bytes() for p in paths] == [p.read_bytes() for p in again]
    one = render_trace(fake_fit([[1.0]]), "p0")
    root = parse(one.svg)
    assert len(root.findall(f".//{SVG}circle")) == 1 and not root.findall(f".//{SVG}polyline")
