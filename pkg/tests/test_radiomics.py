import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from skimage.feature import graycomatrix

from longirad.radiomics import (
    INTERNAL_FEATURES, FeatureConfig, cooccurrence, delta_features, discretize, firstorder_features, glcm_features,
    read_features, shape2d_features, track_features, write_features,
)


def disk(r, pad=3):
    yy, xx = np.mgrid[-r - pad : r + pad + 1, -r - pad : r + pad + 1]
    return xx**2 + yy**2 <= r * r


def test_disk_shape():
    s = shape2d_features(disk(10)).values
    assert s["shape2D_Elongation"] == pytest.approx(1, abs=0.02)
    assert s["shape2D_MeshSurface"] == pytest.approx(np.pi * 100, rel=0.02)
    assert s["shape2D_MaximumDiameter"] == pytest.approx(20, abs=1)


def test_rectangle_axes():
    r = np.zeros((14, 24), bool)
    r[2:12, 2:22] = True
    s = shape2d_features(r).values
    assert s["shape2D_Elongation"] == pytest.approx(0.5, abs=1e-6)
    assert s["shape2D_PixelSurface"] == 200
    # moment-based axis lengths are 4*sqrt(eigenvalue) with eigenvalues a^2/12
    assert s["shape2D_MajorAxisLength"] == pytest.approx(4 * np.sqrt(400 / 12))


def test_spacing_scales_lengths_and_areas():
    m = disk(7)
    a, b = shape2d_features(m).values, shape2d_features(m, (2.0, 2.0)).values
    for k in ("shape2D_Perimeter", "shape2D_MaximumDiameter", "shape2D_MajorAxisLength"):
        assert b[k] == pytest.approx(2 * a[k])
    assert b["shape2D_MeshSurface"] == pytest.approx(4 * a["shape2D_MeshSurface"])
    assert b["shape2D_Elongation"] == pytest.approx(a["shape2D_Elongation"])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 6), st.integers(0, 6), st.integers(0, 10_000))
def test_translation_invariance(dy, dx, seed):
    rng = np.random.default_rng(seed)
    m = np.zeros((20, 20), bool)
    m[4:12, 5:14] = rng.random((8, 9)) < 0.8
    m[7, 8] = True
    img = rng.normal(100, 40, (20, 20))
    big_m, big_i = np.zeros((30, 30), bool), np.zeros((30, 30))
    big_m[dy : dy + 20, dx : dx + 20] = m
    big_i[dy : dy + 20, dx : dx + 20] = img
    for f in (shape2d_features, lambda mm, ii: firstorder_features(mm, ii), lambda mm, ii: glcm_features(mm, ii)):
        a = f(m, img) if f is not shape2d_features else f(m)
        b = f(big_m, big_i) if f is not shape2d_features else f(big_m)
        assert a.degenerate == b.degenerate
        for k, v in a.values.items():
            assert b.values[k] == pytest.approx(v, rel=1e-9, abs=1e-12, nan_ok=True)


def test_firstorder_small_example():
    f = firstorder_features(np.ones((2, 2), bool), np.array([[1, 2], [3, 4.0]])).values
    assert f["firstorder_Mean"] == 2.5
    assert f["firstorder_Energy"] == 30.0
    assert f["firstorder_Range"] == 3.0
    assert f["firstorder_Variance"] == pytest.approx(1.25)


def test_constant_region_flags_degenerate():
    assert {"firstorder_Skewness", "firstorder_Kurtosis"} <= firstorder_features(
        np.ones((3, 3), bool), np.full((3, 3), 5.0)).degenerate
    g = glcm_features(np.ones((4, 4), bool), np.full((4, 4), 7.0))
    assert g.values["glcm_Contrast"] == 0.0
    assert "glcm_Correlation" in g.degenerate


def test_checkerboard_contrast():
    cb = (np.indices((4, 4)).sum(0) % 2) + 1
    horizontal = glcm_features(np.ones((4, 4), bool), None, levels=cb, directions=[(0, 1)])
    assert horizontal.values["glcm_Contrast"] == 1.0
    both = glcm_features(np.ones((4, 4), bool), None, levels=cb)
    assert both.values["glcm_Contrast"] == 0.5


@settings(max_examples=60, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(2, 8), st.integers(2, 8)), elements=st.integers(1, 5)),
       st.sampled_from([(0, 1), (1, 0), (1, 1), (1, -1)]))
def test_cooccurrence_matches_skimage(levels, offset):
    angle = {(0, 1): 0.0, (1, 0): np.pi / 2, (1, 1): np.pi / 4, (1, -1): 3 * np.pi / 4}[offset]
    # symmetric counts make the sign of the row step irrelevant
    ref = graycomatrix((levels - 1).astype(np.uint8), [1], [angle], levels=5, symmetric=True)[:, :, 0, 0]
    ours = cooccurrence(levels, np.ones(levels.shape, bool), offset, 5)
    assert np.array_equal(ours, ref.astype(float))


def test_single_pixel_lesion_is_flagged_not_fatal():
    from longirad.radiomics import lesion_features

    m = np.zeros((3, 3), bool)
    m[1, 1] = True
    fv = lesion_features(m, np.full((3, 3), 10.0), (1.0, 1.0))
    assert "shape2D_Elongation" in fv.degenerate and np.isnan(fv.values["shape2D_Elongation"])


def test_discretize_fixed_width():
    assert list(discretize(np.array([0.0, 24.9, 25.0, 60.0]), 25.0)) == [1, 1, 2, 3]


def test_delta_ratio_and_zero_baseline():
    out = delta_features(np.array([2.0, 0.0, 4.0]), np.array([3.0, 1.0, 2.0]))
    assert out[0] == 1.5 and out[2] == 0.5 and np.isnan(out[1])


def test_track_features_roundtrip(tmp_path, tiny_cohort, tiny_truth):
    from longirad.correspondence import build_tracks

    feats = track_features(tiny_cohort, build_tracks(tiny_cohort, tiny_truth.transforms), FeatureConfig())
    fv = next(iter(feats.values()))
    assert tuple(fv.values) == INTERNAL_FEATURES
    write_features(feats, tmp_path / "f.csv")
    again = read_features(tmp_path / "f.csv")
    write_features(again, tmp_path / "g.csv")
    assert (tmp_path / "f.csv").read_bytes() == (tmp_path / "g.csv").read_bytes()
