from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import breslow_nll, brute_cindex

from longirad.errors import NoEventsError, UndefinedConcordanceError
from longirad.survival import (
    LassoConfig, as_design, bootstrap_cindex_ci, compare_cindex_z, concordance_counts, cox_hessian, cox_nll,
    cv_cindex_path, fit_cox, fit_cox_lasso_path, harrell_cindex, lambda_max, lasso_kkt_check,
)


def cox_data(seed, n=60, p=4, ties=False):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    beta = np.r_[0.8, -0.5, np.zeros(p - 2)]
    T = rng.exponential(np.exp(-X @ beta))
    C = rng.exponential(2.0, n)
    y = np.minimum(T, C)
    if ties:
        y = np.ceil(y * 4) / 4
    return as_design(X, y, (T <= C).astype(int))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_nll_matches_loop_oracle(seed, ties):
    d = cox_data(seed, ties=ties)
    theta = np.random.default_rng(seed).normal(0, 0.5, d.X.shape[1])
    assert cox_nll(d, theta)[0] == pytest.approx(breslow_nll(d.X, d.time, d.event, theta), rel=1e-10)


def test_gradient_and_hessian_by_differences():
    d = cox_data(1, ties=True)
    th = np.array([0.2, -0.3, 0.1, 0.05])
    h = 1e-6
    E = np.eye(4)
    fd = np.array([(cox_nll(d, th + h * E[j])[0] - cox_nll(d, th - h * E[j])[0]) / (2 * h) for j in range(4)])
    assert np.abs(fd - cox_nll(d, th)[1]).max() < 1e-6
    fdh = np.array([(cox_nll(d, th + h * E[j])[1] - cox_nll(d, th - h * E[j])[1]) / (2 * h) for j in range(4)])
    assert np.abs(fdh - cox_hessian(d, th)).max() < 1e-6


def test_fit_matches_statsmodels():
    sm = pytest.importorskip("statsmodels.duration.hazard_regression")
    d = cox_data(3, n=150, ties=True)
    ours = fit_cox(d)
    ref = sm.PHReg(d.time, d.X, status=d.event, ties="breslow").fit()
    assert np.allclose(ours.theta, ref.params, atol=1e-6)
    assert np.allclose(ours.se, ref.bse, rtol=1e-4)


def test_no_events_raises():
    d = as_design(np.ones((5, 1)), np.arange(1.0, 6), np.zeros(5, int))
    with pytest.raises(NoEventsError):
        cox_nll(d, [0.0])


def test_lasso_small_lambda_reaches_newton():
    d = cox_data(2)
    path = fit_cox_lasso_path(d, lambdas=np.r_[np.geomspace(1, 1e-3, 30), 1e-10])
    assert np.abs(path.coefs[-1] - fit_cox(d).theta).max() < 1e-4


def test_lasso_lambda_max_zeroes_penalized():
    d = cox_data(4)
    free = ("x:f1",)
    lm = lambda_max(d, free)
    path = fit_cox_lasso_path(d, LassoConfig(penalty_free_set=free), lambdas=[lm * 1.5, lm, lm * 0.9])
    pen = np.array([c not in free for c in d.columns])
    assert np.all(path.coefs[:2, pen] == 0)
    assert np.any(path.coefs[2, pen] != 0)
    assert path.coefs[0, ~pen][0] != 0


def test_kkt_along_default_path():
    d = cox_data(5, n=100, p=8)
    path = fit_cox_lasso_path(d)
    assert lasso_kkt_check(d, path).max() < 1e-6


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 40), st.integers(0, 10_000))
def test_cindex_matches_pairwise(n, seed):
    rng = np.random.default_rng(seed)
    risk = rng.integers(0, 4, n).astype(float)
    time = rng.integers(1, 6, n).astype(float)
    event = rng.integers(0, 2, n)
    if concordance_counts(risk, time, event)[2] == 0:
        with pytest.raises(UndefinedConcordanceError):
            harrell_cindex(risk, time, event)
        return
    assert harrell_cindex(risk, time, event) == brute_cindex(risk, time, event)


def test_cindex_invariant_to_monotone_risk_transform():
    rng = np.random.default_rng(0)
    r, t, e = rng.normal(size=50), rng.exponential(size=50), rng.integers(0, 2, 50)
    assert harrell_cindex(r, t, e) == harrell_cindex(np.exp(3 * r) + 1, t, e)
    assert harrell_cindex(-r, t, e) == pytest.approx(1 - harrell_cindex(r, t, e))


def test_bootstrap_is_seeded_and_formula_holds():
    d = cox_data(6, n=80)
    risk = d.X[:, 0]
    a = bootstrap_cindex_ci(risk, d, B=200, seed=9)
    b = bootstrap_cindex_ci(risk, d, B=200, seed=9)
    assert a == b
    assert a.ci95[0] == pytest.approx(a.mean_boot - 1.96 * a.se_boot)
    assert a.ci95[1] == pytest.approx(a.mean_boot + 1.96 * a.se_boot)


def test_paired_z_is_antisymmetric():
    d = cox_data(7, n=80)
    za = compare_cindex_z(d.X[:, 0], d.X[:, 1], d, B=200, seed=1)
    zb = compare_cindex_z(d.X[:, 1], d.X[:, 0], d, B=200, seed=1)
    assert za.z == pytest.approx(-zb.z)
    assert za.p_two_sided == pytest.approx(zb.p_two_sided)


def test_cv_path_independent_of_threads():
    d = cox_data(8, n=90, p=6)
    cfg = LassoConfig(n_lambda=20)
    serial = cv_cindex_path(d, cfg, folds=3, seed=2)
    with ThreadPoolExecutor(3) as ex:
        threaded = cv_cindex_path(d, cfg, folds=3, seed=2, executor=ex)
    assert np.array_equal(serial.mean_c, threaded.mean_c)
    assert np.array_equal(serial.coefs, threaded.coefs)
    assert serial.lambda_opt == threaded.lambda_opt


def test_binary_covariate_matches_one_dimensional_search():
    from scipy.optimize import minimize_scalar

    x = np.array([0, 1, 1, 0, 1, 0, 0, 1], dtype=float)
    time = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
    event = np.array([1, 1, 1, 0, 1, 1, 1, 0])
    d = as_design(x[:, None], time, event)
    best = minimize_scalar(lambda b: breslow_nll(x[:, None], time, event, np.array([b])), bracket=(-1, 1),
                           tol=1e-12)
    assert fit_cox(d).theta[0] == pytest.approx(best.x, abs=1e-6)


def test_null_breslow_jumps():
    from longirad.survival import CoxCoefficients, breslow_baseline_hazard

    n = 9
    rng = np.random.default_rng(4)
    d = as_design(rng.normal(size=(n, 2)), rng.permutation(np.arange(1.0, n + 1)), np.ones(n, int))
    step = breslow_baseline_hazard(CoxCoefficients(d.columns, np.zeros(2)), d)
    assert np.allclose(step.jumps, [1 / (n - k + 1) for k in range(1, n + 1)], rtol=0, atol=1e-15)


def test_pure_noise_cv_cindex_stays_near_half():
    inside = 0
    for r in range(200):
        rng = np.random.default_rng(r)
        n = 200
        T, C = rng.exponential(1.0, n), rng.exponential(1.5, n)
        d = as_design(rng.normal(size=(n, 5)), np.minimum(T, C), (T <= C).astype(int))
        path = cv_cindex_path(d, LassoConfig(n_lambda=10), folds=5, seed=r)
        inside += 0.4 <= path.mean_c[path.opt_index] <= 0.6
    assert inside >= 190


def test_strong_covariate_survives_selection():
    rng = np.random.default_rng(8)
    n = 200
    X = rng.normal(size=(n, 6))
    T, C = rng.exponential(np.exp(-np.log(3) * X[:, 2])), rng.exponential(2.0, n)
    path = cv_cindex_path(as_design(X, np.minimum(T, C), (T <= C).astype(int)), LassoConfig(n_lambda=20), seed=1)
    assert path.selected().theta[2] > 0


def test_paired_z_detects_signal_over_noise():
    from longirad.survival import CoxCoefficients

    hits = 0
    for r in range(100):
        rng = np.random.default_rng(r)
        n = 200
        X = rng.normal(size=(n, 2))
        T, C = rng.exponential(np.exp(-np.log(3) * X[:, 0])), rng.exponential(2.0, n)
        d = as_design(X, np.minimum(T, C), (T <= C).astype(int))
        strong, noise = CoxCoefficients(d.columns, np.array([1.0, 0.0])), CoxCoefficients(d.columns, np.array([0.0, 1.0]))
        hits += compare_cindex_z(strong, noise, d, B=300, seed=r).p_two_sided < 0.05
    assert hits >= 90
