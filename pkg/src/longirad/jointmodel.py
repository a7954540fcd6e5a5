"""Bayesian joint model of longitudinal radiomic features and progression.

Longitudinal part, per feature l (after an optional log transform)::

    y_ij = [1, x_i, arm_i, N(t_ij), arm_i N(t_ij)] beta_l + b_il + e_ij,
    e_ij ~ N(0, sigma2_l),  b_i ~ N_L(0, Sigma)

with N a natural cubic spline basis (df=2). Survival part is a
discrete-time logit hazard on person-periods (scan grid, then 56-day steps)::

    logit(lambda_ik) = [1, x_i, arm_i, H(g_k)] psi + sum_l alpha_l yhat_il(g_k)

where yhat is the current longitudinal mean including b_i, evaluated at
the interval end clamped to the last scan day. Sampling is
Metropolis-within-Gibbs; see :func:`fit_joint_mcmc`.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import interpolate, special

from .cohortmodel import DEMOGRAPHIC_NAMES, fmt
from .errors import SamplerDivergenceError, ValidationError

log = logging.getLogger(__name__)

SCAN_DAYS = (0.0, 56.0, 112.0, 168.0)
GRID_STEP = 56.0
DIVERGENCE_LIMIT = 1e6

MODEL_PRESETS = {
    "model1": (("shape2D_Elongation", "identity"), ("shape2D_MeshSurface", "log"), ("shape2D_MinorAxisLength", "log")),
    "model2": (("firstorder_TotalEnergy", "identity"), ("firstorder_Mean", "identity"), ("firstorder_Kurtosis", "identity")),
    "model3": (("shape2D_MaximumDiameter", "log"), ("shape2D_MajorAxisLength", "log"), ("shape2D_MinorAxisLength", "log")),
}


# ---------------------------------------------------------------------------
# natural spline basis


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """Natural cubic spline basis without intercept, as produced by R's ``ns``.

    B-splines on the boundary and interior knots are projected onto the null
    space of the boundary second-derivative constraints; beyond the boundary
    knots the basis continues linearly.
    """

    boundary: tuple[float, float]
    interior: tuple[float, ...]
    df: int
    projection: np.ndarray  # (n_bspline - 1, df)

    @property
    def knots(self) -> np.ndarray:
        a, b = self.boundary
        return np.r_[[a] * 4, self.interior, [b] * 4]

    def _bspline(self, x: np.ndarray, deriv: int = 0) -> np.ndarray:
        t = self.knots
        k = len(t) - 4
        spl = interpolate.BSpline(t, np.eye(k), 3, extrapolate=True)
        if deriv:
            spl = spl.derivative(deriv)
        return spl(x)[:, 1:]

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        a, b = self.boundary
        inside = np.clip(x, a, b)
        out = self._bspline(inside) @ self.projection
        lo, hi = x < a, x > b
        if lo.any() or hi.any():
            ends = np.array([a, b])
            val = self._bspline(ends) @ self.projection
            slope = self._bspline(ends, 1) @ self.projection
            out[lo] = val[0] + (x[lo] - a)[:, None] * slope[0]
            out[hi] = val[1] + (x[hi] - b)[:, None] * slope[1]
        return out

    def derivative(self, x, order: int = 1) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        a, b = self.boundary
        d = self._bspline(np.clip(x, a, b), order) @ self.projection
        if order >= 2:
            d[(x < a) | (x > b)] = 0.0
        return d

    def to_dict(self) -> dict:
        return {"boundary": list(self.boundary), "interior": list(self.interior), "df": self.df}


def natural_spline_basis(times, df: int = 2) -> SplineBasis:
    """Fit knots to ``times``: boundaries at the extremes, ``df - 1`` interior
    knots at evenly spaced quantiles (the median for df=2)."""
    times = np.asarray(times, dtype=float).ravel()
    if df < 1:
        raise ValidationError("df must be at least 1")
    if times.size < 2 or np.unique(times).size < 2:
        raise ValidationError("natural spline needs at least two distinct times")
    a, b = float(times.min()), float(times.max())
    probs = np.linspace(0, 1, df + 1)[1:-1]
    interior = tuple(float(q) for q in np.quantile(times, probs))
    basis = SplineBasis((a, b), interior, df, np.zeros((0, 0)))
    const = basis._bspline(np.array([a, b]), 2)  # (2, n_bspline - 1)
    q, _ = np.linalg.qr(const.T, mode="complete")
    return SplineBasis((a, b), interior, df, q[:, 2:])


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    transform: str = "identity"  # or "log"

    def __post_init__(self):
        if self.transform not in ("identity", "log"):
            raise ValidationError(f"unknown transform {self.transform!r}")

    @property
    def label(self) -> str:
        return f"log({self.name})" if self.transform == "log" else self.name


@dataclass(frozen=True, eq=False)
class JointData:
    """Patient-level covariates/outcomes plus long-format feature observations."""

    patient_ids: tuple[str, ...]
    covariates: np.ndarray  # (n, q), time-invariant, arm excluded
    covariate_names: tuple[str, ...]
    arm: np.ndarray  # (n,)
    time: np.ndarray  # (n,) days
    event: np.ndarray  # (n,)
    obs_patient: np.ndarray  # (m,) row index into patients
    obs_time: np.ndarray  # (m,) days
    Y: np.ndarray  # (m, L) raw feature values
    feature_names: tuple[str, ...]

    def __post_init__(self):
        n = len(self.patient_ids)
        if self.covariates.shape[0] != n or self.arm.shape != (n,) or self.time.shape != (n,) or self.event.shape != (n,):
            raise ValidationError("patient-level arrays disagree in length")
        if self.Y.ndim != 2 or self.Y.shape[0] != self.obs_patient.size or self.Y.shape[1] != len(self.feature_names):
            raise ValidationError("observation matrix has the wrong shape")
        if not np.all(np.isfinite(self.Y)):
            raise ValidationError("observation matrix contains non-finite values")
        counts = np.bincount(self.obs_patient, minlength=n)
        if np.any(counts == 0):
            missing = [self.patient_ids[i] for i in np.flatnonzero(counts == 0)]
            raise ValidationError(f"patients without longitudinal observations: {missing[:5]}")

    @property
    def n(self) -> int:
        return len(self.patient_ids)

    def select(self, features: Sequence[FeatureSpec]) -> tuple[np.ndarray, tuple[str, ...]]:
        """Transformed response matrix for ``features``."""
        index = {f: j for j, f in enumerate(self.feature_names)}
        cols, labels = [], []
        for spec in features:
            if spec.name not in index:
                raise ValidationError(f"feature {spec.name!r} not in the data")
            y = self.Y[:, index[spec.name]]
            if spec.transform == "log":
                if np.any(y <= 0):
                    raise ValidationError(f"log transform needs strictly positive {spec.name}")
                y = np.log(y)
            cols.append(y)
            labels.append(spec.label)
        return np.column_stack(cols), tuple(labels)


def joint_data_from_features(cohort, lesion_features, feature_names: Sequence[str] | None = None) -> JointData:
    """Patient-mean feature trajectories plus demographics and outcomes.

    Only ``feature_names`` (default all) are kept. Scans after a patient's
    event or censoring time, and scans with a degenerate kept feature, are
    dropped. Covariates are the demographics other than arm.
    """
    from .cohortmodel import Timepoint, aggregate_patient_features

    cov_names = tuple(n for n in DEMOGRAPHIC_NAMES if n != "ARM")
    pids, cov, arm, time, event = [], [], [], [], []
    op, ot, Y = [], [], []
    names = None
    for pid in cohort.patients:
        fnames, agg = aggregate_patient_features(lesion_features, pid)
        if Timepoint.SCREENING not in agg or pid not in cohort.demographics or pid not in cohort.outcomes:
            continue
        if names is None:
            names = fnames
            keep = list(range(len(names))) if feature_names is None else [names.index(f) for f in feature_names if f in names]
            if feature_names is not None and len(keep) != len(feature_names):
                raise ValidationError(f"features not found: {sorted(set(feature_names) - set(names))}")
        elif fnames != names:
            raise ValidationError(f"patient {pid}: feature naming differs from other patients")
        out = cohort.outcomes[pid]
        rows = [(tp, v[keep]) for tp, v in sorted(agg.items()) if tp.days <= out.time and np.all(np.isfinite(v[keep]))]
        if not rows:
            continue
        i = len(pids)
        pids.append(pid)
        demo = cohort.demographics[pid]
        cov.append([getattr(demo, n) for n in cov_names])
        arm.append(demo.ARM)
        time.append(out.time)
        event.append(out.event)
        for tp, v in rows:
            op.append(i)
            ot.append(tp.days)
            Y.append(v)
    if not pids:
        raise ValidationError("no patient has a usable Screening feature vector")
    return JointData(
        tuple(pids), np.array(cov, dtype=float), cov_names, np.array(arm, dtype=float),
        np.array(time, dtype=float), np.array(event, dtype=float), np.array(op, dtype=int),
        np.array(ot, dtype=float), np.array(Y, dtype=float).reshape(len(op), len(keep)), tuple(names[k] for k in keep),
    )


def person_periods(time, event, scan_days=SCAN_DAYS, step: float = GRID_STEP):
    """Discrete-time risk intervals ``(g_{k-1}, g_k]`` per patient.

    Patients with an event contribute every interval starting before their
    event time, the last one carrying the event. Censored patients contribute
    intervals that end by their censoring time. Returns (patient index,
    interval end, event flag, grid).
    """
    time = np.asarray(time, float)
    event = np.asarray(event).astype(bool)
    grid = list(scan_days)
    while grid[-1] < time.max():
        grid.append(grid[-1] + step)
    grid = np.array(grid)
    pid, end, flag = [], [], []
    for i, (y, e) in enumerate(zip(time, event)):
        for k in range(1, grid.size):
            lo, hi = grid[k - 1], grid[k]
            if e and lo < y:
                last = y <= hi
                pid.append(i)
                end.append(hi)
                flag.append(int(last))
                if last:
                    break
            elif not e and hi <= y:
                pid.append(i)
                end.append(hi)
                flag.append(0)
            else:
                break
    return np.array(pid, int), np.array(end, float), np.array(flag, int), grid


# ---------------------------------------------------------------------------
# config and fit containers


@dataclass(frozen=True)
class JointConfig:
    iterations: int = 20_000
    burn_in: int = 1_000
    thin: int = 10
    seed: int = 0
    prior_sd: float = 10.0
    iw_df: float | None = None  # default L + 2
    ig_shape: float = 0.1
    ig_scale: float = 0.1
    standardize_survival: bool = False
    target_accept: float = 0.25
    adapt_every: int = 50
    fixed: tuple[tuple[str, float], ...] = ()  # survival parameters held at a value

    def validate(self):
        if self.iterations <= self.burn_in:
            raise ValidationError("iterations must exceed burn_in")
        if self.thin < 1 or (self.iterations - self.burn_in) % self.thin:
            raise ValidationError("iterations - burn_in must be a positive multiple of thin")
        if self.prior_sd <= 0 or self.ig_shape <= 0 or self.ig_scale <= 0:
            raise ValidationError("prior parameters must be positive")


@dataclass(frozen=True, eq=False)
class JointModelFit:
    param_names: tuple[str, ...]
    draws: np.ndarray  # (S, P) stored draws
    loglik: np.ndarray  # (S, n) per-patient log-likelihood
    loglik_at_mean: np.ndarray  # (n,) at posterior-mean parameters and random effects
    b_mean: np.ndarray  # (n, L)
    features: tuple[FeatureSpec, ...]
    covariate_names: tuple[str, ...]
    config: JointConfig
    acceptance: dict[str, float]
    spline: SplineBasis
    hazard_spline: SplineBasis | None
    survival_scale: np.ndarray | None = None
    loglik_surv: np.ndarray | None = None  # (S, n) survival part only
    loglik_surv_at_mean: np.ndarray | None = None

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.param_names.index(name)]

    @property
    def L(self) -> int:
        return len(self.features)


# ---------------------------------------------------------------------------
# sampler


def _long_design(cov: np.ndarray, arm: np.ndarray, N: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(len(arm)), cov, arm, N, arm[:, None] * N])


def _sample_iw(rng, df: float, scale: np.ndarray) -> np.ndarray:
    """Inverse-Wishart(df, scale) draw via the Bartlett decomposition."""
    p = scale.shape[0]
    if p == 1:
        return np.array([[scale[0, 0] / rng.chisquare(df)]])
    C = np.linalg.cholesky(np.linalg.inv(scale))
    A = np.zeros((p, p))
    A[np.diag_indices(p)] = np.sqrt(rng.chisquare(df - np.arange(p)))
    A[np.tril_indices(p, -1)] = rng.standard_normal(p * (p - 1) // 2)
    CA = C @ A
    return np.linalg.inv(CA @ CA.T)


def _bern_ll(eta: np.ndarray, e: np.ndarray) -> np.ndarray:
    return e * eta - np.logaddexp(0.0, eta)


class _Model:
    """Fixed arrays for one dataset and feature selection."""

    def __init__(self, data: JointData, features: Sequence[FeatureSpec], cfg: JointConfig):
        self.features = tuple(features)
        self.Yt, self.labels = data.select(self.features)
        self.n, self.L = data.n, len(self.features)
        self.m = self.Yt.shape[0]
        self.op = data.obs_patient
        self.spline = natural_spline_basis(data.obs_time, 2)
        cov = np.asarray(data.covariates, float)
        arm = np.asarray(data.arm, float)
        self.X = _long_design(cov[self.op], arm[self.op], self.spline(data.obs_time))
        self.P = self.X.shape[1]
        self.XtX = self.X.T @ self.X
        self.n_obs = np.bincount(self.op, minlength=self.n).astype(float)
        # subject-level columns (intercept, covariates, arm) trade off against b
        self.Xs = np.column_stack([np.ones(self.n), cov, arm])
        self.XsX = self.Xs.T @ self.Xs

        pp_pat, pp_end, pp_ev, grid = person_periods(data.time, data.event)
        if pp_pat.size == 0:
            raise ValidationError("no person-periods at risk")
        self.pp_pat, self.pp_ev = pp_pat, pp_ev.astype(float)
        t_clamped = np.minimum(pp_end, self.spline.boundary[1])
        self.Xpp = _long_design(cov[pp_pat], arm[pp_pat], self.spline(t_clamped))
        scov = cov
        self.survival_scale = None
        if cfg.standardize_survival and cov.shape[1]:
            mu, sd = cov.mean(axis=0), cov.std(axis=0)
            sd[sd == 0] = 1.0
            scov = (cov - mu) / sd
            self.survival_scale = np.vstack([mu, sd])
        if np.unique(pp_end).size >= 2:
            self.hspline = natural_spline_basis(pp_end, 2)
            H = self.hspline(pp_end)
        else:
            self.hspline = None
            H = np.zeros((pp_end.size, 0))
        self.Xh = np.column_stack([np.ones(pp_end.size), scov[pp_pat], arm[pp_pat], H])
        self.K = self.Xh.shape[1]
        self.psi_names = (
            ["surv:(Intercept)"] + [f"surv:{c}" for c in data.covariate_names] + ["surv:ARM"]
            + [f"surv:ns(t)[{j + 1}]" for j in range(H.shape[1])]
            + [f"alpha:{lab}" for lab in self.labels]
        )
        long_terms = (["(Intercept)"] + list(data.covariate_names) + ["ARM", "ns(t)[1]", "ns(t)[2]",
                      "ARM:ns(t)[1]", "ARM:ns(t)[2]"])
        self.long_names = [f"long[{lab}]:{t}" for lab in self.labels for t in long_terms]
        self.var_names = [f"sigma2[{lab}]" for lab in self.labels]
        self.sigma_names = [f"Sigma[{self.labels[a]},{self.labels[b]}]" for a in range(self.L) for b in range(a, self.L)]
        self.param_names = tuple(self.long_names + self.var_names + self.sigma_names + self.psi_names)

    def yhat_pp(self, B: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self.Xpp @ B + b[self.pp_pat]

    def eta(self, psi: np.ndarray, yhat: np.ndarray) -> np.ndarray:
        return self.Xh @ psi[: self.K] + yhat @ psi[self.K :]

    def surv_by_patient(self, eta: np.ndarray) -> np.ndarray:
        return np.bincount(self.pp_pat, weights=_bern_ll(eta, self.pp_ev), minlength=self.n)

    def long_by_patient(self, B, b, s2) -> np.ndarray:
        mu = self.X @ B + b[self.op]
        r = self.Yt - mu
        ll = -0.5 * (np.log(2 * np.pi * s2) + r**2 / s2)
        return np.bincount(self.op, weights=ll.sum(axis=1), minlength=self.n)


def _laplace_survival(model: _Model, yhat: np.ndarray, prior_var: float, free: np.ndarray):
    """Posterior mode and covariance of the survival block with yhat held fixed."""
    D = np.column_stack([model.Xh, yhat])[:, free]
    psi = np.zeros(D.shape[1])
    for _ in range(100):
        eta = D @ psi
        p = special.expit(eta)
        g = D.T @ (model.pp_ev - p) - psi / prior_var
        H = (D * (p * (1 - p))[:, None]).T @ D + np.eye(D.shape[1]) / prior_var
        step = np.linalg.solve(H, g)
        psi = psi + step
        if np.max(np.abs(step)) < 1e-10:
            break
    return psi, np.linalg.inv(H)


def fit_joint_mcmc(data: JointData, features: Sequence[FeatureSpec | tuple], cfg: JointConfig = JointConfig()) -> JointModelFit:
    """Metropolis-within-Gibbs sampler for the joint model.

    Per iteration: (1) each feature's fixed effects are proposed from their
    Gaussian mixed-model conditional and accepted on the survival likelihood
    ratio; (2) each patient's random-effect vector likewise, followed by a
    joint shift of the subject-level coefficients against the random effects
    that leaves every likelihood term unchanged; (3) Sigma from
    its inverse-Wishart conditional; (4) each sigma2 from its inverse-gamma
    conditional; (5) survival and association coefficients by random-walk
    Metropolis with a Laplace-based proposal whose scale adapts during
    burn-in only. Deterministic given ``cfg.seed``.
    """
    cfg.validate()
    features = tuple(f if isinstance(f, FeatureSpec) else FeatureSpec(*f) for f in features)
    if not features:
        raise ValidationError("at least one longitudinal feature is required")
    M = _Model(data, features, cfg)
    rng = np.random.default_rng(cfg.seed)
    n, L, P, K = M.n, M.L, M.P, M.K
    prior_prec = 1.0 / cfg.prior_sd**2
    nu0 = float(L + 2 if cfg.iw_df is None else cfg.iw_df)
    psi0 = np.eye(L)

    fixed = dict(cfg.fixed)
    unknown = set(fixed) - set(M.psi_names)
    if unknown:
        raise ValidationError(f"cannot fix unknown survival parameters {sorted(unknown)}")
    free = np.array([nm not in fixed for nm in M.psi_names])

    # initial values: least squares, shrunken residual means, Laplace survival fit
    B = np.linalg.lstsq(M.X, M.Yt, rcond=None)[0]
    resid = M.Yt - M.X @ B
    rbar = np.array([np.bincount(M.op, weights=resid[:, l], minlength=n) for l in range(L)]).T / M.n_obs[:, None]
    s2 = np.maximum(resid.var(axis=0), 1e-8)
    b = rbar * 0.5
    Sigma = np.cov(b, rowvar=False).reshape(L, L) + 1e-3 * np.eye(L)
    yhat = M.yhat_pp(B, b)
    psi = np.array([fixed.get(nm, 0.0) for nm in M.psi_names])
    mode, cov = _laplace_survival(M, yhat, cfg.prior_sd**2, free)
    psi[free] = mode
    chol_prop = np.linalg.cholesky(cov + 1e-12 * np.eye(cov.shape[0]))
    dim = int(free.sum())
    log_scale = np.log(2.38 / np.sqrt(max(dim, 1)))

    eta = M.eta(psi, yhat)
    surv_i = M.surv_by_patient(eta)

    S = (cfg.iterations - cfg.burn_in) // cfg.thin
    draws = np.empty((S, len(M.param_names)))
    loglik = np.empty((S, n))
    loglik_surv = np.empty((S, n))
    b_sum = np.zeros((n, L))
    acc = {"long": 0, "b": 0, "psi": 0, "Sigma_rejected": 0}
    window = 0
    tri = np.triu_indices(L)
    stored = 0

    for it in range(1, cfg.iterations + 1):
        # (1) fixed effects per feature
        for l in range(L):
            r = M.Yt[:, l] - b[M.op, l]
            Q = M.XtX / s2[l] + prior_prec * np.eye(P)
            Ci = np.linalg.inv(np.linalg.cholesky(Q))
            # mean Q^-1 X'r/s2 plus noise with covariance Q^-1
            prop = Ci.T @ (Ci @ (M.X.T @ r / s2[l]) + rng.standard_normal(P))
            a_l = psi[K + l]
            if a_l == 0.0:
                B[:, l] = prop
                acc["long"] += 1
                continue
            eta_new = eta + a_l * (M.Xpp @ (prop - B[:, l]))
            new_i = M.surv_by_patient(eta_new)
            if np.log(rng.uniform()) < new_i.sum() - surv_i.sum():
                B[:, l] = prop
                eta, surv_i = eta_new, new_i
                acc["long"] += 1

        # (2) random effects, all patients in parallel
        Sinv = np.linalg.inv(Sigma)
        fitted = M.X @ B
        rsum = np.array([np.bincount(M.op, weights=M.Yt[:, l] - fitted[:, l], minlength=n) for l in range(L)]).T
        z = rng.standard_normal((n, L))
        if L == 1:
            prec1 = Sinv[0, 0] + M.n_obs / s2[0]
            b_prop = (rsum[:, 0] / s2[0] / prec1 + z[:, 0] / np.sqrt(prec1))[:, None]
        else:
            prec = np.broadcast_to(Sinv, (n, L, L)).copy()
            prec[:, np.arange(L), np.arange(L)] += M.n_obs[:, None] / s2
            Cb = np.linalg.cholesky(prec)
            mean_b = np.linalg.solve(prec, (rsum / s2)[:, :, None])[:, :, 0]
            b_prop = mean_b + np.linalg.solve(np.swapaxes(Cb, 1, 2), z[:, :, None])[:, :, 0]
        alpha = psi[K:]
        eta_new = eta + (b_prop - b)[M.pp_pat] @ alpha
        new_i = M.surv_by_patient(eta_new)
        u = np.log(rng.uniform(size=n))
        take = u < new_i - surv_i
        delta = np.where(take[:, None], b_prop - b, 0.0)
        b = b + delta
        eta = eta + delta[M.pp_pat] @ alpha
        surv_i = np.where(take, new_i, surv_i)
        acc["b"] += int(take.sum())

        # (2b) shift subject-level coefficients by D and b by -Xs D; both
        # likelihoods are unchanged, so D is drawn from its Gaussian conditional
        p0 = M.Xs.shape[1]
        Qd = np.kron(Sinv, M.XsX) + prior_prec * np.eye(p0 * L)
        hd = (M.Xs.T @ b @ Sinv).ravel(order="F") - prior_prec * B[:p0].ravel(order="F")
        Cd = np.linalg.cholesky(Qd)
        d = np.linalg.solve(Qd, hd) + np.linalg.solve(Cd.T, rng.standard_normal(p0 * L))
        D = d.reshape(p0, L, order="F")
        B[:p0] += D
        b = b - M.Xs @ D

        # (3) Sigma | b
        Sig_new = _sample_iw(rng, nu0 + n, psi0 + b.T @ b)
        try:
            np.linalg.cholesky(Sig_new)
            Sigma = Sig_new
        except np.linalg.LinAlgError:
            acc["Sigma_rejected"] += 1

        # (4) sigma2 | rest
        mu = fitted + b[M.op]
        ssr = ((M.Yt - mu) ** 2).sum(axis=0)
        s2 = (cfg.ig_scale + 0.5 * ssr) / rng.gamma(cfg.ig_shape + 0.5 * M.m, 1.0, size=L)

        # (5) survival and association block
        step = np.zeros(psi.size)
        step[free] = np.exp(log_scale) * (chol_prop @ rng.standard_normal(dim))
        psi_new = psi + step
        yhat = M.yhat_pp(B, b)
        eta_new = M.eta(psi_new, yhat)
        new_i = M.surv_by_patient(eta_new)
        lp = new_i.sum() - surv_i.sum() - 0.5 * prior_prec * (psi_new[free] @ psi_new[free] - psi[free] @ psi[free])
        if np.log(rng.uniform()) < lp:
            psi, eta, surv_i = psi_new, eta_new, new_i
            acc["psi"] += 1
            window += 1
        if it <= cfg.burn_in and it % cfg.adapt_every == 0:
            log_scale += (window / cfg.adapt_every - cfg.target_accept) * 2.0 / np.sqrt(it / cfg.adapt_every)
            window = 0
        if it == cfg.burn_in:
            acc = {k: 0 for k in acc}

        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            row = np.concatenate([B.T.ravel(), s2, Sigma[tri], psi])
            if not np.all(np.isfinite(row)) or np.max(np.abs(row)) > DIVERGENCE_LIMIT:
                raise SamplerDivergenceError(f"chain diverged at iteration {it}")
            draws[stored] = row
            loglik_surv[stored] = surv_i
            loglik[stored] = M.long_by_patient(B, b, s2) + surv_i
            b_sum += b
            stored += 1

    kept = cfg.iterations - cfg.burn_in
    acceptance = {
        "long": acc["long"] / (kept * L),
        "b": acc["b"] / (kept * n),
        "psi": acc["psi"] / kept,
        "Sigma_rejected": acc["Sigma_rejected"] / kept,
    }
    b_mean = b_sum / S
    # log-likelihood at posterior means
    mean = draws.mean(axis=0)
    Bm = mean[: P * L].reshape(L, P).T
    s2m = mean[P * L : P * L + L]
    psim = mean[-psi.size :]
    surv_mean = M.surv_by_patient(M.eta(psim, M.yhat_pp(Bm, b_mean)))
    ll_mean = M.long_by_patient(Bm, b_mean, s2m) + surv_mean
    return JointModelFit(
        M.param_names, draws, loglik, ll_mean, b_mean, features, tuple(data.covariate_names), cfg, acceptance,
        M.spline, M.hspline, M.survival_scale, loglik_surv, surv_mean,
    )


# ---------------------------------------------------------------------------
# summaries, fit criteria, diagnostics


@dataclass(frozen=True)
class ParameterSummary:
    name: str
    mean: float
    sd: float
    lower: float
    upper: float
    p: float


def summarize_draws(names: Sequence[str], draws: np.ndarray) -> list[ParameterSummary]:
    draws = np.asarray(draws, dtype=float)
    if draws.shape[0] < 100:
        raise ValidationError(f"need at least 100 stored draws, got {draws.shape[0]}")
    out = []
    for j, name in enumerate(names):
        c = draws[:, j]
        lo, hi = np.quantile(c, [0.025, 0.975])
        p = 2.0 * min(np.mean(c > 0), np.mean(c < 0))
        out.append(ParameterSummary(name, float(c.mean()), float(c.std(ddof=1)), float(lo), float(hi), float(min(p, 1.0))))
    return out


def summarize_fit(fit: JointModelFit) -> list[ParameterSummary]:
    """Mean, SD, 2.5%/97.5% quantiles and two-sided tail probability per parameter."""
    return summarize_draws(fit.param_names, fit.draws)


def summary_csv(rows: Sequence[ParameterSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("parameter", "mean", "sd", "q2.5", "q97.5", "p"))
    for r in rows:
        w.writerow((r.name, fmt(r.mean), fmt(r.sd), fmt(r.lower), fmt(r.upper), fmt(r.p)))
    return buf.getvalue()


@dataclass(frozen=True)
class FitMetrics:
    DIC: float
    pD: float
    WAIC: float
    pWAIC: float
    LPML: float

    def to_dict(self) -> dict:
        return {k: fmt(v) for k, v in asdict(self).items()}


def information_criteria(loglik: np.ndarray, loglik_at_mean: np.ndarray) -> FitMetrics:
    """DIC, WAIC and LPML from an (S, n) matrix of per-unit log-likelihoods."""
    ll = np.asarray(loglik, dtype=float)
    S = ll.shape[0]
    dev = -2.0 * ll.sum(axis=1)
    dbar = float(dev.mean())
    dhat = -2.0 * float(np.sum(loglik_at_mean))
    pd = dbar - dhat
    lppd = float(np.sum(special.logsumexp(ll, axis=0) - np.log(S)))
    p_waic = float(np.sum(ll.var(axis=0, ddof=1))) if S > 1 else 0.0
    log_cpo = -(special.logsumexp(-ll, axis=0) - np.log(S))
    if not np.all(np.isfinite(ll)):
        log.warning("a draw has zero likelihood; LPML is degenerate")
    return FitMetrics(dbar + pd, pd, -2.0 * (lppd - p_waic), p_waic, float(np.sum(log_cpo)))


def fit_metrics(fit: JointModelFit, component: str = "joint") -> FitMetrics:
    """DIC, WAIC and LPML over per-patient log-likelihoods.

    ``component`` selects the joint likelihood or only its survival part,
    the part that stays commensurable across models with different
    longitudinal responses.
    """
    if component == "joint":
        return information_criteria(fit.loglik, fit.loglik_at_mean)
    if component == "survival":
        return information_criteria(fit.loglik_surv, fit.loglik_surv_at_mean)
    raise ValidationError(f"unknown component {component!r}")


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    f = np.fft.rfft(x - x.mean(), n=2 * n)
    return np.fft.irfft(f * np.conj(f))[:n] / n


def split_rhat(chains: np.ndarray) -> float:
    """Split-R-hat for an (m, S) array of chains (each chain halved)."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    half = chains.shape[1] // 2
    parts = np.vstack([chains[:, :half], chains[:, half : 2 * half]])
    n = parts.shape[1]
    W = parts.var(axis=1, ddof=1).mean()
    Bv = n * parts.mean(axis=1).var(ddof=1)
    if W == 0:
        return float("nan")
    var_plus = (n - 1) / n * W + Bv / n
    return float(np.sqrt(var_plus / W))


def effective_sample_size(chains: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial monotone positive sequence."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = chains.shape
    acov = np.array([_autocov(c) for c in chains])
    W = np.mean(acov[:, 0] * n / (n - 1))
    if W == 0:
        return float("nan")
    var_plus = W * (n - 1) / n + (chains.mean(axis=1).var(ddof=1) if m > 1 else 0.0)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # pair sums, truncated at the first negative, made monotone
    pairs = rho[: 2 * (n // 2)].reshape(-1, 2).sum(axis=1)
    k = np.flatnonzero(pairs < 0)
    pairs = pairs[: k[0]] if k.size else pairs
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    return float(m * n / max(tau, 1.0 / np.log10(max(m * n, 10))))


@dataclass(frozen=True)
class TraceDiagnostic:
    name: str
    rhat: float
    ess: float
    degenerate: bool


def trace_diagnostics(fits: JointModelFit | Sequence[JointModelFit]) -> list[TraceDiagnostic]:
    """Split-R-hat and ESS per parameter, pooling chains from several fits."""
    fits = [fits] if isinstance(fits, JointModelFit) else list(fits)
    names = fits[0].param_names
    if any(f.param_names != names for f in fits):
        raise ValidationError("chains disagree on parameter names")
    S = min(f.draws.shape[0] for f in fits)
    if S < 4:
        raise ValidationError("need at least 4 stored draws for split diagnostics")
    out = []
    for j, name in enumerate(names):
        chains = np.array([f.draws[:S, j] for f in fits])
        constant = bool(np.all(chains == chains.flat[0]))
        if constant:
            out.append(TraceDiagnostic(name, float("nan"), float("nan"), True))
            continue
        out.append(TraceDiagnostic(name, split_rhat(chains), effective_sample_size(chains), False))
    return out


# ---------------------------------------------------------------------------
# persistence


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_")


def write_traces(fit: JointModelFit, directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg = fit.config
    iters = cfg.burn_in + cfg.thin * np.arange(1, fit.draws.shape[0] + 1)
    paths = []
    for j, name in enumerate(fit.param_names):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("iteration", "value"))
        for it, v in zip(iters, fit.draws[:, j]):
            w.writerow((int(it), fmt(v)))
        p = directory / f"trace_{_safe(name)}.csv"
        p.write_bytes(buf.getvalue().encode())
        paths.append(p)
    return paths


def _config_dict(cfg: JointConfig) -> dict:
    d = asdict(cfg)
    d["fixed"] = [[k, v] for k, v in cfg.fixed]
    return d


def write_fit(fit: JointModelFit, directory: str | Path) -> None:
    """JSON manifest plus ``draws.npy`` (row = stored draw, columns = ``param_names``)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / "draws.npy", fit.draws)
    np.save(directory / "loglik.npy", fit.loglik)
    np.save(directory / "loglik_surv.npy", fit.loglik_surv)
    np.save(directory / "b_mean.npy", fit.b_mean)
    manifest = {
        "param_names": list(fit.param_names),
        "features": [[f.name, f.transform] for f in fit.features],
        "covariate_names": list(fit.covariate_names),
        "config": _config_dict(fit.config),
        "acceptance": {k: fmt(v) for k, v in fit.acceptance.items()},
        "spline": fit.spline.to_dict(),
        "hazard_spline": None if fit.hazard_spline is None else fit.hazard_spline.to_dict(),
        "loglik_at_mean": [fmt(v) for v in fit.loglik_at_mean],
        "loglik_surv_at_mean": [fmt(v) for v in fit.loglik_surv_at_mean],
        "survival_scale": None if fit.survival_scale is None else fit.survival_scale.tolist(),
        "draw_layout": "rows are stored draws after burn-in, every thin-th iteration; columns follow param_names",
    }
    (directory / "fit.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _spline_from(d: dict | None) -> SplineBasis | None:
    if d is None:
        return None
    a, b = d["boundary"]
    interior = tuple(d["interior"])
    basis = SplineBasis((a, b), interior, int(d["df"]), np.zeros((0, 0)))
    const = basis._bspline(np.array([a, b]), 2)
    q, _ = np.linalg.qr(const.T, mode="complete")
    return SplineBasis((a, b), interior, int(d["df"]), q[:, 2:])


def read_fit(directory: str | Path) -> JointModelFit:
    directory = Path(directory)
    m = json.loads((directory / "fit.json").read_text())
    cfgd = dict(m["config"])
    cfgd["fixed"] = tuple((k, float(v)) for k, v in cfgd.get("fixed", []))
    scale = m.get("survival_scale")
    return JointModelFit(
        tuple(m["param_names"]), np.load(directory / "draws.npy"), np.load(directory / "loglik.npy"),
        np.array([float(v) for v in m["loglik_at_mean"]]), np.load(directory / "b_mean.npy"),
        tuple(FeatureSpec(n, t) for n, t in m["features"]), tuple(m["covariate_names"]), JointConfig(**cfgd),
        {k: float(v) for k, v in m["acceptance"].items()}, _spline_from(m["spline"]), _spline_from(m["hazard_spline"]),
        None if scale is None else np.array(scale),
        np.load(directory / "loglik_surv.npy"), np.array([float(v) for v in m["loglik_surv_at_mean"]]),
    )
