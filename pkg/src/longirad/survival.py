"""Cox proportional-hazards fitting, L1 paths with cross-validated C-index,
Harrell's concordance, bootstrap confidence intervals and paired Z-tests.

The negative log partial likelihood uses the Breslow convention for ties and
is divided by the number of patients ``n``, so penalties ``lambda`` live on
that per-patient scale.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .cohortmodel import DesignMatrix, fmt
from .errors import (
    ConvergenceError,
    CoxDivergenceError,
    NoEventsError,
    SingularInformationError,
    StratificationError,
    UndefinedConcordanceError,
    ValidationError,
)

log = logging.getLogger(__name__)

# block letter in column names -> coefficient block name
BLOCK_NAMES = {"x": "beta", "Z": "gamma", "W": "rho", "V": "alpha", "U": "mu", "T": "arm"}
GRAD_TOL = 1e-9
DIVERGENCE_NORM = 50.0
ROUNDOFF = 8 * np.finfo(float).eps  # accept steps whose loss change is rounding noise


def as_design(X, time, event, columns: Sequence[str] | None = None) -> DesignMatrix:
    """Wrap raw arrays as a :class:`DesignMatrix` with generic column names."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    if columns is None:
        columns = tuple(f"x:f{j}" for j in range(X.shape[1]))
    ids = tuple(f"P{i:04d}" for i in range(X.shape[0]))
    return DesignMatrix(X, tuple(columns), time, event, ids)


class RiskSets:
    """Sorted-time bookkeeping for Breslow risk sets ``{j: y_j >= y_i}``."""

    def __init__(self, time, event):
        time = np.asarray(time, dtype=float)
        event = np.asarray(event).astype(bool)
        if time.shape != event.shape or time.ndim != 1:
            raise ValidationError("time and event must be 1-D arrays of equal length")
        self.n = time.size
        self.order = np.argsort(time, kind="stable")
        ts = time[self.order]
        # first sorted position sharing each sorted time
        first = np.r_[0, np.flatnonzero(np.diff(ts) != 0) + 1]
        group = np.cumsum(np.r_[0, np.diff(ts) != 0])
        self.start = first[group]
        self.event = event[self.order]
        self.n_events = int(self.event.sum())

    def sums(self, w: np.ndarray) -> np.ndarray:
        """Risk-set totals of per-patient weights (sorted order)."""
        rc = np.cumsum(w[::-1], axis=0)[::-1]
        return rc[self.start]


def _prepare(d: DesignMatrix):
    X = np.asarray(d.X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValidationError("design contains non-finite covariates")
    rs = RiskSets(d.time, d.event)
    if rs.n_events == 0:
        raise NoEventsError("no events in the data; the partial likelihood is undefined")
    return X[rs.order], rs


def _nll_sorted(Xs: np.ndarray, rs: RiskSets, theta: np.ndarray, hessian: bool = False):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return _nll_sorted_raw(Xs, rs, theta, hessian)


def _nll_sorted_raw(Xs, rs, theta, hessian):
    # separated or diverging fits underflow some risk sets; callers test finiteness
    n = rs.n
    eta = Xs @ theta if Xs.shape[1] else np.zeros(n)
    shift = eta.max()
    w = np.exp(eta - shift)
    S = rs.sums(w)
    ev = rs.event
    value = -float(np.sum(eta[ev] - shift - np.log(S[ev]))) / n
    WX = rs.sums(w[:, None] * Xs)
    M = WX[ev] / S[ev, None]
    grad = -(Xs[ev].sum(axis=0) - M.sum(axis=0)) / n
    if not hessian:
        return value, grad
    # a_j = w_j * sum over events i with j in R_i of 1/S_i
    inv = np.zeros(n)
    np.add.at(inv, rs.start[ev], 1.0 / S[ev])
    a = w * np.cumsum(inv)
    H = ((Xs * a[:, None]).T @ Xs - M.T @ M) / n
    return value, grad, H


def cox_nll(d: DesignMatrix, theta) -> tuple[float, np.ndarray]:
    """Breslow negative log partial likelihood divided by n, and its gradient."""
    Xs, rs = _prepare(d)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != Xs.shape[1]:
        raise ValidationError(f"theta has {theta.size} entries for {Xs.shape[1]} columns")
    return _nll_sorted(Xs, rs, theta)


def cox_hessian(d: DesignMatrix, theta) -> np.ndarray:
    Xs, rs = _prepare(d)
    return _nll_sorted(Xs, rs, np.asarray(theta, dtype=float), hessian=True)[2]


@dataclass(frozen=True, eq=False)
class CoxCoefficients:
    """Fitted Cox coefficients keyed by design column.

    ``theta`` follows ``columns`` order, which is the design order
    x, Z, W, V, U, T.
    """

    columns: tuple[str, ...]
    theta: np.ndarray
    se: np.ndarray | None = None
    nll: float = float("nan")
    iterations: int = 0
    lam: float = 0.0
    converged: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def blocks(self) -> dict[str, np.ndarray]:
        out = {name: [] for name in BLOCK_NAMES.values()}
        for c, v in zip(self.columns, self.theta):
            out[BLOCK_NAMES.get(c.split(":", 1)[0], c.split(":", 1)[0])].append(v)
        return {k: np.array(v, dtype=float) for k, v in out.items()}

    def nonzero(self) -> tuple[str, ...]:
        return tuple(c for c, v in zip(self.columns, self.theta) if v != 0)

    def risk(self, d: DesignMatrix) -> np.ndarray:
        """Linear predictor for the columns of ``d`` matching this model."""
        X = _align(d, self.columns)
        return X @ self.theta if X.shape[1] else np.zeros(X.shape[0])

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "theta": [fmt(v) for v in self.theta],
            "se": None if self.se is None else [fmt(v) for v in self.se],
            "nll": fmt(self.nll),
            "iterations": self.iterations,
            "lambda": fmt(self.lam),
            "converged": self.converged,
            "blocks": {k: [fmt(x) for x in v] for k, v in self.blocks.items()},
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoxCoefficients":
        se = d.get("se")
        return cls(
            tuple(d["columns"]), np.array([float(v) for v in d["theta"]]),
            None if se is None else np.array([float(v) for v in se]),
            float(d["nll"]), int(d["iterations"]), float(d["lambda"]), bool(d["converged"]), dict(d.get("meta", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _align(d: DesignMatrix, columns: Sequence[str]) -> np.ndarray:
    index = {c: i for i, c in enumerate(d.columns)}
    missing = [c for c in columns if c not in index]
    if missing:
        raise ValidationError(f"design lacks model columns {missing}")
    return np.asarray(d.X, dtype=float)[:, [index[c] for c in columns]]


def fit_cox(d: DesignMatrix, penalty_free_set: Sequence[str] = (), max_iter: int = 100) -> CoxCoefficients:
    """Unpenalized Newton fit with step halving.

    ``penalty_free_set`` is accepted for interface symmetry with the lasso
    and has no effect here.
    """
    Xs, rs = _prepare(d)
    p = Xs.shape[1]
    theta = np.zeros(p)
    value, grad, H = _nll_sorted(Xs, rs, theta, hessian=True)
    it = 0
    while p and np.max(np.abs(grad)) > GRAD_TOL:
        if it >= max_iter:
            raise ConvergenceError(f"Newton iteration did not converge in {max_iter} steps")
        ev = np.linalg.eigvalsh(H)
        if ev[0] <= 1e-12 * max(1.0, ev[-1]):
            raise SingularInformationError("observed information is singular (collinear or constant columns)")
        step = np.linalg.solve(H, grad)
        t = 1.0
        while True:
            cand = theta - t * step
            cv, cg, cH = _nll_sorted(Xs, rs, cand, hessian=True)
            if cv <= value + 1e-4 * t * -float(grad @ step) + ROUNDOFF * abs(value) or t < 1e-10:
                break
            t *= 0.5
        theta, value, grad, H = cand, cv, cg, cH
        it += 1
        if np.linalg.norm(theta) > DIVERGENCE_NORM:
            raise CoxDivergenceError(
                f"coefficient norm exceeded {DIVERGENCE_NORM:g}; data look separable, use a penalized fit"
            )
    se = None
    if p:
        ev = np.linalg.eigvalsh(H)
        if ev[0] <= 1e-12 * max(1.0, ev[-1]):
            raise SingularInformationError("observed information is singular at the optimum")
        se = np.sqrt(np.diag(np.linalg.inv(H * rs.n)))
    return CoxCoefficients(tuple(d.columns), theta, se, value, it)


# ---------------------------------------------------------------------------
# L1 path


@dataclass(frozen=True)
class LassoConfig:
    n_lambda: int = 100
    lambda_min_ratio: float = 0.01
    penalty_free_set: tuple[str, ...] = ()
    kkt_tol: float = 1e-8
    max_newton: int = 200
    max_sweeps: int = 2000


class _Standardized:
    def __init__(self, d: DesignMatrix, penalty_free: Sequence[str]):
        X = np.asarray(d.X, dtype=float)
        self.center = X.mean(axis=0)
        sd = X.std(axis=0)
        self.active = sd > 0
        self.scale = np.where(self.active, sd, 1.0)
        self.Xt = (X - self.center) / self.scale
        self.Xt[:, ~self.active] = 0.0
        free = set(penalty_free)
        unknown = free - set(d.columns)
        if unknown:
            raise ValidationError(f"penalty_free_set names unknown columns {sorted(unknown)}")
        self.penalized = np.array([c not in free for c in d.columns], dtype=bool)

    def to_original(self, theta_t: np.ndarray) -> np.ndarray:
        return np.where(self.active, theta_t / self.scale, 0.0)


def kkt_violation(grad: np.ndarray, theta: np.ndarray, lam: float, penalized: np.ndarray) -> float:
    """Largest violation of the L1 stationarity conditions."""
    viol = np.where(
        ~penalized, np.abs(grad),
        np.where(theta == 0, np.maximum(0.0, np.abs(grad) - lam), np.abs(grad + lam * np.sign(theta))),
    )
    return float(viol.max()) if viol.size else 0.0


def _cd_quadratic(g, H, theta, lam, pen, usable, max_sweeps):
    """Coordinate descent for  g'd + d'Hd/2 + lam*|theta+d|_1  over ``usable``."""
    p = theta.size
    d = np.zeros(p)
    r = g.copy()  # gradient of the quadratic at d
    diag = np.diag(H)
    idx = np.flatnonzero(usable)

    def sweep(cols):
        biggest = 0.0
        for j in cols:
            hj = diag[j]
            old = theta[j] + d[j]
            z = old - r[j] / hj
            if pen[j]:
                new = np.sign(z) * max(abs(z) - lam / hj, 0.0)
            else:
                new = z
            delta = new - old
            if delta != 0.0:
                d[j] += delta
                np.add(r, delta * H[:, j], out=r)
                biggest = max(biggest, abs(delta) * np.sqrt(hj))
        return biggest

    for _ in range(max_sweeps):
        if sweep(idx) < 1e-13:
            return d
        # guess the support and sign pattern, then solve it exactly
        v = theta + d
        act = idx[v[idx] != 0]
        if act.size:
            sgn = np.where(pen[act], np.sign(v[act]), 0.0)
            rhs = (H @ theta)[act] - g[act] - lam * sgn
            try:
                va = np.linalg.solve(H[np.ix_(act, act)], rhs)
            except np.linalg.LinAlgError:
                va = None
            if va is not None and np.all(np.where(pen[act], np.sign(va) == sgn, True)):
                trial = np.zeros(p)
                trial[idx] = -theta[idx]
                trial[act] = va - theta[act]
                rt = g + H @ trial
                rest = np.setdiff1d(idx, act)
                if np.all(np.abs(rt[rest]) <= lam * (1 + 1e-12)):
                    return trial
        for _ in range(max_sweeps):
            if sweep(act) < 1e-13:
                break
    return d


def _lasso_solve(Xs, rs, theta, lam, pen, usable, cfg: LassoConfig):
    """Proximal Newton for one lambda (standardized space, sorted rows)."""
    value, grad, H = _nll_sorted(Xs, rs, theta, hessian=True)
    obj = value + lam * np.abs(theta[pen]).sum()
    for it in range(cfg.max_newton):
        if kkt_violation(grad[usable], theta[usable], lam, pen[usable]) <= cfg.kkt_tol:
            return theta, grad, it
        Hr = H + 1e-10 * np.eye(H.shape[0])
        d = _cd_quadratic(grad, Hr, theta, lam, pen, usable, cfg.max_sweeps)
        decrease = float(grad @ d) + lam * (np.abs(theta + d)[pen].sum() - np.abs(theta[pen]).sum())
        t = 1.0
        while True:
            cand = theta + t * d
            cv, cg, cH = _nll_sorted(Xs, rs, cand, hessian=True)
            cobj = cv + lam * np.abs(cand[pen]).sum()
            if cobj <= obj + 1e-4 * t * decrease + ROUNDOFF * abs(obj) or t < 1e-12:
                break
            t *= 0.5
        theta, value, grad, H, obj = cand, cv, cg, cH, cobj
        if np.linalg.norm(theta) > 1e3:
            raise CoxDivergenceError(f"lasso iterate diverged at lambda={lam:.6g}")
    viol = kkt_violation(grad[usable], theta[usable], lam, pen[usable])
    if viol <= max(cfg.kkt_tol, 1e-7):
        return theta, grad, cfg.max_newton
    raise ConvergenceError(f"lasso did not converge at lambda={lam:.6g} (KKT violation {viol:.3g})")


def _lasso_working_set(Xs, rs, theta, lam, prev_lam, prev_grad, pen, usable, cfg: LassoConfig):
    """Solve on a strong-rule working set, then add any KKT violators and resolve."""
    work = usable & (~pen | (theta != 0) | (np.abs(prev_grad) >= 2 * lam - prev_lam))
    while True:
        cols = np.flatnonzero(work)
        sub = np.zeros(Xs.shape[1])
        if cols.size:
            th, _, _ = _lasso_solve(Xs[:, cols], rs, theta[cols].copy(), lam, pen[cols], np.ones(cols.size, bool), cfg)
            sub[cols] = th
        _, grad = _nll_sorted(Xs, rs, sub)
        outside = usable & ~work
        bad = outside & (np.abs(grad) - lam > cfg.kkt_tol)
        if not bad.any():
            return sub, grad
        work |= bad
        theta = sub


@dataclass(frozen=True, eq=False)
class LassoPath:
    columns: tuple[str, ...]
    lambdas: np.ndarray
    coefs: np.ndarray  # (n_lambda, p), original scale
    coefs_std: np.ndarray  # standardized scale
    nnz: np.ndarray
    kkt: np.ndarray
    penalized: np.ndarray
    scale: np.ndarray
    mean_c: np.ndarray | None = None
    se_c: np.ndarray | None = None
    lambda_opt: float | None = None
    seed: int | None = None

    @property
    def opt_index(self) -> int:
        if self.lambda_opt is None:
            raise ValidationError("path has no cross-validation statistics")
        return int(np.flatnonzero(self.lambdas == self.lambda_opt)[0])

    def model_at(self, k: int) -> CoxCoefficients:
        return CoxCoefficients(self.columns, self.coefs[k].copy(), None, float("nan"), 0, float(self.lambdas[k]))

    def selected(self) -> CoxCoefficients:
        return self.model_at(self.opt_index)

    def cvpath_rows(self):
        for k, lam in enumerate(self.lambdas):
            mc = "" if self.mean_c is None else fmt(self.mean_c[k])
            sc = "" if self.se_c is None else fmt(self.se_c[k])
            yield fmt(lam), mc, sc, int(self.nnz[k])


def lambda_max(d: DesignMatrix, penalty_free_set: Sequence[str] = ()) -> float:
    """Smallest lambda at which every penalized coefficient is zero (standardized scale)."""
    st = _Standardized(d, penalty_free_set)
    Xs, rs = _prepare(DesignMatrix(st.Xt, d.columns, d.time, d.event, d.patient_ids))
    theta = _fit_free(Xs, rs, st)
    _, g = _nll_sorted(Xs, rs, theta)
    m = st.penalized & st.active
    return float(np.abs(g[m]).max()) if m.any() else 0.0


def _fit_free(Xs, rs, st: _Standardized) -> np.ndarray:
    theta = np.zeros(Xs.shape[1])
    free = ~st.penalized & st.active
    if free.any():
        sub = _lasso_solve(Xs[:, free], rs, np.zeros(int(free.sum())), 0.0,
                           np.zeros(int(free.sum()), bool), np.ones(int(free.sum()), bool), LassoConfig())[0]
        theta[free] = sub
    return theta


def fit_cox_lasso_path(
    d: DesignMatrix,
    cfg: LassoConfig = LassoConfig(),
    lambdas: Sequence[float] | None = None,
) -> LassoPath:
    """L1-penalized Cox path with warm starts over a decreasing lambda grid.

    Columns are z-scored internally; reported coefficients are on the
    original scale. KKT conditions are checked on the standardized problem.
    """
    st = _Standardized(d, cfg.penalty_free_set)
    Xs, rs = _prepare(DesignMatrix(st.Xt, d.columns, d.time, d.event, d.patient_ids))
    pen = st.penalized
    usable = st.active
    theta = _fit_free(Xs, rs, st)
    if lambdas is None:
        _, g = _nll_sorted(Xs, rs, theta)
        m = pen & usable
        lmax = float(np.abs(g[m]).max()) if m.any() else 1.0
        if lmax <= 0:
            lmax = 1.0
        lambdas = np.geomspace(lmax, lmax * cfg.lambda_min_ratio, cfg.n_lambda)
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(np.diff(lambdas) >= 0) or np.any(lambdas < 0):
        raise ValidationError("lambda grid must be non-negative and strictly decreasing")
    coefs_t, kkts = [], []
    _, grad = _nll_sorted(Xs, rs, theta)
    prev = float(lambdas[0])
    for lam in lambdas:
        theta, grad = _lasso_working_set(Xs, rs, theta, float(lam), prev, grad, pen, usable, cfg)
        prev = float(lam)
        coefs_t.append(theta.copy())
        kkts.append(kkt_violation(grad[usable], theta[usable], lam, pen[usable]))
    coefs_t = np.array(coefs_t).reshape(len(lambdas), Xs.shape[1])
    coefs = np.array([st.to_original(t) for t in coefs_t]).reshape(coefs_t.shape)
    nnz = (coefs_t[:, pen] != 0).sum(axis=1)
    return LassoPath(tuple(d.columns), lambdas, coefs, coefs_t, nnz, np.array(kkts), pen, st.scale)


def lasso_kkt_check(d: DesignMatrix, path: LassoPath) -> np.ndarray:
    """Recompute KKT violations of a path from scratch (standardized problem)."""
    st = _Standardized(d, [c for c, p in zip(path.columns, path.penalized) if not p])
    Xs, rs = _prepare(DesignMatrix(st.Xt, d.columns, d.time, d.event, d.patient_ids))
    out = []
    for lam, th in zip(path.lambdas, path.coefs_std):
        _, g = _nll_sorted(Xs, rs, th)
        out.append(kkt_violation(g[st.active], th[st.active], lam, st.penalized[st.active]))
    return np.array(out)


# ---------------------------------------------------------------------------
# concordance


def concordance_counts(risk, time, event) -> tuple[int, int, int]:
    """(concordant, tied-risk, comparable) counts over usable pairs.

    A pair (i, j) is usable when ``time_i < time_j`` and ``event_i == 1``;
    it is concordant when ``risk_i > risk_j``.
    """
    risk = np.asarray(risk, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(bool)
    if not (risk.shape == time.shape == event.shape):
        raise ValidationError("risk, time and event must have equal lengths")
    conc = ties = comp = 0
    ev = np.flatnonzero(event)
    for chunk in np.array_split(ev, max(1, ev.size * time.size // 4_000_000 + 1)):
        usable = time[chunk, None] < time[None, :]
        ri = risk[chunk, None]
        comp += int(usable.sum())
        conc += int((usable & (ri > risk[None, :])).sum())
        ties += int((usable & (ri == risk[None, :])).sum())
    return conc, ties, comp


def harrell_cindex(risk, time, event) -> float:
    """Harrell's C: higher risk should mean earlier event. Risk ties count 1/2."""
    conc, ties, comp = concordance_counts(risk, time, event)
    if comp == 0:
        raise UndefinedConcordanceError("no usable pairs (need an event before another observed time)")
    return (2 * conc + ties) / (2 * comp)


@dataclass(frozen=True)
class CIndexEstimate:
    point: float
    mean_boot: float
    se_boot: float
    ci95: tuple[float, float]
    resamples: int

    def to_dict(self) -> dict:
        return {
            "point": fmt(self.point), "mean_boot": fmt(self.mean_boot), "se_boot": fmt(self.se_boot),
            "ci95": [fmt(self.ci95[0]), fmt(self.ci95[1])], "resamples": self.resamples,
        }


def _risk_of(model, d: DesignMatrix) -> np.ndarray:
    if isinstance(model, CoxCoefficients):
        return model.risk(d)
    if callable(model):
        return np.asarray(model(d), dtype=float)
    return np.asarray(model, dtype=float)


def _bootstrap_indices(n: int, B: int, seed: int, usable: Callable[[np.ndarray], bool], retries: int = 10):
    ss = np.random.SeedSequence(seed)
    for child in ss.spawn(B):
        rng = np.random.default_rng(child)
        for _ in range(retries + 1):
            idx = rng.integers(0, n, n)
            if usable(idx):
                break
        else:
            raise UndefinedConcordanceError(f"bootstrap resample had no usable pairs after {retries} redraws")
        yield idx


def _has_pairs(time, event):
    def check(idx):
        t = time[idx]
        e = event[idx].astype(bool)
        return bool(e.any()) and bool(np.any(t[e].min() < t))
    return check


def bootstrap_cindex_ci(model, d: DesignMatrix, B: int = 1000, seed: int = 0) -> CIndexEstimate:
    """Bootstrap the test-set C-index: CI = mean +- 1.96 SE with SE the resample SD.

    ``model`` is a :class:`CoxCoefficients`, a callable on the design, or a
    precomputed risk vector. Each resample draws from its own seeded stream.
    """
    if B < 2:
        raise ValidationError("B must be at least 2")
    risk = _risk_of(model, d)
    time = np.asarray(d.time, float)
    event = np.asarray(d.event, int)
    point = harrell_cindex(risk, time, event)
    cs = np.array([harrell_cindex(risk[i], time[i], event[i])
                   for i in _bootstrap_indices(len(time), B, seed, _has_pairs(time, event))])
    mean = float(cs.mean())
    se = float(cs.std(ddof=1))
    return CIndexEstimate(point, mean, se, (mean - 1.96 * se, mean + 1.96 * se), B)


@dataclass(frozen=True)
class ZTest:
    z: float
    p_two_sided: float
    mean_diff: float
    se_diff: float
    resamples: int


def compare_cindex_z(model_a, model_b, d: DesignMatrix, B: int = 1000, seed: int = 0) -> ZTest:
    """Paired bootstrap Z-test of C_A - C_B on shared resamples."""
    if B < 2:
        raise ValidationError("B must be at least 2")
    ra, rb = _risk_of(model_a, d), _risk_of(model_b, d)
    if ra.shape != rb.shape:
        raise ValidationError("models must score the same patients")
    time = np.asarray(d.time, float)
    event = np.asarray(d.event, int)
    diffs = np.array([
        harrell_cindex(ra[i], time[i], event[i]) - harrell_cindex(rb[i], time[i], event[i])
        for i in _bootstrap_indices(len(time), B, seed, _has_pairs(time, event))
    ])
    mean = float(diffs.mean())
    se = float(diffs.std(ddof=1))
    if se == 0.0:
        z = 0.0 if mean == 0.0 else float(np.sign(mean) * np.inf)
    else:
        z = mean / se
    p = float(2 * stats.norm.sf(abs(z)))
    return ZTest(z, p, mean, se, B)


# ---------------------------------------------------------------------------
# cross-validation


def make_folds(event, folds: int, seed: int, attempts: int = 20) -> np.ndarray:
    """Fold label per patient; reshuffled until every fold holds an event."""
    if folds < 2:
        raise ValidationError("need at least 2 folds")
    event = np.asarray(event).astype(bool)
    n = event.size
    if n < folds:
        raise ValidationError(f"{n} patients cannot fill {folds} folds")
    ss = np.random.SeedSequence(seed)
    for child in ss.spawn(attempts):
        rng = np.random.default_rng(child)
        labels = np.empty(n, dtype=int)
        labels[rng.permutation(n)] = np.arange(n) % folds
        if all(event[labels == k].any() for k in range(folds)):
            return labels
    raise StratificationError(f"could not place an event in every one of {folds} folds after {attempts} attempts")


def cv_cindex_path(
    d: DesignMatrix,
    cfg: LassoConfig = LassoConfig(),
    folds: int = 5,
    seed: int = 0,
    executor=None,
) -> LassoPath:
    """Lasso path on all data plus per-lambda mean and SE of the fold C-index.

    ``lambda_opt`` maximizes the mean C-index (largest lambda among ties).
    ``executor`` (an object with ``map``) may run folds in parallel; fold
    results do not depend on scheduling.
    """
    full = fit_cox_lasso_path(d, cfg)
    labels = make_folds(d.event, folds, seed)

    def run_fold(k):
        train = d.take_rows(np.flatnonzero(labels != k))
        test = d.take_rows(np.flatnonzero(labels == k))
        path = fit_cox_lasso_path(train, cfg, lambdas=full.lambdas)
        out = np.empty(len(full.lambdas))
        for i, coef in enumerate(path.coefs):
            try:
                out[i] = harrell_cindex(np.asarray(test.X, float) @ coef, test.time, test.event)
            except UndefinedConcordanceError:
                out[i] = np.nan
        return out

    mapper = map if executor is None else executor.map
    scores = np.array(list(mapper(run_fold, range(folds))))
    with np.errstate(invalid="ignore"):
        mean = np.nanmean(scores, axis=0)
        cnt = np.sum(np.isfinite(scores), axis=0)
        se = np.nanstd(scores, axis=0, ddof=1) / np.sqrt(cnt)
    if not np.isfinite(mean).any():
        raise UndefinedConcordanceError("no validation fold produced a C-index")
    k = int(np.nanargmax(mean))
    return LassoPath(
        full.columns, full.lambdas, full.coefs, full.coefs_std, full.nnz, full.kkt, full.penalized, full.scale,
        mean, se, float(full.lambdas[k]), seed,
    )


# ---------------------------------------------------------------------------
# baseline hazard


@dataclass(frozen=True, eq=False)
class StepFunction:
    times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="right")
        vals = np.r_[0.0, self.values]
        return vals[k]

    @property
    def jumps(self) -> np.ndarray:
        return np.diff(np.r_[0.0, self.values])


def breslow_baseline_hazard(fit, d: DesignMatrix) -> StepFunction:
    """Breslow cumulative baseline hazard ``sum_{t_k <= t} d_k / sum_{R_k} exp(eta)``."""
    time = np.asarray(d.time, float)
    event = np.asarray(d.event).astype(bool)
    if isinstance(fit, CoxCoefficients):
        eta = fit.risk(d)
    else:
        theta = np.asarray(fit, dtype=float)
        eta = np.asarray(d.X, float) @ theta if theta.size else np.zeros(time.size)
    if not event.any():
        return StepFunction(np.zeros(0), np.zeros(0))
    w = np.exp(eta - eta.max())
    scale = np.exp(eta.max())
    tk = np.unique(time[event])
    jumps = np.array([event[time == t].sum() / (w[time >= t].sum() * scale) for t in tk])
    return StepFunction(tk, np.cumsum(jumps))
