"""Best-subset selection for Cox models, the sequential top-4 per timepoint
procedure, and frequency-vote importance over subset sizes.

The selection criterion is the in-sample partial-likelihood deviance
``-2 log PL`` of an unpenalized refit. Retained covariates (demographics and
arm by default) enter every candidate model and are never selected.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Sequence

import numpy as np

from .cohortmodel import DesignMatrix
from .errors import NumericalError, ValidationError
from .survival import GRAD_TOL, ROUNDOFF, CoxCoefficients, _nll_sorted, _prepare

log = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 50_000
MAX_SPLICE_ITER = 50
MAX_SWAP = 2
TWO_SWAP_BUDGET = 20_000
TIE_TOL = 1e-10
TIMEPOINT_BLOCKS = ("x", "Z", "W", "V")
RETAINED_BLOCKS = ("U", "T")


@dataclass(frozen=True, eq=False)
class SubsetResult:
    s: int
    selected: tuple[int, ...]  # column indices into the design
    names: tuple[str, ...]
    fit: CoxCoefficients
    deviance: float
    method: str
    evaluations: int


class _SubsetObjective:
    """Deviance of unpenalized Cox refits on ``retained + subset`` columns."""

    def __init__(self, d: DesignMatrix, candidates: np.ndarray, retained: np.ndarray):
        Xs, rs = _prepare(d)
        self.rs = rs
        self.n = rs.n
        # scale candidates so sacrifices are comparable; deviance is unaffected
        sd = Xs[:, candidates].std(axis=0)
        sd[sd == 0] = 1.0
        self.sd = sd
        self.Xc = Xs[:, candidates] / sd
        self.Xr = Xs[:, retained]
        self.cache: dict[tuple[int, ...], tuple[float, np.ndarray]] = {}
        self.evaluations = 0

    def design(self, subset: tuple[int, ...]) -> np.ndarray:
        return np.hstack([self.Xr, self.Xc[:, list(subset)]])

    def __call__(self, subset: tuple[int, ...]) -> float:
        subset = tuple(sorted(subset))
        hit = self.cache.get(subset)
        if hit is not None:
            return hit[0]
        self.evaluations += 1
        X = self.design(subset)
        try:
            theta, value = _newton(X, self.rs)
            dev = 2.0 * self.n * value
        except NumericalError:
            theta, dev = np.full(X.shape[1], np.nan), np.inf
        self.cache[subset] = (dev, theta)
        return dev

    def sacrifices(self, subset: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
        """Backward (active) and forward (inactive) loss changes at the refit."""
        subset = tuple(sorted(subset))
        self(subset)
        theta = self.cache[subset][1]
        p = self.Xc.shape[1]
        full = np.zeros(self.Xr.shape[1] + p)
        r = self.Xr.shape[1]
        if np.all(np.isfinite(theta)):
            full[:r] = theta[:r]
            full[r + np.array(subset, dtype=int)] = theta[r:]
        X = np.hstack([self.Xr, self.Xc])
        _, g, H = _nll_sorted(X, self.rs, full, hessian=True)
        gc = g[r:]
        hc = np.maximum(np.diag(H)[r:], 1e-12)
        bc = full[r:]
        backward = 0.5 * hc * bc**2
        forward = 0.5 * gc**2 / hc
        return backward, forward


def _newton(X: np.ndarray, rs, max_iter: int = 100):
    from .errors import ConvergenceError, CoxDivergenceError, SingularInformationError

    p = X.shape[1]
    theta = np.zeros(p)
    value, grad, H = _nll_sorted(X, rs, theta, hessian=True)
    it = 0
    while p and np.max(np.abs(grad)) > GRAD_TOL:
        if it >= max_iter:
            raise ConvergenceError("subset refit did not converge")
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            raise SingularInformationError("singular information in subset refit") from None
        t = 1.0
        while True:
            cand = theta - t * step
            cv, cg, cH = _nll_sorted(X, rs, cand, hessian=True)
            if cv <= value + 1e-4 * t * -float(grad @ step) + ROUNDOFF * abs(value) or t < 1e-10:
                break
            t *= 0.5
        theta, value, grad, H = cand, cv, cg, cH
        it += 1
        if np.linalg.norm(theta) > 50:
            raise CoxDivergenceError("subset refit diverged")
    return theta, value


def _better(dev: float, subset: tuple[int, ...], best_dev: float, best: tuple[int, ...] | None) -> bool:
    if best is None or dev < best_dev - TIE_TOL:
        return True
    return abs(dev - best_dev) <= TIE_TOL and subset < best


def _exhaustive(obj: _SubsetObjective, p: int, s: int):
    best, best_dev = None, np.inf
    for subset in itertools.combinations(range(p), s):
        dev = obj(subset)
        if _better(dev, subset, best_dev, best):
            best, best_dev = subset, dev
    return best, best_dev


def _splice(obj: _SubsetObjective, p: int, s: int):
    """Active-set splicing with size <= 2 exchanges, then a swap-neighbourhood check."""
    backward, forward = obj.sacrifices(())
    order = sorted(range(p), key=lambda j: (-forward[j], j))
    active = tuple(sorted(order[:s]))
    dev = obj(active)
    while True:
        for _ in range(MAX_SPLICE_ITER):
            backward, forward = obj.sacrifices(active)
            act = sorted(active, key=lambda j: (backward[j], j))
            inact = sorted((j for j in range(p) if j not in active), key=lambda j: (-forward[j], j))
            improved = False
            for k in range(1, min(MAX_SWAP, s, len(inact)) + 1):
                cand = tuple(sorted(set(active) - set(act[:k]) | set(inact[:k])))
                cdev = obj(cand)
                if cdev < dev - TIE_TOL:
                    active, dev, improved = cand, cdev, True
                    break
            if not improved:
                break
        # verify against every single swap, and double swaps when affordable
        best, best_dev = active, dev
        inactive = [j for j in range(p) if j not in active]
        moves = [((a,), (b,)) for a in active for b in inactive]
        if comb(s, 2) * comb(len(inactive), 2) <= TWO_SWAP_BUDGET:
            moves += [(a, b) for a in itertools.combinations(active, 2) for b in itertools.combinations(inactive, 2)]
        for out, into in moves:
            cand = tuple(sorted(set(active) - set(out) | set(into)))
            cdev = obj(cand)
            if _better(cdev, cand, best_dev, best):
                best, best_dev = cand, cdev
        if best == active:
            return active, dev
        active, dev = best, best_dev


def _column_indices(d: DesignMatrix, spec) -> np.ndarray:
    if isinstance(spec, str):
        return d.block_indices(spec)
    spec = list(spec)
    if spec and isinstance(spec[0], str):
        index = {c: i for i, c in enumerate(d.columns)}
        try:
            return np.array([index[c] for c in spec], dtype=int)
        except KeyError as e:
            raise ValidationError(f"unknown column {e.args[0]!r}") from None
    return np.asarray(spec, dtype=int)


def _refit(sub: DesignMatrix, ret, chosen, theta_obj) -> CoxCoefficients:
    """Coefficients of the winning subset, reusing the search's Newton solution."""
    order = np.concatenate([ret, chosen]).astype(int)
    theta = np.empty(order.size)
    theta[np.argsort(np.argsort(order))] = theta_obj  # search order -> sorted column order
    Xs, rs = _prepare(sub)
    value, _, H = _nll_sorted(Xs, rs, theta, hessian=True)
    se = None
    ev = np.linalg.eigvalsh(H) if theta.size else np.ones(1)
    if ev[0] > 1e-12 * max(1.0, ev[-1]):
        se = np.sqrt(np.diag(np.linalg.inv(H * rs.n)))
    return CoxCoefficients(tuple(sub.columns), theta, se, value)


def bess_select(
    d: DesignMatrix,
    candidate_block,
    s: int,
    retained=None,
    method: str = "auto",
) -> SubsetResult:
    """Size-``s`` subset of ``candidate_block`` minimizing Cox deviance.

    ``candidate_block`` is a block letter, column names or column indices;
    ``retained`` defaults to the demographic and arm columns. ``method`` is
    ``auto`` (exhaustive up to 50,000 subsets), ``exhaustive`` or ``splicing``.
    """
    cand = _column_indices(d, candidate_block)
    if retained is None:
        ret = d.block_indices(*RETAINED_BLOCKS)
    else:
        ret = _column_indices(d, retained)
    ret = np.array([j for j in ret if j not in set(cand)], dtype=int)
    p = cand.size
    if not 1 <= s <= p:
        raise ValidationError(f"subset size {s} outside 1..{p}")
    obj = _SubsetObjective(d, cand, ret)
    if method == "auto":
        method = "exhaustive" if comb(p, s) <= EXHAUSTIVE_LIMIT else "splicing"
    if method == "exhaustive":
        best, dev = _exhaustive(obj, p, s)
    elif method == "splicing":
        best, dev = _splice(obj, p, s)
    else:
        raise ValidationError(f"unknown method {method!r}")
    if not np.isfinite(dev):
        raise NumericalError(f"every size-{s} subset failed to fit")
    cols = np.concatenate([ret, cand[list(best)]]).astype(int)
    cols.sort()
    sub = d.take_columns(cols)
    theta = obj.cache[tuple(sorted(best))][1].copy()
    theta[ret.size:] /= obj.sd[list(best)]
    fit = _refit(sub, ret, cand[list(best)], theta)
    selected = tuple(int(c) for c in cand[list(best)])
    return SubsetResult(
        s, selected, tuple(d.columns[j] for j in selected), fit, 2.0 * len(d.time) * fit.nll, method, obj.evaluations
    )


def select_top4_sequential(d: DesignMatrix, blocks: Sequence[str] = TIMEPOINT_BLOCKS, k: int = 4):
    """Top ``k`` features per timepoint block, each conditioning on earlier picks.

    Returns ``(selected, widths)``: block -> chosen column names, and the
    cumulative model width (retained covariates included) after each block.
    """
    present = set(d.blocks)
    retained = [c for c in d.columns if c.split(":", 1)[0] in RETAINED_BLOCKS]
    selected: dict[str, tuple[str, ...]] = {}
    widths: dict[str, int] = {}
    for b in blocks:
        if b not in present:
            log.warning("block %s absent from the design; skipped", b)
            continue
        cands = [c for c in d.columns if c.startswith(b + ":")]
        res = bess_select(d, cands, min(k, len(cands)), retained=retained)
        selected[b] = res.names
        retained = retained + list(res.names)
        widths[b] = len(retained)
    return selected, widths


@dataclass(frozen=True)
class ImportanceTable:
    scores: dict[str, int]  # feature -> total, sorted descending
    by_timepoint: dict[str, dict[str, int]]  # feature -> block -> score
    sizes: tuple[int, ...]
    blocks: tuple[str, ...]

    @property
    def max_score(self) -> int:
        return len(self.sizes) * len(self.blocks)

    def ranking(self) -> list[tuple[str, int]]:
        return list(self.scores.items())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("feature", "timepoint", "score", "total"))
        for f, total in self.scores.items():
            for b in self.blocks:
                w.writerow((f, b, self.by_timepoint[f].get(b, 0), total))
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_csv().encode())

    @classmethod
    def read(cls, path: str | Path, sizes: Sequence[int] = tuple(range(2, 21))) -> "ImportanceTable":
        by_tp: dict[str, dict[str, int]] = {}
        totals: dict[str, int] = {}
        blocks: list[str] = []
        with Path(path).open(newline="") as fh:
            for row in csv.DictReader(fh):
                f, b = row["feature"], row["timepoint"]
                by_tp.setdefault(f, {})[b] = int(row["score"])
                totals[f] = int(row["total"])
                if b not in blocks:
                    blocks.append(b)
        return cls(totals, by_tp, tuple(sizes), tuple(blocks))


def vote_importance(
    d: DesignMatrix,
    sizes: Sequence[int] = tuple(range(2, 21)),
    blocks: Sequence[str] = TIMEPOINT_BLOCKS,
    executor=None,
) -> ImportanceTable:
    """+1 to a feature each time BESS selects it, over every size and timepoint block."""
    missing = [b for b in blocks if b not in set(d.blocks)]
    if missing:
        raise ValidationError(f"vote importance needs blocks {list(blocks)}; missing {missing}")
    tasks = [(b, s) for b in blocks for s in sizes]

    def run(task):
        b, s = task
        return b, bess_select(d, b, s).names

    mapper = map if executor is None else executor.map
    results = list(mapper(run, tasks))
    names = sorted({c.split(":", 1)[1] for b in blocks for c in d.columns if c.startswith(b + ":")})
    by_tp = {n: {b: 0 for b in blocks} for n in names}
    for b, chosen in results:
        for c in chosen:
            by_tp[c.split(":", 1)[1]][b] += 1
    totals = {n: sum(v.values()) for n, v in by_tp.items()}
    order = sorted(totals, key=lambda n: (-totals[n], n))
    return ImportanceTable({n: totals[n] for n in order}, by_tp, tuple(sizes), tuple(blocks))


def max_vote_score(sizes: Sequence[int] = tuple(range(2, 21)), blocks: Sequence[str] = TIMEPOINT_BLOCKS) -> int:
    return len(tuple(sizes)) * len(tuple(blocks))

