"""Solution paths over (threshold level or outlier budget, rank) and PIC selection.

The predictive information criterion is

    log ||Y - XB - C||_F^2 + [A1 (J m + (m + q - r) r) + A2 J log(e n / J)] / (m n)

with ``r = rank(B)``, ``J`` the number of nonzero rows of ``C``, ``q = rank(X)``
and ``A1 = 7``, ``A2 = 2``. It needs no noise-scale estimate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInput, R4Error
from .rrr import RegressionData, numerical_rank, rrr_identity
from .solver import (
    Constrained,
    FitResult,
    PenalizedRowwise,
    R4Problem,
    SolverOptions,
    r4_fit,
    subsample_starts,
)
from .thresholding import ThresholdRule

log = logging.getLogger(__name__)

A1 = 7.0
A2 = 2.0


def _risk_inflation(J: int, n: int) -> float:
    # 0 log 0 = 0
    return 0.0 if J == 0 else J * math.log(math.e * n / J)


def pic_penalty(n: int, m: int, q: int, r: int, J: int) -> float:
    return (A1 * (J * m + (m + q - r) * r) + A2 * _risk_inflation(J, n)) / (m * n)


def pic_domain_ok(n: int, m: int, q: int, r: int, J: int) -> bool:
    """``(J m + (m+q-r) r + J log(en/J)) / (mn) < 1``; outside it the model is saturated."""
    return (J * m + (m + q - r) * r + _risk_inflation(J, n)) / (m * n) < 1.0


def pic(Y, X, B, C, q: int | None = None, rank: int | None = None, Gamma=None) -> float:
    """Predictive information criterion of a fitted ``(B, C)``.

    ``rank`` defaults to the numerical rank of ``B`` and ``q`` to that of
    ``X``. With ``Gamma`` the residual norm is ``tr(R Gamma R^T)``. A zero
    residual returns ``-inf``; callers treat it as a degenerate fit.
    """
    Y, X, B, C = (np.asarray(a, dtype=float) for a in (Y, X, B, C))
    n, m = Y.shape
    R = Y - X @ B - C
    rss = float(np.sum(R * R)) if Gamma is None else float(np.sum((R @ Gamma) * R))
    if q is None:
        q = numerical_rank(X)
    r = numerical_rank(B) if rank is None else int(rank)
    J = int(np.count_nonzero(np.linalg.norm(C, axis=1)))
    if rss <= 0:
        return -math.inf
    return math.log(rss) + pic_penalty(n, m, q, r, J)


@dataclass
class GridSpec:
    ranks: list
    lambda_count: int = 100
    outlier_fraction_bounds: tuple = (0.0, 0.4)
    spec_kind: str = "penalized"
    rule_kind: str = "hard"
    eta: float = 0.0

    def __post_init__(self):
        self.ranks = [int(r) for r in self.ranks]
        lo, hi = self.outlier_fraction_bounds
        if not 0 <= lo < hi <= 1:
            raise InvalidInput(f"need 0 <= v_L < v_U <= 1, got ({lo}, {hi})")
        if self.lambda_count < 2:
            raise InvalidInput("lambda_count must be >= 2")
        if not self.ranks:
            raise InvalidInput("ranks must be nonempty")
        if self.spec_kind not in ("penalized", "constrained"):
            raise InvalidInput(f"spec_kind must be 'penalized' or 'constrained', got {self.spec_kind!r}")
        if self.spec_kind == "penalized":
            ThresholdRule(self.rule_kind, 1.0, self.eta)


@dataclass(eq=False)
class RankPath:
    """All cells at one rank, in path order (decreasing lambda / increasing rho)."""

    rank: int
    grid: np.ndarray
    fits: list
    pic: np.ndarray
    admissible: np.ndarray
    errors: list = field(default_factory=list)


@dataclass(eq=False)
class PathResult:
    kind: str
    q: int
    n: int
    paths: list
    selected: tuple | None

    @property
    def ranks(self) -> list:
        return [rp.rank for rp in self.paths]

    @property
    def pic_values(self) -> np.ndarray:
        """PIC array of shape ``(len(ranks), grid size)``; ``inf`` for excluded cells."""
        G = max(len(rp.grid) for rp in self.paths)
        out = np.full((len(self.paths), G), np.inf)
        for k, rp in enumerate(self.paths):
            out[k, :len(rp.pic)] = np.where(rp.admissible, rp.pic, np.inf)
        return out

    @property
    def selected_fit(self) -> FitResult | None:
        if self.selected is None:
            return None
        k, j = self.selected
        return self.paths[k].fits[j]

    @property
    def selected_grid_value(self) -> float | None:
        if self.selected is None:
            return None
        k, j = self.selected
        return float(self.paths[k].grid[j])

    @property
    def detection_path(self) -> np.ndarray:
        return detection_path_table(self)[1]


def _make_spec(grid: GridSpec, value):
    if grid.spec_kind == "penalized":
        return PenalizedRowwise(ThresholdRule(grid.rule_kind, float(value), grid.eta))
    return Constrained(int(value), grid.eta)


def _cold_J(data, r, grid, lam, opts) -> int:
    return r4_fit(R4Problem(data, r, _make_spec(grid, lam)), opts).n_outliers


def _calibrate_lambda(data, r, grid, opts, target: int, hi: float) -> float:
    """Smallest-found lambda whose cold-start fit flags at least ``target`` rows.

    Bisection in log-lambda between ``hi`` (few outliers) and a lower bracket
    found by decades. The outlier count is not guaranteed monotone in lambda,
    so this only locates a crossing.
    """
    lo = hi * 0.1
    while _cold_J(data, r, grid, lo, opts) < target:
        lo *= 0.1
        if lo < hi * 1e-14:
            return lo
    for _ in range(8):
        mid = math.sqrt(lo * hi)
        if _cold_J(data, r, grid, mid, opts) >= target:
            lo = mid
        else:
            hi = mid
    return lo


def single_flag_threshold(data: RegressionData, r: int) -> float:
    """Threshold above which flagging any one row cannot beat plain RRR.

    Flagging row ``i`` under the hard rule costs ``lam^2 / 2`` and saves half
    the drop in residual sum of squares from refitting without that row, so
    the answer is the square root of the largest such drop. Rows whose
    removal leaves too small a design for rank ``r`` are skipped.
    """
    Yw = data.Y_white
    _, fitted = rrr_identity(data.factor, Yw, r)
    R = Yw - fitted
    rss = float(np.sum(R * R))
    idx = np.arange(data.n)
    gain = 0.0
    for i, sub in enumerate(data.leave_one_out_factors):
        if min(sub.rank, data.m) < r:
            continue
        keep = idx != i
        _, f = rrr_identity(sub, Yw[keep], r)
        D = Yw[keep] - f
        gain = max(gain, rss - float(np.sum(D * D)))
    return math.sqrt(gain)


def lambda_grid(data: RegressionData, r: int, grid: GridSpec, opts: SolverOptions) -> np.ndarray:
    """Log-spaced decreasing thresholds spanning outlier fractions ``[v_L, v_U]``.

    When ``v_L = 0`` the top is the larger of the biggest residual row norm of
    plain RRR and a hair above :func:`single_flag_threshold`, so no single
    flagged row can beat the plain RRR fit in the first cell. Otherwise both
    ends are found by bisection.
    """
    _, fitted = rrr_identity(data.factor, data.Y_white, r)
    lam_max = float(np.linalg.norm(data.Y_white - fitted, axis=1).max())
    # at exactly the single-flag threshold, flagging ties with plain RRR; step just above it
    lam_max = max(lam_max, (1 + 1e-3) * single_flag_threshold(data, r))
    if lam_max == 0:
        lam_max = 1e-12 * max(1.0, float(np.abs(data.Y_white).max()))
    v_lo, v_hi = grid.outlier_fraction_bounds
    n = data.n
    top = lam_max
    if v_lo > 0:
        top = _calibrate_lambda(data, r, grid, opts, max(1, math.ceil(v_lo * n)), lam_max)
    bottom = _calibrate_lambda(data, r, grid, opts, max(1, math.ceil(v_hi * n)), top)
    bottom = min(bottom, top * (1 - 1e-9))
    return np.geomspace(top, bottom, grid.lambda_count)


def rho_grid(n: int, grid: GridSpec) -> np.ndarray:
    v_lo, v_hi = grid.outlier_fraction_bounds
    f = np.geomspace(max(v_lo, 1.0 / n), v_hi, grid.lambda_count)
    counts = np.unique(np.concatenate([[0], np.round(n * f).astype(int)]))
    return counts[(counts >= 0) & (counts <= n)]


def _distinct_chains(cands) -> list:
    # chains that reached the same fit stay together from here on
    kept, seen = [], []
    for c in cands:
        if any(c.outlier_rows == o and abs(c.objective - f) <= 1e-10 * max(1.0, f)
               for o, f in seen):
            continue
        seen.append((c.outlier_rows, c.objective))
        kept.append(c.B_hat)
    return kept


def fit_rank_path(data: RegressionData, r: int, grid: GridSpec, opts: SolverOptions) -> RankPath:
    """Warm-started path at a fixed rank, with PIC for every cell.

    Forward sweep (decreasing threshold): one chain starts cold and
    ``opts.multistart`` more start from RRR fits on random row subsamples;
    each chain is warm-started from its own previous cell. Backward sweep:
    starting at the densest cell, two chains run back up the path, one from
    the forward fit and one from the best distinct subsample-started fit at
    that cell. Chains that reach the same fit merge, and every cell keeps the
    fit with the smallest objective. The backward chains carry fits that flag
    high-leverage rows, which only separate at small thresholds.
    """
    q = data.factor.rank
    n, m = data.n, data.m
    values = lambda_grid(data, r, grid, opts) if grid.spec_kind == "penalized" else rho_grid(n, grid)
    G = len(values)
    fits: list = [None] * G
    errors: list = [None] * G
    problems: list = [None] * G
    chains = None
    for j, value in enumerate(values):
        try:
            problems[j] = R4Problem(data, r, _make_spec(grid, value))
            if chains is None:
                starts, _ = subsample_starts(problems[j], opts)
                chains = [None, *starts]
            cands = [r4_fit(problems[j], opts, init_B=B0) for B0 in chains]
        except (R4Error, np.linalg.LinAlgError) as exc:
            log.warning("rank %d, grid point %d failed: %s", r, j, exc)
            errors[j] = str(exc)
            continue
        fits[j] = min(cands, key=lambda c: c.objective)
        chains = _distinct_chains(cands)

    chains = None
    for j in range(G - 1, -1, -1):
        if fits[j] is None:
            chains = None
            continue
        if chains is None:
            # second chain: the best subsample-started fit here that differs from the forward one
            starts = subsample_starts(problems[j], opts)[0]
            ranked = sorted((r4_fit(problems[j], opts, init_B=B0) for B0 in starts),
                            key=lambda c: c.objective)
            chains = _distinct_chains([fits[j], *ranked])[:2]
        cands = [r4_fit(problems[j], opts, init_B=B0) for B0 in chains]
        best = min(cands, key=lambda c: c.objective)
        if best.objective < fits[j].objective:
            fits[j] = best
        chains = _distinct_chains([fits[j], *cands])

    pics = np.full(G, np.inf)
    admissible = np.zeros(G, dtype=bool)
    for j, fit in enumerate(fits):
        if fit is None:
            continue
        r_eff = min(r, numerical_rank(fit.B_hat))
        value_pic = pic(data.Y, data.X, fit.B_hat, fit.C_hat, q=q, rank=r_eff, Gamma=data.Gamma)
        if value_pic == -math.inf:
            # a perfect fit would always win; treat it as overfit
            continue
        pics[j] = value_pic
        admissible[j] = pic_domain_ok(n, m, q, r_eff, fit.n_outliers)
    return RankPath(r, np.asarray(values), fits, pics, admissible, errors)


def fit_path(data: RegressionData, grid: GridSpec, opts: SolverOptions | None = None) -> PathResult:
    """Fit every (grid point, rank) cell and select the PIC minimiser."""
    opts = opts or SolverOptions()
    q = data.factor.rank
    rmax = min(data.m, q)
    bad = [r for r in grid.ranks if not 1 <= r <= rmax]
    if bad:
        raise InvalidInput(f"ranks {bad} outside [1, {rmax}]")
    paths = [fit_rank_path(data, r, grid, opts) for r in grid.ranks]
    best, selected = math.inf, None
    for k, rp in enumerate(paths):
        for j in range(len(rp.grid)):
            if rp.admissible[j] and rp.pic[j] < best:
                best, selected = rp.pic[j], (k, j)
    return PathResult(grid.spec_kind, q, data.n, paths, selected)


def detection_path_table(path: PathResult):
    """Row norms of ``C`` along the path at the selected rank.

    Returns ``(grid_values, table)`` with ``table`` of shape
    ``n x (number of valid grid points)``, columns in path order.
    """
    if path.selected is None:
        raise InvalidInput("path has no valid selected fit")
    rp = path.paths[path.selected[0]]
    cols = [j for j, f in enumerate(rp.fits) if f is not None]
    table = np.column_stack([rp.fits[j].row_norms for j in cols]) if cols else np.zeros((path.n, 0))
    return rp.grid[cols], table
