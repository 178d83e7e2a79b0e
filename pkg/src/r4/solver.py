"""Robust reduced-rank regression by alternating thresholding and RRR.

The model is ``Y = X B + C + E`` with ``rank(B) <= r`` and a row-sparse
mean-shift matrix ``C``. Each iteration

1. sets ``C`` to the thresholded residual ``Y - X B`` (the exact minimiser
   over ``C`` for fixed ``B``), then
2. sets ``B`` to the reduced-rank regression of ``Y - C`` on ``X``,

so the criterion never increases. Three outlier specifications are
supported: a row-wise penalty, an element-wise penalty, and a hard bound on
the number of nonzero rows (quantile thresholding).

With a weighting matrix ``Gamma`` everything runs on ``Y Gamma^{1/2}`` and is
mapped back at the end; the row penalty then acts on ``||Gamma^{1/2} c_i||``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Union

import numpy as np

from .exceptions import InvalidInput
from .rrr import DesignFactor, RegressionData, check_rank, coef_from_coords, rrr_coords, rrr_identity
from .thresholding import (
    ThresholdRule,
    elementwise_threshold,
    quantile_threshold_rows,
    rowwise_threshold,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PenalizedRowwise:
    rule: ThresholdRule


@dataclass(frozen=True)
class PenalizedElementwise:
    rule: ThresholdRule


@dataclass(frozen=True)
class Constrained:
    """At most ``rho_count`` nonzero rows; kept rows are ridge-shrunk by ``eta``."""

    rho_count: int
    eta: float = 0.0


OutlierSpec = Union[PenalizedRowwise, PenalizedElementwise, Constrained]


@dataclass(frozen=True, eq=False)
class R4Problem:
    data: RegressionData
    rank: int
    spec: OutlierSpec

    def __post_init__(self):
        check_rank(self.rank, self.data.m, self.data.factor.rank)
        if isinstance(self.spec, Constrained):
            if not 0 <= self.spec.rho_count <= self.data.n:
                raise InvalidInput(f"rho_count must lie in [0, {self.data.n}], "
                                   f"got {self.spec.rho_count}")
            if self.spec.eta < 0:
                raise InvalidInput("eta must be >= 0")
        elif not isinstance(self.spec, (PenalizedRowwise, PenalizedElementwise)):
            raise InvalidInput(f"unknown outlier specification {self.spec!r}")


@dataclass
class SolverOptions:
    max_iterations: int = 500
    tolerance: float = 1e-8
    multistart: int = 0
    subsample_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidInput("max_iterations must be >= 1")
        if self.tolerance < 0:
            raise InvalidInput("tolerance must be >= 0")
        if self.multistart < 0:
            raise InvalidInput("multistart must be >= 0")
        if not 0 < self.subsample_fraction <= 1:
            raise InvalidInput("subsample_fraction must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class FitResult:
    B_hat: np.ndarray
    C_hat: np.ndarray
    rank: int
    outlier_rows: tuple
    objective_trace: tuple
    iterations: int
    converged: bool
    objective: float
    spec: OutlierSpec | None = None
    warnings: tuple = field(default=())

    @property
    def n_outliers(self) -> int:
        return len(self.outlier_rows)

    @cached_property
    def row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.C_hat, axis=1)


def c_step(residual, spec: OutlierSpec, seed: int = 0) -> np.ndarray:
    """Optimal ``C`` for a fixed residual ``Y - X B``."""
    if isinstance(spec, PenalizedRowwise):
        return rowwise_threshold(spec.rule, residual)
    if isinstance(spec, PenalizedElementwise):
        return elementwise_threshold(spec.rule, residual)
    if isinstance(spec, Constrained):
        return quantile_threshold_rows(residual, spec.rho_count, spec.eta, seed)
    raise InvalidInput(f"unknown outlier specification {spec!r}")


def _row_norms(A) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", A, A))


def _penalty(C, spec: OutlierSpec) -> float:
    if isinstance(spec, PenalizedRowwise):
        return float(np.sum(spec.rule.penalty(_row_norms(C))))
    if isinstance(spec, PenalizedElementwise):
        return float(np.sum(spec.rule.penalty(C)))
    return 0.5 * spec.eta * float(np.sum(C * C))


def _criterion(Yw, fitted, C, spec) -> float:
    R = (Yw - fitted - C).ravel()
    return 0.5 * float(R @ R) + _penalty(C, spec)


def joint_objective(problem: R4Problem, B, C) -> float:
    """``F(B, C)``: half the weighted residual sum of squares plus the penalty on ``C``."""
    data = problem.data
    Gs = data.gamma_roots()[0]
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    if Gs is not None:
        B, C = B @ Gs, C @ Gs
    return _criterion(data.Y_white, data.X @ B, C, problem.spec)


def profiled_objective(problem: R4Problem, B) -> float:
    """The robust M-estimation loss of ``B`` with ``C`` profiled out.

    Row-wise: ``sum_i rho(||r_i||)``; element-wise: ``sum_ik rho(|r_ik|)``;
    constrained: the trimmed sum over the ``n - rho_count`` smallest rows.
    """
    data = problem.data
    Gs = data.gamma_roots()[0]
    B = np.asarray(B, dtype=float)
    if Gs is not None:
        B = B @ Gs
    R = data.Y_white - data.X @ B
    spec = problem.spec
    if isinstance(spec, PenalizedRowwise):
        return float(np.sum(spec.rule.rho(np.linalg.norm(R, axis=1))))
    if isinstance(spec, PenalizedElementwise):
        return float(np.sum(spec.rule.rho(R)))
    sq = np.sort(np.sum(R * R, axis=1))
    kept = sq[:data.n - spec.rho_count]
    trimmed = sq[data.n - spec.rho_count:]
    return 0.5 * float(np.sum(kept)) + 0.5 * spec.eta / (1 + spec.eta) * float(np.sum(trimmed))


def _support_jump_ok(spec) -> bool:
    """True when a flagged row's penalty does not depend on its value.

    Then, for a fixed set of flagged rows, the best ``B`` is plain RRR on the
    other rows and the best flagged ``C`` rows equal their residuals.
    """
    if isinstance(spec, PenalizedRowwise):
        return spec.rule.kind in ("hard", "hard_ridge") and spec.rule.eta == 0
    return isinstance(spec, Constrained) and spec.eta == 0


def _refit_without(X, Yw, flagged, r):
    keep = ~flagged
    sub = DesignFactor(X[keep])
    if min(sub.rank, Yw.shape[1]) < r:
        return None
    return rrr_identity(sub, Yw[keep], r)[0]


def r4_fit(problem: R4Problem, opts: SolverOptions | None = None, init_B=None) -> FitResult:
    """Run the alternating algorithm from one starting point.

    The cold start is ``C = 0`` with ``B`` the plain RRR fit. If ``init_B``
    is given, the first ``C`` is the optimal one for that ``B``.
    ``objective_trace[0]`` is the criterion at the starting pair.

    For hard thresholding and the constrained form (both with ``eta = 0``),
    a B-step whose flagged rows repeat those of the previous step is replaced
    by the exact fit with those rows left out. That point is the limit the
    plain alternation would creep towards, and the objective still never
    increases.
    """
    opts = opts or SolverOptions()
    data, r, spec = problem.data, problem.rank, problem.spec
    factor: DesignFactor = data.factor
    Gs, Gis = data.gamma_roots()
    Yw = data.Y_white

    if init_B is None:
        B, fitted = rrr_identity(factor, Yw, r)
        C = np.zeros_like(Yw)
    else:
        B = np.asarray(init_B, dtype=float)
        if Gs is not None:
            B = B @ Gs
        fitted = data.X @ B
        C = c_step(Yw - fitted, spec, opts.seed)
    trace = [_criterion(Yw, fitted, C, spec)]

    jump = _support_jump_ok(spec)
    X = data.X
    converged = False
    it = 0
    Z = None
    support = None
    for it in range(1, opts.max_iterations + 1):
        C = c_step(Yw - fitted, spec, opts.seed)
        flagged = _row_norms(C) > 0
        Bj = None
        if jump and support is not None and np.array_equal(flagged, support):
            # same flagged rows twice: go straight to the fixed-support optimum
            Bj = _refit_without(X, Yw, flagged, r)
        if Bj is not None:
            B, Z = Bj, None
            fitted = X @ B
            C = np.zeros_like(Yw)
            C[flagged] = Yw[flagged] - fitted[flagged]
        else:
            # B is only needed once the loop ends
            Z = rrr_coords(factor, Yw - C, r)
            fitted = factor.U @ Z
        support = flagged
        trace.append(_criterion(Yw, fitted, C, spec))
        prev, cur = trace[-2], trace[-1]
        if abs(prev - cur) / max(1.0, prev) < opts.tolerance:
            converged = True
            break
    if Z is not None:
        B = coef_from_coords(factor, Z)

    if Gis is not None:
        B = B @ Gis
        C = C @ Gis
    rows = tuple(int(i) for i in np.flatnonzero(np.linalg.norm(C, axis=1) > 0))
    return FitResult(B, C, r, rows, tuple(trace), it, converged, trace[-1], spec)


def subsample_starts(problem: R4Problem, opts: SolverOptions) -> tuple:
    """Initial coefficient matrices from plain RRR on random row subsamples.

    Draws ``opts.multistart`` subsamples of ``ceil(subsample_fraction * n)``
    rows from a PCG64 stream seeded by ``opts.seed``. Subsamples that cannot
    support rank ``r`` are skipped; returns ``(starts, warnings)``.
    """
    data, r = problem.data, problem.rank
    rng = np.random.Generator(np.random.PCG64(opts.seed))
    k = max(1, math.ceil(opts.subsample_fraction * data.n))
    Gis = data.gamma_roots()[1]
    starts, notes = [], []
    for s in range(opts.multistart):
        rows = np.sort(rng.choice(data.n, size=k, replace=False))
        sub = DesignFactor(data.X[rows])
        if min(sub.rank, data.m) < r:
            msg = f"restart {s}: subsample of {k} rows has design rank {sub.rank} < {r}; skipped"
            log.warning(msg)
            notes.append(msg)
            continue
        Bw, _ = rrr_identity(sub, data.Y_white[rows], r)
        starts.append(Bw if Gis is None else Bw @ Gis)
    return starts, notes


def multistart_fit(problem: R4Problem, opts: SolverOptions | None = None, init_B=None) -> FitResult:
    """Best of a cold start and ``opts.multistart`` subsample-seeded restarts.

    Each restart fits plain RRR to a random row subsample and uses it as
    ``init_B``. Ties keep the earliest candidate, so the cold start (or the
    supplied ``init_B``) wins ties.
    """
    opts = opts or SolverOptions()
    best = r4_fit(problem, opts, init_B=init_B)
    if opts.multistart == 0:
        return best
    starts, notes = subsample_starts(problem, opts)
    for start in starts:
        fit = r4_fit(problem, opts, init_B=start)
        if fit.objective < best.objective:
            best = fit
    return replace(best, warnings=tuple(best.warnings) + tuple(notes))
