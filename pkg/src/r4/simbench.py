"""Synthetic benchmark: data generators, comparators, metrics and aggregation.

Three setups are provided. Models I and II use a Gaussian design with
compound-symmetric correlation 0.5 (n=100, p=12, m=8, r*=3) and differ in
the error correlation; Model III is high-dimensional (p=500, m=50) with a
rank-10 design. Outliers shift the first ``n * fraction`` response rows by
``alpha`` column standard deviations of the signal, and the first two design
rows are set to 10 to create leverage points.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .exceptions import Infeasible, InvalidInput, R4Error
from .rrr import DesignFactor, RegressionData, numerical_rank, rrr_fit, rrr_identity
from .solver import FitResult, PenalizedRowwise, R4Problem, SolverOptions, multistart_fit
from .thresholding import ThresholdRule
from .tuning import GridSpec, fit_path, pic

log = logging.getLogger(__name__)

METHODS = ("R4", "R4_w", "RRR", "RRS", "RRO")

_MODEL_DEFAULTS = {
    "I": dict(n=100, p=12, m=8, r_star=3, q_latent=0),
    "II": dict(n=100, p=12, m=8, r_star=3, q_latent=0),
    "III": dict(n=100, p=500, m=50, r_star=3, q_latent=10),
}


@dataclass
class SimConfig:
    model: str = "I"
    n: int = 100
    p: int = 12
    m: int = 8
    r_star: int = 3
    q_latent: int = 0
    outlier_fraction: float = 0.05
    alpha: float = 2.0
    snr: float = 0.75
    replications: int = 50
    seed: int = 0
    leverage: bool = True
    lambda_count: int = 100
    vmax: float = 0.4
    comparator_tuning: str = "pic"  # or "cv": 10-fold CV for RRR / RRS

    def __post_init__(self):
        if self.model not in _MODEL_DEFAULTS:
            raise InvalidInput(f"model must be one of I, II, III; got {self.model!r}")
        if self.model == "III" and self.q_latent < 1:
            raise InvalidInput("Model III needs q_latent >= 1")
        if not 0 <= self.outlier_fraction < 1:
            raise InvalidInput("outlier_fraction must lie in [0, 1)")
        if self.replications < 1:
            raise InvalidInput("replications must be >= 1")
        if self.comparator_tuning not in ("pic", "cv"):
            raise InvalidInput(f"comparator_tuning must be 'pic' or 'cv', got {self.comparator_tuning!r}")

    @classmethod
    def for_model(cls, model: str, **overrides) -> "SimConfig":
        if model not in _MODEL_DEFAULTS:
            raise InvalidInput(f"model must be one of I, II, III; got {model!r}")
        return cls(model=model, **{**_MODEL_DEFAULTS[model], **overrides})

    @property
    def n_outliers(self) -> int:
        return int(round(self.n * self.outlier_fraction))


@dataclass(eq=False)
class Instance:
    data: RegressionData
    B_star: np.ndarray
    C_star: np.ndarray
    Sigma: np.ndarray
    sigma2: float
    X_clean: np.ndarray
    outlier_rows: tuple
    leverage_rows: tuple


def compound_symmetry(d: int, rho: float = 0.5) -> np.ndarray:
    return np.full((d, d), rho) + (1 - rho) * np.eye(d)


def _rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(rep)])))


def generate_instance(cfg: SimConfig, rep: int) -> Instance:
    """One replication of the configured model; deterministic in ``(cfg.seed, rep)``.

    The leverage rows are written into ``X`` first; the outlier magnitudes
    (``alpha`` times the column SDs of ``X B*``) and the noise scale are then
    computed from that final design. The noise scale makes the ``r*``-th
    singular value of ``X B*`` divided by ``||E||_F`` equal ``cfg.snr``.
    """
    rng = _rng(cfg.seed, rep)
    n, p, m, r = cfg.n, cfg.p, cfg.m, cfg.r_star
    delta = compound_symmetry(p)
    if cfg.model == "III":
        w, V = np.linalg.eigh(delta)
        X = rng.standard_normal((n, cfg.q_latent)) @ rng.standard_normal((cfg.q_latent, p))
        X = X @ ((V * np.sqrt(w)) @ V.T)
    else:
        X = rng.standard_normal((n, p)) @ np.linalg.cholesky(delta).T
    B_star = rng.standard_normal((p, r)) @ rng.standard_normal((m, r)).T

    X_clean = X.copy()
    leverage_rows: tuple = ()
    if cfg.leverage:
        X[:2] = 10.0
        leverage_rows = (0, 1)
    signal = X @ B_star

    k = cfg.n_outliers
    C_star = np.zeros((n, m))
    C_star[:k] = cfg.alpha * signal.std(axis=0, ddof=1)

    sigma0 = np.eye(m) if cfg.model == "I" else compound_symmetry(m)
    E0 = rng.standard_normal((n, m)) @ np.linalg.cholesky(sigma0).T
    sv = np.linalg.svd(signal, compute_uv=False)
    sigma = sv[r - 1] / (cfg.snr * np.linalg.norm(E0))
    Y = signal + C_star + sigma * E0
    return Instance(RegressionData(X, Y), B_star, C_star, sigma * sigma * sigma0,
                    float(sigma * sigma), X_clean, tuple(range(k)), leverage_rows)


def _fit_from(B, C, rank) -> FitResult:
    rows = tuple(int(i) for i in np.flatnonzero(np.linalg.norm(C, axis=1) > 0))
    return FitResult(B, C, rank, rows, (), 0, True, math.nan)


def three_step_rro(data: RegressionData, r: int, known_outlier_count: int) -> FitResult:
    """Fit RRR, drop the rows with the largest residual norms, refit on the rest.

    Dropped rows of ``C`` hold the residuals of the refitted model.
    """
    k = int(known_outlier_count)
    if not 0 <= k < data.n:
        raise InvalidInput(f"known_outlier_count must lie in [0, {data.n}), got {k}")
    first = rrr_fit(data, r)
    if k == 0:
        return _fit_from(first.B_hat, np.zeros_like(data.Y), r)
    R = data.Y - first.fitted
    rss = np.sum((R @ data.Gamma) * R, axis=1) if data.Gamma is not None else np.sum(R * R, axis=1)
    # stable sort: among equal RSS the earlier row is dropped
    drop = np.argsort(-rss, kind="stable")[:k]
    keep = np.setdiff1d(np.arange(data.n), drop)
    sub = RegressionData(data.X[keep], data.Y[keep], data.Gamma)
    if min(sub.factor.rank, data.m) < r:
        raise Infeasible(f"{len(keep)} retained rows cannot support rank {r}")
    B = rrr_fit(sub, r).B_hat
    C = np.zeros_like(data.Y)
    C[drop] = data.Y[drop] - data.X[drop] @ B
    return _fit_from(B, C, r)


def evaluate(B_hat, C_hat, inst: Instance) -> dict:
    """Per-replication metrics; leverage rows are left out of the error terms."""
    data = inst.data
    keep = np.setdiff1d(np.arange(data.n), inst.leverage_rows)
    X = data.X[keep]
    nk, m = len(keep), data.m
    D = X @ (inst.B_star - B_hat)
    err_B = float(np.sum(D * D)) / (m * nk)
    err_Bw = float(np.sum((D @ np.linalg.inv(inst.Sigma)) * D)) / (m * nk)
    P = D + (inst.C_star - C_hat)[keep]
    err_BC = float(np.sum(P * P)) / (m * nk)
    flagged = set(np.flatnonzero(np.linalg.norm(C_hat, axis=1) > 0).tolist())
    truth = set(inst.outlier_rows)
    clean = data.n - len(truth)
    masking = len(truth - flagged) / len(truth) if truth else 0.0
    swamping = len(flagged - truth) / clean if clean else 0.0
    return dict(err_B=err_B, err_B_weighted=err_Bw, err_BC=err_BC,
                rank=numerical_rank(B_hat), J=len(flagged),
                masking=masking, swamping=swamping,
                joint_detection=float(masking == 0 and swamping == 0))


def _ranks(data: RegressionData) -> list:
    return list(range(1, min(data.m, data.factor.rank) + 1))


def _pic_select(data, candidates):
    """Pick the candidate ``(B, C, rank)`` with the smallest PIC."""
    q = data.factor.rank
    best, arg = math.inf, None
    for B, C, r in candidates:
        val = pic(data.Y, data.X, B, C, q=q, rank=min(r, numerical_rank(B)), Gamma=data.Gamma)
        if val > -math.inf and val < best:
            best, arg = val, (B, C)
    return arg


def _ridge_rank_fits(X, Y, mu: float, ranks) -> dict:
    """Rank-r ridge RRR coefficients for every feasible r, one factorisation."""
    if mu > 0:
        X = np.vstack([X, math.sqrt(mu) * np.eye(X.shape[1])])
        Y = np.vstack([Y, np.zeros((X.shape[1], Y.shape[1]))])
    factor = DesignFactor(X)
    top = min(Y.shape[1], factor.rank)
    return {r: rrr_identity(factor, Y, r)[0] for r in ranks if r <= top}


def cv_select_rrr(data: RegressionData, ranks, mus=(0.0,), folds: int = 10, seed: int = 0):
    """Choose ``(rank, mu)`` by K-fold cross-validated prediction error, then refit.

    Folds come from a PCG64 permutation of the rows. A candidate that some
    training fold cannot support (rank above its design rank) is dropped.
    Returns ``(B, rank, mu)``.
    """
    n = data.n
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    err = {(r, mu): 0.0 for r in ranks for mu in mus}
    for test in np.array_split(perm, folds):
        train = np.setdiff1d(np.arange(n), test)
        for mu in mus:
            fits = _ridge_rank_fits(data.X[train], data.Y[train], mu, ranks)
            for r in ranks:
                if r not in fits:
                    err[(r, mu)] = math.inf
                    continue
                R = data.Y[test] - data.X[test] @ fits[r]
                err[(r, mu)] += float(np.sum(R * R))
    # ties go to the smaller rank, then the smaller mu
    r, mu = min(err, key=lambda k: (err[k], k[0], k[1]))
    if not math.isfinite(err[(r, mu)]):
        raise Infeasible("no rank is feasible on every training fold")
    return _ridge_rank_fits(data.X, data.Y, mu, [r])[r], r, mu


# subsample-seeded chains along each rank path; cheap once duplicates merge
STUDY_OPTIONS = SolverOptions(multistart=10)


def _run_method(method: str, inst: Instance, cfg: SimConfig, opts: SolverOptions):
    data = inst.data
    zero = np.zeros_like(data.Y)
    if method in ("R4", "R4_w"):
        if method == "R4_w":
            data = RegressionData(data.X, data.Y, np.linalg.inv(inst.Sigma))
        grid = GridSpec(_ranks(data), lambda_count=cfg.lambda_count,
                        outlier_fraction_bounds=(0.0, cfg.vmax))
        fit = fit_path(data, grid, opts).selected_fit
        if fit is None:
            raise Infeasible("no admissible cell on the path")
        return fit.B_hat, fit.C_hat
    if method in ("RRR", "RRS"):
        mus = (0.0,)
        if method == "RRS":
            mus = (0.0, *(float(np.linalg.norm(data.X, 2)) ** 2 * np.logspace(-4, 0, 9)))
        if cfg.comparator_tuning == "cv":
            return cv_select_rrr(data, _ranks(data), mus, seed=opts.seed)[0], zero
        cands = [(B, zero, r) for mu in mus
                 for r, B in _ridge_rank_fits(data.X, data.Y, mu, _ranks(data)).items()]
        return _pic_select(data, cands)
    if method == "RRO":
        cands = []
        for r in _ranks(data):
            try:
                f = three_step_rro(data, r, cfg.n_outliers)
            except Infeasible:
                continue
            cands.append((f.B_hat, f.C_hat, r))
        return _pic_select(data, cands)
    raise InvalidInput(f"unknown method {method!r}; choose from {METHODS}")


def run_replication(cfg: SimConfig, rep: int, methods, opts: SolverOptions | None = None) -> dict:
    opts = opts or STUDY_OPTIONS
    inst = generate_instance(cfg, rep)
    out = {}
    for method in methods:
        try:
            B, C = _run_method(method, inst, cfg, opts)
            out[method] = evaluate(B, C, inst)
        except (R4Error, np.linalg.LinAlgError) as exc:
            log.warning("replication %d, method %s failed: %s", rep, method, exc)
            out[method] = None
    return out


METRICS = ("err_B", "err_B_weighted", "err_BC", "rank", "masking", "swamping", "joint_detection")


@dataclass(eq=False)
class SimReport:
    config: SimConfig
    methods: tuple
    records: list  # one dict per replication, method -> metrics or None
    summary: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def rows(self) -> list:
        """Table rows in the layout of the published tables."""
        out = []
        for mth in self.methods:
            s = self.summary.get(mth, {})
            out.append({"method": mth, **s, "failures": self.failures.get(mth, 0)})
        return out

    def to_dict(self) -> dict:
        return {"config": asdict(self.config), "methods": list(self.methods),
                "summary": self.summary, "failures": self.failures,
                "records": self.records}


def _trim_sd(x, prop=0.1):
    x = np.sort(np.asarray(x, dtype=float))
    cut = int(prop * len(x))
    kept = x[cut:len(x) - cut] if cut else x
    return float(np.std(kept, ddof=1)) if len(kept) > 1 else 0.0


def aggregate(records: list, methods) -> tuple:
    """10% trimmed means (errors) and plain means (rates, rank) per method.

    The spread reported next to each error is the SD of the trimmed sample.
    """
    summary, failures = {}, {}
    for mth in methods:
        ok = [r[mth] for r in records if r.get(mth) is not None]
        failures[mth] = len(records) - len(ok)
        if not ok:
            summary[mth] = {}
            continue
        col = {k: np.array([r[k] for r in ok], dtype=float) for k in METRICS}
        s = {}
        for k in ("err_B", "err_B_weighted", "err_BC"):
            s[k] = float(stats.trim_mean(col[k], 0.1))
            s[k + "_sd"] = _trim_sd(col[k])
        for k in ("rank", "masking", "swamping", "joint_detection"):
            s[k] = float(np.mean(col[k]))
        summary[mth] = s
    return summary, failures


def run_study(cfg: SimConfig, methods=("R4", "RRR", "RRS", "RRO"),
              opts: SolverOptions | None = None, n_jobs: int = 1) -> SimReport:
    """Run all replications and aggregate in replication order."""
    methods = tuple(methods)
    for mth in methods:
        if mth not in METHODS:
            raise InvalidInput(f"unknown method {mth!r}; choose from {METHODS}")
    opts = opts or STUDY_OPTIONS
    reps = range(cfg.replications)
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            records = list(ex.map(run_replication, [cfg] * len(reps), reps,
                                  [methods] * len(reps), [opts] * len(reps)))
    else:
        records = [run_replication(cfg, rep, methods, opts) for rep in reps]
    summary, failures = aggregate(records, methods)
    return SimReport(cfg, methods, records, summary, failures)


def _pick_row(X) -> int:
    # the corrupted row needs a nonzero column of P_X, i.e. a nonzero design row
    nz = np.flatnonzero(np.linalg.norm(X, axis=1) > 0)
    if nz.size == 0:
        raise InvalidInput("design is identically zero")
    return int(nz[0])


def breakdown_sweep(data: RegressionData, magnitudes, rank: int, lam: float,
                    rule_kind: str = "hard", row: int | None = None, col: int = 0,
                    opts: SolverOptions | None = None) -> dict:
    """Corrupt one entry of ``Y`` by each magnitude and record ``||X B_hat||_F``.

    Returns a dict of equal-length lists: ``magnitude``, ``rrr`` and ``r4``.
    """
    mags = [float(M) for M in magnitudes]
    if any(M < 0 for M in mags) or any(b <= a for a, b in zip(mags, mags[1:])):
        raise InvalidInput("magnitudes must be nonnegative and strictly increasing")
    opts = opts or SolverOptions(multistart=10)
    i = _pick_row(data.X) if row is None else int(row)
    spec = PenalizedRowwise(ThresholdRule(rule_kind, lam))
    out = {"magnitude": [], "rrr": [], "r4": [], "row": i, "col": col}
    for M in mags:
        Y = data.Y.copy()
        Y[i, col] += M
        d = RegressionData(data.X, Y, data.Gamma)
        out["magnitude"].append(M)
        out["rrr"].append(float(np.linalg.norm(rrr_fit(d, rank).fitted)))
        fit = multistart_fit(R4Problem(d, rank, spec), opts)
        out["r4"].append(float(np.linalg.norm(data.X @ fit.B_hat)))
    return out
