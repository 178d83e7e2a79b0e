"""Closed-form reduced-rank regression and its singular-value-penalized form.

The weighted problem ``min tr{(Y - XB) G (Y - XB)^T}  s.t. rank(B) <= r`` is
solved by whitening the responses with ``G^{1/2}`` and projecting the least
squares coefficients onto the leading right singular vectors of the fitted
values ``P_X Y G^{1/2}``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import InvalidInput, NotPositiveDefinite
from .thresholding import ThresholdRule

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps


def _check_finite(name, A):
    if not np.all(np.isfinite(A)):
        raise InvalidInput(f"{name} has non-finite entries")


def numerical_rank(A, s=None) -> int:
    """Rank of ``A`` with the cutoff ``max(shape) * eps * sigma_max``."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0
    if s is None:
        s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > max(A.shape) * EPS * s[0]))


def matrix_sqrt_pd(G):
    """Symmetric square root of an SPD matrix and of its inverse.

    Raises
    ------
    NotPositiveDefinite
        If ``G`` is not symmetric or an eigenvalue falls below
        ``m * eps * max|eigenvalue|``.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise InvalidInput(f"weighting matrix must be square, got shape {G.shape}")
    _check_finite("weighting matrix", G)
    scale = max(np.abs(G).max(), 1.0)
    if np.abs(G - G.T).max() > 1e-10 * scale:
        raise NotPositiveDefinite("weighting matrix is not symmetric")
    w, V = np.linalg.eigh(0.5 * (G + G.T))
    tol = G.shape[0] * EPS * max(np.abs(w).max(), EPS)
    if w.min() <= tol:
        raise NotPositiveDefinite(f"smallest eigenvalue {w.min():.3g} <= tolerance {tol:.3g}")
    root = np.sqrt(w)
    return (V * root) @ V.T, (V / root) @ V.T


@dataclass(frozen=True, eq=False)
class RegressionData:
    """Design ``X`` (n x p), responses ``Y`` (n x m), optional SPD weight ``Gamma``."""

    X: np.ndarray
    Y: np.ndarray
    Gamma: np.ndarray | None = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise InvalidInput(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        _check_finite("X", X)
        _check_finite("Y", Y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if self.Gamma is not None:
            G = np.asarray(self.Gamma, dtype=float)
            if G.shape != (Y.shape[1], Y.shape[1]):
                raise InvalidInput(f"Gamma must be {Y.shape[1]}x{Y.shape[1]}, got {G.shape}")
            matrix_sqrt_pd(G)
            object.__setattr__(self, "Gamma", G)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    @cached_property
    def factor(self) -> "DesignFactor":
        return DesignFactor(self.X)

    @cached_property
    def leave_one_out_factors(self) -> list:
        """``DesignFactor`` of ``X`` with row ``i`` removed, for each ``i``."""
        idx = np.arange(self.n)
        return [DesignFactor(self.X[idx != i]) for i in range(self.n)]

    @cached_property
    def _roots(self):
        if self.Gamma is None:
            return None, None
        return matrix_sqrt_pd(self.Gamma)

    def gamma_roots(self):
        """``(Gamma^{1/2}, Gamma^{-1/2})``, or ``(None, None)`` for identity weighting."""
        return self._roots

    @cached_property
    def Y_white(self) -> np.ndarray:
        """``Y Gamma^{1/2}``; the weighted problem is unweighted in these coordinates."""
        Gs = self._roots[0]
        return self.Y if Gs is None else self.Y @ Gs


@dataclass(frozen=True, eq=False)
class RrrFit:
    B_hat: np.ndarray
    rank: int
    fitted: np.ndarray


class DesignFactor:
    """Truncated thin SVD of the design, reused across many B-steps.

    ``P_X`` is applied as ``U (U^T Y)`` and the pseudoinverse as
    ``V diag(1/s) U^T``; neither is formed explicitly.
    """

    def __init__(self, X):
        X = np.asarray(X, dtype=float)
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
        q = numerical_rank(X, s)
        self.U = U[:, :q]
        self.s = s[:q]
        self.Vt = Vt[:q]
        self.rank = q
        self.shape = X.shape

    def coef(self, Y):
        return self.Vt.T @ ((self.U.T @ Y) / self.s[:, None])

    def project(self, Y):
        return self.U @ (self.U.T @ Y)


def _fix_signs(V):
    # first nonzero entry of each column positive
    if V.size == 0:
        return V
    first = np.argmax(np.abs(V) > EPS, axis=0)
    signs = np.sign(V[first, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def check_rank(r, m, q):
    rmax = min(m, q)
    if not (isinstance(r, (int, np.integer)) and 1 <= r <= rmax):
        raise InvalidInput(f"rank must be an integer in [1, {rmax}] (min(m, rank(X))), got {r}")


def rrr_coords(factor: DesignFactor, Y, r: int) -> np.ndarray:
    """Rank-``r`` fit in the column-space basis of the design: ``fitted = U @ Z``.

    The leading right singular vectors of ``U^T Y`` are the leading
    eigenvectors of ``Y^T P_X Y``.
    """
    W = factor.U.T @ Y
    _, sv, Vt = np.linalg.svd(W, full_matrices=False)
    if r < sv.size and sv[r - 1] - sv[r] <= 1e-12 * max(sv[0], 1.0):
        log.warning("tied singular values at rank %d (%.6g vs %.6g); "
                    "subspace choice follows the sign convention", r, sv[r - 1], sv[r])
    V = _fix_signs(Vt[:r].T)
    return (W @ V) @ V.T


def coef_from_coords(factor: DesignFactor, Z) -> np.ndarray:
    return factor.Vt.T @ (Z / factor.s[:, None])


def rrr_identity(factor: DesignFactor, Y, r: int):
    """Unweighted rank-``r`` fit given a factored design; returns ``(B, fitted)``."""
    Z = rrr_coords(factor, Y, r)
    return coef_from_coords(factor, Z), factor.U @ Z


def rrr_fit(data: RegressionData, r: int) -> RrrFit:
    """Global minimiser of the weighted rank-constrained least squares problem."""
    factor = data.factor
    check_rank(r, data.m, factor.rank)
    Gs, Gis = data.gamma_roots()
    if Gs is None:
        B, fitted = rrr_identity(factor, data.Y, r)
        return RrrFit(B, r, fitted)
    Bt, _ = rrr_identity(factor, data.Y_white, r)
    B = Bt @ Gis
    return RrrFit(B, r, data.X @ B)


def rrr_ridge_fit(data: RegressionData, r: int, mu: float) -> RrrFit:
    """Reduced-rank ridge regression via the augmented system.

    ``X`` gains ``sqrt(mu) I_p`` rows and ``Y`` gains zero rows; ``mu = 0``
    is plain :func:`rrr_fit`.
    """
    if not (np.isfinite(mu) and mu >= 0):
        raise InvalidInput(f"mu must be finite and >= 0, got {mu}")
    if mu == 0:
        return rrr_fit(data, r)
    Xa = np.vstack([data.X, np.sqrt(mu) * np.eye(data.p)])
    Ya = np.vstack([data.Y, np.zeros((data.p, data.m))])
    aug = rrr_fit(RegressionData(Xa, Ya, data.Gamma), r)
    return RrrFit(aug.B_hat, r, data.X @ aug.B_hat)


def singular_value_shrink_fit(data: RegressionData, rule: ThresholdRule) -> RrrFit:
    """Singular-value-penalized estimator via thresholding of ``P_X Y Gamma^{1/2}``."""
    factor = data.factor
    Gis = data.gamma_roots()[1]
    W = factor.U.T @ data.Y_white
    Uw, sv, Vt = np.linalg.svd(W, full_matrices=False)
    shrunk = rule(sv)
    # Z = U W, so A_o = Theta^sigma(Z) = U (Uw diag(shrunk) Vt)
    core = (Uw * shrunk) @ Vt
    B = factor.Vt.T @ (core / factor.s[:, None])
    if Gis is not None:
        B = B @ Gis
    rank = int(np.count_nonzero(shrunk))
    return RrrFit(B, rank, data.X @ B)
