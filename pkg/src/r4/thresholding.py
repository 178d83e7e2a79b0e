"""Thresholding rules and the penalties and robust losses they induce.

A threshold rule ``Theta(t; lam)`` is odd, monotone, shrinking and unbounded.
Every rule induces

* a penalty ``P_Theta(t) = int_0^|t| [Theta^{-1}(u) - u] du`` for which
  ``Theta`` is the proximal map,
* a psi-function ``psi(t) = t - Theta(t)``, and
* a robust loss ``rho(t) = int_0^|t| psi(u) du``.

Closed forms are used for the shipped rules (soft, hard, hard-ridge). New
rules are added with :func:`register_rule`; e.g. SCAD or MCP would register a
``theta`` together with closed-form ``penalty`` and ``rho`` functions, and
everything downstream (vector/matrix thresholding, the solver, the identity
check) picks them up by ``kind``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate

from .exceptions import InvalidInput

ArrayFn = Callable[[np.ndarray, float, float], np.ndarray]


class _RuleImpl(NamedTuple):
    theta: ArrayFn
    penalty: ArrayFn
    rho: ArrayFn
    breakpoints: Callable[[float, float], tuple]


_RULES: dict[str, _RuleImpl] = {}


def register_rule(kind: str, theta: ArrayFn, penalty: ArrayFn, rho: ArrayFn,
                  breakpoints: Callable[[float, float], tuple] = lambda lam, eta: (lam,)):
    """Register a threshold rule under ``kind``.

    All callables take ``(t, lam, eta)`` with ``t`` an ndarray and must be
    vectorised. ``breakpoints`` lists the points where ``psi`` is not smooth;
    quadrature in :func:`verify_threshold_identity` splits there.
    """
    _RULES[kind] = _RuleImpl(theta, penalty, rho, breakpoints)


# soft: Theta = sgn(t)(|t| - lam)_+, P = lam|t|, rho = Huber
def _soft_theta(t, lam, eta):
    return np.sign(t) * np.maximum(np.abs(t) - lam, 0.0)


def _soft_penalty(t, lam, eta):
    return lam * np.abs(t)


def _soft_rho(t, lam, eta):
    a = np.abs(t)
    return np.where(a <= lam, 0.5 * a * a, lam * a - 0.5 * lam * lam)


# hard-ridge: Theta = t/(1+eta) 1{|t|>lam}; eta = 0 is plain hard thresholding
def _hr_theta(t, lam, eta):
    return np.where(np.abs(t) > lam, t / (1.0 + eta), 0.0)


def _hr_penalty(t, lam, eta):
    a = np.abs(t)
    u0 = lam / (1.0 + eta)
    inner = lam * a - 0.5 * a * a
    outer = lam * u0 - 0.5 * u0 * u0 + 0.5 * eta * (a * a - u0 * u0)
    return np.where(a < u0, inner, outer)


def _hr_rho(t, lam, eta):
    a = np.abs(t)
    return np.where(a <= lam, 0.5 * a * a,
                    0.5 * lam * lam + 0.5 * eta / (1.0 + eta) * (a * a - lam * lam))


register_rule("soft", _soft_theta, _soft_penalty, _soft_rho)
register_rule("hard", _hr_theta, _hr_penalty, _hr_rho)
register_rule("hard_ridge", _hr_theta, _hr_penalty, _hr_rho,
              breakpoints=lambda lam, eta: (lam / (1.0 + eta), lam))


@dataclass(frozen=True)
class ThresholdRule:
    """A named threshold function at level ``lam``.

    ``eta`` is the ridge shrinkage of the ``hard_ridge`` rule and is ignored by
    the other rules (``hard`` is ``hard_ridge`` with ``eta = 0``).
    """

    kind: str
    lam: float
    eta: float = 0.0

    def __post_init__(self):
        if self.kind not in _RULES:
            raise InvalidInput(f"unknown threshold rule {self.kind!r}; "
                               f"known: {sorted(_RULES)}")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise InvalidInput(f"threshold level must be finite and >= 0, got {self.lam}")
        if not (np.isfinite(self.eta) and self.eta >= 0):
            raise InvalidInput(f"eta must be finite and >= 0, got {self.eta}")
        if self.kind == "hard" and self.eta != 0:
            raise InvalidInput("use kind='hard_ridge' for eta > 0")

    @property
    def _impl(self) -> _RuleImpl:
        return _RULES[self.kind]

    def with_lam(self, lam: float) -> "ThresholdRule":
        return ThresholdRule(self.kind, float(lam), self.eta)

    def __call__(self, t):
        return self._impl.theta(np.asarray(t, dtype=float), self.lam, self.eta)

    def penalty(self, t):
        return self._impl.penalty(np.asarray(t, dtype=float), self.lam, self.eta)

    def psi(self, t):
        t = np.asarray(t, dtype=float)
        return t - self(t)

    def rho(self, t):
        return self._impl.rho(np.asarray(t, dtype=float), self.lam, self.eta)


class PenaltyEval(NamedTuple):
    p_theta: float
    psi: float
    rho: float


def scalar_threshold(rule: ThresholdRule, t: float) -> float:
    return float(rule(t))


def vector_threshold(rule: ThresholdRule, a) -> np.ndarray:
    """Shrink the Euclidean norm of ``a`` by ``rule``, keeping its direction."""
    a = np.asarray(a, dtype=float)
    norm = np.linalg.norm(a)
    if norm == 0:
        return np.zeros_like(a)
    return a * (rule(norm) / norm)


def rowwise_threshold(rule: ThresholdRule, A) -> np.ndarray:
    """Apply :func:`vector_threshold` to every row of ``A``."""
    A = np.asarray(A, dtype=float)
    norms = np.sqrt(np.einsum("ij,ij->i", A, A))
    scale = np.zeros_like(norms)
    nz = norms > 0
    scale[nz] = rule(norms[nz]) / norms[nz]
    return A * scale[:, None]


def elementwise_threshold(rule: ThresholdRule, A) -> np.ndarray:
    return rule(np.asarray(A, dtype=float))


def matrix_singular_threshold(rule: ThresholdRule, A) -> np.ndarray:
    """Threshold the singular values of ``A``, keeping its singular vectors."""
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise InvalidInput("matrix has non-finite entries")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return (U * rule(s)) @ Vt


def penalty_value(rule: ThresholdRule, t: float) -> PenaltyEval:
    return PenaltyEval(float(rule.penalty(t)), float(rule.psi(t)), float(rule.rho(t)))


def verify_threshold_identity(rule: ThresholdRule, r: float) -> float:
    """Residual of ``0.5 (r - Theta(r))^2 + P(Theta(r)) = int_0^|r| psi``.

    The right-hand side is integrated numerically, piecewise between the
    rule's breakpoints, so it does not rely on the closed-form ``rho``.
    """
    theta_r = float(rule(r))
    lhs = 0.5 * (r - theta_r) ** 2 + float(rule.penalty(theta_r))
    a = abs(float(r))
    cuts = sorted({0.0, a, *(b for b in rule._impl.breakpoints(rule.lam, rule.eta) if 0 < b < a)})
    rhs = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        # Gauss-Kronrod nodes are interior, so jumps at the cuts are harmless
        val, _ = integrate.quad(lambda u: float(rule.psi(u)), lo, hi,
                                epsabs=1e-14, epsrel=1e-13, limit=200)
        rhs += val
    return abs(lhs - rhs)


def quantile_threshold_rows(A, rho_count: int, eta: float = 0.0, rng_seed: int = 0) -> np.ndarray:
    """Keep the ``rho_count`` rows of ``A`` with the largest norms.

    Kept rows are scaled by ``1/(1+eta)``, the others are zeroed. Ties in row
    norm are broken by a permutation drawn from a PCG64 generator seeded with
    ``rng_seed``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    rho_count = int(rho_count)
    if rho_count < 0 or rho_count > n:
        raise InvalidInput(f"rho_count must lie in [0, {n}], got {rho_count}")
    if eta < 0:
        raise InvalidInput(f"eta must be >= 0, got {eta}")
    out = np.zeros_like(A)
    if rho_count == 0:
        return out
    norms = np.linalg.norm(A, axis=1)
    tiebreak = np.random.Generator(np.random.PCG64(rng_seed)).permutation(n)
    # lexsort: last key is primary
    order = np.lexsort((tiebreak, -norms))
    keep = order[:rho_count]
    out[keep] = A[keep] / (1.0 + eta)
    return out
