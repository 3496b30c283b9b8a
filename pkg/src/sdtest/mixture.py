"""Weighted sums of independent (noncentral) chi-square variables.

Tails come from Imhof's inversion of the characteristic function:

    P(Q > x) = 1/2 + (1/pi) int_0^inf sin(phi(u) - x u / 2) / (u rho(u)) du

The range is split where the integrand starts to oscillate; the far part is
handled by QUADPACK's Fourier routine so the slowly decaying oscillation does
not need adaptive bisection.  Mixtures whose weights are all equal reduce to
a single scaled chi-square and use the exact distribution instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, stats

from .errors import DomainError, EvaluationError, ShapeError

TAIL_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class ChiSquareMixture:
    """Law of sum_i weights_i * chi2(dofs_i, noncentralities_i)."""

    weights: np.ndarray
    dofs: np.ndarray
    noncentralities: np.ndarray | None = None

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        d = np.atleast_1d(np.asarray(self.dofs, dtype=float))
        nc = np.zeros_like(w) if self.noncentralities is None else np.atleast_1d(
            np.asarray(self.noncentralities, dtype=float)
        )
        if not (w.shape == d.shape == nc.shape):
            raise ShapeError("weights, dofs and noncentralities differ in length")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise DomainError("mixture weights must be positive")
        if np.any(d <= 0) or np.any(d != np.round(d)):
            raise DomainError("degrees of freedom must be positive integers")
        if np.any(nc < 0) or not np.all(np.isfinite(nc)):
            raise DomainError("noncentralities must be nonnegative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dofs", d)
        object.__setattr__(self, "noncentralities", nc)

    @property
    def size(self):
        return self.weights.size

    def mean(self):
        return float(np.sum(self.weights * (self.dofs + self.noncentralities)))

    def key(self):
        return (tuple(self.weights), tuple(self.dofs), tuple(self.noncentralities))


def central_mixture(weights, dofs=None):
    weights = np.atleast_1d(np.asarray(weights, dtype=float))
    return ChiSquareMixture(weights, np.ones_like(weights) if dofs is None else dofs)


def _common_weight(w):
    if np.all(np.abs(w - w[0]) <= 1e-12 * abs(w[0])):
        return float(w[0])
    return None


def _imhof(w, d, nc, x):
    def parts(u):
        wu = w * u
        q = 1.0 + wu * wu
        phi = 0.5 * float(np.sum(d * np.arctan(wu) + nc * wu / q))
        logrho = float(np.sum(0.25 * d * np.log(q) + 0.5 * nc * wu * wu / q))
        return phi, math.exp(-logrho)

    def near(u):
        if u == 0.0:
            return 0.5 * float(np.sum(w * (d + nc))) - 0.5 * x
        phi, irho = parts(u)
        return math.sin(phi - 0.5 * x * u) * irho / u

    def fsin(u):
        phi, irho = parts(u)
        return math.sin(phi) * irho / u

    def fcos(u):
        phi, irho = parts(u)
        return math.cos(phi) * irho / u

    split = 20.0 / x
    a, ea = integrate.quad(near, 0.0, split, limit=400, epsabs=1e-10, epsrel=1e-10)
    b, eb = integrate.quad(fsin, split, np.inf, weight="cos", wvar=0.5 * x, limlst=200, epsabs=1e-11)
    c, ec = integrate.quad(fcos, split, np.inf, weight="sin", wvar=0.5 * x, limlst=200, epsabs=1e-11)
    err = ea + eb + ec
    if not math.isfinite(a + b + c) or err > TAIL_TOL * math.pi:
        raise EvaluationError(f"mixture tail inversion failed at x={x:g} (error estimate {err:.2g})")
    return 0.5 + (a + b - c) / math.pi


METHODS = ("auto", "inversion")


@lru_cache(maxsize=4096)
def _tail_cached(key, x, method):
    w, d, nc = (np.array(k) for k in key)
    c = _common_weight(w)
    if c is not None and method == "auto":
        dof, lam = float(d.sum()), float(nc.sum())
        if lam == 0.0:
            return float(stats.chi2.sf(x / c, dof))
        return float(stats.ncx2.sf(x / c, dof, lam))
    return min(1.0, max(0.0, _imhof(w, d, nc, x)))


def mixture_tail(m, x, method="auto"):
    """P(Q > x) for Q distributed as the mixture ``m``.

    ``method="inversion"`` forces the characteristic-function route even
    when the exact equal-weight shortcut applies.
    """
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}")
    x = float(x)
    if math.isnan(x):
        raise DomainError("x is NaN")
    if x <= 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    return _tail_cached(m.key(), x, method)


@lru_cache(maxsize=4096)
def _quantile_cached(key, alpha, method):
    m = ChiSquareMixture(*(np.array(k) for k in key))
    c = _common_weight(m.weights)
    if c is not None and method == "auto" and not np.any(m.noncentralities):
        return c * float(stats.chi2.isf(alpha, m.dofs.sum()))
    hi = max(m.mean(), 1e-8)
    while mixture_tail(m, hi, method) > alpha:
        hi *= 2.0
        if hi > 1e12:
            raise EvaluationError("could not bracket the mixture quantile")
    lo = hi / 2.0
    while lo > 1e-300 and mixture_tail(m, lo, method) < alpha:
        lo /= 2.0
    return optimize.brentq(lambda t: mixture_tail(m, t, method) - alpha, lo, hi, xtol=1e-12, rtol=1e-12)


def mixture_quantile(m, alpha, method="auto"):
    """The t with P(Q > t) = alpha, by bracketing and Brent's method."""
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}")
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    return _quantile_cached(m.key(), alpha, method)


def simulate_mixture(m, size, rng):
    """Draws of the mixture, for Monte Carlo checks."""
    out = np.zeros(size)
    for w, d, nc in zip(m.weights, m.dofs, m.noncentralities):
        out += w * (rng.noncentral_chisquare(d, nc, size) if nc > 0 else rng.chisquare(d, size))
    return out
