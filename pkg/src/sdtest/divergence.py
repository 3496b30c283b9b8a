"""S-divergence family S_(gamma, lambda)(g, f) and the helpers built on it.

For densities g and f,

    S(g, f) = (1/A) int f^(1+gamma) - (1+gamma)/(A B) int f^B g^A + (1/B) int g^(1+gamma)

with A = 1 + lambda (1 - gamma) and B = gamma - lambda (1 - gamma).  When
A or B vanishes the continuous limit is used.  All three cases are written
here through t = log(g/f) as

    S(g, f) = int f^(1+gamma) phi(t),   phi(t) = e^(A t) E_B(t) - E_A(t),

where E_c(t) = expm1(c t) / c and E_0(t) = t.  phi is nonnegative with a
double zero at t = 0, which keeps near-identical pairs accurate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, EvaluationError, ShapeError

#: |A| or |B| at or below this switches to the logarithmic limit branch.
EPS_AB = 1e-8
#: Negative totals down to -NEG_TOL are clamped to zero.
NEG_TOL = 1e-9


def derive_ab(gamma, lam):
    """Return (A, B) for the divergence parameters (gamma, lambda)."""
    gamma = float(gamma)
    lam = float(lam)
    if not 0.0 <= gamma <= 1.0 or not np.isfinite(lam):
        raise DomainError(f"gamma must lie in [0, 1] and lambda be finite, got ({gamma}, {lam})")
    A = 1.0 + lam * (1.0 - gamma)
    B = gamma - lam * (1.0 - gamma)
    return A, B


@dataclass(frozen=True)
class TuningParams:
    """Divergence parameters (gamma, lambda) with the derived (A, B).

    ``lam`` stands for lambda, which is a Python keyword.
    """

    gamma: float
    lam: float = 0.0
    A: float = field(init=False)
    B: float = field(init=False)

    def __post_init__(self):
        A, B = derive_ab(self.gamma, self.lam)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)


def as_tuning(tp):
    if isinstance(tp, TuningParams):
        return tp
    if isinstance(tp, (tuple, list)):
        return TuningParams(*tp)
    return TuningParams(float(tp), 0.0)


def _e(c, t):
    if abs(c) <= EPS_AB:
        return t
    return np.expm1(c * t) / c


def k_transform(delta, A):
    """K(delta) = ((delta + 1)^A - 1) / A, or log(1 + delta) when |A| <= EPS_AB.

    At delta = -1 with A <= 0 the value is -inf.
    """
    d = np.asarray(delta, dtype=float)
    if np.any(d < -1) or np.any(np.isnan(d)):
        raise DomainError("K(delta) requires delta >= -1")
    with np.errstate(divide="ignore"):
        t = np.log1p(d)
    out = np.where(np.isneginf(t), -np.inf if A <= EPS_AB else -1.0 / A, 0.0)
    finite = np.isfinite(t)
    out = np.where(finite, _e(A, np.where(finite, t, 0.0)), out)
    return out[()] if out.ndim == 0 else out


def integrand_from_logs(log_g, log_f, tp):
    """Pointwise integrand of S(g, f) given log-densities (may contain -inf)."""
    tp = as_tuning(tp)
    A, B, c = tp.A, tp.B, 1.0 + tp.gamma
    lg = np.asarray(log_g, dtype=float)
    lf = np.asarray(log_f, dtype=float)
    lg, lf = np.broadcast_arrays(lg, lf)
    out = np.zeros(lg.shape)

    g0 = np.isneginf(lg)
    f0 = np.isneginf(lf)
    both = g0 & f0
    only_g0 = g0 & ~f0
    only_f0 = f0 & ~g0
    out[only_g0] = np.exp(c * lf[only_g0]) / A if A > EPS_AB else np.inf
    out[only_f0] = np.exp(c * lg[only_f0]) / B if B > EPS_AB else np.inf
    out[both] = 0.0

    ok = ~(g0 | f0)
    if np.any(ok):
        a, b = lg[ok], lf[ok]
        t = a - b
        res = np.empty_like(t)
        near = np.abs(t) <= 1.0
        tn = t[near]
        res[near] = np.exp(c * b[near]) * (np.exp(A * tn) * _e(B, tn) - _e(A, tn))
        far = ~near
        if np.any(far):
            a, b, tf = a[far], b[far], t[far]
            cross = np.exp(B * b + A * a)
            if abs(B) <= EPS_AB:
                term1 = cross * tf
            else:
                term1 = (np.exp(c * a) - cross) / B
            if abs(A) <= EPS_AB:
                term2 = np.exp(c * b) * tf
            else:
                term2 = (cross - np.exp(c * b)) / A
            res[far] = term1 - term2
        out[ok] = res
    return out


def _finish(values, weights, points):
    bad = ~np.isfinite(values)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise EvaluationError(f"S-divergence integrand is not finite at x = {points[i].item()!r}")
    total = float(np.dot(weights, values))
    if total < 0.0:
        if total < -NEG_TOL:
            raise EvaluationError(f"S-divergence evaluated to {total:.3g} < 0; quadrature failure")
        total = 0.0
    return total


# -- density representations ----------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Quadrature rule: nodes and their weights."""

    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, values):
        return np.tensordot(self.weights, values, axes=(0, 0))


def gauss_legendre_grid(lower, upper, n=512, panel=16):
    """Composite Gauss-Legendre rule with ``n`` nodes in panels of ``panel``."""
    if not upper > lower:
        raise DomainError("grid window must have upper > lower")
    if n % panel:
        raise DomainError("node count must be a multiple of the panel size")
    x, w = np.polynomial.legendre.leggauss(panel)
    edges = np.linspace(lower, upper, n // panel + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return Grid(nodes, weights)


def equispaced_grid(lower, upper, n=1024):
    """Equispaced nodes with trapezoid weights."""
    if not upper > lower or n < 2:
        raise DomainError("need upper > lower and at least two nodes")
    nodes = np.linspace(lower, upper, n)
    w = np.full(n, (upper - lower) / (n - 1))
    w[[0, -1]] *= 0.5
    return Grid(nodes, w)


@dataclass(frozen=True, eq=False)
class DensityRep:
    """A density on a fixed support: a discrete table or a function on a grid."""

    kind: str
    points: np.ndarray
    values: np.ndarray
    weights: np.ndarray

    @classmethod
    def discrete(cls, points, masses, tol=1e-9):
        points = np.asarray(points)
        masses = np.asarray(masses, dtype=float)
        if points.shape != masses.shape:
            raise ShapeError("points and masses differ in length")
        if np.any(masses < 0) or not np.all(np.isfinite(masses)):
            raise DomainError("masses must be finite and nonnegative")
        if abs(masses.sum() - 1.0) > tol:
            raise DomainError(f"masses sum to {masses.sum():.12g}, not 1")
        return cls("discrete", points, masses, np.ones_like(masses))

    @classmethod
    def on_grid(cls, grid, values, tol=1e-6):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.nodes.shape:
            raise ShapeError("values do not match the grid")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise DomainError("density values must be finite and nonnegative")
        total = float(grid.integrate(values))
        if abs(total - 1.0) > tol:
            raise DomainError(f"grid density integrates to {total:.9g}, not 1")
        return cls("grid", grid.nodes, values, grid.weights)

    def same_support(self, other):
        return (
            self.kind == other.kind
            and self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    def integral(self):
        return float(np.dot(self.weights, self.values))


def s_divergence(g, f, tp):
    """S_(gamma, lambda)(g, f) between two densities on a shared support."""
    if not g.same_support(f):
        raise ShapeError("g and f are not defined on the same support")
    with np.errstate(divide="ignore"):
        lg = np.log(g.values)
        lf = np.log(f.values)
    vals = integrand_from_logs(lg, lf, tp)
    return _finish(vals, g.weights, g.points)


def s_divergence_between_members(model, theta1, theta2, tp):
    """S_(gamma, lambda)(f_theta1, f_theta2) for two members of ``model``."""
    tp = as_tuning(tp)
    theta1 = np.asarray(theta1, dtype=float)
    theta2 = np.asarray(theta2, dtype=float)
    if np.array_equal(theta1, theta2):
        return 0.0
    if model.has_closed_form("divergence"):
        return model.closed_divergence(theta1, theta2, tp)
    grid = model.quadrature([theta1, theta2])
    vals = integrand_from_logs(model.logpdf(theta1, grid.nodes), model.logpdf(theta2, grid.nodes), tp)
    return _finish(vals, grid.weights, grid.nodes)
