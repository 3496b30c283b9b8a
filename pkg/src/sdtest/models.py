"""Parametric models, null-hypothesis constraints and kernel-smoothed models.

A model works in its natural parameters (``theta``), e.g. (mu, sigma) for
the normal.  Optimizers see an unconstrained version ``eta`` (sigma = exp(s))
through ``to_eta`` / ``from_eta``.

Closed-form shortcuts are looked up by name in ``closed_forms``; a model
built with ``without_closed_forms()`` falls back to quadrature everywhere,
which is how the closed forms are cross-checked.
"""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .divergence import Grid, gauss_legendre_grid
from .errors import DomainError, ShapeError, UnsupportedOperation

LOG_2PI = math.log(2.0 * math.pi)
#: Discrete supports are cut where the cumulative mass exceeds 1 - TAIL_MASS.
TAIL_MASS = 1e-12
#: Continuous windows span this many scale units on each side.
WINDOW_SCALES = 10.0
QUAD_NODES = 512


@dataclass(frozen=True)
class DiscreteSupport:
    max_index: int | None = None

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        ok = (x >= 0) & (x == np.floor(x))
        if self.max_index is not None:
            ok &= x <= self.max_index
        return ok


@dataclass(frozen=True)
class ContinuousSupport:
    lower: float = -math.inf
    upper: float = math.inf

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return (x >= self.lower) & (x <= self.upper) & ~np.isnan(x)


class ParametricModel:
    """Base class for a p-parameter family of densities.

    Subclasses provide ``logpdf``, ``score``, the eta transform, an
    initializer and a sampler.  Integrals over the support use
    ``quadrature``, which subclasses also provide.
    """

    name = "model"
    param_names: tuple = ()
    support = ContinuousSupport()
    closed_forms = frozenset()

    @property
    def dim(self):
        return len(self.param_names)

    @property
    def is_discrete(self):
        return isinstance(self.support, DiscreteSupport)

    def has_closed_form(self, key):
        return key in self.closed_forms

    def without_closed_forms(self):
        other = copy.copy(self)
        other.closed_forms = frozenset()
        return other

    def pdf(self, theta, x):
        return np.exp(self.logpdf(theta, x))

    def logpdf(self, theta, x):
        raise NotImplementedError

    def score(self, theta, x):
        """Gradient of log f_theta(x) in theta; shape (len(x), p)."""
        raise NotImplementedError

    def in_space(self, theta):
        raise NotImplementedError

    def check_theta(self, theta):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (self.dim,):
            raise ShapeError(f"{self.name} expects {self.dim} parameters, got {theta.shape[0]}")
        if not self.in_space(theta):
            raise DomainError(f"{theta!r} is outside the parameter space of {self.name}")
        return theta

    def to_eta(self, theta):
        return np.asarray(theta, dtype=float)

    def from_eta(self, eta):
        return np.asarray(eta, dtype=float)

    def dtheta_deta(self, eta):
        """Diagonal of the Jacobian d theta / d eta."""
        return np.ones(self.dim)

    def initial(self, x, weights=None):
        raise NotImplementedError

    def sample(self, theta, n, rng):
        raise NotImplementedError

    def quadrature(self, thetas):
        """Quadrature rule accurate for integrands built from f_theta, theta in ``thetas``."""
        raise NotImplementedError

    # -- integrals used by the DPD machinery ----------------------------------

    def dpd_terms(self, theta, beta):
        """Return (int f^(1+beta), xi) with xi = int u f^(1+beta)."""
        if self.has_closed_form("dpd_terms"):
            return self.closed_dpd_terms(theta, beta)
        grid = self.quadrature([theta])
        fb = np.exp((1.0 + beta) * self.logpdf(theta, grid.nodes))
        u = self.score(theta, grid.nodes)
        return float(grid.integrate(fb)), grid.integrate(fb[:, None] * u)

    def _self_check(self, theta, tol=1e-6):
        grid = self.quadrature([np.asarray(theta, dtype=float)])
        total = float(grid.integrate(self.pdf(theta, grid.nodes)))
        if abs(total - 1.0) > tol:
            raise DomainError(f"{self.name} density sums to {total:.9g} at {theta!r}")


# -- normal ---------------------------------------------------------------------


def _normal_power_integral(sigma, c):
    # int N(mu, sigma^2)^c dx
    return (2.0 * math.pi) ** (-(c - 1.0) / 2.0) * c ** -0.5 * sigma ** (-(c - 1.0))


def normal_dpd_blocks(sigma, beta):
    """(J, xi, m) for N(mu, sigma^2) in (mu, sigma) coordinates."""
    m = _normal_power_integral(sigma, 1.0 + beta)
    j_mu = m / ((1.0 + beta) * sigma**2)
    j_sigma = m * (2.0 + beta**2) / ((1.0 + beta) ** 2 * sigma**2)
    xi_sigma = -m * beta / ((1.0 + beta) * sigma)
    return np.diag([j_mu, j_sigma]), np.array([0.0, xi_sigma]), m


class NormalModel(ParametricModel):
    """N(mu, sigma^2) with theta = (mu, sigma)."""

    name = "normal"
    param_names = ("mu", "sigma")
    support = ContinuousSupport()

    def __init__(self):
        self.closed_forms = frozenset({"divergence", "dpd_terms", "dpd_matrices", "smooth"})
        self._self_check((0.0, 1.0))

    def logpdf(self, theta, x):
        mu, sigma = theta[0], theta[1]
        z = (np.asarray(x, dtype=float) - mu) / sigma
        return -0.5 * LOG_2PI - math.log(sigma) - 0.5 * z * z

    def score(self, theta, x):
        mu, sigma = theta[0], theta[1]
        z = (np.atleast_1d(np.asarray(x, dtype=float)) - mu) / sigma
        return np.stack([z / sigma, (z * z - 1.0) / sigma], axis=-1)

    def in_space(self, theta):
        return bool(np.all(np.isfinite(theta)) and theta[1] > 0)

    def to_eta(self, theta):
        return np.array([theta[0], math.log(theta[1])])

    def from_eta(self, eta):
        return np.array([eta[0], math.exp(eta[1])])

    def dtheta_deta(self, eta):
        return np.array([1.0, math.exp(eta[1])])

    def initial(self, x, weights=None):
        x = np.asarray(x, dtype=float)
        w = np.full(x.shape, 1.0 / x.size) if weights is None else np.asarray(weights, dtype=float)
        mean = float(np.dot(w, x))
        var = float(np.dot(w, (x - mean) ** 2))
        return np.array([mean, math.sqrt(var) if var > 0 else 1.0])

    def sample(self, theta, n, rng):
        return rng.normal(theta[0], theta[1], size=n)

    def window(self, thetas):
        th = np.atleast_2d(np.asarray(thetas, dtype=float))
        s = th[:, 1].max()
        return th[:, 0].min() - WINDOW_SCALES * s, th[:, 0].max() + WINDOW_SCALES * s

    def quadrature(self, thetas):
        return gauss_legendre_grid(*self.window(thetas), n=QUAD_NODES)

    def closed_divergence(self, theta1, theta2, tp):
        from .testing import normal_sdt_closed_form

        return 0.5 * normal_sdt_closed_form(theta1[0], theta1[1], theta2[0], theta2[1], tp.gamma, tp.lam, 1)

    def closed_dpd_terms(self, theta, beta):
        _, xi, m = normal_dpd_blocks(theta[1], beta)
        return m, xi

    def closed_dpd_matrices(self, theta, beta):
        J, xi, _ = normal_dpd_blocks(theta[1], beta)
        J2, _, _ = normal_dpd_blocks(theta[1], 2.0 * beta)
        return J, xi, J2 - np.outer(xi, xi)

    def smoothed_logpdf(self, theta, x, h):
        return self.logpdf((theta[0], math.hypot(theta[1], h)), x)

    def smoothed_score(self, theta, x, h):
        mu, sigma = theta[0], theta[1]
        tau2 = sigma * sigma + h * h
        d = np.atleast_1d(np.asarray(x, dtype=float)) - mu
        return np.stack([d / tau2, sigma * (d * d / tau2 - 1.0) / tau2], axis=-1)


class FixedScaleNormalModel(NormalModel):
    """N(mu, sigma0^2) with known sigma0; theta = (mu,)."""

    param_names = ("mu",)

    def __init__(self, sigma):
        if not sigma > 0:
            raise DomainError("known sigma must be positive")
        self.sigma = float(sigma)
        self.name = f"normal-fixed-sigma:{self.sigma:g}"
        self.closed_forms = frozenset({"divergence", "dpd_terms", "dpd_matrices", "smooth"})
        self._self_check((0.0,))

    def _full(self, theta):
        return (theta[0], self.sigma)

    def logpdf(self, theta, x):
        return super().logpdf(self._full(theta), x)

    def score(self, theta, x):
        return super().score(self._full(theta), x)[:, :1]

    def in_space(self, theta):
        return bool(np.all(np.isfinite(theta)))

    def to_eta(self, theta):
        return np.array([theta[0]], dtype=float)

    def from_eta(self, eta):
        return np.array([eta[0]], dtype=float)

    def dtheta_deta(self, eta):
        return np.ones(1)

    def initial(self, x, weights=None):
        return super().initial(x, weights)[:1]

    def sample(self, theta, n, rng):
        return rng.normal(theta[0], self.sigma, size=n)

    def window(self, thetas):
        th = np.atleast_2d(np.asarray(thetas, dtype=float))
        return th[:, 0].min() - WINDOW_SCALES * self.sigma, th[:, 0].max() + WINDOW_SCALES * self.sigma

    def closed_divergence(self, theta1, theta2, tp):
        return super().closed_divergence(self._full(theta1), self._full(theta2), tp)

    def closed_dpd_terms(self, theta, beta):
        m, xi = super().closed_dpd_terms(self._full(theta), beta)
        return m, xi[:1]

    def closed_dpd_matrices(self, theta, beta):
        J, xi, K = super().closed_dpd_matrices(self._full(theta), beta)
        return J[:1, :1], xi[:1], K[:1, :1]

    def smoothed_logpdf(self, theta, x, h):
        return super().smoothed_logpdf(self._full(theta), x, h)

    def smoothed_score(self, theta, x, h):
        return super().smoothed_score(self._full(theta), x, h)[:, :1]


# -- Poisson --------------------------------------------------------------------


class PoissonModel(ParametricModel):
    """Poisson(theta) on {0, 1, 2, ...}."""

    name = "poisson"
    param_names = ("theta",)
    support = DiscreteSupport()

    def __init__(self):
        self.closed_forms = frozenset()
        self._self_check((1.0,))

    def logpdf(self, theta, x):
        lam = theta[0]
        x = np.asarray(x, dtype=float)
        ok = (x >= 0) & (x == np.floor(x))
        xs = np.where(ok, x, 0.0)
        out = xs * math.log(lam) - lam - special.gammaln(xs + 1.0)
        return np.where(ok, out, -np.inf)

    def score(self, theta, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return (x / theta[0] - 1.0)[:, None]

    def in_space(self, theta):
        return bool(np.isfinite(theta[0]) and theta[0] > 0)

    def to_eta(self, theta):
        return np.array([math.log(theta[0])])

    def from_eta(self, eta):
        return np.array([math.exp(eta[0])])

    def dtheta_deta(self, eta):
        return np.array([math.exp(eta[0])])

    def initial(self, x, weights=None):
        x = np.asarray(x, dtype=float)
        mean = float(np.mean(x)) if weights is None else float(np.dot(weights, x))
        return np.array([max(mean, 0.05)])

    def sample(self, theta, n, rng):
        return rng.poisson(theta[0], size=n).astype(float)

    def truncation(self, theta):
        """Largest index needed so the mass beyond it is below TAIL_MASS."""
        return int(stats.poisson.isf(TAIL_MASS, theta[0])) + 1

    def quadrature(self, thetas):
        top = max(self.truncation(np.atleast_1d(t)) for t in thetas)
        nodes = np.arange(top + 1, dtype=float)
        return Grid(nodes, np.ones_like(nodes))


# -- smoothing ------------------------------------------------------------------


def _gauss_kernel(d, h):
    return np.exp(-0.5 * (d / h) ** 2) / (h * math.sqrt(2.0 * math.pi))


class SmoothedModel(ParametricModel):
    """Model convolved with a Gaussian kernel of bandwidth ``h``.

    f*_theta(x) = int W(x, y, h) dF_theta(y); the score is grad log f*_theta.
    """

    kernel = "gaussian"

    def __init__(self, base, bandwidth, use_closed_form=True):
        if base.is_discrete:
            raise UnsupportedOperation("kernel smoothing needs a continuous model")
        if not bandwidth > 0:
            raise DomainError("bandwidth must be positive")
        self.base = base
        self.bandwidth = float(bandwidth)
        self.param_names = base.param_names
        self.support = base.support
        self.name = f"{base.name}*h={self.bandwidth:g}"
        self.closed = use_closed_form and base.has_closed_form("smooth")
        self.closed_forms = frozenset()

    def in_space(self, theta):
        return self.base.in_space(theta)

    def to_eta(self, theta):
        return self.base.to_eta(theta)

    def from_eta(self, eta):
        return self.base.from_eta(eta)

    def dtheta_deta(self, eta):
        return self.base.dtheta_deta(eta)

    def initial(self, x, weights=None):
        return self.base.initial(x, weights)

    def window(self, thetas):
        lo, hi = self.base.window(thetas)
        return lo - WINDOW_SCALES * self.bandwidth, hi + WINDOW_SCALES * self.bandwidth

    def quadrature(self, thetas):
        return gauss_legendre_grid(*self.window(thetas), n=QUAD_NODES)

    def _conv(self, theta, x):
        grid = self.base.quadrature([theta])
        x = np.atleast_1d(np.asarray(x, dtype=float))
        k = _gauss_kernel(x[:, None] - grid.nodes[None, :], self.bandwidth) * (
            grid.weights * self.base.pdf(theta, grid.nodes)
        )
        return k, grid

    def logpdf(self, theta, x):
        if self.closed:
            return self.base.smoothed_logpdf(theta, x, self.bandwidth)
        k, _ = self._conv(theta, x)
        with np.errstate(divide="ignore"):
            out = np.log(k.sum(axis=1))
        return out if np.ndim(x) else out[0]

    def score(self, theta, x):
        if self.closed:
            return self.base.smoothed_score(theta, x, self.bandwidth)
        k, grid = self._conv(theta, x)
        u = self.base.score(theta, grid.nodes)
        den = k.sum(axis=1)
        return (k @ u) / den[:, None]


def smooth_model(model, bandwidth, use_closed_form=True):
    return SmoothedModel(model, bandwidth, use_closed_form)


@dataclass(frozen=True)
class Transparency:
    transparent: bool
    note: str = ""

    def __bool__(self):
        return self.transparent


def is_transparent(model, kernel="gaussian", beta=None):
    """Whether smoothing ``model`` with ``kernel`` leaves the estimator's limit law unchanged.

    Only certified for the normal family with a Gaussian kernel; anything
    else is reported as not transparent.
    """
    if model.is_discrete:
        return Transparency(False, "continuous kernel smoothing does not apply to a discrete model")
    if kernel == "gaussian" and isinstance(model, NormalModel):
        return Transparency(True, "Gaussian kernel is transparent for the normal family")
    return Transparency(False, "transparency unknown for this model/kernel; assumed false")


def make_normal_model():
    return NormalModel()


def make_fixed_sigma_normal_model(sigma):
    return FixedScaleNormalModel(sigma)


def make_poisson_model():
    return PoissonModel()


def model_from_name(name):
    """Build a model from its CLI name: normal, poisson or normal-fixed-sigma:<v>."""
    if name == "normal":
        return make_normal_model()
    if name == "poisson":
        return make_poisson_model()
    if name.startswith("normal-fixed-sigma:"):
        return make_fixed_sigma_normal_model(float(name.split(":", 1)[1]))
    raise DomainError(f"unknown model {name!r}")


# -- constraints ----------------------------------------------------------------


class ConstraintSet:
    """r restrictions h(theta) = 0 with p x r Jacobian H(theta)."""

    def __init__(self, p, r):
        if not 1 <= r <= p:
            raise DomainError(f"need 1 <= r <= p, got r={r}, p={p}")
        self.p = p
        self.r = r

    def h(self, theta):
        raise NotImplementedError

    def H(self, theta):
        raise NotImplementedError

    def check_rank(self, theta):
        s = np.linalg.svd(self.H(theta), compute_uv=False)
        if s.size < self.r or s[-1] <= 1e-10 * s[0]:
            raise DomainError(f"constraint Jacobian is rank deficient at {theta!r}")

    def satisfied(self, theta, tol=1e-8):
        return float(np.max(np.abs(self.h(theta)))) <= tol


class AffineConstraint(ConstraintSet):
    """h(theta) = C theta - target, H = C^T."""

    def __init__(self, C, target):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        target = np.atleast_1d(np.asarray(target, dtype=float))
        r, p = C.shape
        if target.shape != (r,):
            raise ShapeError("target length must equal the number of rows of C")
        if np.linalg.matrix_rank(C, tol=1e-10 * max(1.0, np.abs(C).max())) < r:
            raise DomainError("constraint matrix C is rank deficient")
        super().__init__(p, r)
        self.C = C
        self.target = target

    def h(self, theta):
        return self.C @ np.asarray(theta, dtype=float) - self.target

    def H(self, theta=None):
        return self.C.T.copy()

    def fixed_coordinates(self):
        """{index: value} when every row fixes a single coordinate, else None."""
        out = {}
        for row, t in zip(self.C, self.target):
            nz = np.flatnonzero(row)
            if nz.size != 1 or int(nz[0]) in out:
                return None
            out[int(nz[0])] = t / row[nz[0]]
        return out


class FunctionConstraint(ConstraintSet):
    """Nonlinear restrictions from user callables."""

    def __init__(self, h, H, p, r):
        super().__init__(p, r)
        self._h = h
        self._H = H

    def h(self, theta):
        return np.atleast_1d(np.asarray(self._h(np.asarray(theta, dtype=float)), dtype=float))

    def H(self, theta):
        return np.asarray(self._H(np.asarray(theta, dtype=float)), dtype=float).reshape(self.p, self.r)


def make_affine_constraint(select, target, p=None):
    """Constraint C theta = target.

    ``select`` is either an r x p matrix or a sequence of coordinate indices
    (then ``p`` is required), in which case those coordinates are fixed.
    """
    sel = np.asarray(select)
    if sel.ndim == 1 and sel.dtype.kind in "iu":
        if p is None:
            raise DomainError("p is required when selecting coordinates by index")
        C = np.zeros((sel.size, p))
        C[np.arange(sel.size), sel] = 1.0
    else:
        C = sel
    return AffineConstraint(C, target)


_TERM = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*([-+0-9.eE]+)\s*$")


def parse_assignments(expr):
    """'mu=0, sigma=1' -> {'mu': 0.0, 'sigma': 1.0}; '&' and 'and' also separate."""
    parts = re.split(r",|&|\band\b", expr)
    out = {}
    for part in parts:
        if not part.strip():
            continue
        m = _TERM.match(part)
        if not m:
            raise DomainError(f"cannot parse {part.strip()!r}; expected name=value")
        out[m.group(1)] = float(m.group(2))
    if not out:
        raise DomainError("empty expression")
    return out


def parse_constraint(expr, model):
    """Constraint fixing the named parameters, e.g. 'mu=0'."""
    fixes = parse_assignments(expr)
    idx = []
    for name in fixes:
        if name not in model.param_names:
            raise DomainError(f"{name!r} is not a parameter of {model.name} {model.param_names}")
        idx.append(model.param_names.index(name))
    return make_affine_constraint(np.array(idx, dtype=int), list(fixes.values()), p=model.dim)


def parse_theta(expr, model, default=None):
    """'mu=0.5,sigma=1' -> theta vector; missing names come from ``default``."""
    vals = parse_assignments(expr)
    theta = np.array(default if default is not None else np.full(model.dim, np.nan), dtype=float)
    for name, v in vals.items():
        if name not in model.param_names:
            raise DomainError(f"{name!r} is not a parameter of {model.name}")
        theta[model.param_names.index(name)] = v
    if np.any(np.isnan(theta)):
        missing = [n for n, t in zip(model.param_names, theta) if np.isnan(t)]
        raise DomainError(f"missing values for {missing}")
    return model.check_theta(theta)
