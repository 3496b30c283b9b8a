"""The S-divergence test (SDT) of a composite null h(theta) = 0.

The statistic is 2 n S_(gamma, lambda)(f_theta_hat, f_theta_tilde), with
theta_hat the MDPDE and theta_tilde the restricted MDPDE at the same beta.
Critical values and p-values come from the chi-square mixture law assembled
at theta_tilde.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .asymptotics import dpd_matrices, null_law, restricted_projection
from .density import as_sample
from .divergence import EPS_AB, TuningParams, s_divergence_between_members
from .errors import DegenerateVarianceError, DomainError, SDTError
from .estimation import mdpde_fit, population_sample, restricted_mdpde_fit
from .mixture import mixture_quantile, mixture_tail


@dataclass(frozen=True, eq=False)
class TestSpec:
    """A composite hypothesis and the tuning of the test."""

    __test__ = False

    model: object
    constraints: object
    beta: float
    gamma: float
    lam: float = 0.0
    alpha: float = 0.05

    def __post_init__(self):
        TuningParams(self.gamma, self.lam)
        if self.beta < 0:
            raise DomainError("beta must be nonnegative")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0, 1)")
        if self.constraints.p != self.model.dim:
            raise DomainError("constraints do not match the model dimension")

    @property
    def tuning(self):
        return TuningParams(self.gamma, self.lam)


@dataclass(frozen=True, eq=False)
class TestReport:
    __test__ = False

    statistic: float
    unrestricted_fit: object
    restricted_fit: object
    null_law: object
    critical_value: float
    p_value: float
    reject: bool
    n: int
    plugin: str = "restricted"

    def as_dict(self):
        return {
            "statistic": self.statistic,
            "critical_value": self.critical_value,
            "p_value": self.p_value,
            "reject": self.reject,
            "n": self.n,
            "theta_hat": self.unrestricted_fit.theta_hat.tolist(),
            "theta_tilde": self.restricted_fit.theta_hat.tolist(),
            "eigenvalues": self.null_law.zetas.tolist(),
            "plugin": self.plugin,
        }


@contextmanager
def _stage(name):
    try:
        yield
    except SDTError as e:
        e.stage = name
        if e.args:
            e.args = (f"{name}: {e.args[0]}",) + e.args[1:]
        raise


def sdt_statistic(theta_hat, theta_tilde, model, tp, n):
    """2 n S(f_theta_hat, f_theta_tilde)."""
    if n < 1:
        raise DomainError("n must be at least 1")
    theta_hat = model.check_theta(theta_hat)
    theta_tilde = model.check_theta(theta_tilde)
    return 2.0 * n * s_divergence_between_members(model, theta_hat, theta_tilde, tp)


def normal_sdt_closed_form(mu_hat, sigma_hat, mu0, sigma_tilde_val, gamma, lam, n):
    """2 n S between N(mu_hat, sigma_hat^2) and N(mu0, sigma_tilde^2) in closed form.

    The A = 0 and B = 0 limits carry a gamma-dependent term
    2 n k (s1^-gamma - s2^-gamma)/(1 + gamma) that vanishes at gamma = 0.
    """
    sh, st = float(sigma_hat), float(sigma_tilde_val)
    if not (sh > 0 and st > 0):
        raise DomainError("standard deviations must be positive")
    tp = TuningParams(gamma, lam)
    A, B, g = tp.A, tp.B, tp.gamma
    k = (2.0 * math.pi) ** (-g / 2.0) * (1.0 + g) ** -0.5
    d2 = (float(mu_hat) - float(mu0)) ** 2
    if abs(A) <= EPS_AB:
        base = (
            math.log(sh**2 / st**2) + (st**2 / sh**2 - 1.0) / (1.0 + g) + d2 / sh**2
        ) * n * k / st**g
        val = base - 2.0 * n * k / (1.0 + g) * (st**-g - sh**-g)
    elif abs(B) <= EPS_AB:
        base = (
            math.log(st**2 / sh**2) + (sh**2 / st**2 - 1.0) / (1.0 + g) + d2 / st**2
        ) * n * k / sh**g
        val = base - 2.0 * n * k / (1.0 + g) * (sh**-g - st**-g)
    else:
        D = B * sh**2 + A * st**2
        if D <= 0:
            return math.inf
        cross = (1.0 + g) ** 1.5 * st ** (1.0 - B) * sh ** (1.0 - A) / math.sqrt(D) * math.exp(-A * B * d2 / (2.0 * D))
        val = 2.0 * n * k / (A * B) * (A / sh**g + B / st**g - cross)
    return max(val, 0.0)


def run_sdt(sample, spec, plugin="restricted", config=None):
    """Fit both estimators, evaluate the statistic and its null law.

    The null law is evaluated at the restricted fit by default;
    ``plugin="unrestricted"`` uses the unrestricted fit instead, as a
    sensitivity diagnostic.
    """
    if plugin not in ("restricted", "unrestricted"):
        raise DomainError(f"unknown plug-in {plugin!r}")
    sample = as_sample(sample)
    model = spec.model
    with _stage("unrestricted fit"):
        fit = mdpde_fit(sample, model, spec.beta, config)
    with _stage("restricted fit"):
        rfit = restricted_mdpde_fit(sample, model, spec.beta, spec.constraints, config)
    with _stage("statistic"):
        stat = sdt_statistic(fit.theta_hat, rfit.theta_hat, model, spec.tuning, sample.n)
    with _stage("null law"):
        at = rfit.theta_hat if plugin == "restricted" else fit.theta_hat
        law = null_law(model, at, spec.beta, spec.gamma, spec.constraints, spec.lam, check=plugin == "restricted")
        mix = law.mixture()
        crit = mixture_quantile(mix, spec.alpha)
        p = mixture_tail(mix, stat)
    return TestReport(
        statistic=float(stat),
        unrestricted_fit=fit,
        restricted_fit=rfit,
        null_law=law,
        critical_value=float(crit),
        p_value=float(p),
        reject=bool(stat > crit),
        n=sample.n,
        plugin=plugin,
    )


def population_restricted_fit(spec, theta_star):
    """Limit of the restricted MDPDE when data come from f_theta_star."""
    pop = population_sample(spec.model, theta_star)
    return restricted_mdpde_fit(pop, spec.model, spec.beta, spec.constraints)


def _grad(fun, theta):
    g = np.empty(theta.size)
    for i in range(theta.size):
        h = 1e-5 * (1.0 + abs(theta[i]))
        e = np.zeros(theta.size)
        e[i] = h
        g[i] = (fun(theta + e) - fun(theta - e)) / (2.0 * h)
    return g


def power_approximation(spec, theta_star, n, theta0=None, a12=None):
    """Large-sample power at theta_star:

        1 - Phi(sqrt(n) (t_alpha / (2n) - S(f_theta*, f_theta0)) / sigma~)

    theta0 defaults to the limit of the restricted fit; ``a12`` is the
    cross-covariance block of the two estimators, taken as zero by default.
    """
    model = spec.model
    tp = spec.tuning
    theta_star = model.check_theta(theta_star)
    if spec.constraints.satisfied(theta_star, 1e-10):
        raise DomainError("theta_star lies in the null set; the power formula needs an alternative")
    if theta0 is None:
        theta0 = population_restricted_fit(spec, theta_star).theta_hat
    theta0 = model.check_theta(theta0)
    law = null_law(model, theta0, spec.beta, spec.gamma, spec.constraints, spec.lam)
    t_alpha = mixture_quantile(law.mixture(), spec.alpha)
    S0 = s_divergence_between_members(model, theta_star, theta0, tp)
    M1 = _grad(lambda t: s_divergence_between_members(model, t, theta0, tp), theta_star)
    M2 = _grad(lambda t: s_divergence_between_members(model, theta_star, t, tp), theta0)
    ms = dpd_matrices(model, theta_star, spec.beta)
    m0 = dpd_matrices(model, theta0, spec.beta)
    Sigma = ms.unrestricted_covariance()
    P = restricted_projection(m0.J, spec.constraints.H(theta0))
    var = M1 @ Sigma @ M1 + M2 @ P @ m0.K @ P @ M2
    if a12 is not None:
        a12 = np.asarray(a12, dtype=float)
        var += 2.0 * M1 @ a12 @ M2
    if not var > 0:
        raise DegenerateVarianceError(f"power variance is {var:.3g}; the approximation is undefined")
    z = math.sqrt(n) * (t_alpha / (2.0 * n) - S0) / math.sqrt(var)
    return float(stats.norm.sf(z))
