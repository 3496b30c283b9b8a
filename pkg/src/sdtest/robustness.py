"""Influence diagnostics for the estimators and the test, and contamination simulation.

The MDPDE solves int u f^(1+beta) = sum_i f^beta(X_i) u(X_i) / n, so its
influence function is J^-1 (f(y)^beta u(y) - xi).  The restricted estimator
replaces J^-1 by the projection P.  Their difference D(y) drives everything
that happens to the test under contamination: the first-order influence of
the statistic vanishes at the null, the second-order one is D' A D, and the
contaminated level and power come from shifting the limit law by epsilon D(y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .asymptotics import a_gamma_matrix, dpd_matrices, noncentral_shift, null_law, restricted_projection
from .divergence import TuningParams, s_divergence_between_members
from .errors import ConvergenceError, DomainError, EvaluationError
from .estimation import EstimationConfig, contaminated_sample, mdpde_fit, restricted_mdpde_fit
from .mixture import mixture_quantile, mixture_tail
from .testing import run_sdt

DIFF_STEP = 1e-4


def _psi(model, theta, beta, y, mats):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    fb = np.exp(beta * model.logpdf(theta, y))
    return fb[:, None] * model.score(theta, y) - mats.xi[None, :]


def _shape(out, y):
    return out[0] if np.ndim(y) == 0 else out


def if_mdpde(y, model, theta, beta):
    """Influence function of the MDPDE at F_theta; one row per y."""
    theta = model.check_theta(theta)
    mats = dpd_matrices(model, theta, beta)
    out = np.linalg.solve(mats.J, _psi(model, theta, beta, y, mats).T).T
    return _shape(out, y)


def if_restricted_mdpde(y, model, theta, beta, constraints):
    """Influence function of the restricted MDPDE; tangent to the null set."""
    theta = model.check_theta(theta)
    mats = dpd_matrices(model, theta, beta)
    P = restricted_projection(mats.J, constraints.H(theta))
    out = _psi(model, theta, beta, y, mats) @ P
    return _shape(out, y)


def if_difference(y, model, theta, beta, constraints):
    """D(y) = IF of the unrestricted minus IF of the restricted estimator."""
    theta = model.check_theta(theta)
    mats = dpd_matrices(model, theta, beta)
    P = restricted_projection(mats.J, constraints.H(theta))
    out = _psi(model, theta, beta, y, mats) @ (np.linalg.inv(mats.J) - P)
    return _shape(out, y)


def if2_sdt(y, model, theta0, beta, gamma, constraints, lam=0.0, A=None):
    """Second-order influence function D(y)' A_gamma D(y) of the statistic."""
    theta0 = model.check_theta(theta0)
    if not constraints.satisfied(theta0, 1e-8):
        raise DomainError("theta0 must satisfy the null constraints")
    A = a_gamma_matrix(model, theta0, gamma, lam) if A is None else A
    D = np.atleast_2d(if_difference(y, model, theta0, beta, constraints))
    out = np.einsum("ij,jk,ik->i", D, A, D)
    return out[0] if np.ndim(y) == 0 else out


def statistic_functional(spec, theta0, epsilon, y):
    """2 S(f_U(G), f_U~(G)) at G = (1 - epsilon) F_theta0 + epsilon at y.

    This is the per-observation statistic as a functional of the data law;
    it vanishes at epsilon = 0 and grows like epsilon^2.
    """
    G = contaminated_sample(spec.model, theta0, epsilon, y)
    t_hat = mdpde_fit(G, spec.model, spec.beta).theta_hat
    t_til = restricted_mdpde_fit(G, spec.model, spec.beta, spec.constraints).theta_hat
    return 2.0 * s_divergence_between_members(spec.model, t_hat, t_til, TuningParams(spec.gamma, spec.lam))


def contaminated_power(spec, theta0, delta, epsilon, y):
    """Limiting rejection probability with shift delta + epsilon D(y).

    The critical value is that of the central null law, so epsilon = 0 and
    delta = 0 give back the nominal level.
    """
    model = spec.model
    theta0 = model.check_theta(theta0)
    law = null_law(model, theta0, spec.beta, spec.gamma, spec.constraints, spec.lam)
    t_alpha = mixture_quantile(law.mixture(), spec.alpha)
    d = np.zeros(model.dim) if delta is None else np.asarray(delta, dtype=float)
    if epsilon != 0.0:
        d = d + epsilon * if_difference(float(y), model, theta0, spec.beta, spec.constraints)
    if not np.any(d):
        return mixture_tail(law.mixture(), t_alpha)
    return mixture_tail(noncentral_shift(law, d), t_alpha)


def power_influence(y, spec, theta0, delta, step=DIFF_STEP):
    """Derivative of contaminated_power in epsilon at 0 (central difference)."""
    up = contaminated_power(spec, theta0, delta, step, y)
    down = contaminated_power(spec, theta0, delta, -step, y)
    return (up - down) / (2.0 * step)


def level_influence(y, spec, theta0, step=DIFF_STEP):
    """Power influence at delta = 0.

    The shifted law depends on epsilon only through epsilon^2 there, so the
    derivative is zero for every y.
    """
    return power_influence(y, spec, theta0, None, step)


@dataclass(frozen=True)
class ContaminationSpec:
    """Mass epsilon/sqrt(n) at y; with ``delta`` the model is theta + delta/sqrt(n)."""

    epsilon: float = 0.0
    y: float = 0.0
    delta: tuple | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise DomainError("epsilon must be nonnegative")

    @property
    def direction(self):
        return "level" if self.delta is None else "power"


@dataclass(frozen=True)
class SimulationResult:
    rate: float
    mc_se: float
    replicates: int
    failures: int
    seed: int

    def __iter__(self):
        return iter((self.rate, self.mc_se))


def _replicate(spec, theta_n, eps_n, y, n, seed_seq, config):
    rng = np.random.default_rng(seed_seq)
    x = np.asarray(spec.model.sample(theta_n, n, rng), dtype=float)
    if eps_n > 0:
        hit = rng.random(n) < eps_n
        x[hit] = y
    try:
        return run_sdt(x, spec, config=config).reject
    except (ConvergenceError, EvaluationError):
        return None


def simulate_level_power(spec, theta_true, contamination=None, n=100, replicates=1000, seed=0, config=None):
    """Monte Carlo rejection rate of the SDT.

    Data come from (1 - eps/sqrt(n)) F_theta_n + (eps/sqrt(n)) at y, with
    theta_n = theta_true + delta/sqrt(n).  Replicate i uses the i-th child of
    SeedSequence(seed), so results do not depend on execution order.  Fits
    that fail are counted and left out of the rate.
    """
    if replicates < 100:
        raise DomainError("use at least 100 replicates")
    c = contamination or ContaminationSpec()
    eps_n = c.epsilon / math.sqrt(n)
    if eps_n > 1:
        raise DomainError("contamination mass exceeds one")
    theta_n = np.asarray(theta_true, dtype=float)
    if c.delta is not None:
        theta_n = theta_n + np.asarray(c.delta, dtype=float) / math.sqrt(n)
    config = config or EstimationConfig(multistart=1)
    children = np.random.SeedSequence(seed).spawn(replicates)
    outcomes = [_replicate(spec, theta_n, eps_n, c.y, n, s, config) for s in children]
    done = [o for o in outcomes if o is not None]
    if not done:
        raise EvaluationError("every replicate failed")
    rate = float(np.mean(done))
    se = math.sqrt(rate * (1.0 - rate) / len(done))
    return SimulationResult(rate, se, len(done), replicates - len(done), int(seed))
