"""Matrices behind the large-sample laws of the estimators and the test.

With u the score and f = f_theta,

    J  = int u u' f^(1+beta)        xi = int u f^(1+beta)
    K  = int u u' f^(1+2 beta) - xi xi'

The unrestricted MDPDE has covariance J^-1 K J^-1.  Under h(theta) = 0 with
H = dh'/dtheta the restricted estimator has covariance P K P, where

    P = J^-1 - J^-1 H (H' J^-1 H)^-1 H' J^-1.

The SDT statistic is asymptotically W' A W with W ~ N(Delta*, Sigma~),
Sigma~ = (J^-1 - P) K (J^-1 - P), and A the Hessian of the divergence
between model members.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .divergence import TuningParams, s_divergence_between_members
from .errors import DomainError, EvaluationError, ShapeError
from .mixture import ChiSquareMixture

EIG_THRESHOLD = 1e-10
PSD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DpdMatrices:
    J: np.ndarray
    xi: np.ndarray
    K: np.ndarray
    beta: float
    theta: np.ndarray

    def unrestricted_covariance(self):
        Ji = np.linalg.inv(self.J)
        return Ji @ self.K @ Ji

    def restricted_covariance(self, H):
        P = restricted_projection(self.J, H)
        return P @ self.K @ P


def _sym(M):
    return 0.5 * (M + M.T)


def _check_psd(M, what, tol=PSD_TOL):
    lo = np.linalg.eigvalsh(_sym(M)).min() if M.size else 0.0
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if lo < -tol * scale:
        raise EvaluationError(f"{what} is not positive semidefinite (smallest eigenvalue {lo:.3g})")


def dpd_matrices(model, theta, beta):
    """J, xi and K at theta, from the closed-form hook or by quadrature."""
    theta = model.check_theta(theta)
    if beta < 0:
        raise DomainError("beta must be nonnegative")
    if model.has_closed_form("dpd_matrices"):
        J, xi, K = model.closed_dpd_matrices(theta, beta)
    else:
        grid = model.quadrature([theta])
        logf = model.logpdf(theta, grid.nodes)
        u = model.score(theta, grid.nodes)
        w1 = grid.weights * np.exp((1.0 + beta) * logf)
        w2 = grid.weights * np.exp((1.0 + 2.0 * beta) * logf)
        J = (u * w1[:, None]).T @ u
        xi = w1 @ u
        K = (u * w2[:, None]).T @ u - np.outer(xi, xi)
    J, K = _sym(np.asarray(J, dtype=float)), _sym(np.asarray(K, dtype=float))
    if not (np.all(np.isfinite(J)) and np.all(np.isfinite(K)) and np.all(np.isfinite(xi))):
        raise EvaluationError(f"DPD matrices are not finite at {theta!r}")
    _check_psd(J, "J")
    _check_psd(K, "K")
    return DpdMatrices(J, np.asarray(xi, dtype=float), K, float(beta), theta)


def restricted_projection(J, H):
    """P = J^-1 - J^-1 H (H' J^-1 H)^-1 H' J^-1."""
    J = np.asarray(J, dtype=float)
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    if J.shape[0] != J.shape[1] or H.shape[0] != J.shape[0]:
        raise ShapeError("J must be p x p and H p x r")
    Ji = np.linalg.inv(J)
    if H.shape[1] == 0:
        return _sym(Ji)
    JiH = Ji @ H
    P = Ji - JiH @ np.linalg.solve(H.T @ JiH, JiH.T)
    return _sym(P)


def sigma_tilde(J, P, V):
    """(J^-1 - P) V (J^-1 - P)."""
    J, P, V = (np.asarray(M, dtype=float) for M in (J, P, V))
    if not (J.shape == P.shape == V.shape) or J.shape[0] != J.shape[1]:
        raise ShapeError("J, P and V must all be p x p")
    D = np.linalg.inv(J) - P
    return _sym(D @ V @ D.T)


def a_gamma_matrix(model, theta, gamma, lam=0.0, step=None):
    """Hessian of theta1 -> S(f_theta1, f_theta) at theta1 = theta.

    Central second differences with step 1e-4 (1 + |theta_i|).
    """
    theta = model.check_theta(theta)
    tp = TuningParams(gamma, lam)
    p = theta.size
    h = 1e-4 * (1.0 + np.abs(theta)) if step is None else np.broadcast_to(np.asarray(step, float), (p,))

    def S(d):
        return s_divergence_between_members(model, theta + d, theta, tp)

    A = np.empty((p, p))
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h[i]
        A[i, i] = (S(ei) + S(-ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(p)
            ej[j] = h[j]
            A[i, j] = A[j, i] = (S(ei + ej) - S(ei - ej) - S(ej - ei) + S(-ei - ej)) / (4 * h[i] * h[j])
    lo = np.linalg.eigvalsh(A).min()
    if lo < -1e-6 * max(1.0, np.abs(A).max()):
        raise EvaluationError(f"A_gamma is not positive semidefinite ({lo:.3g}); try a smaller step")
    return A


def _psd_sqrt(S):
    """Symmetric square root and its pseudo-inverse, on the range of S."""
    vals, vecs = np.linalg.eigh(_sym(S))
    top = max(vals.max(), 0.0) if vals.size else 0.0
    keep = vals > EIG_THRESHOLD * top if top > 0 else np.zeros(vals.shape, bool)
    root = vecs[:, keep] @ np.diag(np.sqrt(vals[keep])) @ vecs[:, keep].T
    inv_root = vecs[:, keep] @ np.diag(1.0 / np.sqrt(vals[keep])) @ vecs[:, keep].T
    return root, inv_root


@dataclass(frozen=True, eq=False)
class NullLawSpec:
    """Null law of the statistic: sum_i zetas_i Z_i^2.

    ``directions`` holds orthonormal eigenvectors of Sigma~^(1/2) A Sigma~^(1/2)
    for the retained eigenvalues; they define the noncentralities under
    shifted alternatives.
    """

    A_gamma: np.ndarray
    Sigma_tilde: np.ndarray
    zetas: np.ndarray
    r: int
    directions: np.ndarray
    sqrt_pinv: np.ndarray
    sqrt: np.ndarray

    def mixture(self, noncentralities=None):
        if self.r == 0:
            raise EvaluationError("null law is degenerate (no nonzero eigenvalues)")
        return ChiSquareMixture(self.zetas, np.ones(self.r), noncentralities)


def null_law_from_matrices(A, Sigma):
    A, Sigma = _sym(np.asarray(A, float)), _sym(np.asarray(Sigma, float))
    root, inv_root = _psd_sqrt(Sigma)
    M = _sym(root @ A @ root)
    vals, vecs = np.linalg.eigh(M)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    top = np.abs(vals).max() if vals.size else 0.0
    keep = vals > EIG_THRESHOLD * top if top > 0 else np.zeros(vals.shape, bool)
    return NullLawSpec(A, Sigma, vals[keep], int(keep.sum()), vecs[:, keep], inv_root, root)


def null_law(model, theta0, beta, gamma, constraints, lam=0.0, check=True):
    """Assemble A_gamma, Sigma~ and the mixture weights at theta0."""
    theta0 = model.check_theta(theta0)
    if check and not constraints.satisfied(theta0, 1e-6):
        raise DomainError(f"theta0 = {theta0!r} does not satisfy the null constraints")
    mats = dpd_matrices(model, theta0, beta)
    P = restricted_projection(mats.J, constraints.H(theta0))
    Sigma = sigma_tilde(mats.J, P, mats.K)
    A = a_gamma_matrix(model, theta0, gamma, lam)
    return null_law_from_matrices(A, Sigma)


def noncentral_shift(spec, delta_star, tol=1e-6):
    """Mixture law of W' A W for W ~ N(delta_star, Sigma~)."""
    d = np.asarray(delta_star, dtype=float).reshape(-1)
    if d.shape != (spec.Sigma_tilde.shape[0],):
        raise ShapeError("delta_star has the wrong length")
    c = spec.sqrt_pinv @ d
    back = spec.sqrt @ c
    if np.max(np.abs(back - d), initial=0.0) > tol * (1.0 + np.max(np.abs(d), initial=0.0)):
        raise DomainError("delta_star is not in the range of Sigma~; the shift has no chi-square form")
    nc = (spec.directions.T @ c) ** 2
    return spec.mixture(nc)
