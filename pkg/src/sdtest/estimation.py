"""Minimum-divergence estimation, unrestricted and under h(theta) = 0.

Three objectives are supported, each with an analytic gradient in theta:

* ``DpdObjective`` -- the empirical density power divergence
  int f^(1+beta) - (1 + 1/beta) sum_i w_i f(X_i)^beta (negative
  log-likelihood at beta = 0).  No density estimate is needed.
* ``DiscreteMsdeObjective`` -- S_(gamma, lambda)(r_n, f_theta) with the
  relative frequencies r_n on a counting support.
* ``BasuLindsayObjective`` -- S_(gamma, lambda)(g*_n, f*_theta) with both
  the data and the model smoothed by the same Gaussian kernel.

The gradient of S(g, f_theta) in theta is -(1 + gamma) int K(delta) f^(1+gamma) u,
so its zero is the estimating equation.  Lagrange multipliers are reported
on that gradient scale: grad + H lambda = 0 at a constrained optimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .density import Sample, as_sample, default_bandwidth, log_kde
from .divergence import EPS_AB, as_tuning, gauss_legendre_grid, integrand_from_logs
from .errors import ConvergenceError, DomainError, EvaluationError, UnsupportedOperation
from .models import AffineConstraint, SmoothedModel

FEAS_TOL = 1e-8


@dataclass(frozen=True)
class EstimationConfig:
    beta: float = 0.0
    tau: float = 0.0
    route: str = "discrete"
    tolerance: float = 1e-9
    max_iterations: int = 500
    multistart: int = 5

    def __post_init__(self):
        if self.beta < 0:
            raise DomainError("beta must be nonnegative")
        if not self.tolerance > 0:
            raise DomainError("tolerance must be positive")
        if self.route not in ("discrete", "basu-lindsay"):
            raise DomainError(f"unknown route {self.route!r}")


DEFAULT_CONFIG = EstimationConfig()


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of a fit.

    ``objective`` is the minimized criterion.  For the divergence routes it
    is the divergence itself; for the empirical DPD route it omits the
    data-only term and can be negative.
    """

    theta_hat: np.ndarray
    objective: float
    lagrange: np.ndarray
    grad_norm: float
    iterations: int
    converged: bool
    route: str = "dpd"
    tuning: dict = field(default_factory=dict)
    start: int = 0


# -- objectives -------------------------------------------------------------------


class DpdObjective:
    route = "dpd"

    def __init__(self, sample, model, beta):
        if beta < 0:
            raise DomainError("beta must be nonnegative")
        self.sample = as_sample(sample)
        self.model = model
        self.beta = float(beta)
        ok = model.support.contains(self.sample.values)
        if not np.all(ok):
            raise EvaluationError(f"observation {self.sample.values[~ok][0]!r} is outside the model support")
        self.tuning = {"beta": self.beta}

    def __call__(self, theta):
        x, w, b = self.sample.values, self.sample.w, self.beta
        logf = self.model.logpdf(theta, x)
        u = self.model.score(theta, x)
        if b == 0.0:
            return -float(np.dot(w, logf)), -(w @ u)
        m, xi = self.model.dpd_terms(theta, b)
        fb = np.exp(b * logf)
        val = m - (1.0 + 1.0 / b) * float(np.dot(w, fb))
        grad = (1.0 + b) * (xi - (w * fb) @ u)
        return val, grad


class _DivergenceObjective:
    """S(g, f_theta) for a fixed estimate g tabulated on quadrature nodes."""

    def _setup(self, tp):
        self.tp = as_tuning(tp)

    def _eval(self, theta, model_logpdf, model_score):
        tp = self.tp
        c = 1.0 + tp.gamma
        lf = model_logpdf(theta, self.nodes)
        vals = integrand_from_logs(self.log_g, lf, tp)
        val = float(np.dot(self.weights, vals))
        kf = _k_times_f(self.log_g, lf, tp)
        if not (np.isfinite(val) and np.all(np.isfinite(kf))):
            return math.inf, np.full(len(theta), np.nan)
        u = model_score(theta, self.nodes)
        grad = -c * ((self.weights * kf) @ u)
        return val, grad


def _k_times_f(lg, lf, tp):
    """K(g/f - 1) f^(1+gamma) pointwise, from log-densities."""
    A, B, c = tp.A, tp.B, 1.0 + tp.gamma
    out = np.zeros(lg.shape)
    g0 = np.isneginf(lg)
    f0 = np.isneginf(lf)
    both = ~g0 & ~f0
    a, b = lg[both], lf[both]
    if abs(A) <= EPS_AB:
        out[both] = np.exp(c * b) * (a - b)
    else:
        t = a - b
        near = np.abs(t) <= 1.0
        r = np.empty_like(t)
        r[near] = np.exp(c * b[near]) * np.expm1(A * t[near]) / A
        r[~near] = (np.exp(A * a[~near] + B * b[~near]) - np.exp(c * b[~near])) / A
        out[both] = r
    m = g0 & ~f0
    out[m] = -np.exp(c * lf[m]) / A if A > EPS_AB else -np.inf
    m = f0 & ~g0
    out[m] = 0.0 if B > EPS_AB else np.nan
    return out


class DiscreteMsdeObjective(_DivergenceObjective):
    route = "discrete"

    def __init__(self, sample, model, tp):
        if not model.is_discrete:
            raise UnsupportedOperation("the relative-frequency route needs a discrete model")
        self._setup(tp)
        self.sample = as_sample(sample)
        self.model = model
        x = self.sample.values
        if np.any((x < 0) | (x != np.floor(x))):
            raise EvaluationError("observations must be nonnegative integers")
        start = model.initial(x, self.sample.weights)
        top = max(int(x.max()), int(model.quadrature([3.0 * start + 1.0]).nodes[-1]))
        self.nodes = np.arange(top + 1, dtype=float)
        self.weights = np.ones_like(self.nodes)
        masses = np.bincount(x.astype(np.int64), weights=self.sample.w, minlength=top + 1)
        with np.errstate(divide="ignore"):
            self.log_g = np.log(masses)
        self.tuning = {"gamma": self.tp.gamma, "lambda": self.tp.lam}

    def __call__(self, theta):
        return self._eval(theta, self.model.logpdf, self.model.score)


class BasuLindsayObjective(_DivergenceObjective):
    route = "basu-lindsay"

    def __init__(self, sample, model, tp, bandwidth=None, grid=None, use_closed_form=True):
        if model.is_discrete:
            raise UnsupportedOperation("kernel smoothing needs a continuous model")
        self._setup(tp)
        self.sample = as_sample(sample)
        h = default_bandwidth(self.sample) if bandwidth is None else float(bandwidth)
        if not h > 0:
            raise DomainError("bandwidth must be positive")
        self.bandwidth = h
        self.smoothed = model if isinstance(model, SmoothedModel) else SmoothedModel(model, h, use_closed_form)
        self.model = model
        if grid is None:
            x, w = self.sample.values, self.sample.w
            mean = float(np.dot(w, x))
            sd = math.sqrt(float(np.dot(w, (x - mean) ** 2))) or 1.0
            lo = min(x.min(), mean - 10 * sd) - 10 * h
            hi = max(x.max(), mean + 10 * sd) + 10 * h
            grid = gauss_legendre_grid(lo, hi, 512)
        self.nodes, self.weights = grid.nodes, grid.weights
        self.log_g = log_kde(self.sample, h, self.nodes)
        self.tuning = {"gamma": self.tp.gamma, "lambda": self.tp.lam, "bandwidth": h}

    def __call__(self, theta):
        return self._eval(theta, self.smoothed.logpdf, self.smoothed.score)


# -- optimizer core ---------------------------------------------------------------


def _fd_jacobian(grad, z, g0=None):
    n = z.size
    Hm = np.empty((n, n))
    for j in range(n):
        h = 1e-5 * (1.0 + abs(z[j]))
        e = np.zeros(n)
        e[j] = h
        Hm[:, j] = (grad(z + e) - grad(z - e)) / (2.0 * h)
    return 0.5 * (Hm + Hm.T)


def _newton_polish(fun, z, max_iter=40):
    """Newton iterations on the gradient until its norm stops decreasing."""
    f, g = fun(z)
    it = 0
    if not np.isfinite(f):
        return z, f, g, it
    for it in range(1, max_iter + 1):
        gn = np.max(np.abs(g))
        if gn == 0.0:
            break
        try:
            Hm = _fd_jacobian(lambda q: fun(q)[1], z)
            step = -np.linalg.solve(Hm, g)
            if not np.all(np.isfinite(step)) or np.dot(step, g) >= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = -g
        t = 1.0
        accepted = False
        while t > 1e-6:
            zn = z + t * step
            fn, gnew = fun(zn)
            if np.isfinite(fn) and np.all(np.isfinite(gnew)):
                if np.max(np.abs(gnew)) < gn and fn <= f + 1e-12 * (abs(f) + 1e-300):
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            break
        improved = np.max(np.abs(gnew)) < 0.5 * gn
        z, f, g = zn, fn, gnew
        if not improved:
            break
    return z, f, g, it


def _safe(fun):
    def wrapped(z):
        try:
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                f, g = fun(z)
        except (DomainError, EvaluationError, FloatingPointError, OverflowError, ValueError):
            return math.inf, np.full(z.shape, np.nan)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return math.inf, np.full(z.shape, np.nan)
        return f, g

    return wrapped


def _newton_descent(fun, z, max_iter=30):
    """Damped Newton with Armijo backtracking.

    Succeeds when the Newton decrement g' H^-1 g falls to rounding level with
    H positive definite; otherwise the caller falls back to BFGS.
    """
    f, g = fun(z)
    if not np.isfinite(f):
        return z, False, 0
    for it in range(1, max_iter + 1):
        Hm = _fd_jacobian(lambda q: fun(q)[1], z)
        try:
            np.linalg.cholesky(Hm)
            step = -np.linalg.solve(Hm, g)
        except np.linalg.LinAlgError:
            return z, False, it
        dec = -float(np.dot(step, g))
        if dec <= 1e-20 * (1.0 + abs(f)):
            return z, True, it
        t = 1.0
        while True:
            zn = z + t * step
            fn, gn = fun(zn)
            if np.isfinite(fn) and fn <= f - 1e-4 * t * dec:
                break
            t *= 0.5
            if t < 1e-8:
                # no decrease detectable in floating point: at the optimum if the decrement is tiny
                return z, dec <= 1e-12 * (1.0 + abs(f)), it
        z, f, g = zn, fn, gn
    return z, False, max_iter


def _run_start(fun, z0, cfg):
    fun = _safe(fun)
    z, ok, nit = _newton_descent(fun, z0)
    if not ok:
        res = optimize.minimize(
            fun, z0, jac=True, method="BFGS", options={"gtol": 1e-12, "maxiter": cfg.max_iterations}
        )
        nit += int(res.nit)
        z = res.x
        if not np.isfinite(res.fun) or not np.all(np.isfinite(z)):
            res = optimize.minimize(
                lambda q: fun(q)[0],
                z0,
                method="Nelder-Mead",
                options={"maxiter": cfg.max_iterations * 4, "xatol": 1e-10, "fatol": 1e-14},
            )
            nit += int(res.nit)
            z = res.x
    z, f, g, k = _newton_polish(fun, z)
    return z, f, nit + k


def _start_points(eta0, scales, free, count):
    starts = [eta0.copy()]
    k = 0
    while len(starts) < count and free.size:
        i = free[(k // 2) % free.size]
        sign = 1.0 if k % 2 == 0 else -1.0
        s = eta0.copy()
        s[i] += sign * 0.5 * scales[i]
        starts.append(s)
        k += 1
    return starts


def _eta_scales(model, theta0):
    # location-type coordinates move on the data scale, log-scale ones by 1
    eta = model.to_eta(theta0)
    d = model.dtheta_deta(eta)
    scales = np.ones(model.dim)
    for i in range(model.dim):
        if d[i] == 1.0 and model.dim > 1:
            scales[i] = abs(theta0[-1]) if theta0[-1] > 0 else 1.0
    return scales


def _better(a, b):
    """True if candidate a=(f, theta) beats b."""
    fa, ta = a
    fb, tb = b
    if not np.isfinite(fb):
        return np.isfinite(fa)
    if abs(fa - fb) <= 1e-12 * max(1.0, abs(fb)):
        return tuple(ta) < tuple(tb)
    return fa < fb


def _lagrange(grad, Hm):
    lam, *_ = np.linalg.lstsq(Hm, -grad, rcond=None)
    return lam


def _finish(objective, model, theta, nit, start, cfg, constraints):
    f, g = objective(theta)
    if constraints is None:
        lam = np.zeros(0)
        resid = g
        feasible = True
    else:
        Hm = constraints.H(theta)
        lam = _lagrange(g, Hm)
        resid = g + Hm @ lam
        feasible = constraints.satisfied(theta, FEAS_TOL)
    gn = float(np.max(np.abs(resid))) if resid.size else 0.0
    converged = bool(np.isfinite(f) and gn <= cfg.tolerance and feasible)
    return FitResult(
        theta_hat=np.asarray(theta, dtype=float),
        objective=float(f),
        lagrange=lam,
        grad_norm=gn,
        iterations=int(nit),
        converged=converged,
        route=objective.route,
        tuning=dict(objective.tuning),
        start=start,
    )


def _fit_free(objective, model, cfg, fixed=None, theta_init=None):
    """Minimize over eta with some coordinates held fixed."""
    sample = getattr(objective, "sample", None)
    p = model.dim
    if theta_init is None:
        theta_init = model.initial(sample.values, sample.weights)
    theta_init = np.array(theta_init, dtype=float)
    fixed = fixed or {}
    for i, v in fixed.items():
        theta_init[i] = v
    eta0 = model.to_eta(model.check_theta(theta_init))
    free = np.array([i for i in range(p) if i not in fixed], dtype=int)
    if free.size == 0:
        return model.check_theta(theta_init), 0, 0

    def full(z):
        eta = eta0.copy()
        eta[free] = z
        return eta

    def fun(z):
        eta = full(z)
        theta = model.from_eta(eta)
        if not model.in_space(theta):
            return math.inf, np.full(z.shape, np.nan)
        f, g = objective(theta)
        return f, (g * model.dtheta_deta(eta))[free]

    best = None
    for k, s in enumerate(_start_points(eta0, _eta_scales(model, theta_init), free, cfg.multistart)):
        z, f, nit = _run_start(fun, s[free], cfg)
        theta = model.from_eta(full(z))
        if best is None or _better((f, theta), (best[0], best[1])):
            best = (f, theta, nit, k)
    if best is None or not np.isfinite(best[0]):
        raise ConvergenceError("no start produced a finite objective")
    return best[1], best[2], best[3]


def _fit_affine(objective, model, cfg, constraints):
    """General affine restriction: theta = theta_p + N z."""
    sample = objective.sample
    C, t = constraints.C, constraints.target
    theta0 = model.initial(sample.values, sample.weights)
    theta_p = theta0 - C.T @ np.linalg.solve(C @ C.T, C @ theta0 - t)
    N = linalg.null_space(C)

    def fun(z):
        theta = theta_p + N @ z
        if not model.in_space(theta):
            return math.inf, np.full(z.shape, np.nan)
        f, g = objective(theta)
        return f, N.T @ g

    if N.shape[1] == 0:
        return model.check_theta(theta_p), 0, 0
    best = None
    for k in range(cfg.multistart):
        z0 = np.zeros(N.shape[1])
        if k:
            z0[(k - 1) // 2 % z0.size] = (0.5 if k % 2 else -0.5) * _eta_scales(model, theta0).max()
        sfun = _safe(fun)
        res = optimize.minimize(
            lambda q: sfun(q)[0],
            z0,
            method="Nelder-Mead",
            options={"maxiter": cfg.max_iterations * 4, "xatol": 1e-12, "fatol": 1e-15},
        )
        z, f, _, it = _newton_polish(sfun, res.x)
        theta = theta_p + N @ z
        if best is None or _better((f, theta), (best[0], best[1])):
            best = (f, theta, int(res.nit) + it, k)
    if not np.isfinite(best[0]):
        raise ConvergenceError("no start produced a finite objective")
    return best[1], best[2], best[3]


def _fit_nonlinear(objective, model, cfg, constraints):
    """Augmented Lagrangian with penalty doubling, then a KKT Newton polish."""
    sample = objective.sample
    theta = model.initial(sample.values, sample.weights)
    mult = np.zeros(constraints.r)
    rho = 10.0
    nit = 0
    prev = math.inf
    for _ in range(60):
        def aug(th, mult=mult, rho=rho):
            f, g = objective(th)
            hv = constraints.h(th)
            Hm = constraints.H(th)
            return f + mult @ hv + 0.5 * rho * hv @ hv, g + Hm @ (mult + rho * hv)

        theta, k, _ = _fit_free(_AugWrap(aug, sample), model, EstimationConfig(multistart=1), theta_init=theta)
        nit += k
        hv = constraints.h(theta)
        viol = float(np.max(np.abs(hv)))
        mult = mult + rho * hv
        if viol <= FEAS_TOL:
            break
        if viol > 0.25 * prev:
            rho *= 2.0
        prev = viol
    theta, k = _kkt_polish(objective, model, constraints, theta, mult)
    return theta, nit + k, 0


class _AugWrap:
    route = "augmented"
    tuning = {}

    def __init__(self, fun, sample):
        self.fun = fun
        self.sample = sample

    def __call__(self, theta):
        return self.fun(theta)


def _kkt_polish(objective, model, constraints, theta, mult, max_iter=20):
    p, r = model.dim, constraints.r
    lam = mult.copy()
    it = 0
    for it in range(1, max_iter + 1):
        f, g = objective(theta)
        Hm = constraints.H(theta)
        hv = constraints.h(theta)
        F = np.concatenate([g + Hm @ lam, hv])
        if np.max(np.abs(F)) < 1e-14:
            break
        Hess = _fd_jacobian(lambda q: objective(q)[1], theta)
        Kmat = np.block([[Hess, Hm], [Hm.T, np.zeros((r, r))]])
        try:
            d = np.linalg.solve(Kmat, -F)
        except np.linalg.LinAlgError:
            break
        new = theta + d[:p]
        if not model.in_space(new):
            break
        theta, lam = new, lam + d[p:]
    return theta, it


def _fit(objective, model, constraints=None, config=None):
    cfg = config or DEFAULT_CONFIG
    if constraints is None:
        theta, nit, start = _fit_free(objective, model, cfg)
    else:
        if constraints.p != model.dim:
            raise DomainError("constraint dimension does not match the model")
        fixed = constraints.fixed_coordinates() if isinstance(constraints, AffineConstraint) else None
        if fixed is not None:
            theta, nit, start = _fit_free(objective, model, cfg, fixed=fixed)
        elif isinstance(constraints, AffineConstraint):
            theta, nit, start = _fit_affine(objective, model, cfg, constraints)
        else:
            theta, nit, start = _fit_nonlinear(objective, model, cfg, constraints)
    fit = _finish(objective, model, theta, nit, start, cfg, constraints)
    if not fit.converged:
        raise ConvergenceError(
            f"{objective.route} fit did not converge (grad norm {fit.grad_norm:.3g})", best=fit
        )
    return fit


# -- public API -------------------------------------------------------------------


def mdpde_fit(sample, model, beta, config=None, centered=True):
    """Minimum density power divergence estimate.

    With ``centered=False`` the estimate instead solves the density-weighted
    score equations sum_i f(X_i)^beta u(X_i) = 0, which omit the model term
    int f^(1+beta) u.  That variant is not Fisher consistent; it is kept
    because published telephone-fault estimates follow it.
    """
    if not centered:
        return weighted_score_fit(sample, model, beta, config)
    return _fit(DpdObjective(sample, model, beta), model, None, config)


def restricted_mdpde_fit(sample, model, beta, constraints, config=None):
    """MDPDE over {theta : h(theta) = 0}."""
    return _fit(DpdObjective(sample, model, beta), model, constraints, config)


def msde_fit_discrete(sample, model, tp, constraints=None, config=None):
    """Minimize S_(gamma, lambda)(r_n, f_theta) over a counting support."""
    return _fit(DiscreteMsdeObjective(sample, model, tp), model, constraints, config)


def msde_fit_basu_lindsay(sample, model, tp, bandwidth=None, constraints=None, config=None, grid=None):
    """Minimize S_(gamma, lambda)(g*_n, f*_theta), both sides kernel smoothed."""
    obj = BasuLindsayObjective(sample, model, tp, bandwidth, grid)
    return _fit(obj, model, constraints, config)


def weighted_score_fit(sample, model, beta, config=None, step=0.005):
    """Root of sum_i w_i f(X_i)^beta u(X_i) = 0 traced from the MLE.

    The root is followed by continuation in beta, so the branch reached is
    the one connected to beta = 0.
    """
    cfg = config or DEFAULT_CONFIG
    sample = as_sample(sample)
    x, w = sample.values, sample.w
    eta = model.to_eta(mdpde_fit(sample, model, 0.0, cfg).theta_hat)

    def eqs(eta, b):
        theta = model.from_eta(eta)
        fb = np.exp(b * model.logpdf(theta, x))
        return ((w * fb) @ model.score(theta, x)) * model.dtheta_deta(eta)

    path = np.append(np.arange(step, beta, step), beta) if beta > 0 else np.array([0.0])
    nfev = 0
    for b in path:
        sol = optimize.root(eqs, eta, args=(b,), method="hybr", tol=1e-14)
        nfev += int(sol.nfev)
        eta = sol.x
    theta = model.from_eta(eta)
    resid = eqs(eta, beta) / model.dtheta_deta(eta)
    gn = float(np.max(np.abs(resid)))
    val = -float(np.dot(w, np.exp(beta * model.logpdf(theta, x)))) / beta if beta > 0 else float("nan")
    fit = FitResult(
        theta_hat=theta,
        objective=val,
        lagrange=np.zeros(0),
        grad_norm=gn,
        iterations=nfev,
        converged=bool(np.all(np.isfinite(theta)) and gn <= cfg.tolerance),
        route="weighted-score",
        tuning={"beta": float(beta)},
    )
    if not fit.converged:
        raise ConvergenceError("weighted score equations did not converge", best=fit)
    return fit


def objective_for(fit, sample, model, tp=None):
    """Rebuild the objective a fit minimized (``tp`` overrides stored tuning)."""
    if fit.route == "dpd":
        beta = fit.tuning["beta"] if tp is None else float(tp if np.isscalar(tp) else as_tuning(tp).gamma)
        return DpdObjective(sample, model, beta)
    tune = as_tuning((fit.tuning["gamma"], fit.tuning["lambda"])) if tp is None else as_tuning(tp)
    if fit.route == "discrete":
        return DiscreteMsdeObjective(sample, model, tune)
    if fit.route == "basu-lindsay":
        return BasuLindsayObjective(sample, model, tune, fit.tuning["bandwidth"])
    raise DomainError(f"no estimating equation for route {fit.route!r}")


def estimating_equation_residual(fit, sample, model, tp=None, constraints=None, theta=None):
    """Max-norm of grad + H lambda at ``theta`` (default: the fitted value)."""
    obj = objective_for(fit, sample, model, tp)
    th = fit.theta_hat if theta is None else np.asarray(theta, dtype=float)
    _, g = obj(th)
    if constraints is not None and fit.lagrange.size:
        g = g + constraints.H(th) @ fit.lagrange
    return float(np.max(np.abs(g)))


def population_sample(model, theta, grid=None):
    """The model law F_theta as a weighted sample on quadrature nodes."""
    theta = np.asarray(theta, dtype=float)
    grid = grid or model.quadrature([theta])
    w = grid.weights * model.pdf(theta, grid.nodes)
    keep = w > 0
    w = w[keep] / w[keep].sum()
    return Sample(grid.nodes[keep], w)


def contaminated_sample(model, theta, epsilon, y, grid=None):
    """(1 - epsilon) F_theta + epsilon at y, as a weighted sample."""
    base = population_sample(model, theta, grid)
    values = np.append(base.values, float(y))
    weights = np.append((1.0 - epsilon) * base.weights, float(epsilon))
    return Sample(values, weights)
