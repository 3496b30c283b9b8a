"""Nonparametric density estimates: relative frequencies and Gaussian KDE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .divergence import DensityRep, Grid, equispaced_grid
from .errors import DataError, DomainError
from .models import DiscreteSupport

KDE_NODES = 1024


@dataclass(frozen=True, eq=False)
class Sample:
    """Observations, optionally with weights summing to one.

    Weights let a fit target a general discrete measure, e.g. a quadrature
    image of a model plus a contamination atom.  Signed weights are allowed
    so that contamination can be differenced in both directions.
    """

    values: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size == 0:
            raise DataError("sample is empty")
        if not np.all(np.isfinite(v)):
            raise DataError("sample contains non-finite values")
        object.__setattr__(self, "values", v)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape != v.shape:
                raise DataError("weights and values differ in length")
            if abs(w.sum() - 1.0) > 1e-9:
                raise DataError(f"weights sum to {w.sum():.12g}, not 1")
            object.__setattr__(self, "weights", w)
        object.__setattr__(self, "_w", np.full(v.size, 1.0 / v.size) if self.weights is None else self.weights)

    @property
    def n(self):
        return self.values.size

    @property
    def w(self):
        """Weights, uniform when none were given."""
        return self._w

    def __len__(self):
        return self.n


def as_sample(x):
    return x if isinstance(x, Sample) else Sample(np.asarray(x, dtype=float))


def relative_frequency(sample, support=None):
    """Relative frequencies r_n(x) = count(x)/n on {0, ..., max}.

    ``support`` is a DiscreteSupport or a maximum index; by default the
    table runs up to the largest observation.
    """
    sample = as_sample(sample)
    x = sample.values
    if isinstance(support, DiscreteSupport):
        top = support.max_index
    else:
        top = support
    bad = (x < 0) | (x != np.floor(x))
    if top is not None:
        bad |= x > top
    if np.any(bad):
        raise DataError(f"observation {x[bad][0]!r} is outside the discrete support")
    xi = x.astype(np.int64)
    top = int(xi.max()) if top is None else int(top)
    if sample.weights is None:
        counts = np.bincount(xi, minlength=top + 1)
        masses = counts / sample.n
    else:
        masses = np.bincount(xi, weights=sample.weights, minlength=top + 1)
    return DensityRep.discrete(np.arange(top + 1), masses)


def default_bandwidth(sample):
    """Silverman's rule 1.06 min(sd, IQR/1.349) n^(-1/5).

    Falls back to n^(-1/5) for a sample with no spread.
    """
    sample = as_sample(sample)
    x = sample.values
    n = sample.n
    if n < 2:
        raise DomainError("bandwidth rule needs at least two observations")
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25], method="weibull")
    spread = [s for s in (sd, (q75 - q25) / 1.349) if s > 0]
    if not spread:
        return n ** -0.2
    return 1.06 * min(spread) * n ** -0.2


def default_kde_grid(sample, nodes=KDE_NODES):
    sample = as_sample(sample)
    w = sample.w
    mean = float(np.dot(w, sample.values))
    sd = math.sqrt(max(float(np.dot(w, (sample.values - mean) ** 2)), 0.0)) or 1.0
    return equispaced_grid(mean - 10.0 * sd, mean + 10.0 * sd, nodes)


def log_kde(sample, bandwidth, x):
    """log of (1/n) sum_i phi((x - X_i)/h)/h at the points ``x``."""
    sample = as_sample(sample)
    if not bandwidth > 0:
        raise DomainError("bandwidth must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = (x[:, None] - sample.values[None, :]) / bandwidth
    logk = -0.5 * z * z - math.log(bandwidth) - 0.5 * math.log(2.0 * math.pi)
    return logsumexp(logk, axis=1, b=np.broadcast_to(sample.w, logk.shape))


def kernel_density(sample, bandwidth, grid=None, tol=1e-4):
    """Gaussian kernel density estimate tabulated on ``grid``."""
    if not bandwidth > 0:
        raise DomainError("bandwidth must be positive")
    sample = as_sample(sample)
    if grid is None:
        grid = default_kde_grid(sample)
    elif not isinstance(grid, Grid):
        grid = equispaced_grid(*grid)
    values = np.exp(log_kde(sample, bandwidth, grid.nodes))
    return DensityRep.on_grid(grid, values, tol=tol)
