import math

import numpy as np
import pytest
from scipy import integrate, stats

from sdtest.errors import DomainError, ShapeError, UnsupportedOperation
from sdtest.models import (
    FunctionConstraint,
    is_transparent,
    make_affine_constraint,
    make_fixed_sigma_normal_model,
    model_from_name,
    parse_constraint,
    parse_theta,
    smooth_model,
)


def fd_score(model, theta, x, h=1e-6):
    theta = np.asarray(theta, float)
    out = []
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        out.append((model.logpdf(theta + e, x) - model.logpdf(theta - e, x)) / (2 * h))
    return np.stack(out, axis=-1)


def test_normal_examples(normal):
    assert normal.score([0.0, 1.0], np.array([0.0]))[0] == pytest.approx([0.0, -1.0], abs=1e-15)
    assert normal.pdf([0.0, 1.0], np.array([0.0]))[0] == pytest.approx((2 * math.pi) ** -0.5, rel=1e-14)
    x = np.array([1.0])
    assert normal.score([2.0, 3.0], x) == pytest.approx(fd_score(normal, [2.0, 3.0], x), abs=1e-6)


def test_poisson_examples(poisson):
    assert poisson.score([2.0], np.array([2.0]))[0, 0] == 0.0
    assert poisson.pdf([1.0], np.arange(51)).sum() == pytest.approx(1.0, abs=1e-12)
    x = np.array([7.0])
    assert poisson.score([3.5], x) == pytest.approx(fd_score(poisson, [3.5], x), abs=1e-6)
    assert poisson.pdf([3.5], np.arange(30)) == pytest.approx(stats.poisson.pmf(np.arange(30), 3.5), rel=1e-12)


def test_models_integrate_to_one(normal, poisson):
    rng = np.random.default_rng(1)
    for _ in range(20):
        t = np.array([rng.uniform(-5, 5), rng.uniform(0.2, 5)])
        g = normal.quadrature([t])
        assert g.integrate(normal.pdf(t, g.nodes)) == pytest.approx(1.0, abs=1e-6)
        lam = np.array([rng.uniform(0.1, 30)])
        g = poisson.quadrature([lam])
        assert g.integrate(poisson.pdf(lam, g.nodes)) == pytest.approx(1.0, abs=1e-6)


def test_scores_match_finite_differences(normal, poisson):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        t = np.array([rng.uniform(-3, 3), rng.uniform(0.5, 3)])
        x = np.array([rng.normal(t[0], t[1])])
        worst = max(worst, np.abs(normal.score(t, x) - fd_score(normal, t, x)).max())
        lam = np.array([rng.uniform(0.5, 10)])
        k = np.array([float(rng.poisson(lam[0]))])
        worst = max(worst, np.abs(poisson.score(lam, k) - fd_score(poisson, lam, k)).max())
    assert worst <= 1e-5


def test_parameter_space(normal, poisson):
    with pytest.raises(DomainError):
        normal.check_theta([0.0, -1.0])
    with pytest.raises(ShapeError):
        normal.check_theta([0.0])
    with pytest.raises(DomainError):
        poisson.check_theta([0.0])
    t = np.array([1.3, 0.4])
    assert normal.from_eta(normal.to_eta(t)) == pytest.approx(t)


def test_fixed_sigma_model():
    m = make_fixed_sigma_normal_model(2.0)
    assert m.dim == 1
    x = np.array([-1.0, 0.5, 3.0])
    assert m.pdf([0.5], x) == pytest.approx(stats.norm.pdf(x, 0.5, 2.0), rel=1e-13)
    assert m.score([0.5], x) == pytest.approx(fd_score(m, [0.5], x), abs=1e-6)


def test_model_from_name():
    assert model_from_name("normal").dim == 2
    assert model_from_name("poisson").dim == 1
    assert model_from_name("normal-fixed-sigma:132").dim == 1
    with pytest.raises(DomainError):
        model_from_name("gamma")


def test_affine_constraint_examples(normal):
    c = make_affine_constraint([0], [3.0], p=2)
    for s in (0.1, 1.0, 17.0):
        assert c.h([3.0, s]) == pytest.approx([0.0])
    assert c.h([4.0, 2.0]) == pytest.approx([1.0])
    assert c.H([3.0, 1.0]) == pytest.approx(np.array([[1.0], [0.0]]))
    assert np.linalg.matrix_rank(c.H()) == 1
    with pytest.raises(DomainError):
        make_affine_constraint(np.array([[1.0, 2.0], [2.0, 4.0]]), [0.0, 0.0])


def test_function_constraint_jacobian():
    c = FunctionConstraint(lambda t: [t[0] ** 2 - t[1]], lambda t: np.array([[2 * t[0]], [-1.0]]), 2, 1)
    t = np.array([0.7, 1.9])
    fd = np.array([(c.h(t + e) - c.h(t - e))[0] / 2e-6 for e in np.eye(2) * 1e-6])
    assert c.H(t)[:, 0] == pytest.approx(fd, abs=1e-5)
    c.check_rank(t)


def test_parsers(normal):
    c = parse_constraint("mu=115", normal)
    assert c.h([115.0, 3.0]) == pytest.approx([0.0])
    assert parse_theta("mu=0.5, sigma=2", normal) == pytest.approx([0.5, 2.0])
    assert parse_theta("mu=1", normal, default=[0.0, 3.0]) == pytest.approx([1.0, 3.0])
    with pytest.raises(DomainError):
        parse_constraint("tau=1", normal)
    with pytest.raises(DomainError):
        parse_theta("mu=1", normal)


def test_gaussian_smoothing_identity(normal):
    sm = smooth_model(normal, 0.5)
    x = np.linspace(-6, 6, 41)
    assert sm.pdf([0.0, 1.0], x) == pytest.approx(stats.norm.pdf(x, 0, math.sqrt(1.25)), abs=1e-10, rel=1e-10)
    mass = integrate.quad(lambda v: sm.pdf([0.0, 1.0], np.array([v]))[0], -np.inf, np.inf)[0]
    assert mass == pytest.approx(1.0, abs=1e-6)


def test_numeric_smoothing_matches_closed_form(normal):
    closed = smooth_model(normal, 0.5)
    numeric = smooth_model(normal, 0.5, use_closed_form=False)
    t = [0.3, 1.4]
    x = np.linspace(-5, 5, 21)
    assert numeric.pdf(t, x) == pytest.approx(closed.pdf(t, x), abs=1e-4)
    assert numeric.score(t, x) == pytest.approx(closed.score(t, x), abs=1e-4)
    assert closed.score(t, x) == pytest.approx(fd_score(closed, t, x), abs=1e-5)


def test_transparency(normal, poisson):
    assert bool(is_transparent(normal, "gaussian"))
    assert not is_transparent(poisson, "gaussian")
    verdict = is_transparent(normal, "epanechnikov")
    assert not verdict and verdict.note
    with pytest.raises(UnsupportedOperation):
        smooth_model(poisson, 0.5)
