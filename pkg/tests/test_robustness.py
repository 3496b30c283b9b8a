import math

import numpy as np
import pytest

from sdtest.asymptotics import a_gamma_matrix
from sdtest.errors import DomainError
from sdtest.estimation import contaminated_sample, mdpde_fit, population_sample, restricted_mdpde_fit
from sdtest.models import make_affine_constraint
from sdtest.robustness import (
    ContaminationSpec,
    contaminated_power,
    if2_sdt,
    if_difference,
    if_mdpde,
    if_restricted_mdpde,
    level_influence,
    power_influence,
    simulate_level_power,
    statistic_functional,
)
from sdtest.testing import TestSpec

EPS = 1e-4
THETA0 = np.array([0.0, 1.0])


def eps_oracle(fit, model, y):
    # central epsilon-difference of the functional at F_theta0
    up = fit(contaminated_sample(model, THETA0, EPS, y)).theta_hat
    down = fit(contaminated_sample(model, THETA0, -EPS, y)).theta_hat
    return (up - down) / (2 * EPS)


def test_mle_influence(normal):
    y = np.array([-2.0, 0.5, 3.0])
    assert if_mdpde(y, normal, THETA0, 0.0)[:, 0] == pytest.approx(y, abs=1e-12)


def test_mdpde_influence_closed_form(normal):
    y = np.linspace(-5, 5, 11)
    expected = 1.5**1.5 * y * np.exp(-(y**2) / 4)
    assert if_mdpde(y, normal, THETA0, 0.5)[:, 0] == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("beta", [0.0, 0.3, 0.5])
@pytest.mark.parametrize("y", [-3.0, 0.0, 3.0])
def test_influence_matches_epsilon_differencing(normal, mu_zero, beta, y):
    pop = population_sample(normal, THETA0)
    assert mdpde_fit(pop, normal, beta).theta_hat == pytest.approx(THETA0, abs=1e-7)
    got = eps_oracle(lambda s: mdpde_fit(s, normal, beta), normal, y)
    assert got == pytest.approx(if_mdpde(y, normal, THETA0, beta), abs=1e-3)
    got = eps_oracle(lambda s: restricted_mdpde_fit(s, normal, beta, mu_zero), normal, y)
    assert got == pytest.approx(if_restricted_mdpde(y, normal, THETA0, beta, mu_zero), abs=1e-3)


def test_restricted_influence_examples(normal, mu_zero):
    y = np.linspace(-4, 4, 9)
    r = if_restricted_mdpde(y, normal, THETA0, 0.0, mu_zero)
    assert r[:, 0] == pytest.approx(np.zeros_like(y), abs=1e-14)
    assert r[:, 1] == pytest.approx((y**2 - 1) / 2, abs=1e-12)
    full = make_affine_constraint([0, 1], [0.0, 1.0], p=2)
    assert if_restricted_mdpde(y, normal, THETA0, 0.3, full) == pytest.approx(np.zeros((9, 2)), abs=1e-14)


def test_tangency(normal):
    c = make_affine_constraint(np.array([[1.0, -2.0]]), [-2.0])
    theta = np.array([0.0, 1.0])
    y = np.linspace(-30, 30, 61)
    for beta in (0.0, 0.4):
        r = if_restricted_mdpde(y, normal, theta, beta, c)
        assert np.max(np.abs(r @ c.H(theta))) <= 1e-10


def test_boundedness(normal):
    y = np.linspace(-100, 100, 2001)
    robust = np.abs(if_mdpde(y, normal, THETA0, 0.3)[:, 0])
    assert np.isfinite(robust.max()) and robust.max() == robust[np.abs(y) < 10].max()
    mle = np.abs(if_mdpde(y, normal, THETA0, 0.0)[:, 0])
    assert mle.max() == pytest.approx(100.0)


def test_if2_structure(normal, mu_zero):
    y = np.linspace(-50, 50, 201)
    A = a_gamma_matrix(normal, THETA0, 0.5)
    v = if2_sdt(y, normal, THETA0, 0.5, 0.5, mu_zero, A=A)
    ifmu = if_mdpde(y, normal, THETA0, 0.5)[:, 0]
    assert v == pytest.approx(A[0, 0] * ifmu**2, rel=1e-10, abs=1e-14)
    assert np.all(v >= 0)
    assert if2_sdt(0.0, normal, THETA0, 0.5, 0.5, mu_zero) == pytest.approx(0.0, abs=1e-20)
    assert np.argmax(v) not in (0, y.size - 1)
    lrt = if2_sdt(y, normal, THETA0, 0.0, 0.0, mu_zero)
    assert np.argmax(lrt) in (0, y.size - 1)
    with pytest.raises(DomainError):
        if2_sdt(1.0, normal, [0.5, 1.0], 0.5, 0.5, mu_zero)


def test_if2_lambda_independent(normal, mu_zero):
    y = np.array([-3.0, -1.0, 0.5, 2.0])
    vals = [if2_sdt(y, normal, THETA0, 0.3, 0.4, mu_zero, lam) for lam in (-0.5, 0.0, 1.0)]
    for v in vals[1:]:
        assert v == pytest.approx(vals[0], rel=1e-4)


def test_first_order_influence_vanishes(normal, mu_zero):
    spec = TestSpec(normal, mu_zero, 0.3, 0.3)
    eps = np.array([1e-2, 1e-3, 1e-4])
    vals = np.array([statistic_functional(spec, THETA0, e, 2.0) for e in eps])
    slope = np.polyfit(np.log(eps), np.log(vals), 1)[0]
    assert 1.8 <= slope <= 2.2


def test_contaminated_power_examples(normal, mu_zero):
    spec = TestSpec(normal, mu_zero, 0.5, 0.5)
    assert contaminated_power(spec, THETA0, None, 0.0, 0.0) == pytest.approx(0.05, abs=1e-6)
    pw = [contaminated_power(spec, THETA0, [d, 0.0], 0.0, 0.0) for d in (0.5, 1.0, 2.0, 4.0)]
    assert all(a < b for a, b in zip(pw, pw[1:]))
    mle = TestSpec(normal, mu_zero, 0.0, 0.0)
    far = contaminated_power(mle, THETA0, None, 0.1, 50.0)
    robust = max(abs(contaminated_power(spec, THETA0, None, 0.1, y) - 0.05) for y in np.linspace(-50, 50, 101))
    assert far > 0.9 and robust < abs(far - 0.05)


def test_power_and_level_influence(normal, mu_zero):
    spec = TestSpec(normal, mu_zero, 0.5, 0.5)
    assert power_influence(0.0, spec, THETA0, [1.0, 0.0]) == pytest.approx(0.0, abs=1e-8)
    pif = [power_influence(y, spec, THETA0, [1.0, 0.0]) for y in (-2.0, 1.0, 2.0)]
    d = if_difference(np.array([-2.0, 1.0, 2.0]), normal, THETA0, 0.5, mu_zero)[:, 0]
    # linear in D(y)
    assert pif[1] / d[1] == pytest.approx(pif[2] / d[2], rel=1e-4)
    assert pif[0] == pytest.approx(-pif[2], rel=1e-6)
    for y in (-50.0, -1.0, 0.0, 3.0, 50.0):
        assert abs(level_influence(y, spec, THETA0)) <= 1e-8


def test_contamination_spec():
    assert ContaminationSpec().direction == "level"
    assert ContaminationSpec(delta=(1.0, 0.0)).direction == "power"
    with pytest.raises(DomainError):
        ContaminationSpec(epsilon=-1.0)


def test_simulation_determinism(normal, mu_zero):
    spec = TestSpec(normal, mu_zero, 0.3, 0.3)
    a = simulate_level_power(spec, THETA0, n=50, replicates=100, seed=7)
    b = simulate_level_power(spec, THETA0, n=50, replicates=100, seed=7)
    assert a == b
    rate, se = a
    assert 0.0 <= rate <= 1.0 and se >= 0.0 and a.replicates + a.failures == 100
    with pytest.raises(DomainError):
        simulate_level_power(spec, THETA0, replicates=10)


def test_simulation_contiguous_power(normal, mu_zero):
    spec = TestSpec(normal, mu_zero, 0.3, 0.3)
    delta = (2.5, 0.0)
    pred = contaminated_power(spec, THETA0, list(delta), 0.0, 0.0)
    sim = simulate_level_power(spec, THETA0, ContaminationSpec(delta=delta), n=200, replicates=600, seed=3)
    assert abs(sim.rate - pred) <= 0.05
