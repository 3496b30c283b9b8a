"""Large-sample power approximation against Monte Carlo power for the mu = 0 test."""

import argparse

from sdtest.models import make_affine_constraint, make_normal_model
from sdtest.robustness import simulate_level_power
from sdtest.testing import TestSpec, power_approximation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mu", type=float, default=0.5)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--replicates", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=4242)
    a = ap.parse_args()
    model = make_normal_model()
    null = make_affine_constraint([0], [0.0], p=2)
    theta = [a.mu, 1.0]
    print("beta gamma approx   monte_carlo  mc_se")
    for b in (0.0, 0.3, 0.5):
        spec = TestSpec(model, null, b, b)
        approx = power_approximation(spec, theta, a.n)
        mc = simulate_level_power(spec, theta, n=a.n, replicates=a.replicates, seed=a.seed)
        print(f"{b:4.1f} {b:5.1f} {approx:7.4f} {mc.rate:11.4f} {mc.mc_se:7.4f}")


if __name__ == "__main__":
    main()
