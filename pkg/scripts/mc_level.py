"""Monte Carlo level of the test of mu = 0 in N(mu, sigma^2), clean and contaminated."""

import argparse

from sdtest.models import make_affine_constraint, make_normal_model
from sdtest.robustness import ContaminationSpec, simulate_level_power
from sdtest.testing import TestSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--replicates", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=20240)
    ap.add_argument("--epsilon", type=float, default=0.0, help="contamination mass is epsilon/sqrt(n)")
    ap.add_argument("--y", type=float, default=5.0, help="contamination point")
    a = ap.parse_args()
    model = make_normal_model()
    null = make_affine_constraint([0], [0.0], p=2)
    cont = ContaminationSpec(a.epsilon, a.y)
    print("beta gamma   rate    mc_se  failures")
    for b in (0.0, 0.1, 0.3, 0.5):
        r = simulate_level_power(TestSpec(model, null, b, b), [0.0, 1.0], cont, a.n, a.replicates, a.seed)
        print(f"{b:4.1f} {b:5.1f} {r.rate:7.4f} {r.mc_se:8.4f} {r.failures:9d}")


if __name__ == "__main__":
    main()
