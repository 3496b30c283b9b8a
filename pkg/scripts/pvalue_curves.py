"""p-value curves over (gamma, lambda) with beta = gamma for both telephone-fault nulls.

Writes one CSV per null through the CLI, so the files carry the usual
metadata header.
"""

import argparse
from pathlib import Path

from sdtest.cli import main as sdt


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--outdir", default="results")
    ap.add_argument("--jobs", default="1")
    a = ap.parse_args()
    out = Path(a.outdir)
    out.mkdir(parents=True, exist_ok=True)
    status = 0
    for null, tag in (("mu=0", "mu0"), ("mu=115", "mu115")):
        path = out / f"pvalues_{tag}.csv"
        status |= sdt(["pvalue-curve", "--null", null, "--jobs", a.jobs, "--out", str(path)])
        print(f"wrote {path}")
    raise SystemExit(status)


if __name__ == "__main__":
    main()
