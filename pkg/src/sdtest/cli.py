"""Command-line front end: ``sdt fit|test|pvalue-curve|ifcurve|power|simulate``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .data import drop, load
from .errors import SDTError
from .estimation import mdpde_fit
from .models import model_from_name, parse_constraint, parse_theta
from .robustness import ContaminationSpec, if2_sdt, level_influence, power_influence, simulate_level_power
from .testing import TestSpec, power_approximation, run_sdt

CONVENTIONS = "V=K;A12=0;plugin=restricted;contamination=eps/sqrt(n)"
DEFAULT_GAMMAS = [round(0.1 * i, 1) for i in range(11)]
DEFAULT_LAMBDAS = [-0.5, 0.0, 0.5, 1.0]
FIT_BETAS = [0.0, 0.05, 0.1, 0.2, 0.5]


def _floats(text):
    return [float(t) for t in str(text).split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in str(text).split(",") if t.strip()]


def _span(text):
    """'lo:hi:count' or a comma list."""
    if ":" in str(text):
        lo, hi, k = str(text).split(":")
        return list(np.linspace(float(lo), float(hi), int(k)))
    return _floats(text)


# -- grid points (top level so they can run in worker processes) ---------------------


def _sample(a):
    s = load(a["data"])
    return drop(s, _ints(a["drop"])) if a.get("drop") else s


def _tuning_grid(a, default_gammas=None):
    gammas = a["gamma"] if a.get("gamma") is not None else (default_gammas or [0.0])
    lambdas = a["lambda"] if a.get("lambda") is not None else [0.0]
    out = []
    for g, lam in itertools.product(gammas, lambdas):
        betas = a["beta"] if a.get("beta") is not None else [g]
        out.extend((b, g, lam) for b in betas)
    return out


def _fit_point(a, beta):
    model = model_from_name(a["model"])
    fit = mdpde_fit(_sample(a), model, beta, centered=a.get("estimator", "mdpde") == "mdpde")
    row = {"beta": beta}
    row.update({f"{n}_hat": float(v) for n, v in zip(model.param_names, fit.theta_hat)})
    row.update({"converged": fit.converged, "objective": fit.objective})
    return row


def _test_point(a, point, model_name=None):
    beta, gamma, lam = point
    model = model_from_name(model_name or a["model"])
    spec = TestSpec(model, parse_constraint(a["null"], model), beta, gamma, lam, a["alpha"])
    rep = run_sdt(_sample(a), spec)
    out = {"beta": beta, "gamma": gamma, "lambda": lam}
    out.update(rep.as_dict())
    return out


def _curve_point(a, task):
    mode, point = task
    name = f"normal-fixed-sigma:{a['known_sigma']:g}" if mode == "known" else a["model"]
    r = _test_point(a, point, name)
    return {"gamma": r["gamma"], "lambda": r["lambda"], "beta": r["beta"], "mode": mode,
            "p_value": r["p_value"], "statistic": r["statistic"]}


def _spec(a, point):
    beta, gamma, lam = point
    model = model_from_name(a["model"])
    return model, TestSpec(model, parse_constraint(a["null"], model), beta, gamma, lam, a["alpha"])


def _ifcurve_point(a, point):
    model, spec = _spec(a, point)
    theta0 = parse_theta(a["theta0"], model)
    ys = np.array(_span(a["y"]))
    delta = np.array(_floats(a["delta"])) if a.get("delta") else None
    if2 = if2_sdt(ys, model, theta0, spec.beta, spec.gamma, spec.constraints, spec.lam)
    rows = []
    for y, v in zip(ys, if2):
        row = {"beta": point[0], "gamma": point[1], "lambda": point[2], "y": float(y), "if2": float(v),
               "lif": level_influence(float(y), spec, theta0)}
        row["pif"] = power_influence(float(y), spec, theta0, delta) if delta is not None else ""
        rows.append(row)
    return rows


def _power_point(a, point):
    model, spec = _spec(a, point)
    theta_star = parse_theta(a["theta_star"], model)
    return [{"beta": point[0], "gamma": point[1], "lambda": point[2], "n": n,
             "power": power_approximation(spec, theta_star, n)} for n in _ints(a["n"])]


def _simulate_point(a, point):
    model, spec = _spec(a, point)
    theta = parse_theta(a["theta_true"], model)
    delta = tuple(_floats(a["delta"])) if a.get("delta") else None
    cont = ContaminationSpec(a["epsilon"], a["y"], delta)
    rows = []
    for n in _ints(a["n"]):
        res = simulate_level_power(spec, theta, cont, n, a["replicates"], a["seed"])
        rows.append({"beta": point[0], "gamma": point[1], "lambda": point[2], "n": n,
                     "replicates": res.replicates, "rate": res.rate, "mc_se": res.mc_se,
                     "failures": res.failures, "seed": res.seed})
    return rows


def _guard(job):
    fn, a, task = job
    try:
        return fn(a, task), None
    except (SDTError, ValueError, ArithmeticError) as e:
        return None, f"{type(e).__name__}: {e}"


def _run(fn, a, tasks):
    jobs = [(fn, a, t) for t in tasks]
    if a.get("jobs", 1) > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=a["jobs"]) as ex:
            return list(ex.map(_guard, jobs))
    return [_guard(j) for j in jobs]


# -- output ---------------------------------------------------------------------------


def _config_hash(a):
    blob = json.dumps({k: v for k, v in sorted(a.items()) if k not in ("out", "jobs", "config")},
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _meta(a):
    return {"tool": "sdt", "version": __version__, "config_hash": _config_hash(a), "seed": a["seed"],
            "conventions": CONVENTIONS, "command": a["command"]}


def _write(a, text):
    if a.get("out"):
        with open(a["out"], "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_csv(a, fields, rows):
    buf = io.StringIO()
    m = _meta(a)
    buf.write(f"# sdt {m['version']} config={m['config_hash']} seed={m['seed']} conventions={CONVENTIONS}\n")
    w = csv.DictWriter(buf, fieldnames=fields + ["error"], extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    _write(a, buf.getvalue())


def _collect(results, template):
    rows, failed = [], False
    for (value, err), t in zip(results, template):
        if err is not None:
            failed = True
            rows.append({**t, "error": err})
        else:
            rows.extend(value if isinstance(value, list) else [value])
    return rows, failed


def _point_dict(p):
    return {"beta": p[0], "gamma": p[1], "lambda": p[2]}


# -- commands -------------------------------------------------------------------------


def cmd_fit(a):
    betas = a["beta"] if a.get("beta") is not None else FIT_BETAS
    res = _run(_fit_point, a, betas)
    rows, failed = _collect(res, [{"beta": b} for b in betas])
    model = model_from_name(a["model"])
    fields = ["beta"] + [f"{n}_hat" for n in model.param_names] + ["converged", "objective"]
    _emit_csv(a, fields, rows)
    return failed


def cmd_test(a):
    if not a.get("null"):
        raise SDTError("test needs --null")
    points = _tuning_grid(a)
    res = _run(_test_point, a, points)
    out, failed = [], False
    for (value, err), p in zip(res, points):
        if err is not None:
            failed = True
            out.append({**_point_dict(p), "error": err})
        else:
            out.append(value)
    _write(a, json.dumps({"meta": _meta(a), "results": out}, indent=2) + "\n")
    return failed


def cmd_pvalue_curve(a):
    if not a.get("null"):
        raise SDTError("pvalue-curve needs --null")
    points = _tuning_grid(a, DEFAULT_GAMMAS) if a.get("lambda") is not None else _tuning_grid(
        {**a, "lambda": DEFAULT_LAMBDAS}, DEFAULT_GAMMAS)
    modes = [m.strip() for m in a["modes"].split(",") if m.strip()]
    if any(m not in ("unknown", "known") for m in modes):
        raise SDTError("modes must be drawn from unknown,known")
    tasks = [(m, p) for m in modes for p in points]
    res = _run(_curve_point, a, tasks)
    rows, failed = _collect(res, [{**_point_dict(p), "mode": m} for m, p in tasks])
    _emit_csv(a, ["gamma", "lambda", "beta", "mode", "p_value", "statistic"], rows)
    return failed


def cmd_ifcurve(a):
    points = _tuning_grid(a)
    res = _run(_ifcurve_point, a, points)
    rows, failed = _collect(res, [_point_dict(p) for p in points])
    _emit_csv(a, ["beta", "gamma", "lambda", "y", "if2", "lif", "pif"], rows)
    return failed


def cmd_power(a):
    points = _tuning_grid(a)
    res = _run(_power_point, a, points)
    rows, failed = _collect(res, [_point_dict(p) for p in points])
    _emit_csv(a, ["beta", "gamma", "lambda", "n", "power"], rows)
    return failed


def cmd_simulate(a):
    points = _tuning_grid(a)
    res = _run(_simulate_point, a, points)
    rows, failed = _collect(res, [_point_dict(p) for p in points])
    _emit_csv(a, ["beta", "gamma", "lambda", "n", "replicates", "rate", "mc_se", "failures", "seed"], rows)
    return failed


COMMANDS = {
    "fit": cmd_fit,
    "test": cmd_test,
    "pvalue-curve": cmd_pvalue_curve,
    "ifcurve": cmd_ifcurve,
    "power": cmd_power,
    "simulate": cmd_simulate,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file whose keys mirror the long flags")
    common.add_argument("--data", default="builtin:telephone-fault", help="CSV path or builtin:<name>")
    common.add_argument("--drop", help="1-based positions to remove, e.g. 1 or 1,5")
    common.add_argument("--model", default="normal", help="normal | poisson | normal-fixed-sigma:<v>")
    common.add_argument("--null", help='null hypothesis, e.g. "mu=0"')
    common.add_argument("--beta", type=_floats, help="estimation tuning grid (default: tied to gamma)")
    common.add_argument("--gamma", type=_floats, help="divergence gamma grid")
    common.add_argument("--lambda", dest="lambda", type=_floats, help="divergence lambda grid")
    common.add_argument("--alpha", type=float, default=0.05)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--out", help="output file (default stdout)")

    parser = argparse.ArgumentParser(prog="sdt", description="S-divergence tests of composite hypotheses")
    parser.add_argument("--version", action="version", version=f"sdt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="MDPDE over a beta grid")
    p.add_argument("--estimator", choices=["mdpde", "weighted-score"], default="mdpde")
    sub.add_parser("test", parents=[common], help="SDT report per tuning point (JSON)")
    p = sub.add_parser("pvalue-curve", parents=[common], help="p-values over a gamma/lambda grid")
    p.add_argument("--modes", default="unknown,known")
    p.add_argument("--known-sigma", dest="known_sigma", type=float, default=132.0)
    p = sub.add_parser("ifcurve", parents=[common], help="IF2, LIF and PIF over a y grid")
    p.add_argument("--theta0", default="mu=0,sigma=1")
    p.add_argument("--y", default="-50:50:101", help="lo:hi:count or comma list")
    p.add_argument("--delta", help="alternative shift for the PIF, comma list")
    p = sub.add_parser("power", parents=[common], help="large-sample power approximation")
    p.add_argument("--theta-star", dest="theta_star", default="mu=0.5,sigma=1")
    p.add_argument("--n", default="20,50,100,200,500")
    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo level or power")
    p.add_argument("--theta-true", dest="theta_true", default="mu=0,sigma=1")
    p.add_argument("--n", default="100")
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--y", type=float, default=0.0)
    p.add_argument("--delta", help="contiguous shift, comma list")
    return parser


def _load_config(path):
    with open(path) as fh:
        cfg = json.load(fh)
    out = {}
    for k, v in cfg.items():
        key = k.replace("-", "_")
        if key in ("beta", "gamma", "lambda") and not isinstance(v, list):
            v = _floats(v)
        out[key] = v
    return out


def parse_args(argv=None):
    """Parse flags; values from --config act as defaults that flags override."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        cfg = _load_config(known.config)
        sub = next(x for x in parser._actions if isinstance(x, argparse._SubParsersAction))
        command = next((t for t in argv if t in sub.choices), None)
        if command is not None:
            sp = sub.choices[command]
            dests = {act.dest for act in sp._actions}
            unknown = set(cfg) - dests - {"command"}
            if unknown:
                parser.error(f"unknown config keys for {command}: {', '.join(sorted(unknown))}")
            sp.set_defaults(**cfg)
    return vars(parser.parse_args(argv))


def main(argv=None):
    try:
        a = parse_args(argv)
        model = model_from_name(a["model"])
        if a.get("null"):
            parse_constraint(a["null"], model)
        failed = COMMANDS[a["command"]](a)
    except SDTError as e:
        print(f"sdt: {e}", file=sys.stderr)
        return 2
    return 1 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
