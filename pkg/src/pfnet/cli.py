"""Command-line front end.

    pfnet lambda  --model net.json --population 10
    pfnet exact   --model net.json --population 3 --format csv
    pfnet approx  --model net.json --regime auto
    pfnet compare --model net.json --population 40 --regime gamma --out results/
    pfnet scaling --model family.json --u 0.5
    pfnet app vehicle --model fleet.json --population 6

Exit codes: 0 success, 1 invalid model or data, 2 usage error, 3 when
``compare`` finds an error above ten times its evaluated budget.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, apps, asymptotics as asy, kernels
from .errors import ModelError, NumericalInconsistencyError
from .model import dump_network, network_from_dict
from .oracle import exact_sn_pmf, solve_exact
from .scaling import (
    check_assumptions, classify, critical_sequence, family_from_dict, m_hat0,
)
from .surrogate import solve_lambda

EXIT_OK, EXIT_MODEL, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3
BUDGET_FACTOR = 10.0
LABELS = {"lambda_n": "λ_n", "lambda0": "λ⁰", "rho0": "ρ⁰", "sigma_n": "σ_n", "h_u": "h_u"}


def _num(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v) or math.isinf(v):
            return str(v)
        return float(f"{v:.12g}")
    if isinstance(v, (list, tuple)):
        return [_num(x) for x in v]
    return v


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


class Report:
    """Named tables plus scalar results, warnings and assumption checks."""

    def __init__(self, argv, digest):
        self.command = list(argv)
        self.digest = digest
        self.scalars = {}
        self.tables = {}
        self.warnings = []
        self.assumptions = {}
        self.status = "ok"

    def table(self, name, columns, rows):
        self.tables[name] = (list(columns), [list(r) for r in rows])

    def to_dict(self):
        return {
            "command": self.command,
            "inputs_sha256": self.digest,
            "status": self.status,
            "results": {k: _num(v) for k, v in self.scalars.items()},
            "tables": {
                k: {"columns": cols, "rows": [[_num(x) for x in r] for r in rows]}
                for k, (cols, rows) in self.tables.items()
            },
            "warnings": self.warnings,
            "assumptions": self.assumptions,
        }

    def primary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if self.tables:
            cols, rows = next(iter(self.tables.values()))
            w.writerow(cols)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
        else:
            w.writerow(["name", "value"])
            for k, v in self.scalars.items():
                w.writerow([k, _fmt(v)])
        return buf.getvalue()

    def text(self) -> str:
        out = []
        for k, v in self.scalars.items():
            k = LABELS.get(k, k)
            out.append(f"{k} = {v:.6g}" if isinstance(v, (float, np.floating)) else f"{k} = {v}")
        for name, (cols, rows) in self.tables.items():
            out.append("")
            out.append(f"[{name}]")
            cells = [cols] + [[_short(x) for x in r] for r in rows]
            widths = [max(len(str(c[i])) for c in cells) for i in range(len(cols))]
            for c in cells:
                out.append("  ".join(str(x).rjust(wd) for x, wd in zip(c, widths)))
        if self.assumptions:
            out.append("")
            out.append("[assumptions]")
            for k, a in self.assumptions.items():
                out.append(f"{k}: {'pass' if a['passed'] else 'FAIL'} ({a['statistic']}) {a['detail']}")
        for w in self.warnings:
            out.append(f"warning: {w}")
        return "\n".join(out)

    def write(self, outdir: Path):
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "report.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        (outdir / "report.csv").write_text(self.primary_csv())
        for name, (cols, rows) in list(self.tables.items())[1:]:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
            (outdir / f"report_{name}.csv").write_text(buf.getvalue())


def _short(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def _assumption_dict(checks):
    return {
        k: {"passed": bool(a.passed), "statistic": _num(a.statistic), "threshold": _num(a.threshold),
            "witness": a.witness, "detail": a.detail}
        for k, a in checks.items()
    }


# ---------------------------------------------------------------- loading


def _read_model(path):
    if path is None:
        return None, b""
    raw = Path(path).read_bytes()
    try:
        return json.loads(raw), raw
    except json.JSONDecodeError as e:
        raise ModelError(f"{path}: not valid JSON ({e})") from None


def _network(doc, population):
    if doc is None:
        raise ModelError("this command needs --model FILE")
    net = network_from_dict(doc.get("network", doc))
    return net if population is None else net.with_population(population)


def _t_grid(text):
    if text is None:
        return None
    return np.array([float(x) for x in text.split(",") if x.strip()])


# ---------------------------------------------------------------- commands


def cmd_lambda(args, doc, rep):
    net = _network(doc, args.population)
    sol = solve_lambda(net, tol=args.tol)
    rep.scalars.update({
        "lambda_n": sol.lam, "lambda0": net.lambda0, "rho0": sol.rho0,
        "m_n": sol.moments.total_mean, "population": net.population,
    })
    rep.table("queues", ["queue", "intensity", "mean", "variance"],
              [[k, q.intensity, q.mean, q.var] for k, q in enumerate(sol.queues)])


def cmd_exact(args, doc, rep):
    net = _network(doc, args.population)
    ex = solve_exact(net)
    m = net.population
    rep.scalars.update({"population": m, "log_Z": float(ex.log_Z[-1])})
    rows = [[k, q, ex.marginals[k, q]] for k in range(net.n) for q in range(m + 1)]
    rep.table("marginals", ["queue", "q", "probability"], rows)
    rep.table("means", ["queue", "mean"], [[k, v] for k, v in enumerate(ex.means)])


def _auto_regime(sol):
    """Gamma when the bottleneck set carries a macroscopic share of the customers."""
    if not sol.F0 or not sol.rho0 > 0:
        return "normal"
    mh = m_hat0(sol.network)
    m = sol.population
    if mh > 0 and m > mh and (m / mh - 1) * mh >= 10:
        return "gamma"
    return "normal"


def _engine(regime):
    return {"normal": asy.normal_llt, "edgeworth": asy.edgeworth_llt, "gamma": asy.gamma_llt}[regime]


def cmd_approx(args, doc, rep):
    net = _network(doc, args.population)
    sol = solve_lambda(net, tol=args.tol)
    regime = _auto_regime(sol) if args.regime == "auto" else args.regime
    rep.scalars.update({"regime": regime, "lambda_n": sol.lam, "rho0": sol.rho0,
                        "sigma_n": sol.moments.sigma})
    mean_fn = asy.approx_mean_gamma if regime == "gamma" else asy.approx_mean
    rows = []
    for k in range(net.n):
        r = mean_fn(sol, k)
        rows.append([k, r.value, r.total_budget])
    rep.table("means", ["queue", "approx_mean", "relative_budget"], rows)
    llt = _engine(regime)(sol, 0)
    rep.scalars.update({"llt_at_0": llt.value, "llt_budget": llt.total_budget})
    rep.assumptions = _assumption_dict(check_assumptions(net, sol.partition))


def cmd_compare(args, doc, rep):
    net = _network(doc, args.population)
    sol = solve_lambda(net, tol=args.tol)
    regime = _auto_regime(sol) if args.regime == "auto" else args.regime
    pm = exact_sn_pmf(sol.pmfs())
    x = np.arange(len(pm)) - sol.moments.total_mean
    res = _engine(regime)(sol, x)
    bound = res.abs_bound
    err = np.abs(pm - res.value)
    col = f"{regime}_llt"
    rep.table("compare", ["x", "exact", col, "budget"],
              [[xi, p, v, bound] for xi, p, v in zip(x, pm, res.value)])
    worst = float(err.max())
    rep.scalars.update({"regime": regime, "max_error": worst, "budget": bound,
                        "ratio": worst / bound if bound > 0 else math.inf})
    for k, v in res.error_budget.items():
        rep.scalars[f"budget_{k}"] = v
    if worst > BUDGET_FACTOR * bound:
        rep.status = "budget exceeded"


def cmd_scaling(args, doc, rep):
    if doc is None:
        raise ModelError("scaling needs --model FILE with a family description")
    fam = family_from_dict(doc.get("family", doc))
    if args.population_rule:
        fam = fam.with_population(args.population_rule)
    probe = doc.get("probe") if isinstance(doc, dict) else None
    seq = critical_sequence(fam, args.u, _t_grid(args.t_grid), probe=probe)
    rep.scalars.update({"u": args.u, "h_u": seq.h_u, "g_limit_class": seq.g_limit_class,
                        "g_limit": seq.g_limit, "g_confidence": seq.confidence})
    rep.table("critical_sequence", ["index", "size", "m0"],
              [[n, fam.size(n), v] for n, v in zip(seq.indices, seq.values)])
    rep.table("g_profile", ["t", "g"], list(zip(seq.t_grid, seq.g_profile)))
    if fam.population is not None:
        r = classify(fam, u=args.u, seq=seq)
        rep.scalars.update({"classification": r.classification, "epsilon": r.epsilon if r.epsilon is not None else math.nan})
        rep.table("regime", ["index", "population", "lambda_n", "rho0", "m0", "m0hat", "ratio", "xi"],
                  [[s.index, s.population, s.lam, s.rho0, s.m0, s.m0hat, s.ratio, s.xi] for s in r.rows])
        rep.assumptions = _assumption_dict(r.assumptions)
        rep.warnings.extend(r.notes)


def cmd_app(args, doc, rep):
    params = {} if doc is None else dict(doc.get(args.app, doc))
    if args.app == "jackson":
        table = params.get("measure") or apps.discretize_density(lambda r: 2 * (1 - r), 100)
        lc = apps.lambda_cr(table, _t_grid(args.t_grid))
        rep.scalars["lambda_cr"] = lc
        indices = params.get("indices", [100, 200, 400])
        rep.table("critical", ["n", "m0"], [[n, n * lc] for n in indices])
    elif args.app == "tandem":
        f = float(params.get("f", 0.5))
        pairs = params.get("pairs", [[5, 5], [10, 10], [20, 20]])
        fam = apps.tandem_family(f, {i: tuple(p) for i, p in enumerate(pairs)})
        seq = critical_sequence(fam, args.u, _t_grid(args.t_grid), extrapolate=False)
        rep.scalars.update({"f": f, "u": args.u, "L_f(u)": apps.L_f(args.u, f),
                            "g_limit_class": seq.g_limit_class})
        rep.table("tandem", ["s", "ell", "n", "m0", "m0_over_s"],
                  [[s, l, s * l, v, v / s] for (s, l), v in zip(pairs, seq.values)])
    else:
        v = apps.vehicle_from_dict(params)
        if args.population is not None:
            v = v.with_fleet(args.population)
        rec = apps.recommend_fleet(v)
        rep.scalars.update({"fleet": v.fleet, "m_hat0": rec.m_hat0, "recommended_fleet": rec.fleet,
                            "lambda0": rec.lambda0, "bottleneck_stations": list(rec.bottlenecks)})
        asym = apps.loss_probability(v, "asymptotic")
        rep.scalars.update({"loss_asymptotic": asym.value, "loss_epsilon": asym.epsilon})
        rep.warnings.extend(asym.notes)
        try:
            rep.scalars["loss_exact"] = apps.loss_probability(v, "exact").value
        except ModelError as e:
            rep.warnings.append(str(e))
        rep.assumptions = _assumption_dict({"A-nonsat": rec.nonsat})


COMMANDS = {
    "lambda": cmd_lambda, "exact": cmd_exact, "approx": cmd_approx,
    "compare": cmd_compare, "scaling": cmd_scaling, "app": cmd_app,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", metavar="FILE", help="network, family or preset description (JSON)")
    common.add_argument("--population", type=int, metavar="M", help="override the population")
    common.add_argument("--out", metavar="DIR", help="write report.json and report.csv here")
    common.add_argument("--format", choices=("table", "csv", "json"), default="table")
    common.add_argument("--tol", type=float, default=1e-9, help="relative tolerance for the intensity solve")
    common.add_argument("--dump-model", metavar="FILE", help="write the loaded network back as JSON")

    p = argparse.ArgumentParser(prog="pfnet", description="Closed product-form network analysis")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({kernels.BACKEND})")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("lambda", parents=[common], help="solve the intensity matching the population")
    sub.add_parser("exact", parents=[common], help="exact marginals and means by convolution")
    for name in ("approx", "compare"):
        s = sub.add_parser(name, parents=[common],
                           help="local limit approximations" if name == "approx" else "exact against approximate law of the total")
        s.add_argument("--regime", choices=("auto", "normal", "edgeworth", "gamma"), default="auto")
    s = sub.add_parser("scaling", parents=[common], help="critical sequence and regime of a family")
    s.add_argument("--u", type=float, default=0.5)
    s.add_argument("--t-grid", help="comma-separated t values in (0, 1)")
    s.add_argument("--population-rule", help="population expression over n, m0, m0hat")
    s = sub.add_parser("app", parents=[common], help="application presets")
    s.add_argument("app", choices=("jackson", "tandem", "vehicle"))
    s.add_argument("--u", type=float, default=0.5)
    s.add_argument("--t-grid", help="comma-separated t values in (0, 1)")
    return p


def run(argv=None, stdout=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    try:
        doc, raw = _read_model(args.model)
        digest = hashlib.sha256(raw + json.dumps(argv).encode()).hexdigest()
        rep = Report(argv, digest)
        if args.dump_model:
            dump_network(_network(doc, args.population), args.dump_model)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            COMMANDS[args.command](args, doc, rep)
        rep.warnings = [str(w.message) for w in caught] + rep.warnings
    except (ModelError, NumericalInconsistencyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MODEL
    if args.out:
        rep.write(Path(args.out))
    if args.format == "json":
        stdout.write(json.dumps(rep.to_dict(), indent=2) + "\n")
    elif args.format == "csv":
        stdout.write(rep.primary_csv())
    else:
        stdout.write(rep.text() + "\n")
    return EXIT_BUDGET if rep.status == "budget exceeded" else EXIT_OK


def main():
    try:
        code = run()
        sys.stdout.flush()
    except BrokenPipeError:
        # downstream closed the pipe (e.g. `| head`); not an error of ours
        sys.stderr.close()
        code = EXIT_OK
    sys.exit(code)


if __name__ == "__main__":
    main()
