"""Command-line interface.

Subcommands: simulate, fit, loss, divergence, polysys (build/check/search),
experiment.  Machine-readable results go to stdout as key=value lines
(fit prints a JSON summary); diagnostics go to stderr.  Exit codes:
0 success, 1 usage or configuration error, 2 numeric or experiment
failure.  All randomness flows from the seeds given on the command line
or in the configuration file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from fractions import Fraction
from math import factorial

import numpy as np

from .divergence import QuadratureSpec, hellinger_sq, total_variation
from .estimator import FitConfig, fit_mle
from .experiments import ExperimentConfig, ExperimentError, run_experiment
from .measure import ThetaBox, sample
from .polysys import SearchConfig, build_system, evaluate_system, is_nontrivial, search_nontrivial
from .serialization import (
    FormatError,
    format_float,
    parse_kv,
    read_dataset,
    read_measure,
    read_solution,
    write_dataset,
    write_measure,
    write_solution,
)
from .voronoi import TranslationSolverConfig, exact_loss, overfit_loss

__all__ = ["main"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise UsageError(message)


_FIT_KEYS = {
    "restarts": int, "max_em_iters": int, "em_tol": float,
    "gating_inner_iters": int, "gating_step": float, "seed": int,
    "screen_iters": int, "keep_top": int, "ridge": float,
}
_SOLVER_KEYS = {"step": float, "iters": int, "stages": int}
_QUAD_KEYS = {"n_x": int, "n_y": int, "y_halfwidth": float, "tail_mass": float}
_THETA_KEYS = {"bound": float, "sigma_lo": float, "sigma_hi": float,
               "x_lo": float, "x_hi": float}
_EXPERIMENT_KEYS = {"measure": str, "regime": str, "k": int, "n_grid": str,
                    "replicates": int, "seed": int}

_SECTIONS = {
    "fit": _FIT_KEYS,
    "solver": _SOLVER_KEYS,
    "quad": _QUAD_KEYS,
    "theta": _THETA_KEYS,
    "experiment": _EXPERIMENT_KEYS,
}


def _split_sections(pairs: dict[str, str]) -> dict[str, dict[str, object]]:
    """Validate section-prefixed keys and convert values to their types."""
    out: dict[str, dict[str, object]] = {name: {} for name in _SECTIONS}
    for key, raw in pairs.items():
        section, _, field = key.partition(".")
        if section not in _SECTIONS or not field:
            raise UsageError(f"unknown key '{key}'")
        types = _SECTIONS[section]
        if field not in types:
            raise UsageError(f"unknown key '{key}'")
        caster = types[field]
        try:
            out[section][field] = caster(raw)
        except ValueError:
            raise UsageError(f"key '{key}': cannot parse '{raw}' as {caster.__name__}")
    return out


def _collect_overrides(sets: list[str] | None) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for item in sets or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got '{item}'")
        key, _, value = item.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def _theta_from(section: dict[str, object], dim: int) -> ThetaBox:
    box = ThetaBox.default(dim)
    if "bound" in section:
        bnd = float(section["bound"])
        ones = np.ones(dim)
        box = dataclasses.replace(
            box, beta0_lo=-bnd, beta0_hi=bnd, beta1_lo=-bnd * ones,
            beta1_hi=bnd * ones, a_lo=-bnd * ones, a_hi=bnd * ones,
            b_lo=-bnd, b_hi=bnd,
        )
    if "sigma_lo" in section or "sigma_hi" in section:
        box = dataclasses.replace(
            box,
            sigma_lo=float(section.get("sigma_lo", box.sigma_lo)),
            sigma_hi=float(section.get("sigma_hi", box.sigma_hi)),
        )
    if "x_lo" in section or "x_hi" in section:
        ones = np.ones(dim)
        box = dataclasses.replace(
            box,
            x_lo=float(section.get("x_lo", -1.0)) * ones,
            x_hi=float(section.get("x_hi", 1.0)) * ones,
        )
    return box


def _build(cls, section: dict[str, object], **fixed):
    return cls(**{**section, **fixed})


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    g = read_measure(args.measure)
    data = sample(g, args.n, args.seed)
    write_dataset(data, args.out)
    print(f"rows={data.n}")
    print(f"out={args.out}")
    return 0


def _cmd_fit(args) -> int:
    sections = _split_sections(_collect_overrides(args.set))
    data = read_dataset(args.data)
    theta = _theta_from(sections["theta"], data.dim)
    fit_section = dict(sections["fit"])
    if args.seed is not None:
        fit_section["seed"] = args.seed
    cfg = _build(FitConfig, fit_section, k=args.k)
    result = fit_mle(data, theta, cfg)
    write_measure(result.measure, args.out)
    print(json.dumps({
        "final_loglik": result.final_loglik,
        "iterations": result.iterations,
        "converged": result.converged,
        "restart_index": result.restart_index,
        "out": str(args.out),
    }))
    return 0


def _cmd_loss(args) -> int:
    sections = _split_sections(_collect_overrides(args.set))
    g = read_measure(args.g)
    gstar = read_measure(args.gstar)
    theta = _theta_from(sections["theta"], gstar.dim)
    cfg = _build(TranslationSolverConfig, sections["solver"])
    fn = exact_loss if args.mode == "d1" else overfit_loss
    res = fn(g, gstar, cfg, theta)
    print(f"mode={args.mode}")
    print(f"value={format_float(res.value)}")
    print(f"t1={format_float(res.t1)}")
    print("t2=" + " ".join(format_float(v) for v in res.t2))
    print("cells=" + ";".join(
        ",".join(str(i) for i in cell) for cell in res.assignment.cells
    ))
    return 0


def _cmd_divergence(args) -> int:
    sections = _split_sections(_collect_overrides(args.set))
    g = read_measure(args.g)
    gstar = read_measure(args.gstar)
    quad = _build(QuadratureSpec, sections["quad"], seed=args.seed)
    h2 = hellinger_sq(g, gstar, quad)
    tv = total_variation(g, gstar, quad)
    print(f"hellinger_sq={format_float(h2.value)} se={format_float(h2.se)}")
    print(f"total_variation={format_float(tv.value)} se={format_float(tv.se)}")
    return 0


def _monomial_str(mi) -> str:
    denom = 1
    for v in mi.alpha1:
        denom *= factorial(v)
    for v in mi.alpha2:
        denom *= factorial(v)
    denom *= factorial(mi.alpha3) * factorial(mi.alpha4)
    parts = []
    for sym, exps in (("p1", mi.alpha1), ("p2", mi.alpha2)):
        for u, e in enumerate(exps):
            if e:
                coord = f"{sym}[{u + 1}]" if len(exps) > 1 else sym
                parts.append(coord if e == 1 else f"{coord}^{e}")
    for sym, e in (("p3", mi.alpha3), ("p4", mi.alpha4)):
        if e:
            parts.append(sym if e == 1 else f"{sym}^{e}")
    body = " ".join(parts) if parts else "1"
    coeff = Fraction(1, denom)
    return body if coeff == 1 else f"({coeff}) {body}"


def _cmd_polysys(args) -> int:
    if args.action == "build":
        system = build_system(args.m, args.d, args.r)
        print(f"equations={system.n_equations}")
        for eq in system.equations:
            ell1 = ",".join(str(v) for v in eq.ell1)
            terms = " + ".join(_monomial_str(mi) for mi in eq.indices)
            print(f"ell1=({ell1}) ell2={eq.ell2}: sum_j p5^2 [ {terms} ] = 0")
        return 0
    if args.action == "check":
        system = build_system(args.m, args.d, args.r)
        sol = read_solution(args.solution)
        res = evaluate_system(system, sol)
        for eq, v in zip(system.equations, res):
            ell1 = ",".join(str(u) for u in eq.ell1)
            print(f"ell1=({ell1}) ell2={eq.ell2} residual={format_float(v)}")
        print(f"max_residual={format_float(np.max(np.abs(res)))}")
        print(f"nontrivial={'true' if is_nontrivial(sol) else 'false'}")
        return 0
    # search
    cfg = SearchConfig(restarts=args.restarts, seed=args.seed)
    result = search_nontrivial(args.m, args.d, args.r, cfg)
    print(f"verdict={'found' if result.found is not None else 'not_found'}")
    print(f"best_residual={format_float(result.best_residual)}")
    print(f"message={result.message}")
    if result.found is not None and args.out is not None:
        write_solution(result.found, args.out)
        print(f"out={args.out}")
    return 0


def _cmd_experiment(args) -> int:
    with open(args.config) as fh:
        pairs = parse_kv(fh.read())
    sections = _split_sections(pairs)
    exp = sections["experiment"]
    for key in ("measure", "regime", "k", "n_grid", "replicates"):
        if key not in exp:
            raise UsageError(f"experiment config: missing key 'experiment.{key}'")
    gstar = read_measure(str(exp["measure"]))
    theta = _theta_from(sections["theta"], gstar.dim)
    n_grid = tuple(int(v) for v in str(exp["n_grid"]).split())
    fit_cfg = _build(FitConfig, sections["fit"], k=int(exp["k"]))
    solver = _build(TranslationSolverConfig, sections["solver"]) if sections["solver"] else None
    quad = _build(QuadratureSpec, sections["quad"]) if sections["quad"] else None
    cfg = ExperimentConfig(
        gstar=gstar, regime=str(exp["regime"]), k=int(exp["k"]), n_grid=n_grid,
        replicates=int(exp["replicates"]), fit=fit_cfg, solver=solver,
        quad=quad, theta=theta, seed=int(exp.get("seed", 0)),
    )
    result = run_experiment(cfg, raw_path=args.raw, summary_path=args.summary)
    for q, rate in result.quantities.items():
        print(f"{q}.slope={format_float(rate.slope)} r2={format_float(rate.r2)}")
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------


def _make_parser() -> _Parser:
    parser = _Parser(prog="gatemix",
                     description="softmax-gated Gaussian mixture-of-experts toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[], help="draw a dataset from a measure document")
    p.add_argument("--measure", required=True, help="measure document path")
    p.add_argument("--n", type=int, required=True, help="number of pairs")
    p.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    p.add_argument("--out", required=True, help="output dataset CSV path")

    p = sub.add_parser("fit", help="maximum-likelihood fit of a dataset")
    p.add_argument("--data", required=True, help="dataset CSV path")
    p.add_argument("--k", type=int, required=True, help="component budget")
    p.add_argument("--seed", type=int, default=None, help="overrides fit.seed")
    p.add_argument("--out", required=True, help="output measure document path")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override, e.g. fit.restarts=8 (sections: fit, theta)")

    p = sub.add_parser("loss", help="translation-infimum loss between two measures")
    p.add_argument("--mode", choices=["d1", "d2"], required=True,
                   help="d1: exact-fitted loss, d2: over-fitted loss")
    p.add_argument("--g", required=True, help="fitted measure document")
    p.add_argument("--gstar", required=True, help="true measure document")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override, e.g. solver.iters=10000 (sections: solver, theta)")

    p = sub.add_parser("divergence", help="Hellinger and total variation between measures")
    p.add_argument("--g", required=True)
    p.add_argument("--gstar", required=True)
    p.add_argument("--seed", type=int, default=0, help="covariate sampling seed (default 0)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override, e.g. quad.n_x=500 (section: quad)")

    p = sub.add_parser("polysys", help="moment-system tools")
    psub = p.add_subparsers(dest="action", required=True)
    for action in ("build", "check", "search"):
        a = psub.add_parser(action)
        a.add_argument("--m", type=int, required=True, help="number of atoms")
        a.add_argument("--d", type=int, required=True, help="covariate dimension")
        a.add_argument("--r", type=int, required=True, help="system order")
        if action == "check":
            a.add_argument("--solution", required=True, help="solution file path")
        if action == "search":
            a.add_argument("--restarts", type=int, default=10_000,
                           help="multi-start budget (default 10000)")
            a.add_argument("--seed", type=int, default=0, help="search seed (default 0)")
            a.add_argument("--out", default=None, help="write a found solution here")

    p = sub.add_parser("experiment", help="Monte Carlo convergence-rate sweep")
    p.add_argument("--config", required=True, help="flat key=value configuration file")
    p.add_argument("--raw", required=True, help="output path for raw replicate rows")
    p.add_argument("--summary", required=True, help="output path for slope summary")

    return parser


def main(argv=None) -> int:
    parser = _make_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "simulate": _cmd_simulate,
            "fit": _cmd_fit,
            "loss": _cmd_loss,
            "divergence": _cmd_divergence,
            "polysys": _cmd_polysys,
            "experiment": _cmd_experiment,
        }[args.command]
        return handler(args)
    except (UsageError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ExperimentError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
