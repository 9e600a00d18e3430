"""Monte Carlo harness for empirical convergence rates.

For each sample size in a geometric grid the harness draws replicate
datasets from a known truth, fits the MLE, evaluates the regime loss
(exact-fitted or over-fitted), the Hellinger distance, and per-parameter-
group errors, then fits ordinary least squares slopes on (log n, log mean).
Replicate seeds are derived from the master seed by counter, so a rerun
with the same configuration reproduces every row bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import math
from typing import NamedTuple
import numpy as np

from .divergence import QuadratureSpec, hellinger_sq
from .estimator import FitConfig, fit_mle
from .measure import MixingMeasure, ThetaBox, sample
from .voronoi import (
    TranslationSolverConfig,
    VoronoiAssignment,
    exact_loss,
    overfit_loss,
)

__all__ = [
    "ExperimentConfig",
    "ExperimentError",
    "GroupErrors",
    "QuantityRate",
    "RateResult",
    "SlopeFit",
    "fit_slope",
    "parameter_group_errors",
    "run_experiment",
    "write_raw_csv",
    "write_summary_csv",
]

QUANTITIES = ("loss", "hellinger", "maxcell_beta1b", "maxcell_asigma", "weight_total")


class ExperimentError(RuntimeError):
    """Raised when too many replicates fail at some sample size."""


@dataclass(frozen=True)
class ExperimentConfig:
    gstar: MixingMeasure
    regime: str  # "exact" or "over"
    k: int
    n_grid: tuple[int, ...]
    replicates: int
    fit: FitConfig
    solver: TranslationSolverConfig | None = None
    quad: QuadratureSpec | None = None
    theta: ThetaBox | None = None
    seed: int = 0
    max_failure_rate: float = 0.2

    def __post_init__(self):
        grid = tuple(int(n) for n in self.n_grid)
        object.__setattr__(self, "n_grid", grid)
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("n_grid must be strictly increasing")
        if self.replicates < 3:
            raise ValueError("need at least 3 replicates per sample size")
        if self.regime not in ("exact", "over"):
            raise ValueError("regime must be 'exact' or 'over'")
        if self.regime == "over" and self.k <= self.gstar.k:
            raise ValueError("over regime needs k greater than the true order")
        if self.regime == "exact" and self.k != self.gstar.k:
            raise ValueError("exact regime needs k equal to the true order")


class GroupErrors(NamedTuple):
    """Per-true-component errors at a fixed translation: cell-max
    (beta1, b) norm, cell-max (a, sigma) norm, and the weight gap."""

    beta1b: np.ndarray
    asigma: np.ndarray
    weight: np.ndarray


def parameter_group_errors(fitted: MixingMeasure, true: MixingMeasure,
                           assignment: VoronoiAssignment, t1: float, t2) -> GroupErrors:
    """Split parameter error into the groups that converge at different rates."""
    t2 = np.atleast_1d(np.asarray(t2, dtype=float))
    w = np.exp(fitted.beta0)
    k_true = true.k
    beta1b = np.zeros(k_true)
    asigma = np.zeros(k_true)
    weight = np.empty(k_true)
    for j, cell in enumerate(assignment.cells):
        weight[j] = abs(sum(w[i] for i in cell) - math.exp(true.beta0[j] + t1))
        for i in cell:
            gb = math.sqrt(
                float(np.sum((fitted.beta1[i] - true.beta1[j] - t2) ** 2))
                + (fitted.b[i] - true.b[j]) ** 2
            )
            gs = math.sqrt(
                float(np.sum((fitted.a[i] - true.a[j]) ** 2))
                + (fitted.sigma[i] - true.sigma[j]) ** 2
            )
            beta1b[j] = max(beta1b[j], gb)
            asigma[j] = max(asigma[j], gs)
    return GroupErrors(beta1b=beta1b, asigma=asigma, weight=weight)


class SlopeFit(NamedTuple):
    slope: float
    intercept: float
    r2: float


def fit_slope(points) -> SlopeFit:
    """OLS slope of log(mean) against log(n); needs 4+ positive points."""
    pts = [(float(n), float(v)) for n, v in points]
    if len(pts) < 4:
        raise ValueError("slope fit needs at least 4 points")
    if any(v <= 0.0 for _, v in pts):
        raise ValueError("slope fit needs strictly positive values")
    lx = np.log([n for n, _ in pts])
    ly = np.log([v for _, v in pts])
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(slope=float(slope), intercept=float(intercept), r2=r2)


class QuantityRate(NamedTuple):
    slope: float
    intercept: float
    r2: float
    ns: tuple[int, ...]
    means: tuple[float, ...]
    ses: tuple[float, ...]


@dataclass(frozen=True)
class RateResult:
    quantities: dict[str, QuantityRate]
    n_grid: tuple[int, ...]
    replicates: int
    failures: dict[int, int]
    rows: list[dict]


def _replicate_row(cfg: ExperimentConfig, theta: ThetaBox, i_n: int, n: int, rep: int) -> dict:
    state = np.random.SeedSequence([cfg.seed, i_n, rep]).generate_state(3)
    data_seed, fit_seed, quad_seed = (int(s) for s in state)
    row = {"n": n, "replicate": rep, "seed": data_seed, "ok": 1,
           "converged": 0, "loglik": math.nan}
    k_true = cfg.gstar.k
    try:
        data = sample(cfg.gstar, n, data_seed, x_lo=theta.x_lo, x_hi=theta.x_hi)
        fit = fit_mle(data, theta, replace(cfg.fit, k=cfg.k, seed=fit_seed))
        row["converged"] = int(fit.converged)
        row["loglik"] = fit.final_loglik
        ghat = fit.measure
        if cfg.regime == "exact":
            loss = exact_loss(ghat, cfg.gstar, cfg.solver, theta)
        else:
            loss = overfit_loss(ghat, cfg.gstar, cfg.solver, theta)
        quad = cfg.quad if cfg.quad is not None else QuadratureSpec()
        quad = replace(quad, seed=quad_seed, x_lo=theta.x_lo, x_hi=theta.x_hi)
        h2 = hellinger_sq(ghat, cfg.gstar, quad)
        groups = parameter_group_errors(ghat, cfg.gstar, loss.assignment, loss.t1, loss.t2)
        sizes = loss.assignment.sizes()
        top = max(sizes)
        at_top = [j for j, s in enumerate(sizes) if s == top]
        row.update({
            "loss": loss.value,
            "hellinger": math.sqrt(max(h2.value, 0.0)),
            "maxcell_size": top,
            "maxcell_beta1b": max(groups.beta1b[j] for j in at_top),
            "maxcell_asigma": max(groups.asigma[j] for j in at_top),
            "weight_total": float(np.sum(groups.weight)),
        })
        for j in range(k_true):
            row[f"weight_err_{j + 1}"] = float(groups.weight[j])
            row[f"beta1b_err_{j + 1}"] = float(groups.beta1b[j])
            row[f"asigma_err_{j + 1}"] = float(groups.asigma[j])
        if not all(np.isfinite(row[q]) for q in QUANTITIES if q in row):
            raise ArithmeticError("non-finite replicate summary")
    except Exception:
        row["ok"] = 0
        for q in ("loss", "hellinger", "maxcell_size", "maxcell_beta1b",
                  "maxcell_asigma", "weight_total"):
            row.setdefault(q, math.nan)
        for j in range(k_true):
            row.setdefault(f"weight_err_{j + 1}", math.nan)
            row.setdefault(f"beta1b_err_{j + 1}", math.nan)
            row.setdefault(f"asigma_err_{j + 1}", math.nan)
    return row


def run_experiment(cfg: ExperimentConfig, raw_path=None, summary_path=None) -> RateResult:
    """Run the full sweep and fit the log-log slopes on replicate means.

    Raises :class:`ExperimentError` when more than ``max_failure_rate`` of
    the replicates fail at any sample size.  When paths are given the raw
    rows and the slope summary are written as versioned CSV files.
    """
    theta = cfg.theta if cfg.theta is not None else ThetaBox.default(cfg.gstar.dim)
    rows: list[dict] = []
    failures: dict[int, int] = {}
    for i_n, n in enumerate(cfg.n_grid):
        bad = 0
        for rep in range(cfg.replicates):
            row = _replicate_row(cfg, theta, i_n, n, rep)
            bad += 1 - row["ok"]
            rows.append(row)
        failures[n] = bad
        if bad > cfg.max_failure_rate * cfg.replicates:
            if raw_path is not None:
                write_raw_csv(rows, raw_path, cfg.gstar.k)
            raise ExperimentError(
                f"{bad}/{cfg.replicates} replicates failed at n={n}"
            )

    quantities: dict[str, QuantityRate] = {}
    for q in QUANTITIES:
        ns, means, ses = [], [], []
        for n in cfg.n_grid:
            vals = np.array([r[q] for r in rows if r["n"] == n and r["ok"]])
            ns.append(n)
            means.append(float(np.mean(vals)))
            ses.append(float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0)
        sf = fit_slope(list(zip(ns, means)))
        quantities[q] = QuantityRate(
            slope=sf.slope, intercept=sf.intercept, r2=sf.r2,
            ns=tuple(ns), means=tuple(means), ses=tuple(ses),
        )

    result = RateResult(
        quantities=quantities, n_grid=cfg.n_grid, replicates=cfg.replicates,
        failures=failures, rows=rows,
    )
    if raw_path is not None:
        write_raw_csv(rows, raw_path, cfg.gstar.k)
    if summary_path is not None:
        write_summary_csv(result, summary_path)
    return result


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_raw_csv(rows: list[dict], path, k_true: int) -> None:
    cols = ["n", "replicate", "seed", "ok", "converged", "loglik", "loss",
            "hellinger", "maxcell_size", "maxcell_beta1b", "maxcell_asigma",
            "weight_total"]
    for j in range(k_true):
        cols += [f"weight_err_{j + 1}", f"beta1b_err_{j + 1}", f"asigma_err_{j + 1}"]
    lines = ["format=1", ",".join(cols)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in cols))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_summary_csv(result: RateResult, path) -> None:
    lines = ["format=1", "quantity,n,mean,se,slope,intercept,r2"]
    for q, rate in result.quantities.items():
        for n, mean, se in zip(rate.ns, rate.means, rate.ses):
            lines.append(",".join([
                q, str(n), _fmt(mean), _fmt(se),
                _fmt(rate.slope), _fmt(rate.intercept), _fmt(rate.r2),
            ]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
