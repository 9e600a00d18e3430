"""Nearest-atom cells and translation-infimum parameter losses.

Fitted atoms are matched to true atoms by Euclidean distance on the
expert coordinates (a, b, sigma) only; gating coordinates are excluded,
so the assignment never changes while the translation (t1, t2) is being
optimized.  Two losses share the same cell structure:

* the exact-fitted loss: every cell holds exactly one fitted atom and the
  discrepancy enters linearly;
* the over-fitted loss: cells with several atoms have their (beta1, b)
  discrepancy raised to the power rho and their (a, sigma) discrepancy to
  rho/2, where rho is the smallest order at which the associated moment
  system admits no non-trivial solution (see :mod:`gatemix.polysys`).

The infimum over (t1, t2) is taken inside the region where the translated
gating parameters of the true measure remain in the parameter box; the
objective separates into a convex piece in t2 and a unimodal piece in t1,
and is minimized by projected subgradient steps on a halving schedule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple
import numpy as np

from .measure import MixingMeasure, ThetaBox

__all__ = [
    "VoronoiAssignment",
    "TranslationSolverConfig",
    "LossResult",
    "OrderInfo",
    "voronoi_cells",
    "min_unsolvable_order",
    "exact_loss_at",
    "exact_loss",
    "overfit_loss_at",
    "overfit_loss",
    "translation_bounds",
]


@dataclass(frozen=True)
class VoronoiAssignment:
    """Partition of fitted atom indices into per-true-atom cells.

    ``cells[j]`` lists the fitted atoms nearest to true atom ``j`` in the
    (a, b, sigma) coordinates; ties go to the lowest ``j``.  ``distances``
    holds the full (k_fit, k_true) distance matrix that produced it.
    """

    cells: tuple[tuple[int, ...], ...]
    distances: np.ndarray

    @property
    def k_true(self) -> int:
        return len(self.cells)

    def sizes(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.cells)

    def is_exact(self) -> bool:
        return all(len(c) == 1 for c in self.cells)


def voronoi_cells(fitted: MixingMeasure, true: MixingMeasure) -> VoronoiAssignment:
    """Assign each fitted atom to its nearest true atom."""
    if fitted.dim != true.dim:
        raise ValueError("measures have different covariate dimensions")
    th_fit = np.hstack([fitted.a, fitted.b[:, None], fitted.sigma[:, None]])
    th_true = np.hstack([true.a, true.b[:, None], true.sigma[:, None]])
    if len(np.unique(th_true, axis=0)) != true.k:
        raise ValueError("true measure has coinciding (a, b, sigma) atoms")
    diff = th_fit[:, None, :] - th_true[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=2))
    nearest = np.argmin(dist, axis=1)  # first minimum wins, i.e. lowest j
    cells = tuple(
        tuple(int(i) for i in np.flatnonzero(nearest == j)) for j in range(true.k)
    )
    return VoronoiAssignment(cells=cells, distances=dist)


class OrderInfo(NamedTuple):
    order: int
    conjectured: bool


def min_unsolvable_order(m: int) -> OrderInfo:
    """Smallest order at which the m-atom moment system has only trivial
    solutions.

    Known values are 4 for m=2 and 6 for m=3; beyond that the value 2m is
    a conjecture and the result is flagged accordingly.  Cells of size one
    never consult this function (they use the first-order loss branch).
    """
    if m < 2:
        raise ValueError("order lookup needs a cell of size at least 2")
    if m == 2:
        return OrderInfo(4, False)
    if m == 3:
        return OrderInfo(6, False)
    return OrderInfo(2 * m, True)


class LossResult(NamedTuple):
    value: float
    t1: float
    t2: np.ndarray
    assignment: VoronoiAssignment


@dataclass(frozen=True)
class TranslationSolverConfig:
    """Settings for the translation infimum.

    The objective separates: the weight term depends on t1 alone and is
    convex piecewise linear in exp(t1), so that coordinate is minimized
    exactly at its breakpoints; the remaining (convex) t2 part is
    minimized by projected subgradient steps.  The t2 budget is spent in
    ``stages`` blocks with the step halved between blocks, which drives
    the final accuracy well below the default 1e-3 target while each
    block runs plain fixed-step iterations.  ``step`` of None picks the
    box diameter divided by the objective's Lipschitz scale (the total
    fitted weight); a raw 0.01*(1+max|parameter|) step turns unusable
    once weights drift to the exp(beta0) scale.  Bounds of None are
    derived from the parameter box so the translated true gating
    parameters stay inside it.
    """

    step: float | None = None
    iters: int = 10_000
    stages: int = 20
    t1_bounds: tuple[float, float] | None = None
    t2_bounds: tuple[np.ndarray, np.ndarray] | None = None
    t_start: np.ndarray | None = None  # t2 start; default is 0 clipped in

    def __post_init__(self):
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")
        if self.iters < 1 or self.stages < 1:
            raise ValueError("iteration budget and stages must be positive")


def translation_bounds(theta: ThetaBox, true: MixingMeasure):
    """Box for (t1, t2) keeping beta0* + t1 and beta1* + t2 inside theta.

    Always contains the origin when the true measure lies in the box.
    """
    lo = np.empty(true.dim + 1)
    hi = np.empty(true.dim + 1)
    lo[0] = theta.beta0_lo - float(np.min(true.beta0))
    hi[0] = theta.beta0_hi - float(np.max(true.beta0))
    lo[1:] = theta.beta1_lo - np.min(true.beta1, axis=0)
    hi[1:] = theta.beta1_hi - np.max(true.beta1, axis=0)
    if np.any(lo > hi):
        raise ValueError("true measure leaves no translation slack in the box")
    return lo, hi


# ---------------------------------------------------------------------------
# loss evaluation at a fixed translation
# ---------------------------------------------------------------------------


def _pair_arrays(fitted, true, assignment):
    """Per-fitted-atom arrays aligned with their assigned true atom."""
    targets = np.empty(fitted.k, dtype=int)
    for j, cell in enumerate(assignment.cells):
        for i in cell:
            targets[i] = j
    w = np.exp(fitted.beta0)
    dbeta1 = fitted.beta1 - true.beta1[targets]
    da = fitted.a - true.a[targets]
    db = fitted.b - true.b[targets]
    dsigma = fitted.sigma - true.sigma[targets]
    return targets, w, dbeta1, da, db, dsigma


def _weight_terms(fitted, true, assignment, t1):
    """Sum over cells of |fitted cell weight - translated true weight|."""
    w = np.exp(fitted.beta0)
    cell_w = np.array([w[list(cell)].sum() if cell else 0.0 for cell in assignment.cells])
    wstar = np.exp(true.beta0 + t1)
    return float(np.sum(np.abs(cell_w - wstar)))


def _solve_weight_term(fitted, true, assignment, t1_lo, t1_hi):
    """Exact minimum of the weight term over t1.

    In s = exp(t1) the term is sum_j |W_j - wstar_j s|: convex piecewise
    linear, minimized at a breakpoint s = W_j / wstar_j or at a bound.
    Ties go to the smallest s for determinism.
    """
    w = np.exp(fitted.beta0)
    cell_w = np.array([w[list(cell)].sum() if cell else 0.0 for cell in assignment.cells])
    wstar = np.exp(true.beta0)
    s_lo, s_hi = np.exp(t1_lo), np.exp(t1_hi)
    candidates = np.clip(cell_w / wstar, s_lo, s_hi)
    candidates = np.unique(np.concatenate([candidates, [s_lo, s_hi]]))
    values = np.sum(np.abs(cell_w[None, :] - wstar[None, :] * candidates[:, None]), axis=1)
    best = int(np.argmin(values))
    return float(values[best]), float(np.log(candidates[best]))


def exact_loss_at(fitted: MixingMeasure, true: MixingMeasure,
                  assignment: VoronoiAssignment, t1: float, t2) -> float:
    """Exact-fitted loss summand at a fixed translation.

    Requires the exact-fitted shape: as many fitted as true atoms with one
    atom per cell.  Over-fitted shapes must use :func:`overfit_loss_at`.
    """
    if fitted.k != true.k or not assignment.is_exact():
        raise ValueError(
            "exact-fitted loss needs one fitted atom per cell; "
            "use the over-fitted loss for this shape"
        )
    t2 = np.atleast_1d(np.asarray(t2, dtype=float))
    _, w, dbeta1, da, db, dsigma = _pair_arrays(fitted, true, assignment)
    r = dbeta1 - t2
    norms = np.sqrt(np.sum(r**2, axis=1) + np.sum(da**2, axis=1) + db**2 + dsigma**2)
    return float(np.sum(w * norms)) + _weight_terms(fitted, true, assignment, float(t1))


def overfit_loss_at(fitted: MixingMeasure, true: MixingMeasure,
                    assignment: VoronoiAssignment, t1: float, t2) -> float:
    """Over-fitted loss summand at a fixed translation; any shape with at
    most as many cells as true atoms is allowed."""
    t2 = np.atleast_1d(np.asarray(t2, dtype=float))
    _, w, dbeta1, da, db, dsigma = _pair_arrays(fitted, true, assignment)
    r = dbeta1 - t2
    value = 0.0
    for j, cell in enumerate(assignment.cells):
        if not cell:
            continue
        idx = list(cell)
        if len(cell) == 1:
            i = idx[0]
            value += w[i] * np.sqrt(
                np.sum(r[i] ** 2) + np.sum(da[i] ** 2) + db[i] ** 2 + dsigma[i] ** 2
            )
        else:
            rho = min_unsolvable_order(len(cell)).order
            gb = np.sqrt(np.sum(r[idx] ** 2, axis=1) + db[idx] ** 2)
            gs = np.sqrt(np.sum(da[idx] ** 2, axis=1) + dsigma[idx] ** 2)
            value += float(np.sum(w[idx] * (gb**rho + gs ** (rho / 2.0))))
    return float(value) + _weight_terms(fitted, true, assignment, float(t1))


# ---------------------------------------------------------------------------
# translation infimum
# ---------------------------------------------------------------------------


def _solve_t2(fun_grad, lo, hi, step0, iters, stages, start):
    t = np.clip(start, lo, hi)
    best_v = np.inf
    best_t = t.copy()
    per_stage = max(1, -(-iters // stages))
    step = step0
    done = 0
    for _ in range(stages):
        for _ in range(per_stage):
            v, g = fun_grad(t)
            if v < best_v:
                best_v = v
                best_t = t.copy()
            t = np.clip(t - step * g, lo, hi)
            done += 1
            if done >= iters:
                break
        step *= 0.5
        if done >= iters:
            break
    v, _ = fun_grad(t)
    if v < best_v:
        best_v, best_t = v, t
    return best_v, best_t


def _exact_t2_fun_grad(fitted, true, assignment):
    _, w, dbeta1, da, db, dsigma = _pair_arrays(fitted, true, assignment)
    fix2 = np.sum(da**2, axis=1) + db**2 + dsigma**2

    def fun_grad(t2):
        r = dbeta1 - t2
        norms = np.sqrt(np.sum(r**2, axis=1) + fix2)
        safe = np.where(norms > 0.0, norms, 1.0)
        # zero subgradient at kinks keeps iterates stable at exact optima
        grad = -np.sum(np.where(norms[:, None] > 0.0, w[:, None] * r / safe[:, None], 0.0), axis=0)
        return float(np.sum(w * norms)), grad

    return fun_grad


def _overfit_t2_fun_grad(fitted, true, assignment):
    _, w, dbeta1, da, db, dsigma = _pair_arrays(fitted, true, assignment)
    single = [c[0] for c in assignment.cells if len(c) == 1]
    fix2_single = (np.sum(da[single] ** 2, axis=1) + db[single] ** 2
                   + dsigma[single] ** 2) if single else np.empty(0)
    multi: list[tuple[list[int], int]] = [
        (list(c), min_unsolvable_order(len(c)).order)
        for c in assignment.cells if len(c) > 1
    ]
    const = 0.0
    for idx, rho in multi:
        gs = np.sqrt(np.sum(da[idx] ** 2, axis=1) + dsigma[idx] ** 2)
        const += float(np.sum(w[idx] * gs ** (rho / 2.0)))

    def fun_grad(t2):
        value = const
        grad = np.zeros_like(t2)
        if single:
            r = dbeta1[single] - t2
            norms = np.sqrt(np.sum(r**2, axis=1) + fix2_single)
            safe = np.where(norms > 0.0, norms, 1.0)
            ws = w[single]
            value += float(np.sum(ws * norms))
            grad -= np.sum(np.where(norms[:, None] > 0.0, ws[:, None] * r / safe[:, None], 0.0), axis=0)
        for idx, rho in multi:
            r = dbeta1[idx] - t2
            gb = np.sqrt(np.sum(r**2, axis=1) + db[idx] ** 2)
            value += float(np.sum(w[idx] * gb**rho))
            # d/dt2 ||(r, db)||^rho = -rho ||.||^(rho-2) r, smooth for rho >= 2
            coef = rho * np.where(gb > 0.0, gb ** (rho - 2), 0.0) * w[idx]
            grad -= np.sum(coef[:, None] * r, axis=0)
        return value, grad

    return fun_grad


def _run_loss(fitted, true, cfg, theta, fun_grad_factory, assignment):
    cfg = cfg if cfg is not None else TranslationSolverConfig()
    box = theta if theta is not None else ThetaBox.default(true.dim)
    if cfg.t1_bounds is not None and cfg.t2_bounds is not None:
        lo = np.concatenate([[cfg.t1_bounds[0]], np.atleast_1d(cfg.t2_bounds[0])])
        hi = np.concatenate([[cfg.t1_bounds[1]], np.atleast_1d(cfg.t2_bounds[1])])
    else:
        lo, hi = translation_bounds(box, true)
    w_value, t1 = _solve_weight_term(fitted, true, assignment, lo[0], hi[0])
    if cfg.step is not None:
        step0 = cfg.step
    else:
        diam = float(np.max(hi[1:] - lo[1:])) if true.dim else 1.0
        step0 = max(diam, 1.0) / (1.0 + float(np.sum(np.exp(fitted.beta0))))
    start = (np.clip(np.zeros(true.dim), lo[1:], hi[1:])
             if cfg.t_start is None else np.asarray(cfg.t_start, dtype=float))
    fun_grad = fun_grad_factory(fitted, true, assignment)
    t2_value, t2 = _solve_t2(fun_grad, lo[1:], hi[1:], step0, cfg.iters, cfg.stages, start)
    return LossResult(value=w_value + t2_value, t1=t1, t2=t2.copy(),
                      assignment=assignment)


def exact_loss(fitted: MixingMeasure, true: MixingMeasure,
               cfg: TranslationSolverConfig | None = None,
               theta: ThetaBox | None = None) -> LossResult:
    """Translation infimum of the exact-fitted loss.

    Returns the smallest objective seen together with its translation and
    the cell assignment.  Zero (up to solver tolerance) characterizes
    equality with the true measure up to an in-box translation.
    """
    assignment = voronoi_cells(fitted, true)
    if fitted.k != true.k or not assignment.is_exact():
        raise ValueError(
            "exact-fitted loss needs one fitted atom per cell; "
            "use the over-fitted loss for this shape"
        )
    return _run_loss(fitted, true, cfg, theta, _exact_t2_fun_grad, assignment)


def overfit_loss(fitted: MixingMeasure, true: MixingMeasure,
                 cfg: TranslationSolverConfig | None = None,
                 theta: ThetaBox | None = None) -> LossResult:
    """Translation infimum of the over-fitted loss (any fitted shape)."""
    assignment = voronoi_cells(fitted, true)
    return _run_loss(fitted, true, cfg, theta, _overfit_t2_fun_grad, assignment)
