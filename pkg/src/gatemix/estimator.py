"""Maximum-likelihood estimation over the component-budget class.

The optimizer is EM.  The E step computes posterior responsibilities, the
expert M step solves responsibility-weighted least squares per component,
and the gating M step runs projected gradient ascent with backtracking on
the expected complete-data gating objective.  Every parameter update is
accepted only if it does not decrease its block of the minorizer, so the
observed log-likelihood is non-decreasing across outer iterations up to
floating-point noise even when the box projection binds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .measure import Dataset, MixingMeasure, ThetaBox, _log_gate, _log_normal, log_likelihood

__all__ = ["FitConfig", "FitResult", "center_gating", "e_step", "m_step_experts",
           "m_step_gating", "fit_mle"]


@dataclass(frozen=True)
class FitConfig:
    """Settings for :func:`fit_mle`.

    ``screen_iters``/``keep_top`` optionally run every restart for a short
    burn-in and continue only the best few; zero disables screening and
    every restart runs to its own convergence.
    """

    k: int
    restarts: int = 8
    max_em_iters: int = 200
    em_tol: float = 1e-8
    gating_inner_iters: int = 15
    gating_step: float = 1.0
    seed: int = 0
    screen_iters: int = 0
    keep_top: int = 0
    ridge: float = 1e-8

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("component budget k must be at least 1")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.em_tol <= 0 or self.gating_step <= 0:
            raise ValueError("tolerances and steps must be positive")


@dataclass(frozen=True)
class FitResult:
    measure: MixingMeasure
    final_loglik: float
    iterations: int
    restart_index: int
    converged: bool
    loglik_trace: tuple[float, ...] = ()
    diagnostics: dict = field(default_factory=dict)


def e_step(measure: MixingMeasure, data: Dataset) -> np.ndarray:
    """Posterior responsibilities, shape (n, k); rows sum to one."""
    lg = _log_gate(measure, data.x)
    mean = data.x @ measure.a.T + measure.b
    ln = _log_normal(data.y[:, None], mean, measure.sigma)
    s = lg + ln
    s -= s.max(axis=1, keepdims=True)
    w = np.exp(s)
    return w / w.sum(axis=1, keepdims=True)


def _expert_block_objective(data: Dataset, resp_col, a_i, b_i, sigma_i) -> float:
    """Responsibility-weighted Gaussian log-density for one component."""
    mean = data.x @ a_i + b_i
    return float(np.sum(resp_col * _log_normal(data.y, mean, sigma_i)))


def m_step_experts(data: Dataset, resp: np.ndarray, current: MixingMeasure,
                   theta: ThetaBox, ridge: float = 1e-8):
    """Weighted least-squares update of (a, b, sigma), projected onto the box.

    Candidates are kept only when they improve the component's expected
    complete-data objective, which keeps EM monotone when clamping binds.
    Returns the updated measure and a diagnostics dict with ``ridge_used``
    and ``empty_components`` index lists.
    """
    n, k = resp.shape
    d = data.dim
    Z = np.hstack([data.x, np.ones((n, 1))])
    a = current.a.copy()
    b = current.b.copy()
    sigma = current.sigma.copy()
    ridge_used: list[int] = []
    empty: list[int] = []

    for i in range(k):
        r = resp[:, i]
        total = float(r.sum())
        if total <= n * 1e-12:
            empty.append(i)
            continue
        rz = Z * r[:, None]
        A = Z.T @ rz
        rhs = rz.T @ data.y
        try:
            coef = np.linalg.solve(A, rhs)
            if not np.all(np.isfinite(coef)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            coef = np.linalg.solve(A + ridge * np.eye(d + 1), rhs)
            ridge_used.append(i)
        a_new = np.clip(coef[:d], theta.a_lo, theta.a_hi)
        b_new = float(np.clip(coef[d], theta.b_lo, theta.b_hi))

        def clamped_sigma(a_vec, b_val):
            res = data.y - data.x @ a_vec - b_val
            return float(np.clip(np.sum(r * res**2) / total, theta.sigma_lo, theta.sigma_hi))

        candidates = [
            (a_new, b_new, clamped_sigma(a_new, b_new)),
            (a[i], b[i], clamped_sigma(a[i], b[i])),
            (a[i], b[i], sigma[i]),
        ]
        best = max(candidates, key=lambda c: _expert_block_objective(data, r, c[0], c[1], c[2]))
        a[i], b[i], sigma[i] = best

    updated = current.replace(a=a, b=b, sigma=sigma)
    return updated, {"ridge_used": ridge_used, "empty_components": empty}


def gating_objective(beta0: np.ndarray, beta1: np.ndarray, data: Dataset,
                     resp: np.ndarray) -> float:
    """Expected complete-data gating term: sum_p sum_j r_pj log gate_j(x_p)."""
    logits = data.x @ beta1.T + beta0
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(logits - m), axis=1))
    return float(np.sum(resp * logits) - np.sum(lse))


def gating_gradient(beta0: np.ndarray, beta1: np.ndarray, data: Dataset,
                    resp: np.ndarray):
    """Gradient of :func:`gating_objective` in (beta0, beta1)."""
    logits = data.x @ beta1.T + beta0
    m = logits.max(axis=1, keepdims=True)
    w = np.exp(logits - m)
    gate = w / w.sum(axis=1, keepdims=True)
    diff = resp - gate
    return diff.sum(axis=0), diff.T @ data.x


def m_step_gating(data: Dataset, resp: np.ndarray, current: MixingMeasure,
                  theta: ThetaBox, inner_iters: int = 15, step: float = 1.0):
    """Projected gradient ascent on the gating objective with backtracking.

    The step is halved until the projected move improves the objective;
    after 30 failed halvings the iterate is returned unchanged.  The raw
    step is scaled by 1/n so its useful range is O(1) regardless of the
    dataset size.
    """
    n = data.n
    beta0 = current.beta0.copy()
    beta1 = current.beta1.copy()
    obj = gating_objective(beta0, beta1, data, resp)
    s = step / n
    for _ in range(inner_iters):
        g0, g1 = gating_gradient(beta0, beta1, data, resp)
        improved = False
        trial = s
        for _ in range(30):
            b0 = np.clip(beta0 + trial * g0, theta.beta0_lo, theta.beta0_hi)
            b1 = np.clip(beta1 + trial * g1, theta.beta1_lo, theta.beta1_hi)
            cand = gating_objective(b0, b1, data, resp)
            if cand > obj:
                beta0, beta1, obj = b0, b1, cand
                s = min(trial * 2.0, step / n)
                improved = True
                break
            trial *= 0.5
        if not improved:
            break
    return current.replace(beta0=beta0, beta1=beta1)


def center_gating(measure: MixingMeasure, theta: ThetaBox) -> MixingMeasure:
    """Zero-mean gauge for the gating parameters.

    The likelihood is exactly flat under common shifts of (beta0, beta1),
    so every translate of a maximizer is a maximizer; returning the
    representative with (feasibly) zero-mean gating makes fits comparable
    across runs instead of carrying an arbitrary exp-scale drift into the
    parameter losses.  The shift is clipped so the result stays in the box.
    """
    c0 = float(np.clip(np.mean(measure.beta0),
                       np.max(measure.beta0) - theta.beta0_hi,
                       np.min(measure.beta0) - theta.beta0_lo))
    c1 = np.clip(np.mean(measure.beta1, axis=0),
                 np.max(measure.beta1, axis=0) - theta.beta1_hi,
                 np.min(measure.beta1, axis=0) - theta.beta1_lo)
    return measure.replace(beta0=measure.beta0 - c0, beta1=measure.beta1 - c1)


def _init_measure(data: Dataset, k: int, theta: ThetaBox,
                  rng: np.random.Generator) -> MixingMeasure:
    """Uniform draw in the box, with (a, b) refitted on a random subsample
    and gating slopes started at zero.

    Zero gating slopes matter for over-fitted budgets: a low-weight
    duplicate whose slope starts near the box edge sees almost no
    likelihood pull and parks there, while from zero the early E steps
    move it with the rest of its cell.
    """
    g = theta.sample_measure(k, rng)
    g = g.replace(beta1=np.zeros_like(g.beta1))
    a = g.a.copy()
    b = g.b.copy()
    d = data.dim
    sub = max(d + 2, data.n // k)
    sub = min(sub, data.n)
    Z1 = None
    for i in range(k):
        idx = rng.choice(data.n, size=sub, replace=False)
        Z1 = np.hstack([data.x[idx], np.ones((sub, 1))])
        coef, *_ = np.linalg.lstsq(Z1, data.y[idx], rcond=None)
        a[i] = np.clip(coef[:d], theta.a_lo, theta.a_hi)
        b[i] = float(np.clip(coef[d], theta.b_lo, theta.b_hi))
    return g.replace(a=a, b=b)


def _em_run(data: Dataset, theta: ThetaBox, cfg: FitConfig,
            start: MixingMeasure, max_iters: int):
    g = start
    trace = [log_likelihood(g, data)]
    converged = False
    diagnostics = {"ridge_used": 0, "empty_components": 0}
    for _ in range(max_iters):
        resp = e_step(g, data)
        g, diag = m_step_experts(data, resp, g, theta, ridge=cfg.ridge)
        diagnostics["ridge_used"] += len(diag["ridge_used"])
        diagnostics["empty_components"] += len(diag["empty_components"])
        g = m_step_gating(data, resp, g, theta,
                          inner_iters=cfg.gating_inner_iters, step=cfg.gating_step)
        ll = log_likelihood(g, data)
        gain = ll - trace[-1]
        trace.append(ll)
        if abs(gain) <= cfg.em_tol * max(1.0, abs(ll)):
            converged = True
            break
    return g, trace, converged, diagnostics


def fit_mle(data: Dataset, theta: ThetaBox, cfg: FitConfig) -> FitResult:
    """Best-of-restarts EM estimate of the mixing measure.

    Each restart owns a generator spawned from ``cfg.seed``; ties in final
    log-likelihood go to the lowest restart index, so results are
    reproducible.  A degenerate dataset (e.g. constant responses pinning
    sigma at its floor) still yields a valid measure with
    ``converged=False`` when the tolerance is never met.
    """
    if data.n < cfg.k:
        raise ValueError(f"need at least k={cfg.k} observations, got {data.n}")
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    starts = [
        _init_measure(data, cfg.k, theta, np.random.default_rng(children[r]))
        for r in range(cfg.restarts)
    ]

    runs: list[tuple[int, MixingMeasure, list[float], bool, dict]] = []
    if cfg.screen_iters > 0 and 0 < cfg.keep_top < cfg.restarts:
        burn = []
        for r in range(cfg.restarts):
            g, trace, conv, diag = _em_run(data, theta, cfg, starts[r], cfg.screen_iters)
            burn.append((r, g, trace, conv, diag))
        burn.sort(key=lambda t: (-t[2][-1], t[0]))
        for r, g, trace, conv, diag in burn[: cfg.keep_top]:
            if not conv:
                g, tail, conv, diag2 = _em_run(
                    data, theta, cfg, g, cfg.max_em_iters - cfg.screen_iters)
                trace = trace + tail[1:]
                diag = {k: diag[k] + diag2[k] for k in diag}
            runs.append((r, g, trace, conv, diag))
    else:
        for r in range(cfg.restarts):
            g, trace, conv, diag = _em_run(data, theta, cfg, starts[r], cfg.max_em_iters)
            runs.append((r, g, trace, conv, diag))

    runs.sort(key=lambda t: (-t[2][-1], t[0]))
    r, g, trace, conv, diag = runs[0]
    return FitResult(
        measure=center_gating(g, theta),
        final_loglik=trace[-1],
        iterations=len(trace) - 1,
        restart_index=r,
        converged=conv,
        loglik_trace=tuple(trace),
        diagnostics=diag,
    )
