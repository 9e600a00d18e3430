"""The coupled moment system behind the over-fitted convergence rates.

For a cell of ``m`` collapsing atoms the relevant obstruction is a system
of polynomial equations in unknowns ``(p1, p2, p3, p4, p5)`` per atom
(p1, p2 vectors of the covariate dimension; p3, p4, p5 scalars):

    sum_l sum_alpha (1/alpha!) p5_l^2 p1_l^a1 p2_l^a2 p3_l^a3 p4_l^a4 = 0

with one equation per pair (ell1, ell2), 0 <= |ell1| <= r,
0 <= ell2 <= r - |ell1|, |ell1| + ell2 >= 1, and the multi-indices alpha
ranging over

    I(ell1, ell2) = { (a1, a2, a3, a4) : a1 + a2 = ell1,
                      |a2| + a3 + 2 a4 = ell2 }.

``alpha!`` multiplies the factorials of every scalar entry; vector powers
are coordinate-wise.  A solution is non-trivial when every p5 is nonzero
and some p3 is nonzero.  The smallest order r at which only trivial
solutions remain drives the loss exponents (see
:func:`gatemix.voronoi.min_unsolvable_order`).

The system is weighted-homogeneous: scaling p1, p3 by lam and p2, p4 by
lam^2 scales the (ell1, ell2) equation by lam^(|ell1|+ell2).  The
numerical search below exploits that to pin candidates to a normalized
slice, removing the flat scaling directions.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import NamedTuple
import numpy as np

__all__ = [
    "MultiIndex",
    "Equation",
    "PolySystem",
    "CandidateSolution",
    "SearchConfig",
    "SearchResult",
    "index_set",
    "build_system",
    "evaluate_system",
    "is_nontrivial",
    "search_nontrivial",
]


class MultiIndex(NamedTuple):
    alpha1: tuple[int, ...]
    alpha2: tuple[int, ...]
    alpha3: int
    alpha4: int

    @property
    def factorial_weight(self) -> float:
        """1 / alpha! with alpha! the product of entry factorials."""
        f = 1
        for v in self.alpha1:
            f *= factorial(v)
        for v in self.alpha2:
            f *= factorial(v)
        f *= factorial(self.alpha3) * factorial(self.alpha4)
        return 1.0 / f


class Equation(NamedTuple):
    ell1: tuple[int, ...]
    ell2: int
    indices: tuple[MultiIndex, ...]


def index_set(ell1, ell2: int, d: int) -> list[MultiIndex]:
    """All multi-indices for one equation, lexicographically ordered."""
    ell1 = tuple(int(v) for v in np.atleast_1d(ell1))
    if len(ell1) != d:
        raise ValueError(f"ell1 has length {len(ell1)}, expected d={d}")
    if any(v < 0 for v in ell1) or ell2 < 0:
        raise ValueError("ell1 entries and ell2 must be nonnegative")
    out = []
    for alpha2 in _sub_multi_indices(ell1):
        rem = ell2 - sum(alpha2)
        if rem < 0:
            continue
        alpha1 = tuple(e - a for e, a in zip(ell1, alpha2))
        for alpha4 in range(rem // 2 + 1):
            alpha3 = rem - 2 * alpha4
            out.append(MultiIndex(alpha1, alpha2, alpha3, alpha4))
    out.sort()
    return out


def _sub_multi_indices(bound):
    """All integer vectors 0 <= v <= bound coordinate-wise."""
    if not bound:
        yield ()
        return
    for head in range(bound[0] + 1):
        for tail in _sub_multi_indices(bound[1:]):
            yield (head,) + tail


def _vectors_up_to_total(d: int, total: int):
    """All vectors in N^d with coordinate sum at most ``total``."""
    if d == 0:
        yield ()
        return
    for head in range(total + 1):
        for tail in _vectors_up_to_total(d - 1, total - head):
            yield (head,) + tail


@dataclass(frozen=True)
class PolySystem:
    """Complete equation list for (m, d, r)."""

    m: int
    d: int
    r: int
    equations: tuple[Equation, ...]

    @property
    def n_equations(self) -> int:
        return len(self.equations)

    def pairs(self) -> list[tuple[tuple[int, ...], int]]:
        return [(eq.ell1, eq.ell2) for eq in self.equations]


def build_system(m: int, d: int, r: int) -> PolySystem:
    """Enumerate every qualifying (ell1, ell2) with its multi-index set.

    Equations are ordered by total degree |ell1| + ell2, then
    lexicographically; for d = 1 the count is (r^2 + 3r) / 2.
    """
    if m < 1 or d < 1 or r < 1:
        raise ValueError("m, d and r must all be at least 1")
    pairs = []
    for ell1 in _vectors_up_to_total(d, r):
        s = sum(ell1)
        for ell2 in range(0, r - s + 1):
            if s + ell2 >= 1:
                pairs.append((ell1, ell2))
    pairs.sort(key=lambda p: (sum(p[0]) + p[1], p[0], p[1]))
    equations = tuple(
        Equation(ell1, ell2, tuple(index_set(ell1, ell2, d))) for ell1, ell2 in pairs
    )
    return PolySystem(m=m, d=d, r=r, equations=equations)


@dataclass(frozen=True)
class CandidateSolution:
    """One value per unknown: p1, p2 are (m, d); p3, p4, p5 are (m,)."""

    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray
    p4: np.ndarray
    p5: np.ndarray

    def __post_init__(self):
        p1 = np.atleast_2d(np.asarray(self.p1, dtype=float))
        p2 = np.atleast_2d(np.asarray(self.p2, dtype=float))
        p3 = np.atleast_1d(np.asarray(self.p3, dtype=float))
        p4 = np.atleast_1d(np.asarray(self.p4, dtype=float))
        p5 = np.atleast_1d(np.asarray(self.p5, dtype=float))
        m = p5.shape[0]
        if p1.shape[0] != m or p2.shape[0] != m or p3.shape[0] != m or p4.shape[0] != m:
            raise ValueError("component counts disagree across unknowns")
        if p1.shape != p2.shape:
            raise ValueError("p1 and p2 must share their shape")
        for name, arr in (("p1", p1), ("p2", p2), ("p3", p3), ("p4", p4), ("p5", p5)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "p2", p2)
        object.__setattr__(self, "p3", p3)
        object.__setattr__(self, "p4", p4)
        object.__setattr__(self, "p5", p5)

    @property
    def m(self) -> int:
        return self.p5.shape[0]

    @property
    def d(self) -> int:
        return self.p1.shape[1]


def is_nontrivial(sol: CandidateSolution, tol_zero: float = 1e-9) -> bool:
    """True when every |p5| exceeds tol_zero and some |p3| does."""
    return bool(np.min(np.abs(sol.p5)) > tol_zero and np.max(np.abs(sol.p3)) > tol_zero)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


class _EvalTables:
    """Flattened monomial tables for fast batched evaluation."""

    def __init__(self, system: PolySystem):
        a1, a2, a3, a4, coeff, eq_id = [], [], [], [], [], []
        for e, eq in enumerate(system.equations):
            for mi in eq.indices:
                a1.append(mi.alpha1)
                a2.append(mi.alpha2)
                a3.append(mi.alpha3)
                a4.append(mi.alpha4)
                coeff.append(mi.factorial_weight)
                eq_id.append(e)
        self.a1 = np.asarray(a1, dtype=int)  # (n_mono, d)
        self.a2 = np.asarray(a2, dtype=int)
        self.a3 = np.asarray(a3, dtype=int)  # (n_mono,)
        self.a4 = np.asarray(a4, dtype=int)
        self.n_mono = len(coeff)
        # fold 1/alpha! into a (n_mono, n_eq) aggregation matrix
        self.agg = np.zeros((self.n_mono, system.n_equations))
        self.agg[np.arange(self.n_mono), eq_id] = np.asarray(coeff)
        self.max_exp = int(max(self.a1.max(initial=0), self.a2.max(initial=0),
                               self.a3.max(initial=0), self.a4.max(initial=0)))


def _powers(values: np.ndarray, emax: int) -> np.ndarray:
    """Stack of values**e for e = 0..emax along a new trailing axis."""
    out = np.empty(values.shape + (emax + 1,))
    out[..., 0] = 1.0
    for e in range(1, emax + 1):
        out[..., e] = out[..., e - 1] * values
    return out


def _residuals_batch(tables: _EvalTables, p1, p2, p3, p4, p5) -> np.ndarray:
    """Residual of every equation for a batch; p1, p2 are (B, m, d),
    p3, p4, p5 are (B, m); returns (B, n_eq)."""
    E = tables.max_exp
    pw1 = _powers(p1, E)  # (B, m, d, E+1)
    pw2 = _powers(p2, E)
    pw3 = _powers(p3, E)  # (B, m, E+1)
    pw4 = _powers(p4, E)
    # gather exponents per monomial and multiply across coordinates
    idx1 = tables.a1.T[None, None, :, :]  # (1, 1, d, n_mono)
    idx2 = tables.a2.T[None, None, :, :]
    v1 = np.prod(np.take_along_axis(pw1, np.broadcast_to(idx1, p1.shape[:2] + idx1.shape[2:]), axis=3), axis=2)
    v2 = np.prod(np.take_along_axis(pw2, np.broadcast_to(idx2, p2.shape[:2] + idx2.shape[2:]), axis=3), axis=2)
    v3 = pw3[:, :, tables.a3]  # (B, m, n_mono)
    v4 = pw4[:, :, tables.a4]
    mono = v1 * v2 * v3 * v4 * (p5**2)[:, :, None]
    summed = mono.sum(axis=1)  # (B, n_mono)
    return summed @ tables.agg


def evaluate_system(system: PolySystem, sol: CandidateSolution) -> np.ndarray:
    """One residual per equation at the candidate point."""
    if sol.m != system.m or sol.d != system.d:
        raise ValueError(
            f"solution is for (m={sol.m}, d={sol.d}), system for (m={system.m}, d={system.d})"
        )
    tables = _EvalTables(system)
    res = _residuals_batch(
        tables,
        sol.p1[None], sol.p2[None], sol.p3[None], sol.p4[None], sol.p5[None],
    )
    return res[0]


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchConfig:
    """Multi-start damped Gauss-Newton settings for the solvability search.

    Candidates are kept on a normalized slice: the largest |p5| is pinned
    to one with every |p5| floored at ``p5_floor`` (weights from a compact
    box have bounded ratios, and letting a p5 vanish would silently reduce
    the system to fewer atoms), and the largest homogeneity-weighted
    magnitude of (p1, p2, p3, p4) is scaled to one, which excludes the
    all-zero solution.
    """

    restarts: int = 10_000
    seed: int = 0
    max_iters: int = 80
    init_range: float = 2.0
    residual_tol: float = 1e-8
    nontrivial_tol: float = 1e-9
    p5_floor: float = 0.05
    chunk: int = 2048

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if not (0.0 < self.p5_floor <= 1.0):
            raise ValueError("p5_floor must lie in (0, 1]")


@dataclass(frozen=True)
class SearchResult:
    """Outcome of :func:`search_nontrivial`.

    ``found`` is None when no candidate met both the residual tolerance
    and the non-triviality test; ``best_residual`` is then the smallest
    residual norm among non-trivial endpoints, which is evidence (never a
    proof) that the system has no non-trivial solution at this order.
    """

    m: int
    d: int
    r: int
    found: CandidateSolution | None
    found_restart: int | None
    found_residual: float | None
    best_residual: float
    best_candidate: CandidateSolution | None
    restarts: int
    residual_tol: float
    message: str


def _pack(p1, p2, p3, p4, p5):
    B = p5.shape[0]
    return np.concatenate(
        [p1.reshape(B, -1), p2.reshape(B, -1), p3, p4, p5], axis=1
    )


def _unpack(Q, m, d):
    B = Q.shape[0]
    md = m * d
    p1 = Q[:, :md].reshape(B, m, d)
    p2 = Q[:, md:2 * md].reshape(B, m, d)
    p3 = Q[:, 2 * md:2 * md + m]
    p4 = Q[:, 2 * md + m:2 * md + 2 * m]
    p5 = Q[:, 2 * md + 2 * m:]
    return p1, p2, p3, p4, p5


def _normalize(Q, m, d, p5_floor):
    """Project onto the search slice; returns (Q_normalized, valid mask)."""
    p1, p2, p3, p4, p5 = (a.copy() for a in _unpack(Q, m, d))
    top = np.max(np.abs(p5), axis=1, keepdims=True)
    ok5 = top[:, 0] > 0.0
    p5 /= np.where(top > 0.0, top, 1.0)
    signs = np.where(p5 >= 0.0, 1.0, -1.0)
    p5 = signs * np.maximum(np.abs(p5), p5_floor)
    lin = np.maximum(np.max(np.abs(p1), axis=(1, 2)), np.max(np.abs(p3), axis=1))
    quad = np.maximum(np.max(np.abs(p2), axis=(1, 2)), np.max(np.abs(p4), axis=1))
    scale = np.maximum(lin, np.sqrt(quad))
    ok = (scale > 0.0) & ok5
    safe = np.where(ok, scale, 1.0)
    lam = 1.0 / safe
    p1 *= lam[:, None, None]
    p3 *= lam[:, None]
    p2 *= (lam**2)[:, None, None]
    p4 *= (lam**2)[:, None]
    return _pack(p1, p2, p3, p4, p5), ok


def _batch_cost(tables, Q, m, d):
    res = _residuals_batch(tables, *_unpack(Q, m, d))
    return np.sum(res**2, axis=1)


def search_nontrivial(m: int, d: int, r: int,
                      cfg: SearchConfig | None = None) -> SearchResult:
    """Multi-start search for a non-trivial solution at order r.

    Each restart runs a damped Gauss-Newton iteration on the residual
    vector with a numerically evaluated Jacobian, renormalizing onto the
    search slice after every accepted step.  A solution is reported iff
    its residual norm is below ``residual_tol`` and it passes
    :func:`is_nontrivial`; ties go to the lowest restart index.  Not
    finding one proves nothing, and the result says so.
    """
    if m < 2:
        raise ValueError("the search needs at least two atoms")
    cfg = cfg if cfg is not None else SearchConfig()
    system = build_system(m, d, r)
    tables = _EvalTables(system)
    P = m * (2 * d + 3)
    rng = np.random.default_rng(cfg.seed)
    inits = rng.uniform(-cfg.init_range, cfg.init_range, size=(cfg.restarts, P))

    final_q = np.empty_like(inits)
    final_cost = np.full(cfg.restarts, np.inf)

    for start in range(0, cfg.restarts, cfg.chunk):
        sl = slice(start, min(start + cfg.chunk, cfg.restarts))
        Q, ok = _normalize(inits[sl], m, d, cfg.p5_floor)
        cost = np.where(ok, _batch_cost(tables, Q, m, d), np.inf)
        lam = np.full(Q.shape[0], 1e-3)
        tol2 = cfg.residual_tol**2

        for _ in range(cfg.max_iters):
            active = (cost > tol2) & (lam < 1e10) & np.isfinite(cost)
            if not np.any(active):
                break
            R = _residuals_batch(tables, *_unpack(Q, m, d))  # (B, E)
            J = np.empty(Q.shape[:1] + R.shape[1:] + (P,))
            h = 1e-6 * (1.0 + np.abs(Q))
            for p in range(P):
                Qp = Q.copy()
                Qp[:, p] += h[:, p]
                Rp = _residuals_batch(tables, *_unpack(Qp, m, d))
                Qp[:, p] -= 2.0 * h[:, p]
                Rm = _residuals_batch(tables, *_unpack(Qp, m, d))
                J[:, :, p] = (Rp - Rm) / (2.0 * h[:, p])[:, None]
            A = np.einsum("bep,beq->bpq", J, J)
            g = np.einsum("bep,be->bp", J, R)
            A += lam[:, None, None] * np.eye(P)[None]
            try:
                delta = np.linalg.solve(A, g[..., None])[..., 0]
            except np.linalg.LinAlgError:
                delta = np.linalg.solve(A + 1e-8 * np.eye(P)[None], g[..., None])[..., 0]
            bad = ~np.all(np.isfinite(delta), axis=1)
            delta[bad] = 0.0
            trial, ok_t = _normalize(Q - delta, m, d, cfg.p5_floor)
            cost_t = np.where(ok_t & ~bad, _batch_cost(tables, trial, m, d), np.inf)
            accept = active & (cost_t < cost)
            Q[accept] = trial[accept]
            cost[accept] = cost_t[accept]
            lam[accept] = np.maximum(lam[accept] * 0.4, 1e-12)
            reject = active & ~accept
            lam[reject] *= 5.0

        final_q[sl] = Q
        final_cost[sl] = cost

    res_norm = np.sqrt(final_cost)

    def _sol_at(i):
        p1, p2, p3, p4, p5 = _unpack(final_q[i: i + 1], m, d)
        return CandidateSolution(p1[0], p2[0], p3[0], p4[0], p5[0])

    found_idx = None
    best_idx = None
    best_res = np.inf
    for i in range(cfg.restarts):
        if not np.isfinite(res_norm[i]):
            continue
        if not is_nontrivial(_sol_at(i), cfg.nontrivial_tol):
            continue
        if res_norm[i] < best_res:
            best_res = float(res_norm[i])
            best_idx = i
        if found_idx is None and res_norm[i] < cfg.residual_tol:
            found_idx = i

    if found_idx is not None:
        found_sol = _sol_at(found_idx)
        msg = (f"non-trivial solution found at order r={r} "
               f"(restart {found_idx}, residual {res_norm[found_idx]:.3e})")
        return SearchResult(
            m=m, d=d, r=r, found=found_sol, found_restart=found_idx,
            found_residual=float(res_norm[found_idx]),
            best_residual=float(best_res), best_candidate=found_sol,
            restarts=cfg.restarts, residual_tol=cfg.residual_tol, message=msg,
        )
    best_sol = _sol_at(best_idx) if best_idx is not None else None
    msg = (f"no non-trivial solution found at order r={r} after "
           f"{cfg.restarts} restarts (best residual {best_res:.3e}); "
           "this is evidence, not a proof, that only trivial solutions exist")
    return SearchResult(
        m=m, d=d, r=r, found=None, found_restart=None, found_residual=None,
        best_residual=float(best_res), best_candidate=best_sol,
        restarts=cfg.restarts, residual_tol=cfg.residual_tol, message=msg,
    )
