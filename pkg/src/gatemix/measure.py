"""Softmax-gated Gaussian mixture-of-experts model.

A mixing measure is a finite list of expert components.  Component ``i``
carries gating parameters ``(beta0_i, beta1_i)`` and expert parameters
``(a_i, b_i, sigma_i)``; its weight is ``exp(beta0_i)`` and need not be
normalized.  ``sigma`` is the Gaussian VARIANCE throughout.  Given a
covariate ``x``, the response density is

    g(y | x) = sum_i softmax_i(beta1^T x + beta0) * N(y; a_i^T x + b_i, sigma_i)

The gating parameters are identifiable only up to a common translation
``beta0 -> beta0 + t1``, ``beta1 -> beta1 + t2``, which leaves ``g``
unchanged; :func:`translate` realizes that action.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

__all__ = [
    "ExpertComponent",
    "MixingMeasure",
    "ThetaBox",
    "Dataset",
    "softmax_gate",
    "conditional_density",
    "log_density",
    "log_density_grid",
    "translate",
    "sample",
    "log_likelihood",
    "log_likelihood_grad",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ExpertComponent:
    """One expert: gating bias/slope and a Gaussian regression."""

    beta0: float
    beta1: np.ndarray
    a: np.ndarray
    b: float
    sigma: float  # Gaussian variance


class MixingMeasure:
    """An ordered list of expert components, stored as stacked arrays.

    Parameters
    ----------
    beta0 : array (k,)
        Gating biases; component weights are ``exp(beta0)``.
    beta1 : array (k, d)
        Gating slopes.
    a : array (k, d)
        Expert regression slopes.
    b : array (k,)
        Expert intercepts.
    sigma : array (k,)
        Expert variances, strictly positive.
    """

    __slots__ = ("beta0", "beta1", "a", "b", "sigma")

    def __init__(self, beta0, beta1, a, b, sigma):
        beta0 = np.atleast_1d(np.asarray(beta0, dtype=float))
        beta1 = np.atleast_2d(np.asarray(beta1, dtype=float))
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        k = beta0.shape[0]
        if k < 1:
            raise ValueError("a mixing measure needs at least one component")
        if beta1.shape[0] != k or a.shape[0] != k or b.shape[0] != k or sigma.shape[0] != k:
            raise ValueError("component counts disagree across parameter arrays")
        if beta1.shape[1] != a.shape[1]:
            raise ValueError(
                f"beta1 has dim {beta1.shape[1]} but a has dim {a.shape[1]}"
            )
        for name, arr in (("beta0", beta0), ("beta1", beta1), ("a", a),
                          ("b", b), ("sigma", sigma)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
        if np.any(sigma <= 0.0):
            raise ValueError("sigma (variance) must be strictly positive")
        object.__setattr__(self, "beta0", beta0)
        object.__setattr__(self, "beta1", beta1)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma", sigma)

    def __setattr__(self, name, value):
        raise AttributeError("MixingMeasure is immutable")

    @property
    def k(self) -> int:
        return self.beta0.shape[0]

    @property
    def dim(self) -> int:
        return self.beta1.shape[1]

    @property
    def weights(self) -> np.ndarray:
        """Component weights exp(beta0); they need not sum to one."""
        return np.exp(self.beta0)

    @classmethod
    def from_components(cls, components) -> "MixingMeasure":
        comps = list(components)
        return cls(
            beta0=[c.beta0 for c in comps],
            beta1=[np.atleast_1d(c.beta1) for c in comps],
            a=[np.atleast_1d(c.a) for c in comps],
            b=[c.b for c in comps],
            sigma=[c.sigma for c in comps],
        )

    def component(self, i: int) -> ExpertComponent:
        return ExpertComponent(
            beta0=float(self.beta0[i]),
            beta1=self.beta1[i].copy(),
            a=self.a[i].copy(),
            b=float(self.b[i]),
            sigma=float(self.sigma[i]),
        )

    def replace(self, **fields) -> "MixingMeasure":
        """Copy with some parameter arrays replaced."""
        data = {name: getattr(self, name) for name in self.__slots__}
        data.update(fields)
        return MixingMeasure(**data)

    def permuted(self, order) -> "MixingMeasure":
        idx = np.asarray(order, dtype=int)
        return MixingMeasure(self.beta0[idx], self.beta1[idx], self.a[idx],
                             self.b[idx], self.sigma[idx])

    def max_abs_param(self) -> float:
        """Largest absolute raw parameter entry; a crude scale for step sizes."""
        return max(
            float(np.max(np.abs(getattr(self, name)))) for name in self.__slots__
        )

    def __repr__(self):
        return (f"MixingMeasure(k={self.k}, dim={self.dim}, "
                f"b={np.round(self.b, 3).tolist()}, "
                f"sigma={np.round(self.sigma, 3).tolist()})")


@dataclass(frozen=True)
class ThetaBox:
    """Compact parameter box plus the bounded covariate box.

    All estimation and the translation infimum are constrained to this box.
    ``sigma_lo`` must be strictly positive; it doubles as the variance floor
    that prevents degenerate likelihood blow-up.
    """

    beta0_lo: float
    beta0_hi: float
    beta1_lo: np.ndarray
    beta1_hi: np.ndarray
    a_lo: np.ndarray
    a_hi: np.ndarray
    b_lo: float
    b_hi: float
    sigma_lo: float
    sigma_hi: float
    x_lo: np.ndarray
    x_hi: np.ndarray

    def __post_init__(self):
        for name in ("beta1_lo", "beta1_hi", "a_lo", "a_hi", "x_lo", "x_hi"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        pairs = [
            ("beta0", self.beta0_lo, self.beta0_hi),
            ("beta1", self.beta1_lo, self.beta1_hi),
            ("a", self.a_lo, self.a_hi),
            ("b", self.b_lo, self.b_hi),
            ("sigma", self.sigma_lo, self.sigma_hi),
            ("x", self.x_lo, self.x_hi),
        ]
        for name, lo, hi in pairs:
            if not np.all(np.asarray(lo) < np.asarray(hi)):
                raise ValueError(f"{name}: lower bound must be strictly below upper bound")
        if self.sigma_lo <= 0.0:
            raise ValueError("sigma_lo must be strictly positive")

    @classmethod
    def default(cls, dim: int) -> "ThetaBox":
        """Default box: all location parameters in [-5, 5], variance in
        [0.05, 10], covariates in [-1, 1]^dim."""
        ones = np.ones(dim)
        return cls(
            beta0_lo=-5.0, beta0_hi=5.0,
            beta1_lo=-5.0 * ones, beta1_hi=5.0 * ones,
            a_lo=-5.0 * ones, a_hi=5.0 * ones,
            b_lo=-5.0, b_hi=5.0,
            sigma_lo=0.05, sigma_hi=10.0,
            x_lo=-1.0 * ones, x_hi=1.0 * ones,
        )

    @property
    def dim(self) -> int:
        return self.beta1_lo.shape[0]

    def violations(self, measure: MixingMeasure) -> list[str]:
        """Human-readable list of bound violations for each component."""
        out = []

        def check_scalar(name, values, lo, hi):
            for i, v in enumerate(np.atleast_1d(values)):
                if v < lo:
                    out.append(f"{name}[{i}] = {v:.6g} below lower bound {lo:.6g}")
                elif v > hi:
                    out.append(f"{name}[{i}] = {v:.6g} above upper bound {hi:.6g}")

        def check_vector(name, values, lo, hi):
            for i, row in enumerate(np.atleast_2d(values)):
                for u, v in enumerate(row):
                    if v < lo[u]:
                        out.append(f"{name}[{i},{u}] = {v:.6g} below lower bound {lo[u]:.6g}")
                    elif v > hi[u]:
                        out.append(f"{name}[{i},{u}] = {v:.6g} above upper bound {hi[u]:.6g}")

        check_scalar("beta0", measure.beta0, self.beta0_lo, self.beta0_hi)
        check_vector("beta1", measure.beta1, self.beta1_lo, self.beta1_hi)
        check_vector("a", measure.a, self.a_lo, self.a_hi)
        check_scalar("b", measure.b, self.b_lo, self.b_hi)
        check_scalar("sigma", measure.sigma, self.sigma_lo, self.sigma_hi)
        return out

    def validate(self, measure: MixingMeasure) -> None:
        bad = self.violations(measure)
        if bad:
            raise ValueError("measure outside parameter box: " + "; ".join(bad))

    def clip(self, measure: MixingMeasure) -> MixingMeasure:
        """Coordinate-wise projection onto the box."""
        return MixingMeasure(
            beta0=np.clip(measure.beta0, self.beta0_lo, self.beta0_hi),
            beta1=np.clip(measure.beta1, self.beta1_lo, self.beta1_hi),
            a=np.clip(measure.a, self.a_lo, self.a_hi),
            b=np.clip(measure.b, self.b_lo, self.b_hi),
            sigma=np.clip(measure.sigma, self.sigma_lo, self.sigma_hi),
        )

    def sample_measure(self, k: int, rng: np.random.Generator,
                       margin: float = 0.0) -> MixingMeasure:
        """Draw a measure uniformly from the box, optionally shrunk by a
        relative margin (handy when a test needs translation slack)."""

        def u(lo, hi, shape):
            lo = np.asarray(lo, dtype=float)
            hi = np.asarray(hi, dtype=float)
            pad = margin * (hi - lo) / 2.0
            return rng.uniform(lo + pad, hi - pad, shape)

        d = self.dim
        return MixingMeasure(
            beta0=u(self.beta0_lo, self.beta0_hi, k),
            beta1=u(self.beta1_lo, self.beta1_hi, (k, d)),
            a=u(self.a_lo, self.a_hi, (k, d)),
            b=u(self.b_lo, self.b_hi, k),
            sigma=u(self.sigma_lo, self.sigma_hi, k),
        )


@dataclass(frozen=True)
class Dataset:
    """Covariate/response pairs with the seed that generated them."""

    x: np.ndarray  # (n, d)
    y: np.ndarray  # (n,)
    seed: int | None = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if x.shape[0] != y.shape[0]:
            raise ValueError("x and y row counts disagree")
        if x.shape[0] < 1:
            raise ValueError("dataset must contain at least one pair")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


# ---------------------------------------------------------------------------
# density and likelihood
# ---------------------------------------------------------------------------


def _as_covariates(measure: MixingMeasure, x) -> np.ndarray:
    X = np.asarray(x, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != measure.dim:
        raise ValueError(f"covariate has dim {X.shape[1]}, measure has dim {measure.dim}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite covariate")
    return X


def _log_gate(measure: MixingMeasure, X: np.ndarray) -> np.ndarray:
    """Log softmax weights, (n, k), computed with max subtraction."""
    logits = X @ measure.beta1.T + measure.beta0  # (n, k)
    m = np.max(logits, axis=1, keepdims=True)
    z = logits - m
    return z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))


def _log_normal(y: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    return -0.5 * (_LOG_2PI + np.log(var) + (y - mean) ** 2 / var)


def softmax_gate(measure: MixingMeasure, x) -> np.ndarray:
    """Softmax gating weights at a single covariate; positive, summing to one."""
    X = _as_covariates(measure, x)
    if X.shape[0] != 1:
        raise ValueError("softmax_gate expects a single covariate vector")
    return np.exp(_log_gate(measure, X))[0]


def _log_density_pairs(measure: MixingMeasure, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """log g(y_i | x_i) for paired inputs, (n,)."""
    lg = _log_gate(measure, X)  # (n, k)
    mean = X @ measure.a.T + measure.b  # (n, k)
    ln = _log_normal(y[:, None], mean, measure.sigma)  # (n, k)
    s = lg + ln
    m = np.max(s, axis=1)
    return m + np.log(np.sum(np.exp(s - m[:, None]), axis=1))


def log_density(measure: MixingMeasure, x, y) -> np.ndarray:
    """log g(y_i | x_i) over paired arrays; scalar inputs give a length-1 array."""
    X = _as_covariates(measure, x)
    Y = np.atleast_1d(np.asarray(y, dtype=float))
    if Y.shape[0] != X.shape[0]:
        raise ValueError("x and y lengths disagree")
    if not np.all(np.isfinite(Y)):
        raise ValueError("non-finite response")
    return _log_density_pairs(measure, X, Y)


def conditional_density(measure: MixingMeasure, x, y: float) -> float:
    """Mixture conditional density g(y | x); strictly positive."""
    X = _as_covariates(measure, x)
    if X.shape[0] != 1:
        raise ValueError("conditional_density expects a single covariate vector")
    yv = float(y)
    if not np.isfinite(yv):
        raise ValueError("non-finite response")
    return float(np.exp(_log_density_pairs(measure, X, np.array([yv]))[0]))


def log_density_grid(measure: MixingMeasure, x, y_grid) -> np.ndarray:
    """log g(y | x) on a response grid for a batch of covariates.

    Returns an array of shape (n_x, n_y); used by the divergence quadrature.
    """
    X = _as_covariates(measure, x)
    y = np.asarray(y_grid, dtype=float)
    lg = _log_gate(measure, X)[:, :, None]  # (n, k, 1)
    mean = (X @ measure.a.T + measure.b)[:, :, None]  # (n, k, 1)
    ln = _log_normal(y[None, None, :], mean, measure.sigma[None, :, None])
    s = lg + ln  # (n, k, n_y)
    m = np.max(s, axis=1)
    return m + np.log(np.sum(np.exp(s - m[:, None, :]), axis=1))


def translate(measure: MixingMeasure, t1: float, t2,
              theta: ThetaBox | None = None) -> MixingMeasure:
    """Shift every gating bias by ``t1`` and every gating slope by ``t2``.

    The conditional density is invariant under this action.  When ``theta``
    is given the result is validated against the box and a violation raises
    with the offending bound named; pass ``theta=None`` for unchecked use
    inside optimizers.
    """
    t2 = np.atleast_1d(np.asarray(t2, dtype=float))
    if t2.shape[0] != measure.dim:
        raise ValueError(f"t2 has dim {t2.shape[0]}, measure has dim {measure.dim}")
    out = measure.replace(beta0=measure.beta0 + float(t1), beta1=measure.beta1 + t2)
    if theta is not None:
        theta.validate(out)
    return out


def sample(measure: MixingMeasure, n: int, seed,
           x_lo=None, x_hi=None) -> Dataset:
    """Draw n i.i.d. pairs: x uniform on the covariate box, component index
    from the gate at x, response from the selected Gaussian expert.

    Deterministic given ``seed``.  The default box is [-1, 1]^d.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    d = measure.dim
    lo = np.full(d, -1.0) if x_lo is None else np.broadcast_to(np.asarray(x_lo, dtype=float), (d,))
    hi = np.full(d, 1.0) if x_hi is None else np.broadcast_to(np.asarray(x_hi, dtype=float), (d,))
    rng = np.random.default_rng(seed)
    X = rng.uniform(lo, hi, size=(n, d))
    gates = np.exp(_log_gate(measure, X))  # (n, k)
    cum = np.cumsum(gates, axis=1)
    cum[:, -1] = 1.0  # guard rounding so the last bin always catches
    u = rng.random(n)
    comp = np.sum(u[:, None] >= cum, axis=1)
    mean = np.sum(X * measure.a[comp], axis=1) + measure.b[comp]
    y = mean + np.sqrt(measure.sigma[comp]) * rng.standard_normal(n)
    stored = seed if (seed is None or isinstance(seed, int)) else None
    return Dataset(x=X, y=y, seed=stored)


def log_likelihood(measure: MixingMeasure, data: Dataset) -> float:
    """Average log conditional density over the dataset."""
    return float(np.mean(_log_density_pairs(measure, data.x, data.y)))


def log_likelihood_grad(measure: MixingMeasure, data: Dataset) -> dict[str, np.ndarray]:
    """Analytic gradient of :func:`log_likelihood` in every parameter.

    Writing r_pi for the posterior responsibility of component i at pair p
    and w_pi for the gate, the per-pair contributions are

        d/d beta0_i = r_pi - w_pi          d/d beta1_i = (r_pi - w_pi) x_p
        d/d a_i     = r_pi e_pi x_p        d/d b_i     = r_pi e_pi
        d/d sigma_i = r_pi (e_pi^2 sigma_i - 1) / (2 sigma_i)

    with e_pi = (y_p - mean_pi) / sigma_i.  Returned arrays are averaged
    over pairs, matching the likelihood normalization.
    """
    X, y = data.x, data.y
    n = data.n
    lg = _log_gate(measure, X)
    mean = X @ measure.a.T + measure.b
    ln = _log_normal(y[:, None], mean, measure.sigma)
    s = lg + ln
    m = np.max(s, axis=1, keepdims=True)
    w = np.exp(s - m)
    resp = w / np.sum(w, axis=1, keepdims=True)  # (n, k)
    gate = np.exp(lg)

    dgate = resp - gate  # (n, k)
    err = (y[:, None] - mean) / measure.sigma  # (n, k)
    re = resp * err
    grad = {
        "beta0": np.sum(dgate, axis=0) / n,
        "beta1": dgate.T @ X / n,
        "a": re.T @ X / n,
        "b": np.sum(re, axis=0) / n,
        "sigma": np.sum(resp * (err**2 * measure.sigma - 1.0), axis=0)
        / (2.0 * measure.sigma) / n,
    }
    return grad
