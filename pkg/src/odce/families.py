"""Sampling densities and their closed-form (or Newton) CE updates.

Samples are stored column-wise: an ``n x N`` matrix holds ``N`` candidate
OD vectors of length ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LAMBDA_MIN",
    "LAMBDA_MAX",
    "DegenerateComponentError",
    "ExpParams",
    "TruncExpParams",
    "BernoulliParams",
    "sample_exp",
    "update_exp",
    "sample_trunc_exp",
    "trunc_exp_mean",
    "trunc_exp_residual",
    "update_trunc_exp",
    "sample_conditional_bernoulli",
    "update_bernoulli",
]

LAMBDA_MIN = 1e-6
LAMBDA_MAX = 1e6


class DegenerateComponentError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ExpParams:
    lam: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if lam.ndim != 1 or np.any(~(lam > 0)):
            raise ValueError("exponential rates must be a vector of positive reals")
        object.__setattr__(self, "lam", lam)

    def to_dict(self):
        return {"lambda": self.lam.tolist()}


@dataclass(frozen=True)
class TruncExpParams:
    lam: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        b = np.broadcast_to(np.asarray(self.b, dtype=float), lam.shape).copy()
        if np.any(~(lam > 0)) or np.any(~(b > 0)):
            raise ValueError("truncated exponential needs positive rates and bounds")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "b", b)

    def to_dict(self):
        return {"lambda": self.lam.tolist(), "b": self.b.tolist()}


@dataclass(frozen=True)
class BernoulliParams:
    probs: np.ndarray
    K: int

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if np.any(probs < 0) or np.any(probs > 1):
            raise ValueError("Bernoulli probabilities must lie in [0, 1]")
        if not 0 <= self.K <= probs.size:
            raise ValueError(f"K={self.K} outside [0, {probs.size}]")
        object.__setattr__(self, "probs", probs)

    def to_dict(self):
        return {"probs": self.probs.tolist(), "K": int(self.K)}


def _rates(params):
    return params.lam if hasattr(params, "lam") else np.asarray(params, dtype=float)


# -- exponential -----------------------------------------------------------


def sample_exp(params, N: int, rng: np.random.Generator) -> np.ndarray:
    lam = _rates(params)
    return rng.exponential(1.0 / lam[:, None], size=(lam.size, N))


def _entry_mask(samples, elite_mask):
    elite_mask = np.asarray(elite_mask, dtype=bool)
    if elite_mask.ndim == 1:
        elite_mask = np.broadcast_to(elite_mask, samples.shape)
    return elite_mask


def update_exp(samples, elite_mask, previous=None, strict=False) -> np.ndarray:
    """Rates maximising the elite log-likelihood: reciprocal elite mean per row.

    ``elite_mask`` selects columns (shape ``(N,)``) or individual entries
    (shape ``(n, N)``, used when some entries are structurally zero).
    Rows with no selected entry keep their ``previous`` rate. Rows whose
    selected entries sum to zero are clamped to ``LAMBDA_MAX`` unless
    ``strict``, in which case :class:`DegenerateComponentError` is raised.
    """
    samples = np.asarray(samples, dtype=float)
    mask = _entry_mask(samples, elite_mask)
    count = mask.sum(axis=1).astype(float)
    total = np.where(mask, samples, 0.0).sum(axis=1)
    if strict and np.any((count > 0) & (total <= 0)):
        bad = np.flatnonzero((count > 0) & (total <= 0))
        raise DegenerateComponentError(f"elite sum is zero for rows {bad.tolist()}")
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = count / total
    lam = np.where(total > 0, lam, LAMBDA_MAX)
    if previous is not None:
        lam = np.where(count > 0, lam, _rates(previous))
    elif np.any(count == 0):
        raise ValueError("elite mask selects no entry in some row and no previous rates given")
    return np.clip(lam, LAMBDA_MIN, LAMBDA_MAX)


# -- truncated exponential -------------------------------------------------


def sample_trunc_exp(params: TruncExpParams, N: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws from ``lam e^{-lam x} / (1 - e^{-lam b})`` on ``[0, b]``."""
    lam, b = params.lam[:, None], params.b[:, None]
    u = rng.random((lam.size, N))
    mass = -np.expm1(-lam * b)
    x = -np.log1p(-u * mass) / lam
    return np.minimum(x, b)


def _phi(x):
    """``1/x - 1/(e^x - 1)``; the truncated mean is ``b * phi(lam b)``."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-3
    xs = np.where(small, 1.0, x)
    big = 1.0 / xs - 1.0 / np.expm1(np.minimum(xs, 700.0))
    series = 0.5 - x / 12.0 + x**3 / 720.0
    return np.where(small, series, big)


def _dphi(x):
    x = np.asarray(x, dtype=float)
    small = x < 1e-3
    xs = np.where(small, 1.0, x)
    # e^x / (e^x - 1)^2 written as e^{-x} / (1 - e^{-x})^2 to avoid overflow
    em = np.exp(-xs)
    big = -1.0 / xs**2 + em / (-np.expm1(-xs)) ** 2
    series = -1.0 / 12.0 + x**2 / 240.0
    return np.where(small, series, big)


def trunc_exp_mean(lam, b):
    lam = np.asarray(lam, dtype=float)
    b = np.asarray(b, dtype=float)
    return b * _phi(lam * b)


def trunc_exp_residual(lam, m, b):
    """``m - 1/lam + b/(e^{lam b} - 1)``, the per-row score equation."""
    return np.asarray(m, dtype=float) - trunc_exp_mean(lam, b)


def update_trunc_exp(
    samples,
    elite_mask,
    b,
    previous=None,
    tol: float = 1e-12,
    max_newton: int = 100,
    return_flags: bool = False,
):
    """Solve the truncated-exponential score equation row by row.

    For each row the elite mean ``m`` is matched to the truncated mean,
    ``m = 1/lam - b/(e^{lam b} - 1)``. Newton's method starts from the
    untruncated solution ``1/m`` and is safeguarded by bisection on
    ``[LAMBDA_MIN, LAMBDA_MAX]``; the residual is increasing in ``lam``, so
    the root is unique whenever ``0 < m < b/2``.

    Rows with ``m >= b/2`` have no positive root and are clamped to
    ``LAMBDA_MIN`` (flagged). A non-positive elite mean raises.
    """
    samples = np.asarray(samples, dtype=float)
    mask = _entry_mask(samples, elite_mask)
    b = np.broadcast_to(np.asarray(b, dtype=float), (samples.shape[0],))
    count = mask.sum(axis=1)
    total = np.where(mask, samples, 0.0).sum(axis=1)
    active = count > 0
    if previous is None and not np.all(active):
        raise ValueError("elite mask selects no entry in some row and no previous rates given")
    m = np.where(active, total / np.maximum(count, 1), np.nan)
    if np.any(active & (m <= 0)):
        raise DegenerateComponentError("elite mean is zero: truncated update undefined")
    lam, flags = solve_trunc_exp_rate(
        np.where(active, m, 0.25 * b), b, tol=tol, max_newton=max_newton
    )
    if previous is not None:
        lam = np.where(active, lam, _rates(previous))
        flags = flags & active
    return (lam, flags) if return_flags else lam


def solve_trunc_exp_rate(m, b, tol=1e-12, max_newton=100):
    """Vectorised root of ``trunc_exp_residual(lam, m, b) = 0``.

    Returns ``(lam, clamped)`` where ``clamped`` marks rows with no root.
    """
    m = np.atleast_1d(np.asarray(m, dtype=float))
    b = np.broadcast_to(np.asarray(b, dtype=float), m.shape)
    lo = np.full(m.shape, LAMBDA_MIN)
    hi = np.full(m.shape, LAMBDA_MAX)
    clamped = m >= trunc_exp_mean(LAMBDA_MIN, b)
    tiny = m <= trunc_exp_mean(LAMBDA_MAX, b)
    lam = np.clip(1.0 / np.where(m > 0, m, 1.0), LAMBDA_MIN, LAMBDA_MAX)
    done = clamped | tiny
    for _ in range(max_newton):
        g = trunc_exp_residual(lam, m, b)
        conv = np.abs(g) < tol
        done = done | conv
        if np.all(done):
            break
        # g increasing: g < 0 means the root lies above lam
        lo = np.where(g < 0, lam, lo)
        hi = np.where(g > 0, lam, hi)
        dg = -(b**2) * _dphi(lam * b)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = lam - g / dg
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
        bis = np.sqrt(lo * hi)  # geometric midpoint: the bracket spans 12 decades
        lam = np.where(done, lam, np.where(bad, bis, step))
    if not np.all(done):
        # Newton budget exhausted: finish by plain bisection
        for _ in range(200):
            g = trunc_exp_residual(lam, m, b)
            open_ = ~done & (np.abs(g) >= tol) & (hi - lo > 1e-15 * hi)
            if not np.any(open_):
                break
            lo = np.where(open_ & (g < 0), lam, lo)
            hi = np.where(open_ & (g > 0), lam, hi)
            lam = np.where(open_, 0.5 * (lo + hi), lam)
    lam = np.where(clamped, LAMBDA_MIN, lam)
    lam = np.where(tiny & ~clamped, LAMBDA_MAX, lam)
    return lam, clamped


# -- Bernoulli with a fixed number of ones --------------------------------


def sample_conditional_bernoulli(
    params: BernoulliParams, rng: np.random.Generator, N: int | None = None, permute: bool = False
) -> np.ndarray:
    """Binary vector(s) with exactly ``K`` ones.

    Bernoulli(``p_i``) variables are drawn in index order until either ``K``
    ones or ``n - K`` zeros have appeared; the remaining entries are then
    set to zero or one respectively. With ``N`` given, returns an ``n x N``
    matrix of independent draws. ``permute`` visits indices in a fresh
    random order per draw instead.
    """
    probs, K = params.probs, int(params.K)
    n = probs.size
    cols = 1 if N is None else int(N)
    if permute:
        order = np.argsort(rng.random((n, cols)), axis=0)
    else:
        order = np.broadcast_to(np.arange(n)[:, None], (n, cols))
    p_ord = probs[order]
    draws = rng.random((n, cols)) < p_ord
    # counts before visiting position t
    ones_before = np.vstack([np.zeros((1, cols), int), np.cumsum(draws, axis=0)[:-1]])
    zeros_before = np.arange(n)[:, None] - ones_before
    # the process state only differs from the raw draw after the first stop
    stopped_ones = np.maximum.accumulate(ones_before >= K, axis=0)
    stopped_zeros = np.maximum.accumulate(zeros_before >= n - K, axis=0)
    # whichever limit was hit first decides the fill value
    first_ones = np.argmax(np.vstack([stopped_ones, np.ones((1, cols), bool)]), axis=0)
    first_zeros = np.argmax(np.vstack([stopped_zeros, np.ones((1, cols), bool)]), axis=0)
    t = np.arange(n)[:, None]
    stop = np.minimum(first_ones, first_zeros)
    fill = np.where(first_ones <= first_zeros, 0, 1)
    z_ord = np.where(t < stop, draws.astype(np.int8), fill.astype(np.int8))
    Z = np.empty_like(z_ord)
    np.put_along_axis(Z, order, z_ord, axis=0)
    return Z[:, 0] if N is None else Z


def update_bernoulli(Z_samples, elite_mask) -> np.ndarray:
    Z = np.asarray(Z_samples)
    elite = np.asarray(elite_mask, dtype=bool)
    if not elite.any():
        raise ValueError("empty elite set")
    return Z[:, elite].mean(axis=1).astype(float)
