"""Two-level cross-entropy optimisation and importance-sampling estimators."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Protocol

import numpy as np

__all__ = [
    "CeConfig",
    "CeProblem",
    "CeTrace",
    "TraceRecord",
    "elite_threshold",
    "elite_count",
    "ce_optimize",
    "iteration_rng",
    "smooth_params",
    "DiscreteDensity",
    "importance_weights",
    "rare_event_is",
    "crude_mc",
]

GAMMA_ATOL = 1e-12


@dataclass(frozen=True)
class CeConfig:
    """Knobs of the CE loop.

    ``N=None`` means "pick from problem size": callers with ``n`` unknowns use
    ``7 * n`` (see :meth:`with_default_N`).
    """

    N: int | None = None
    rho: float = 0.1
    d: int = 5
    max_iters: int = 500
    alpha: float = 1.0
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.N is not None and self.N < 1:
            raise ValueError("sample size N must be positive")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.d < 1 or self.max_iters < 1:
            raise ValueError("d and max_iters must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def with_default_N(self, n: int, kappa: int = 7) -> "CeConfig":
        if self.N is not None:
            return self
        return replace(self, N=kappa * n)


@dataclass
class TraceRecord:
    t: int
    gamma_hat: float
    best_score: float
    params: Any


@dataclass
class CeTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def gamma_hat(self) -> np.ndarray:
        return np.array([r.gamma_hat for r in self.records])

    @property
    def best_score(self) -> np.ndarray:
        return np.array([r.best_score for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("iter,gamma_hat,best_score\n")
            for r in self.records:
                fh.write(f"{r.t},{r.gamma_hat!r},{r.best_score!r}\n")


class CeProblem(Protocol):
    """What :func:`ce_optimize` needs from a problem.

    ``sample`` returns candidates as the columns of an array (``dim x N``).
    A problem may also define ``score_batch(candidates) -> (N,)`` to score all
    columns at once; otherwise ``score`` is mapped over columns.
    """

    initial_params: Any

    def sample(self, params, N: int, rng: np.random.Generator) -> np.ndarray: ...

    def score(self, candidate: np.ndarray) -> float: ...

    def update(self, candidates: np.ndarray, elite: np.ndarray, params): ...


def elite_count(N: int, rho: float) -> int:
    """1-based rank of the ``(1 - rho)`` order statistic, ``ceil((1-rho) N)``."""
    # guard against 0.8*10 -> 8.000000000000002 style round-off
    k = math.ceil((1.0 - rho) * N - 1e-9)
    return min(max(k, 1), N)


def elite_threshold(scores, rho: float) -> float:
    scores = np.asarray(scores, dtype=float).ravel()
    if scores.size == 0:
        raise ValueError("cannot take a quantile of an empty score sample")
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    k = elite_count(scores.size, rho)
    return float(np.sort(scores)[k - 1])


def iteration_rng(seed: int, t: int) -> np.random.Generator:
    """Independent stream for iteration ``t``, keyed only by ``(seed, t)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(t)]))


def smooth_params(new, old, alpha: float):
    """``alpha * new + (1 - alpha) * old`` applied leafwise to dicts/tuples/arrays.

    Integer and ``None`` leaves are passed through from ``new`` unchanged.
    """
    if alpha == 1.0:
        return new
    if isinstance(new, dict):
        return {k: smooth_params(v, old[k], alpha) for k, v in new.items()}
    if isinstance(new, (tuple, list)):
        return type(new)(smooth_params(a, b, alpha) for a, b in zip(new, old))
    if new is None or isinstance(new, (int, np.integer)):
        return new
    return alpha * np.asarray(new, dtype=float) + (1.0 - alpha) * np.asarray(old, dtype=float)


def _score_all(problem, X: np.ndarray, pool) -> np.ndarray:
    batch = getattr(problem, "score_batch", None)
    if batch is not None:
        return np.asarray(batch(X), dtype=float)
    cols = [X[:, i] for i in range(X.shape[1])]
    if pool is None:
        return np.array([problem.score(c) for c in cols], dtype=float)
    return np.array(list(pool.map(problem.score, cols)), dtype=float)


def ce_optimize(problem: CeProblem, config: CeConfig, callback: Callable | None = None):
    """Maximise ``problem.score`` with the two-level CE procedure.

    Each iteration draws ``N`` candidates from the current density, takes
    the elite threshold as the ``(1 - rho)`` sample quantile of the scores,
    refits the density on candidates scoring at least that threshold and
    (optionally) smooths it with the previous parameters.

    Iteration stops once the threshold has not moved (to within ``1e-12``)
    over the last ``d`` iterations, or after ``max_iters``.

    Returns
    -------
    best : ndarray
        Best candidate seen in any iteration.
    params :
        Parameters after the final update.
    trace : CeTrace
    """
    N = config.N
    if N is None:
        raise ValueError("CeConfig.N is unset; call with_default_N first")
    params = problem.initial_params
    trace = CeTrace()
    best, best_score = None, -np.inf
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for t in range(1, config.max_iters + 1):
            rng = iteration_rng(config.seed, t)
            X = np.asarray(problem.sample(params, N, rng))
            S = _score_all(problem, X, pool)
            gamma = elite_threshold(S, config.rho)
            elite = S >= gamma
            i_best = int(np.argmax(S))
            if S[i_best] > best_score:
                best_score = float(S[i_best])
                best = X[:, i_best].copy()
            updated = problem.update(X, elite, params)
            params = smooth_params(updated, params, config.alpha)
            trace.records.append(TraceRecord(t, gamma, best_score, params))
            if callback is not None:
                callback(trace.records[-1])
            if t > config.d:
                window = trace.gamma_hat[-(config.d + 1):]
                if np.all(np.abs(window - window[-1]) <= GAMMA_ATOL):
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    return best, params, trace


# -- rare-event estimation -------------------------------------------------


class DiscreteDensity:
    """Probability mass function on the integers ``0..K-1``."""

    def __init__(self, pmf):
        pmf = np.asarray(pmf, dtype=float)
        if np.any(pmf < 0) or not np.isclose(pmf.sum(), 1.0, rtol=0, atol=1e-12):
            raise ValueError("pmf must be non-negative and sum to 1")
        self.pmf_values = pmf
        self._cdf = np.cumsum(pmf)
        self._cdf[-1] = 1.0

    def __len__(self):
        return self.pmf_values.size

    def sample(self, N: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(N)
        return np.searchsorted(self._cdf, u, side="right")

    def pdf(self, x) -> np.ndarray:
        return self.pmf_values[np.asarray(x, dtype=int)]


def importance_weights(x, f_pdf, g_pdf, S, gamma) -> np.ndarray:
    """Summands ``1{S(x) >= gamma} f(x) / g(x)`` of the IS estimator."""
    hit = np.asarray(S(x)) >= gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        lr = np.asarray(f_pdf(x), dtype=float) / np.asarray(g_pdf(x), dtype=float)
    terms = np.where(hit, lr, 0.0)
    if not np.all(np.isfinite(terms)):
        raise FloatingPointError(
            "non-finite likelihood ratio: the sampling density does not dominate "
            "the nominal density on the rare-event set"
        )
    return terms


def rare_event_is(f_pdf, g, S, gamma, N, rng, return_terms=False):
    """Importance-sampling estimate of ``P_f(S(X) >= gamma)``.

    ``g`` needs ``sample(N, rng)`` and ``pdf(x)``; sampling from ``g = f``
    reduces to the crude Monte-Carlo estimator.
    """
    x = g.sample(N, rng)
    terms = importance_weights(x, f_pdf, g.pdf, S, gamma)
    est = float(terms.mean())
    return (est, terms) if return_terms else est


def crude_mc(f, S, gamma, N, rng) -> float:
    x = f.sample(N, rng)
    return float(np.mean(np.asarray(S(x)) >= gamma))
