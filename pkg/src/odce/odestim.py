"""Ground-truth simulation and CE estimation of OD volumes from arc loads."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import families as fam
from .ce import CeConfig, CeTrace, ce_optimize
from .graph import Network, PathTable, arc_loads, reduce_system, routing_matrix, shortest_paths

__all__ = [
    "EPS",
    "CostModel",
    "GroundTruth",
    "Constraint",
    "EstimationResult",
    "IdentifiabilityReport",
    "DegenerateObjectiveError",
    "NonIdentifiableWarning",
    "simulate",
    "route",
    "performance",
    "estimate",
    "identifiability_report",
    "minimize_total_cost",
    "total_cost",
]

EPS = 1e-12

Mode = Literal["static", "coupled"]


class DegenerateObjectiveError(ValueError):
    pass


class NonIdentifiableWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CostModel:
    """Per-arc cost as a function of the arc load.

    ``affine``: ``a + b*Y``; ``power``: ``a + b*Y**gamma``;
    ``constant-random``: ``a + b*U`` with ``U ~ Uniform(0, 1)`` drawn once per
    arc, independent of the load.
    """

    kind: str = "affine"
    a: float = 1.0
    b: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("affine", "power", "constant-random"):
            raise ValueError(f"unknown cost model kind {self.kind!r}")
        if self.b < 0:
            raise ValueError("cost slope b must be non-negative")
        if self.kind == "constant-random":
            if self.a < 0:
                raise ValueError("constant-random costs need a >= 0")
        elif self.a <= 0:
            raise ValueError(f"{self.kind} cost model needs a > 0")
        if self.kind == "power" and self.gamma < 1:
            raise ValueError("power cost model needs gamma >= 1")

    @property
    def load_dependent(self) -> bool:
        return self.kind != "constant-random" and self.b > 0

    def __call__(self, Y):
        Y = np.asarray(Y, dtype=float)
        if self.kind == "affine":
            return self.a + self.b * Y
        if self.kind == "power":
            return self.a + self.b * np.power(np.maximum(Y, 0.0), self.gamma)
        raise TypeError("constant-random costs do not depend on load; use draw()")

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.a + self.b * rng.random(n)


@dataclass(frozen=True)
class GroundTruth:
    """Observed network state: loads ``Y``, costs ``C`` and the frozen routing ``A``.

    ``X0`` is ``None`` when the state was not produced by :func:`simulate`
    (e.g. a particle-filter state), which is all the estimator needs.
    """

    network: Network
    X0: np.ndarray | None
    Y: np.ndarray
    C: np.ndarray
    A: np.ndarray
    table: PathTable
    cost_model: CostModel | None = None

    @property
    def n(self) -> int:
        return self.network.n


def route(network: Network, costs) -> tuple[PathTable, np.ndarray]:
    table = shortest_paths(network, costs)
    return table, routing_matrix(network, table)


def simulate(
    p: int,
    cost_model: CostModel,
    rng: np.random.Generator,
    prior_rate: float = 1.0,
    active: int | None = None,
    rounds: int = 3,
    X0=None,
) -> GroundTruth:
    """Draw OD volumes, route them and derive loads and costs.

    ``X0`` defaults to i.i.d. exponential volumes with rate ``prior_rate``;
    ``active`` keeps only that many OD couples (chosen uniformly) positive.
    Load-dependent costs are closed by ``rounds`` fixed-point passes starting
    from zero load: route with ``C``, load ``Y = A X0``, set ``C = F(Y)``.
    The returned ``C`` is the cost vector the returned ``A`` was routed with,
    so ``Y = A X0`` and ``A = route(C)`` hold exactly.
    """
    net = Network(p)
    n = net.n
    if X0 is None:
        if prior_rate <= 0:
            raise ValueError("prior rate must be positive")
        X0 = rng.exponential(1.0 / prior_rate, n)
        if active is not None:
            if not 0 <= active <= n:
                raise ValueError(f"active={active} outside [0, {n}]")
            keep = np.zeros(n, bool)
            keep[rng.choice(n, size=active, replace=False)] = True
            X0 = np.where(keep, X0, 0.0)
    X0 = np.asarray(X0, dtype=float)
    if X0.shape != (n,) or np.any(X0 < 0):
        raise ValueError(f"X0 must be a non-negative vector of length {n}")

    if not cost_model.load_dependent:
        C = cost_model.draw(n, rng) if cost_model.kind == "constant-random" else cost_model(np.zeros(n))
        table, A = route(net, C)
        return GroundTruth(net, X0, arc_loads(A, X0), C, A, table, cost_model)

    if rounds < 1:
        raise ValueError("need at least one fixed-point round")
    C = cost_model(np.zeros(n))
    for r in range(rounds):
        table, A = route(net, C)
        Y = arc_loads(A, X0)
        if r < rounds - 1:
            C = cost_model(Y)
    return GroundTruth(net, X0, Y, C, A, table, cost_model)


def truth_from_state(network: Network, Y, C, cost_model: CostModel | None = None) -> GroundTruth:
    """Observation-only truth (no ``X0``) routed with costs ``C``."""
    table, A = route(network, C)
    return GroundTruth(network, None, np.asarray(Y, float), np.asarray(C, float), A, table, cost_model)


# -- performance -----------------------------------------------------------


def _residuals(truth: GroundTruth, X, mode: Mode, cost_model):
    X = np.asarray(X, dtype=float)
    Yhat = arc_loads(truth.A, X)
    if mode == "coupled":
        model = cost_model or truth.cost_model
        if model is None or not model.load_dependent:
            raise ValueError("coupled mode needs a load-dependent cost model")
        cols = Yhat if Yhat.ndim == 2 else Yhat[:, None]
        Xc = X if X.ndim == 2 else X[:, None]
        out = np.empty_like(cols)
        for k in range(cols.shape[1]):
            _, Ak = route(truth.network, model(cols[:, k]))
            out[:, k] = arc_loads(Ak, Xc[:, k])
        Yhat = out if Yhat.ndim == 2 else out[:, 0]
    elif mode != "static":
        raise ValueError(f"unknown performance mode {mode!r}")
    diff = truth.Y[:, None] - Yhat if Yhat.ndim == 2 else truth.Y - Yhat
    return np.linalg.norm(diff, axis=0), Yhat


def performance(X_hat, truth: GroundTruth, mode: Mode = "static", cost_model=None):
    """``1 / max(||Y - Yhat||_2, EPS)``; vectorised over the columns of ``X_hat``."""
    r, _ = _residuals(truth, X_hat, mode, cost_model)
    S = 1.0 / np.maximum(r, EPS)
    return float(S) if np.ndim(S) == 0 else S


# -- constraints and the CE problem ---------------------------------------


@dataclass(frozen=True)
class Constraint:
    mode: str = "none"
    mask: np.ndarray | None = None
    K: int | None = None

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def fixed_zeros(cls, mask):
        return cls("fixed-zeros", mask=np.asarray(mask).astype(bool))

    @classmethod
    def fixed_k(cls, K: int):
        return cls("fixed-K", K=int(K))

    def validate(self, n: int):
        if self.mode == "none":
            return
        if self.mode == "fixed-zeros":
            if self.mask is None or np.shape(self.mask) != (n,):
                raise ValueError(f"fixed-zeros needs a binary mask of length {n}")
        elif self.mode == "fixed-K":
            if self.K is None or not 0 <= self.K <= n:
                raise ValueError(f"fixed-K needs 0 <= K <= {n}, got {self.K}")
        else:
            raise ValueError(f"unknown constraint mode {self.mode!r}")


def default_zero_mask(n: int, rng: np.random.Generator, keep: float = 2 / 3) -> np.ndarray:
    """Active-couple mask drawn once from Bernoulli(``keep``)."""
    return rng.random(n) < keep


def path_load_bounds(truth: GroundTruth, floor: float = 1e-12) -> np.ndarray:
    """Per-OD upper bound ``min`` of the loads along its path."""
    Yb = np.where(truth.A.astype(bool), truth.Y[:, None], np.inf)
    return np.maximum(Yb.min(axis=0), floor)


class _OdProblem:
    def __init__(self, truth, family, constraint, mode, cost_model, b, permute):
        n = truth.n
        self.truth = truth
        self.family = family
        self.constraint = constraint
        self.mode = mode
        self.cost_model = cost_model
        self.b = b
        self.permute = permute
        self.clamp_events = 0
        self._Z = None
        total = float(np.sum(truth.Y))
        arcs_used = float(np.asarray(truth.A).sum())
        if constraint.mode == "fixed-K":
            scale = constraint.K / n if constraint.K else 1.0
        elif constraint.mode == "fixed-zeros":
            scale = max(constraint.mask.mean(), 1.0 / n)
        else:
            scale = 1.0
        lam0 = scale * arcs_used / total if total > 0 else fam.LAMBDA_MAX
        lam0 = float(np.clip(lam0, fam.LAMBDA_MIN, fam.LAMBDA_MAX))
        self.initial_params = {"lam": np.full(n, lam0)}
        if constraint.mode == "fixed-K":
            self.initial_params["probs"] = np.full(n, constraint.K / n)

    def sample(self, params, N, rng):
        # family draws come first so that trivial constraints leave them untouched
        if self.family == "exp":
            E = fam.sample_exp(params["lam"], N, rng)
        else:
            E = fam.sample_trunc_exp(fam.TruncExpParams(params["lam"], self.b), N, rng)
        c = self.constraint
        if c.mode == "fixed-zeros":
            self._Z = np.broadcast_to(c.mask[:, None], E.shape)
            return E * c.mask[:, None]
        if c.mode == "fixed-K":
            bern = fam.BernoulliParams(np.clip(params["probs"], 0.0, 1.0), c.K)
            Z = fam.sample_conditional_bernoulli(bern, rng, N=N, permute=self.permute)
            self._Z = Z.astype(bool)
            return E * Z
        self._Z = None
        return E

    def score_batch(self, X):
        return performance(X, self.truth, self.mode, self.cost_model)

    def score(self, x):
        return performance(x, self.truth, self.mode, self.cost_model)

    def update(self, X, elite, params):
        entries = np.broadcast_to(elite, X.shape)
        if self._Z is not None:
            entries = entries & self._Z
        count = entries.sum(axis=1)
        if self.family == "exp":
            total = np.where(entries, X, 0.0).sum(axis=1)
            self.clamp_events += int(np.sum((count > 0) & (total <= 0)))
            lam = fam.update_exp(X, entries, previous=params["lam"])
        else:
            m_ok = np.where(entries, X, 0.0).sum(axis=1) > 0
            # an elite row of exact zeros carries no traffic: treat like the exp clamp
            entries = entries & m_ok[:, None]
            lam, flags = fam.update_trunc_exp(
                X, entries, self.b, previous=params["lam"], return_flags=True
            )
            lam = np.where((count > 0) & ~m_ok, fam.LAMBDA_MAX, lam)
            self.clamp_events += int(flags.sum() + np.sum((count > 0) & ~m_ok))
        out = {"lam": lam}
        if self.constraint.mode == "fixed-K":
            out["probs"] = fam.update_bernoulli(self._Z, elite)
        return out


@dataclass
class IdentifiabilityReport:
    rank: int
    nullity: int
    square: bool
    used_arcs: int
    unknowns: int

    @property
    def identifiable(self) -> bool:
        return self.nullity == 0

    def to_dict(self):
        return {
            "rank": self.rank,
            "nullity": self.nullity,
            "square": self.square,
            "used_arcs": self.used_arcs,
            "unknowns": self.unknowns,
            "identifiable": self.identifiable,
        }


def identifiability_report(truth: GroundTruth, active=None) -> IdentifiabilityReport:
    """Rank/nullity of the reduced system, optionally restricted to ``active`` OD columns."""
    A = np.asarray(truth.A)
    if active is not None:
        A = A[:, np.asarray(active, dtype=bool)]
    red = reduce_system(A, truth.Y)
    return IdentifiabilityReport(
        rank=red.rank,
        nullity=red.nullity,
        square=red.A.shape[0] == red.A.shape[1],
        used_arcs=int(red.A.shape[0]),
        unknowns=int(A.shape[1]),
    )


@dataclass
class EstimationResult:
    X_hat: np.ndarray
    Y_hat: np.ndarray
    S_final: float
    residual: float
    trace: CeTrace
    diagnostics: IdentifiabilityReport
    params: dict = field(default_factory=dict)
    clamp_events: int = 0

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def relative_residual(self, Y) -> float:
        nY = float(np.linalg.norm(Y))
        return self.residual / nY if nY > 0 else self.residual

    def to_dict(self):
        return {
            "X_hat": self.X_hat.tolist(),
            "Y_hat": self.Y_hat.tolist(),
            "S_final": self.S_final,
            "residual": self.residual,
            "iterations": self.iterations,
            "clamp_events": self.clamp_events,
            "identifiability": self.diagnostics.to_dict(),
            "params": {k: np.asarray(v).tolist() for k, v in self.params.items()},
        }


def estimate(
    truth: GroundTruth,
    family: str = "exp",
    constraint: Constraint | None = None,
    config: CeConfig | None = None,
    mode: Mode = "static",
    b=None,
    cost_model: CostModel | None = None,
    permute: bool = False,
) -> EstimationResult:
    """Search OD volumes whose routed loads best reproduce ``truth.Y``.

    Parameters
    ----------
    family : {"exp", "trunc-exp"}
        Sampling density for the OD volumes.
    constraint : Constraint
        ``fixed-zeros`` forces masked-out couples to zero; ``fixed-K`` samples
        an activity pattern with exactly ``K`` ones per candidate and refits
        its Bernoulli probabilities alongside the volume rates.
    config : CeConfig
        ``N`` defaults to ``7 n``.
    b : array_like, optional
        Upper bounds for ``trunc-exp``; defaults to the smallest load along
        each OD couple's path.
    """
    n = truth.n
    constraint = constraint or Constraint.none()
    constraint.validate(n)
    if family not in ("exp", "trunc-exp"):
        raise ValueError(f"unknown family {family!r}")
    config = (config or CeConfig()).with_default_N(n)
    if family == "trunc-exp":
        b = path_load_bounds(truth) if b is None else np.broadcast_to(np.asarray(b, float), (n,))
    problem = _OdProblem(truth, family, constraint, mode, cost_model, b, permute)
    best, params, trace = ce_optimize(problem, config)

    r, Yhat = _residuals(truth, best, mode, cost_model)
    r = float(r)
    if constraint.mode == "fixed-zeros":
        active = constraint.mask
    elif constraint.mode == "fixed-K":
        active = best > 0
    else:
        active = None
    report = identifiability_report(truth, active)
    if not report.identifiable:
        warnings.warn(
            f"reduced routing system has nullity {report.nullity}; the estimate is one of many",
            NonIdentifiableWarning,
            stacklevel=2,
        )
    return EstimationResult(
        X_hat=best,
        Y_hat=Yhat,
        S_final=1.0 / max(r, EPS),
        residual=r,
        trace=trace,
        diagnostics=report,
        params=params,
        clamp_events=problem.clamp_events,
    )


# -- total-cost minimisation ----------------------------------------------


def total_cost(X, truth: GroundTruth, cost_model: CostModel):
    """``sum_i |C_i|`` with ``C = F(A X)`` under the truth's routing."""
    Y = arc_loads(truth.A, X)
    return np.abs(cost_model(Y)).sum(axis=0)


class _CostProblem:
    def __init__(self, truth, cost_model, rate):
        self.truth = truth
        self.cost_model = cost_model
        self.initial_params = np.full(truth.n, float(rate))

    def sample(self, params, N, rng):
        return fam.sample_exp(params, N, rng)

    def score_batch(self, X):
        return -total_cost(X, self.truth, self.cost_model)

    def score(self, x):
        return -float(total_cost(x, self.truth, self.cost_model))

    def update(self, X, elite, params):
        return fam.update_exp(X, elite, previous=params)


def minimize_total_cost(
    truth: GroundTruth, cost_model: CostModel, config: CeConfig | None = None, rate: float = 1.0
):
    """CE search for OD volumes minimising the summed arc cost.

    Returns ``(X_best, total_cost, trace)``.
    """
    if not cost_model.load_dependent:
        raise DegenerateObjectiveError("total cost does not depend on X under a constant cost model")
    config = (config or CeConfig()).with_default_N(truth.n)
    best, _, trace = ce_optimize(_CostProblem(truth, cost_model, rate), config)
    return best, float(total_cost(best, truth, cost_model)), trace
