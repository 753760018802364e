"""Particle filtering of packet counts on a closed network.

Packets move between arcs in discrete time. ``S_i ~ Binomial(Y_i, beta/L_i)``
packets are ready to leave arc ``i``; the receiving function bounds the
departures by the free room on the downstream arcs (those starting at the
head of ``i``), and ``Q_i = min(S_i, R_i)`` packets actually move.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .ce import CeConfig
from .graph import Network
from .odestim import Constraint, CostModel, estimate, truth_from_state

__all__ = [
    "DynamicsParams",
    "TrafficState",
    "ParticleEnsemble",
    "successor_matrix",
    "sending",
    "receiving",
    "allocate_departures",
    "step",
    "observe_xi",
    "XiConfig",
    "weight_update",
    "ess",
    "systematic_indices",
    "resample",
    "FilterStep",
    "FilterOutput",
    "filter_run",
    "simulate_trajectory",
    "weighted_quantile",
    "default_arc_lengths",
]


def successor_matrix(network: Network) -> np.ndarray:
    """Boolean ``n x n``: ``succ[i, l]`` iff ``head(i) == tail(l)``."""
    tails, heads = network.tails_heads()
    return heads[:, None] == tails[None, :]


@dataclass(frozen=True)
class DynamicsParams:
    network: Network
    beta: float
    L: np.ndarray
    Ymax: np.ndarray
    cost_model: CostModel = field(default_factory=CostModel)

    def __post_init__(self):
        n = self.network.n
        L = np.broadcast_to(np.asarray(self.L, float), (n,)).copy()
        Ymax = np.broadcast_to(np.asarray(self.Ymax), (n,)).astype(np.int64)
        if np.any(L <= 0) or np.any(Ymax <= 0):
            raise ValueError("arc lengths and capacities must be positive")
        if self.beta < 0 or self.beta > L.min() * (1 + 1e-12):
            raise ValueError(f"beta={self.beta} must lie in [0, min L={L.min()}]")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "Ymax", Ymax)
        object.__setattr__(self, "_succ", successor_matrix(self.network))

    @property
    def success_prob(self) -> np.ndarray:
        return np.minimum(self.beta / self.L, 1.0)

    @property
    def succ(self) -> np.ndarray:
        return self._succ


def default_arc_lengths(C0, beta: float, min_prob: float = 0.2) -> np.ndarray:
    """Arc lengths proportional to initial costs, scaled so the longest arc
    has success probability ``min_prob``; no arc is shorter than ``beta``."""
    C0 = np.asarray(C0, dtype=float)
    L = C0 * (beta / min_prob) / C0.max()
    return np.maximum(L, beta)


@dataclass(frozen=True)
class TrafficState:
    Y: np.ndarray
    C: np.ndarray

    @classmethod
    def from_loads(cls, Y, cost_model: CostModel):
        Y = np.asarray(Y, dtype=np.int64)
        if np.any(Y < 0):
            raise ValueError("packet counts must be non-negative")
        return cls(Y, cost_model(Y))


def sending(Y, params: DynamicsParams, rng: np.random.Generator, arc=None):
    """Binomial count of packets within ``beta`` of the arc exit."""
    Y = np.asarray(Y, dtype=np.int64)
    p = params.success_prob
    if arc is not None:
        return int(rng.binomial(Y[arc], p[arc]))
    return rng.binomial(Y, p)


def receiving(Y, Q0, params: DynamicsParams, arc=None):
    """``sum_{l after i} (Ymax_l + Q0_l - Y_l)``, floored at zero."""
    room = params.Ymax + np.asarray(Q0) - np.asarray(Y)
    R = np.maximum(params.succ.astype(np.int64) @ room, 0)
    return int(R[arc]) if arc is not None else R


def _split(q: int, room: np.ndarray) -> np.ndarray:
    """Split ``q`` packets over successors proportionally to ``room``
    (largest remainder, ties to the lower index); never exceeds ``room``."""
    total = int(room.sum())
    if q >= total:
        return room.copy()
    if q == 0:
        return np.zeros_like(room)
    share = q * room
    base = share // total
    left = q - int(base.sum())
    if left:
        rem = share - base * total
        order = np.lexsort((np.arange(room.size), -rem))
        base[order[:left]] += 1
    return base


def allocate_departures(Y, Q, params: DynamicsParams):
    """Route each arc's ``Q_i`` departures to its successors.

    Arrival room on arc ``l`` is ``Ymax_l - Y_l + Q_l``. Arcs are served in
    index order; packets that find no room stay put, which shrinks ``Q`` and
    with it the room upstream, so the allocation is repeated until ``Q`` is
    stable. Returns ``(Q, inflow)`` with ``inflow.sum() == Q.sum()``.
    """
    Y = np.asarray(Y, dtype=np.int64)
    Q = np.asarray(Q, dtype=np.int64).copy()
    succ = params.succ
    lists = [np.flatnonzero(row) for row in succ]
    while True:
        room = params.Ymax - Y + Q
        inflow = np.zeros_like(Y)
        placed = np.zeros_like(Q)
        for i in np.flatnonzero(Q):
            ls = lists[i]
            got = _split(int(Q[i]), room[ls])
            room[ls] -= got
            inflow[ls] += got
            placed[i] = got.sum()
        if np.array_equal(placed, Q):
            return Q, inflow
        Q = placed


def step(state: TrafficState, params: DynamicsParams, rng: np.random.Generator) -> TrafficState:
    """One time step of the two-pass send/receive scheme."""
    Y = state.Y
    S = sending(Y, params, rng)
    R = receiving(Y, S, params)
    Q = np.minimum(S, R)
    Q, inflow = allocate_departures(Y, Q, params)
    Ynew = Y - Q + inflow
    if params.cost_model.kind == "constant-random":
        return TrafficState(Ynew, state.C)
    return TrafficState(Ynew, params.cost_model(Ynew))


def simulate_trajectory(initial: TrafficState, params: DynamicsParams, steps: int, rng) -> list[TrafficState]:
    states = [initial]
    for _ in range(steps):
        states.append(step(states[-1], params, rng))
    return states


# -- observation through the estimator ------------------------------------


@dataclass(frozen=True)
class XiConfig:
    N: int | None = None  # None -> 2 n
    max_iters: int = 30
    rho: float = 0.1
    d: int = 5
    family: str = "exp"
    seed: int = 0


def observe_xi(state: TrafficState, network: Network, budget: XiConfig = XiConfig(), seed=None):
    """Run the OD estimator against a state's own loads and costs."""
    n = network.n
    truth = truth_from_state(network, state.Y, state.C)
    cfg = CeConfig(
        N=budget.N or 2 * n,
        rho=budget.rho,
        d=budget.d,
        max_iters=budget.max_iters,
        seed=budget.seed if seed is None else seed,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = estimate(truth, family=budget.family, constraint=Constraint.none(), config=cfg)
    return res.X_hat


# -- weights --------------------------------------------------------------


@dataclass
class ParticleEnsemble:
    """``M`` particle states with scalar (``M``) or per-component (``M x n``) weights."""

    states: list[TrafficState]
    weights: np.ndarray
    weight_mode: str = "scalar"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weight_mode not in ("scalar", "per-component"):
            raise ValueError(f"unknown weight mode {self.weight_mode!r}")

    @classmethod
    def uniform(cls, states, weight_mode="scalar"):
        M = len(states)
        if weight_mode == "scalar":
            w = np.full(M, 1.0 / M)
        else:
            w = np.full((M, states[0].Y.size), 1.0 / M)
        return cls(list(states), w, weight_mode)

    @property
    def M(self) -> int:
        return len(self.states)

    @property
    def Y(self) -> np.ndarray:
        return np.array([s.Y for s in self.states])

    @property
    def C(self) -> np.ndarray:
        return np.array([s.C for s in self.states])

    def particle_weights(self) -> np.ndarray:
        """Scalar weight per particle (component average in per-component mode)."""
        if self.weight_mode == "scalar":
            return self.weights
        w = self.weights.mean(axis=1)
        return w / w.sum()


def _normalise(logw, axis=0):
    logw = np.asarray(logw, dtype=float)
    top = np.max(logw, axis=axis, keepdims=True)
    w = np.exp(logw - top)
    s = w.sum(axis=axis, keepdims=True)
    return w / s, np.ravel(~np.isfinite(top) | (s == 0))


def weight_update(ensemble: ParticleEnsemble, X_obs, predicted, sigma: float) -> ParticleEnsemble:
    """Multiply weights by a Gaussian kernel of the observation mismatch.

    ``predicted`` holds ``M x n`` per-particle predicted observations. Under
    the bootstrap proposal the weight recursion reduces to this likelihood
    product. Collapsed weights (all zero) are reset to uniform with a warning.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    X_obs = np.asarray(X_obs, dtype=float)
    pred = np.asarray(predicted, dtype=float)
    sq = (pred - X_obs[None, :]) ** 2
    with np.errstate(divide="ignore"):
        logw0 = np.log(ensemble.weights)
    if ensemble.weight_mode == "scalar":
        logw = logw0 - sq.sum(axis=1) / (2 * sigma**2)
    else:
        logw = logw0 - sq / (2 * sigma**2)
    w, dead = _normalise(logw, axis=0)
    if np.any(dead):
        warnings.warn("particle weights underflowed; reset to uniform", RuntimeWarning, stacklevel=2)
        if w.ndim == 1:
            w = np.full(ensemble.M, 1.0 / ensemble.M)
        else:
            w[:, dead] = 1.0 / ensemble.M
    return replace(ensemble, weights=w)


def ess(ensemble_or_weights) -> float:
    """Effective sample size ``1 / sum w^2`` (smallest component in per-component mode)."""
    w = getattr(ensemble_or_weights, "weights", ensemble_or_weights)
    w = np.asarray(w, dtype=float)
    return float(np.min(1.0 / np.sum(w**2, axis=0)))


def systematic_indices(w, rng: np.random.Generator) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    M = w.size
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    u = (np.arange(M) + rng.random()) / M
    return np.searchsorted(cdf, u, side="right")


def resample(ensemble: ParticleEnsemble, rng: np.random.Generator) -> ParticleEnsemble:
    idx = systematic_indices(ensemble.particle_weights(), rng)
    states = [ensemble.states[i] for i in idx]
    return ParticleEnsemble.uniform(states, ensemble.weight_mode)


# -- the filter -----------------------------------------------------------


def weighted_quantile(values, weights, q) -> np.ndarray:
    """Column-wise weighted quantiles of an ``M x n`` array (inverted CDF)."""
    values = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if w.ndim == 1:
        w = np.broadcast_to(w[:, None], values.shape)
    order = np.argsort(values, axis=0, kind="stable")
    v = np.take_along_axis(values, order, axis=0)
    cw = np.cumsum(np.take_along_axis(w, order, axis=0), axis=0)
    cw /= cw[-1]
    out = np.empty((np.size(q), values.shape[1]))
    for k, qq in enumerate(np.atleast_1d(q)):
        pos = np.argmax(cw >= qq - 1e-12, axis=0)
        out[k] = v[pos, np.arange(values.shape[1])]
    return out if np.ndim(q) else out[0]


@dataclass
class FilterStep:
    step: int
    mean_Y: np.ndarray
    q05_Y: np.ndarray
    q95_Y: np.ndarray
    mean_C: np.ndarray
    ess: float
    ess_before: float
    resampled: bool


@dataclass
class FilterOutput:
    steps: list[FilterStep]

    def to_csv(self, filter_path, ess_path) -> None:
        with open(filter_path, "w", newline="") as fh:
            fh.write("step,arc,mean_Y,q05_Y,q95_Y,mean_C\n")
            for s in self.steps:
                for a in range(s.mean_Y.size):
                    fh.write(
                        f"{s.step},{a},{s.mean_Y[a]!r},{s.q05_Y[a]!r},{s.q95_Y[a]!r},{s.mean_C[a]!r}\n"
                    )
        with open(ess_path, "w", newline="") as fh:
            fh.write("step,ess,resampled\n")
            for s in self.steps:
                fh.write(f"{s.step},{s.ess!r},{str(s.resampled).lower()}\n")

    @property
    def ess(self) -> np.ndarray:
        return np.array([s.ess for s in self.steps])


def particle_rng(seed, k, i) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(k), int(i)]))


def filter_run(
    observations,
    params: DynamicsParams,
    initial,
    M: int,
    sigma: float | None = None,
    resample_threshold: float = 0.5,
    seed: int = 0,
    observe: Callable | None = None,
    weight_mode: str = "scalar",
) -> FilterOutput:
    """Bootstrap particle filter over a sequence of OD observations.

    Parameters
    ----------
    observations : sequence of array_like
        ``X_hat_k`` for ``k = 1..T``.
    initial : TrafficState or sequence of TrafficState
        A single state is copied into all ``M`` particles.
    sigma : float, optional
        Kernel width; defaults to ``0.1 ||X_hat_k||`` (floored at ``1e-3``)
        per step.
    resample_threshold : float
        Resample when ESS falls below this fraction of ``M``; ``0`` disables.
    observe : callable ``(state, k) -> array``
        Predicted observation for a particle; defaults to the estimator run
        on the particle's state, seeded per step so equal states agree.
    """
    if M < 2:
        raise ValueError("the filter needs M >= 2 particles")
    net = params.network
    if isinstance(initial, TrafficState):
        states = [initial] * M
    else:
        states = list(initial)
        if len(states) != M:
            raise ValueError("initial ensemble size differs from M")
    if observe is None:
        def observe(state, k):
            return observe_xi(state, net, seed=seed * 1_000_003 + k)

    ens = ParticleEnsemble.uniform(states, weight_mode)
    out = []
    for k, x_obs in enumerate(observations, start=1):
        x_obs = np.asarray(x_obs, dtype=float)
        ens = replace(
            ens, states=[step(s, params, particle_rng(seed, k, i)) for i, s in enumerate(ens.states)]
        )
        pred = np.array([observe(s, k) for s in ens.states])
        sig = sigma if sigma is not None else max(0.1 * float(np.linalg.norm(x_obs)), 1e-3)
        ens = weight_update(ens, x_obs, pred, sig)
        w = ens.particle_weights()
        Ys, Cs = ens.Y.astype(float), ens.C
        if ens.weight_mode == "scalar":
            mean_Y = w @ Ys
            q = weighted_quantile(Ys, w, [0.05, 0.95])
        else:
            mean_Y = np.sum(ens.weights * Ys, axis=0)
            q = weighted_quantile(Ys, ens.weights, [0.05, 0.95])
        mean_C = w @ Cs
        e_before = ess(ens)
        resampled = resample_threshold > 0 and e_before < resample_threshold * M
        if resampled:
            ens = resample(ens, particle_rng(seed, k, M))
        out.append(FilterStep(k, mean_Y, q[0], q[1], mean_C, ess(ens), e_before, resampled))
    return FilterOutput(out)
