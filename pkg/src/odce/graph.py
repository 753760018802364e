"""Complete directed networks, shortest-path routing and arc loads.

Arc indexing convention (used by every file format in this package):
the ordered pair ``(i, j)``, ``i != j``, maps to ``i*(p-1) + (j if j < i else j-1)``,
i.e. row-major over node pairs with the diagonal skipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "InvalidArcError",
    "RoutingError",
    "Network",
    "PathTable",
    "arc_index",
    "shortest_paths",
    "routing_matrix",
    "arc_loads",
    "reduce_system",
    "ReducedSystem",
    "RANK_RTOL",
]

RANK_RTOL = 1e-9


class InvalidArcError(ValueError):
    pass


class RoutingError(RuntimeError):
    """Raised when a path table cannot be unrolled into a simple path."""


@dataclass(frozen=True)
class Network:
    """Complete directed graph on ``p`` nodes."""

    p: int

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 2:
            raise ValueError(f"a network needs p >= 2 nodes, got {self.p!r}")

    @property
    def n(self) -> int:
        return self.p * self.p - self.p

    def arc_index(self, i: int, j: int) -> int:
        return arc_index(self, i, j)

    def arc_nodes(self, k: int) -> tuple[int, int]:
        """Inverse of :func:`arc_index`: the ``(tail, head)`` of arc ``k``."""
        if not 0 <= k < self.n:
            raise InvalidArcError(f"arc {k} out of range for n={self.n}")
        i, r = divmod(int(k), self.p - 1)
        return i, (r if r < i else r + 1)

    def arcs(self) -> list[tuple[int, int]]:
        return [self.arc_nodes(k) for k in range(self.n)]

    def tails_heads(self) -> tuple[np.ndarray, np.ndarray]:
        ends = np.array(self.arcs(), dtype=int)
        return ends[:, 0], ends[:, 1]

    def successors(self, k: int) -> list[int]:
        """Arcs leaving the head of arc ``k`` (``head(k) == tail(l)``)."""
        _, h = self.arc_nodes(k)
        return [arc_index(self, h, m) for m in range(self.p) if m != h]

    def cost_matrix(self, costs) -> np.ndarray:
        """Lay a per-arc vector out as a ``p x p`` matrix with zero diagonal."""
        costs = np.asarray(costs, dtype=float)
        if costs.shape != (self.n,):
            raise ValueError(f"expected {self.n} arc values, got shape {costs.shape}")
        d = np.zeros((self.p, self.p))
        tails, heads = self.tails_heads()
        d[tails, heads] = costs
        return d


def arc_index(network: Network, i: int, j: int) -> int:
    p = network.p
    if i == j or not (0 <= i < p and 0 <= j < p):
        raise InvalidArcError(f"({i}, {j}) is not an arc of a {p}-node network")
    return i * (p - 1) + (j if j < i else j - 1)


@dataclass(frozen=True)
class PathTable:
    """All-pairs shortest distances with intermediate-node back-pointers.

    ``via[i, k]`` is the intermediate node splitting the shortest ``i -> k``
    path, or ``-1`` when the path is the direct arc.
    """

    dist: np.ndarray
    via: np.ndarray

    @property
    def p(self) -> int:
        return self.dist.shape[0]

    def path_nodes(self, i: int, k: int) -> list[int]:
        """Node sequence of the reconstructed ``i -> k`` shortest path."""
        if i == k:
            return [i]
        p = self.p
        nodes = [i]
        # explicit stack of pending (from, to) segments, leftmost on top
        stack = [(i, k)]
        steps = 0
        while stack:
            a, b = stack.pop()
            steps += 1
            if steps > 2 * p * p:
                raise RoutingError(f"cyclic back-pointers while unrolling {i}->{k}")
            j = int(self.via[a, b])
            if j < 0:
                nodes.append(b)
            else:
                stack.append((j, b))
                stack.append((a, j))
        if len(set(nodes)) != len(nodes):
            raise RoutingError(f"reconstructed {i}->{k} path revisits a node: {nodes}")
        return nodes

    def path_arcs(self, network: Network, i: int, k: int) -> list[int]:
        nodes = self.path_nodes(i, k)
        return [arc_index(network, a, b) for a, b in zip(nodes[:-1], nodes[1:])]

    def to_dict(self) -> dict:
        return {
            "dist": self.dist.tolist(),
            "via": [[None if v < 0 else int(v) for v in row] for row in self.via],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PathTable":
        via = np.array([[-1 if v is None else v for v in row] for row in data["via"]], dtype=int)
        return cls(np.asarray(data["dist"], dtype=float), via)


def shortest_paths(network: Network, costs) -> PathTable:
    """Floyd-Warshall relaxation over every intermediate node.

    A distance is replaced only on strict improvement, so on ties the path
    found first (lowest intermediate node, or the direct arc) is kept.
    """
    costs = np.asarray(costs, dtype=float)
    if np.any(costs < 0) or not np.all(np.isfinite(costs)):
        raise ValueError("arc costs must be finite and non-negative")
    d = network.cost_matrix(costs)
    via = np.full((network.p, network.p), -1, dtype=int)
    for j in range(network.p):
        cand = d[:, j, None] + d[None, j, :]
        better = cand < d
        d = np.where(better, cand, d)
        via[better] = j
    return PathTable(d, via)


def routing_matrix(network: Network, table: PathTable) -> np.ndarray:
    """Binary arc x OD matrix; column ``j`` marks the arcs of OD ``j``'s path."""
    n = network.n
    A = np.zeros((n, n), dtype=np.int8)
    for col, (i, k) in enumerate(network.arcs()):
        A[table.path_arcs(network, i, k), col] = 1
    return A


def arc_loads(A, X) -> np.ndarray:
    """Arc loads ``Y = A @ X``; ``X`` may be a vector or an ``n x N`` batch."""
    A = np.asarray(A)
    X = np.asarray(X, dtype=float)
    if A.shape[1] != X.shape[0]:
        raise ValueError(f"routing matrix {A.shape} does not match OD vector {X.shape}")
    return A.astype(float) @ X


@dataclass(frozen=True)
class ReducedSystem:
    A: np.ndarray
    Y: np.ndarray
    kept_rows: np.ndarray
    rank: int
    nullity: int


def reduce_system(A, Y, rtol: float = RANK_RTOL) -> ReducedSystem:
    """Drop the all-zero rows of ``A`` (and matching loads) and report the rank."""
    A = np.asarray(A)
    Y = np.asarray(Y, dtype=float)
    keep = np.flatnonzero(np.any(A != 0, axis=1))
    Ar = A[keep]
    if Ar.size == 0:
        rank = 0
    else:
        sv = np.linalg.svd(Ar.astype(float), compute_uv=False)
        rank = int(np.sum(sv > rtol * sv[0])) if sv[0] > 0 else 0
    return ReducedSystem(Ar, Y[keep], keep, rank, A.shape[1] - rank)
