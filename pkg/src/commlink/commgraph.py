"""Adjacency-matrix algebra for sub-controller communication graphs.

Graphs follow the convention adj[i][j] = 1 when there is a directed link
FROM sub-controller j TO sub-controller i, and the zeroth boolean power is
the identity, so every node reaches itself with delay 0.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

from .sysmodel import Partition, PlantModel

__all__ = [
    "Graph",
    "EdgeSet",
    "INFINITE",
    "comm_delays",
    "graph_delay",
    "base_graph",
    "max_graph",
    "is_physically_built",
    "enumerate_design_set",
    "propagation_delays",
    "power_supports",
]

#: Sentinel for unreachable pairs / unbounded graph delay.
INFINITE = math.inf


@dataclass(frozen=True, eq=False)
class Graph:
    """Binary adjacency matrix; entry (i, j) means a link from j to i."""

    n: int
    adj: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adj)
        if adj.shape != (self.n, self.n):
            raise ValueError(f"adjacency must be {self.n}x{self.n}, got {adj.shape}")
        if not np.isin(adj, (0, 1)).all():
            raise ValueError("adjacency entries must be 0 or 1")
        object.__setattr__(self, "adj", adj.astype(np.int8))
        if self.n < 1:
            raise ValueError("graph needs at least one node")

    @classmethod
    def from_doc(cls, doc: dict) -> "Graph":
        if not isinstance(doc, dict) or "n" not in doc or "adj" not in doc:
            raise ValueError('graph document: expected an object with "n" and "adj"')
        return cls(int(doc["n"]), np.array(doc["adj"]))

    def to_doc(self) -> dict:
        return {"n": self.n, "adj": self.adj.astype(int).tolist()}


@dataclass(frozen=True)
class EdgeSet:
    """Ordered candidate links; pair (i, j) is a link from j to i, 0-indexed."""

    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        object.__setattr__(self, "edges", edges)
        if len(set(edges)) != len(edges):
            raise ValueError("edge set contains duplicates")
        for i, j in edges:
            if i == j:
                raise ValueError(f"edge ({i},{j}): self-links are not candidate edges")

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)

    def check_against(self, base: Graph) -> None:
        for i, j in self.edges:
            if not (0 <= i < base.n and 0 <= j < base.n):
                raise ValueError(f"edge ({i},{j}) out of range for n={base.n}")
            if base.adj[i, j]:
                raise ValueError(f"edge ({i},{j}) already present in the base graph")

    @classmethod
    def from_doc(cls, doc: dict) -> "EdgeSet":
        if not isinstance(doc, dict) or "edges" not in doc:
            raise ValueError('edge document: expected an object with "edges"')
        return cls(tuple((int(e[0]), int(e[1])) for e in doc["edges"]))

    def to_doc(self) -> dict:
        return {"edges": [list(e) for e in self.edges]}


def comm_delays(g: Graph) -> np.ndarray:
    """Shortest-path delay matrix: entry (i, j) is the delay from j to i.

    Diagonal entries are 0 by the identity-power convention; unreachable
    pairs get ``INFINITE``.  One BFS per source column.
    """
    n = g.n
    out = np.full((n, n), INFINITE)
    # successors of u are the nodes v with adj[v][u] == 1
    succ = [np.flatnonzero(g.adj[:, u]) for u in range(n)]
    for j in range(n):
        out[j, j] = 0.0
        queue = deque([j])
        while queue:
            u = queue.popleft()
            for v in succ[u]:
                if out[v, j] == INFINITE:
                    out[v, j] = out[u, j] + 1.0
                    queue.append(v)
    return out


def _wielandt_bound(n: int) -> int:
    return n * n - 2 * n + 2


def power_supports(g: Graph, t_max: int) -> np.ndarray:
    """Boolean supports of adjacency powers 0..t_max, stacked (t_max+1, n, n)."""
    out = np.empty((t_max + 1, g.n, g.n), dtype=bool)
    cur = np.eye(g.n, dtype=bool)
    a = g.adj.astype(bool)
    for k in range(t_max + 1):
        out[k] = cur
        if k < t_max:
            cur = (cur.astype(np.uint8) @ a.astype(np.uint8)) > 0
    return out


def graph_delay(g: Graph) -> float:
    """Time after which every measurement has reached every sub-controller.

    Equals the largest finite shortest-path delay when the adjacency matrix
    is primitive, ``INFINITE`` otherwise; the single-node self-looped graph
    gets 0.  Finiteness is decided within the Wielandt bound n^2 - 2n + 2.
    """
    a = g.adj.astype(np.uint8)
    if g.n == 1:
        return 0.0 if g.adj[0, 0] else INFINITE
    cur = np.eye(g.n, dtype=bool)
    for k in range(1, _wielandt_bound(g.n) + 1):
        cur = (cur.astype(np.uint8) @ a) > 0
        if cur.all():
            # a full power at k >= 1 rules out zero columns, so it persists
            return float(k)
    return INFINITE


def base_graph(
    plant: PlantModel,
    part: Partition,
    tol_zero: float = 1e-9,
    state_partition: tuple[int, ...] | None = None,
) -> Graph:
    """Block support of A as an adjacency matrix (the sparsest safe graph).

    States are attributed to sub-systems by a contiguous equal split unless
    ``state_partition`` gives explicit block sizes.
    """
    part.check_plant(plant)
    n, s = part.n, plant.s
    if state_partition is None:
        if s % n != 0:
            raise ValueError(
                f"state dimension {s} not divisible by {n} sub-systems; "
                "pass an explicit state partition"
            )
        sizes = [s // n] * n
    else:
        sizes = [int(v) for v in state_partition]
        if len(sizes) != n or sum(sizes) != s:
            raise ValueError("state partition must have n blocks summing to the state dimension")
    off = np.concatenate([[0], np.cumsum(sizes)])
    adj = np.zeros((n, n), dtype=np.int8)
    for i in range(n):
        for j in range(n):
            blk = plant.A[off[i]:off[i + 1], off[j]:off[j + 1]]
            adj[i, j] = 1 if np.any(np.abs(blk) > tol_zero) else 0
    return Graph(n, adj)


def max_graph(base: Graph, edges: EdgeSet) -> Graph:
    """Base graph augmented with every candidate edge."""
    edges.check_against(base)
    adj = base.adj.copy()
    for i, j in edges:
        adj[i, j] = 1
    return Graph(base.n, adj)


def is_physically_built(g: Graph, gmax: Graph) -> bool:
    if g.n != gmax.n:
        raise ValueError("graphs must have the same number of nodes")
    return bool(np.all(g.adj <= gmax.adj))


def enumerate_design_set(base: Graph, edges: EdgeSet) -> list[tuple[int, Graph]]:
    """All 2^|edges| graphs between base and maximal, ordered by bitmask.

    Bit k of the mask selects ``edges[k]``; mask 0 is the base graph and the
    all-ones mask the maximal one.
    """
    edges.check_against(base)
    if len(edges) > 20:
        raise ValueError(f"design set guard: {len(edges)} edges exceed the 20-edge limit")
    out = []
    for mask in range(1 << len(edges)):
        adj = base.adj.copy()
        for k, (i, j) in enumerate(edges):
            if mask >> k & 1:
                adj[i, j] = 1
        out.append((mask, Graph(base.n, adj)))
    return out


def propagation_delays(
    plant: PlantModel,
    part: Partition,
    mode: str = "structural",
    tol_zero: float = 1e-9,
    horizon: int = 200,
) -> np.ndarray:
    """First lag at which control action j can show up in measurement i.

    Structural mode derives the delays from the block support of A (one more
    than the base-graph communication delay), a conservative lower bound on
    the true delay and therefore safe for the delay certificate.  Numerical
    mode scans Markov parameters of the 22 block up to ``horizon`` and can
    under-report through coefficient cancellation.
    """
    part.check_plant(plant)
    if mode == "structural":
        from .sysmodel import validate_plant

        rep = validate_plant(plant, part, tol_zero)
        if not (rep.b2_block_diag and rep.c2_block_diag):
            raise ValueError("structural propagation delays require block-diagonal B2 and C2")
        return comm_delays(base_graph(plant, part, tol_zero)) + 1.0
    if mode != "numerical":
        raise ValueError(f"mode must be 'structural' or 'numerical', got {mode!r}")

    n = part.n
    uo, yo = part.u_offsets, part.y_offsets
    out = np.full((n, n), INFINITE)
    x = plant.B2.copy()
    for t in range(1, horizon + 1):
        coef = plant.C2 @ x
        for i in range(n):
            for j in range(n):
                if out[i, j] == INFINITE:
                    blk = coef[yo[i]:yo[i + 1], uo[j]:uo[j + 1]]
                    if np.any(np.abs(blk) > tol_zero):
                        out[i, j] = float(t)
        if np.all(np.isfinite(out)):
            break
        x = plant.A @ x
    if not np.all(np.isfinite(out)):
        warnings.warn(
            f"numerical propagation delays truncated at horizon {horizon}; "
            "unresolved pairs reported as infinite",
            stacklevel=2,
        )
    return out
