"""Temporal support masks for delay-structured controller subspaces.

A strongly connected communication graph pins the controller's block
support at lag t to the support of the (t-1)th adjacency power, with all
lags beyond the graph delay unconstrained.  Everything here is a binary
coordinate mask: the constrained head of such a subspace, its orthogonal
complement, the per-link increments, and the structural certificates that
make the model-matching problem convex on the designed graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .commgraph import Graph, base_graph, graph_delay, power_supports, INFINITE
from .firmath import FirTM
from .sysmodel import Partition, PlantModel

__all__ = [
    "TemporalMask",
    "LinkSubspace",
    "QiCertificate",
    "subspace_masks",
    "perp_masks",
    "link_subspace",
    "qi_delay_check",
    "qi_product_check",
    "project",
]


@dataclass(frozen=True, eq=False)
class TemporalMask:
    """Per-lag binary support masks at block and entry granularity.

    ``block_masks`` has shape (d, n, n) for lags 1..d; ``entry_masks`` is the
    same family inflated to controller coordinates (d, p2, q2).
    """

    block_masks: np.ndarray
    entry_masks: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.block_masks, dtype=bool)
        e = np.asarray(self.entry_masks, dtype=bool)
        if b.ndim != 3 or e.ndim != 3 or b.shape[0] != e.shape[0]:
            raise ValueError("mask arrays must be (d, ., .) with matching horizon")
        object.__setattr__(self, "block_masks", b)
        object.__setattr__(self, "entry_masks", e)

    @property
    def d(self) -> int:
        return self.block_masks.shape[0]

    @classmethod
    def from_blocks(cls, block_masks: np.ndarray, part: Partition) -> "TemporalMask":
        block_masks = np.asarray(block_masks, dtype=bool)
        entries = np.stack([part.inflate(m).astype(bool) for m in block_masks], axis=0) \
            if block_masks.shape[0] else np.zeros((0, sum(part.u_sizes), sum(part.y_sizes)), bool)
        return cls(block_masks, entries)

    def to_doc(self) -> dict:
        return {"d": self.d, "blockMasks": self.block_masks.astype(int).tolist()}


@dataclass(frozen=True, eq=False)
class LinkSubspace:
    """Controller coordinates unlocked solely by one additional link."""

    edge: tuple[int, int]
    mask: TemporalMask

    @property
    def is_empty(self) -> bool:
        return not bool(self.mask.block_masks.any())


@dataclass
class QiCertificate:
    ok: bool
    violations: list[tuple]


def subspace_masks(g: Graph, part: Partition) -> TemporalMask:
    """Constrained head of the subspace generated by a strongly connected graph.

    Lag-t blocks follow the support of the (t-1)th adjacency power for
    t = 1..d; lags beyond d are unconstrained by convention and carried by
    the caller's free-tail index, not by masks.
    """
    d = graph_delay(g)
    if d == INFINITE:
        raise ValueError("graph delay is infinite; the graph is not strongly connected")
    d = int(d)
    return TemporalMask.from_blocks(power_supports(g, d)[:d], part)


def perp_masks(g: Graph, part: Partition) -> TemporalMask:
    """Entrywise complement of :func:`subspace_masks` over lags 1..d."""
    base = subspace_masks(g, part)
    return TemporalMask(~base.block_masks, ~base.entry_masks)


def link_subspace(base: Graph, edge: tuple[int, int], part: Partition) -> LinkSubspace:
    """Coordinates newly reachable when ``edge`` is added to the base graph.

    Intersection of the base complement with the augmented graph's subspace
    over the base horizon; empty when the link shortens no path.
    """
    i, j = int(edge[0]), int(edge[1])
    if base.adj[i, j]:
        raise ValueError(f"edge ({i},{j}) already present in the base graph")
    d = graph_delay(base)
    if d == INFINITE:
        raise ValueError("base graph delay is infinite")
    d = int(d)
    adj2 = base.adj.copy()
    adj2[i, j] = 1
    sup_base = power_supports(base, d)[:d]
    sup_aug = power_supports(Graph(base.n, adj2), d)[:d]
    blocks = ~sup_base & sup_aug
    return LinkSubspace((i, j), TemporalMask.from_blocks(blocks, part))


def qi_delay_check(c: np.ndarray, p: np.ndarray) -> QiCertificate:
    """Delay certificate: communication no slower than propagation plus one,
    and shortest-path consistency of the communication delays themselves.

    Violations are reported as ("delay", i, j, c_ij, p_ij + 1) pairs and
    ("triangle", k, i, j, c_ki + c_ij, c_kj) triples.
    """
    c = np.asarray(c, dtype=float)
    p = np.asarray(p, dtype=float)
    if c.shape != p.shape or c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("delay matrices must be square and of equal size")
    if not np.all(np.isfinite(c)):
        raise ValueError("communication delays must be finite (strongly connected graph)")
    n = c.shape[0]
    violations: list[tuple] = []
    for i in range(n):
        for j in range(n):
            if c[i, j] > p[i, j] + 1.0:
                violations.append(("delay", i, j, c[i, j], p[i, j] + 1.0))
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if c[k, i] + c[i, j] < c[k, j]:
                    violations.append(("triangle", k, i, j, c[k, i] + c[i, j], c[k, j]))
    return QiCertificate(ok=not violations, violations=violations)


def qi_product_check(
    g: Graph,
    plant: PlantModel,
    part: Partition,
    horizon: int | None = None,
    tol_zero: float = 1e-9,
) -> bool:
    """Structural closure of the mask family under controller-plant-controller
    products.

    For every pair of constrained lags a, b and every structural plant lag,
    the boolean product of the corresponding supports must land inside the
    mask at the summed lag whenever that lag is still constrained.  Support
    arithmetic only, so coefficient cancellation cannot mask a violation.
    """
    d = graph_delay(g)
    if d == INFINITE:
        raise ValueError("graph delay is infinite")
    d = int(d)
    if horizon is not None:
        d = min(d, int(horizon))
    if d == 0:
        return True
    plant_topo = base_graph(plant, part, tol_zero)
    sup_g = power_supports(g, d)
    sup_p = power_supports(plant_topo, d)
    for a in range(1, d + 1):
        for b in range(1, d + 1):
            for tau in range(1, d + 1 - a - b):
                t = a + tau + b
                prod = sup_g[a - 1].astype(np.uint8) @ sup_p[tau - 1].astype(np.uint8)
                prod = (prod @ sup_g[b - 1].astype(np.uint8)) > 0
                if np.any(prod & ~sup_g[t - 1]):
                    return False
    return True


def project(X: FirTM, m: TemporalMask, free_tail_from: int) -> FirTM:
    """Orthogonal projection of an FIR matrix onto mask plus free tail.

    Coefficients at lags up to the mask horizon are zeroed outside the entry
    masks, lags at or beyond ``free_tail_from`` pass through unchanged, and
    any gap between the two is zeroed.
    """
    if free_tail_from <= m.d:
        raise ValueError(f"free tail start {free_tail_from} must exceed mask horizon {m.d}")
    if X.t_max < m.d:
        raise ValueError(f"FIR horizon {X.t_max} shorter than mask horizon {m.d}")
    out = X.coeffs.copy()
    for idx in range(out.shape[0]):
        t = X.t_min + idx
        if t < 1:
            out[idx] = 0.0  # masks describe strictly proper subspaces
        elif t <= m.d:
            out[idx] = np.where(m.entry_masks[t - 1], out[idx], 0.0)
        elif t < free_tail_from:
            out[idx] = 0.0
    return FirTM(X.t_min, out)
