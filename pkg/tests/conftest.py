"""Shared fixtures and independent reference computations.

The helpers here recompute everything directly from state-space matrices
with plain loops and dense linear algebra, so they never share a code path
with the package's FFT/CG/prox machinery they are used to check.
"""

from __future__ import annotations

import numpy as np
import pytest

from commlink import EdgeSet, ObjectiveOracle, base_graph, gen_chain_plant
from commlink.codesign import build_group_spec


# ---------------------------------------------------------------- fixtures

@pytest.fixture(scope="session")
def chain3():
    plant, part = gen_chain_plant(3, 0.2, 7)
    base = base_graph(plant, part)
    edges = EdgeSet(((0, 2), (2, 0)))
    return plant, part, base, edges


@pytest.fixture(scope="session")
def chain3_oracle(chain3):
    plant, _, _, _ = chain3
    return ObjectiveOracle(plant, N=10)


@pytest.fixture(scope="session")
def chain3_spec(chain3):
    _, part, base, edges = chain3
    return build_group_spec(base, edges, part, 10)


# ------------------------------------------------- independent references

def ref_markov(plant, block: str, t: int) -> np.ndarray:
    """Markov coefficient by explicit matrix powers."""
    C = plant.C1 if block[0] == "1" else plant.C2
    B = plant.B1 if block[1] == "1" else plant.B2
    if t == 0:
        if block == "12":
            return plant.D12.copy()
        if block == "21":
            return plant.D21.copy()
        return np.zeros((C.shape[0], B.shape[1]))
    return C @ np.linalg.matrix_power(plant.A, t - 1) @ B


def ref_markov_table(plant, block: str, t_hi: int) -> np.ndarray:
    C = plant.C1 if block[0] == "1" else plant.C2
    B = plant.B1 if block[1] == "1" else plant.B2
    out = np.zeros((t_hi + 1, C.shape[0], B.shape[1]))
    if block == "12":
        out[0] = plant.D12
    elif block == "21":
        out[0] = plant.D21
    x = B.copy()
    for t in range(1, t_hi + 1):
        out[t] = C @ x
        x = plant.A @ x
    return out


def ref_closed_loop(plant, r_arr: np.ndarray, t_hi: int) -> np.ndarray:
    """Closed-loop coefficients by direct time-domain convolution."""
    N = r_arr.shape[0]
    g11 = ref_markov_table(plant, "11", t_hi)
    g12 = ref_markov_table(plant, "12", t_hi)
    g21 = ref_markov_table(plant, "21", t_hi)
    u = np.zeros((t_hi + 1, plant.p2, plant.p1))
    for b in range(1, min(N, t_hi) + 1):
        u[b:] += np.einsum("ij,tjk->tik", r_arr[b - 1], g21[: t_hi + 1 - b])
    out = g11.copy()
    for a in range(t_hi + 1):
        out[a:] -= np.einsum("ij,tjk->tik", g12[a], u[: t_hi + 1 - a])
    return out


def ref_objective(plant, r_arr: np.ndarray, t_hi: int) -> float:
    return float(np.sum(ref_closed_loop(plant, r_arr, t_hi) ** 2))


def dense_linear_map(plant, N: int, t_hi: int) -> np.ndarray:
    """Dense block-Toeplitz matrix of vec(R) -> vec(G12*R*G21 head).

    Column for parameter entry (b, i, j) holds the lag-shifted direct
    convolution of column i of G12 with row j of G21 (np.convolve, no FFT).
    """
    p2, q2, q1, p1 = plant.p2, plant.q2, plant.q1, plant.p1
    g12 = ref_markov_table(plant, "12", t_hi)
    g21 = ref_markov_table(plant, "21", t_hi)
    pair = np.zeros((p2, q2, t_hi + 1, q1, p1))
    for i in range(p2):
        for j in range(q2):
            for r in range(q1):
                for s in range(p1):
                    pair[i, j, :, r, s] = np.convolve(g12[:, r, i], g21[:, j, s])[: t_hi + 1]
    cols = []
    for b in range(1, N + 1):
        for i in range(p2):
            for j in range(q2):
                seq = np.zeros((t_hi + 1, q1, p1))
                seq[b:] = pair[i, j, : t_hi + 1 - b]
                cols.append(seq.ravel())
    return np.array(cols).T


def floyd_warshall(adj: np.ndarray) -> np.ndarray:
    """All-pairs shortest paths; entry (i, j) is the distance from j to i."""
    n = adj.shape[0]
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0.0)
    dist[adj.astype(bool)] = np.minimum(dist[adj.astype(bool)], 1.0)
    for k in range(n):
        for i in range(n):
            for j in range(n):
                # path j -> k -> i
                if dist[i, k] + dist[k, j] < dist[i, j]:
                    dist[i, j] = dist[i, k] + dist[k, j]
    return dist


def random_primitive_graph(rng: np.random.Generator, n: int):
    """Random digraph with self-loops, guaranteed strongly connected."""
    from commlink import Graph

    adj = (rng.random((n, n)) < 0.35).astype(int)
    np.fill_diagonal(adj, 1)
    order = rng.permutation(n)
    for a, b in zip(order, np.roll(order, -1)):
        adj[b, a] = 1  # ring j -> i keeps it connected
    return Graph(n, adj)
