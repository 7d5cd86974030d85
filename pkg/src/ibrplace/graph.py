"""Weighted power-network graph, its Laplacian and Moore-Penrose inverse."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import GraphError


@dataclass(frozen=True)
class PowerGraph:
    """Undirected graph over ``n`` nodes labelled by ``nodes`` (bus ids).

    ``edges`` holds ``(i, j, weight)`` with 0-based node indices.  Weights
    must be positive unless ``allow_negative`` is set (signed susceptance
    model, where series capacitors contribute negative weight).
    """

    n: int
    nodes: list[int]
    edges: list[tuple[int, int, float]]
    allow_negative: bool = field(default=False, compare=False)

    def __post_init__(self):
        if len(self.nodes) != self.n:
            raise GraphError(f"{len(self.nodes)} labels for {self.n} nodes")
        for i, j, w in self.edges:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise GraphError(f"edge ({i}, {j}) out of range for n={self.n}")
            if i == j:
                raise GraphError(f"self loop at node {i}")
            if not np.isfinite(w) or w == 0 or (w < 0 and not self.allow_negative):
                raise GraphError(f"edge ({i}, {j}) has invalid weight {w}")
        if self.n > 1 and not self.is_connected():
            raise GraphError("graph is disconnected")

    def is_connected(self) -> bool:
        if self.n <= 1:
            return True
        if not self.edges:
            return False
        rows = [e[0] for e in self.edges]
        cols = [e[1] for e in self.edges]
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n, self.n))
        count, _ = connected_components(adj, directed=False)
        return count == 1

    def index_of(self, label: int) -> int:
        return self.nodes.index(label)


@dataclass(frozen=True)
class LaplacianFactor:
    laplacian: np.ndarray
    pinv: np.ndarray
    null_tolerance: float

    @property
    def n(self) -> int:
        return self.laplacian.shape[0]


def build_laplacian(g: PowerGraph) -> np.ndarray:
    """Dense ``L = D - A`` for the weighted graph."""
    L = np.zeros((g.n, g.n))
    for i, j, w in g.edges:
        L[i, j] -= w
        L[j, i] -= w
        L[i, i] += w
        L[j, j] += w
    return L


def pseudo_inverse(L: np.ndarray) -> LaplacianFactor:
    """Moore-Penrose inverse of a connected-graph Laplacian.

    Uses ``L+ = (L + J/n)^-1 - J/n`` which is exact when the null space of
    ``L`` is spanned by the all-ones vector.
    """
    L = np.asarray(L, dtype=float)
    n = L.shape[0]
    if L.shape != (n, n):
        raise GraphError(f"Laplacian must be square, got {L.shape}")
    gersh = float(np.max(np.abs(L).sum(axis=1))) if n else 0.0
    tol = 1e-9 * max(gersh, 1.0)
    if n == 1:
        return LaplacianFactor(L.copy(), np.zeros((1, 1)), tol)

    J = np.full((n, n), 1.0 / n)
    shifted = L + J
    try:
        lu_ok = np.linalg.cond(shifted) < 1e14
    except np.linalg.LinAlgError:
        lu_ok = False
    if not lu_ok:
        raise GraphError(_rank_message(L))
    inv = np.linalg.solve(shifted, np.eye(n))
    pinv = inv - J
    pinv = 0.5 * (pinv + pinv.T)

    # safety net: exactly one null direction
    if np.max(np.abs(L @ pinv @ L - L)) > 1e-6 * max(np.max(np.abs(L)), 1.0):
        raise GraphError(_rank_message(L))
    return LaplacianFactor(L, pinv, tol)


def _rank_message(L: np.ndarray) -> str:
    ev = np.linalg.eigvalsh(0.5 * (L + L.T))
    small = np.sort(np.abs(ev))[:2]
    return (
        "Laplacian rank deficient beyond one (disconnected graph?); "
        f"smallest eigenvalue magnitudes {small[0]:.3e}, {small[1]:.3e}"
    )
