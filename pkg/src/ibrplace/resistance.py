"""Resistance distances on a graph and the set objective used for placement."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .graph import LaplacianFactor


@dataclass(frozen=True)
class ResistanceMatrix:
    """Dense pairwise resistance distances.

    ``labels`` maps node index to the label reported to users (bus id by
    default).
    """

    n: int
    r: np.ndarray
    labels: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.labels:
            object.__setattr__(self, "labels", tuple(range(self.n)))

    def label_of(self, idx: int) -> int:
        return self.labels[idx]

    def index_of(self, label: int) -> int:
        return self.labels.index(label)


def _check(n: int, *idx: int) -> None:
    for i in idx:
        if not 0 <= i < n:
            raise IndexError(f"node index {i} out of range for n={n}")


def pairwise_resistance(f: LaplacianFactor, i: int, j: int) -> float:
    _check(f.n, i, j)
    if i == j:
        return 0.0
    P = f.pinv
    return float(P[i, i] - 2.0 * P[i, j] + P[j, j])


def node_resistance(f: LaplacianFactor, i: int) -> float:
    """Sum of resistance distances from node ``i`` to every node.

    Closed form ``n * L+_ii + tr(L+)``, valid because rows of ``L+`` sum to 0.
    """
    _check(f.n, i)
    return float(f.n * f.pinv[i, i] + np.trace(f.pinv))


def resistance_matrix(f: LaplacianFactor, labels: Sequence[int] = ()) -> ResistanceMatrix:
    P = f.pinv
    d = np.diag(P)
    r = d[:, None] + d[None, :] - 2.0 * P
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 0.0)
    return ResistanceMatrix(f.n, r, tuple(labels))


def set_resistance(rm: ResistanceMatrix, nodes: Iterable[int]) -> float:
    """Sum over nodes outside the set of the distance to the nearest set member."""
    idx = sorted(set(nodes))
    if not idx:
        raise ValueError("placement set must be non-empty")
    _check(rm.n, *idx)
    outside = np.ones(rm.n, dtype=bool)
    outside[idx] = False
    if not outside.any():
        return 0.0
    return float(rm.r[np.ix_(idx, outside)].min(axis=0).sum())
