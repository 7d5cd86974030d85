"""IBR placement: greedy selection and exhaustive search over k-subsets."""

from __future__ import annotations

import csv
import io
import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .case_io import CaseFile, to_power_graph
from .errors import PlacementError
from .graph import build_laplacian, pseudo_inverse
from .resistance import ResistanceMatrix, resistance_matrix, set_resistance

DEFAULT_BUDGET = 10**9
TIE_TOL = 1e-12


@dataclass
class PlacementResult:
    selected: list[int]  # labels, in selection order
    objective_trace: list[float]
    elapsed: float
    method: str
    indices: list[int] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def case_resistance(
    case: CaseFile, weight_model: str = "magnitude", labels: str = "id"
) -> ResistanceMatrix:
    """Resistance matrix of a case's branch graph.

    ``labels="position"`` reports nodes by 1-based row order in the bus
    table instead of by bus id.
    """
    g = to_power_graph(case, weight_model)
    f = pseudo_inverse(build_laplacian(g))
    if labels == "id":
        names = g.nodes
    elif labels == "position":
        names = list(range(1, g.n + 1))
    else:
        raise ValueError(f"unknown label mode {labels!r}")
    return resistance_matrix(f, names)


def _check_k(rm: ResistanceMatrix, k: int) -> None:
    if not 1 <= k <= rm.n:
        raise PlacementError(f"k must be in [1, {rm.n}], got {k}")


def _better(value: float, best: float) -> bool:
    return value < best - TIE_TOL * max(1.0, abs(best))


def greedy_place(rm: ResistanceMatrix, k: int) -> PlacementResult:
    """Add, one at a time, the node that most lowers the set objective.

    Ties (within a relative 1e-12) go to the lowest label.
    """
    _check_k(rm, k)
    t0 = time.perf_counter()
    R = rm.r
    n = rm.n
    labels = np.asarray(rm.labels)
    nearest = np.full(n, np.inf)
    outside = np.ones(n, dtype=bool)
    chosen: list[int] = []
    for _ in range(k):
        M = np.minimum(nearest[None, :], R) if chosen else R
        totals = M[:, outside].sum(axis=1) - np.where(outside, np.diag(M), 0.0)
        totals[~outside] = np.inf
        best = totals.min()
        ties = np.flatnonzero(totals <= best + TIE_TOL * max(1.0, abs(best)))
        pick = int(ties[np.argmin(labels[ties])])
        chosen.append(pick)
        outside[pick] = False
        nearest = np.minimum(nearest, R[pick])
    elapsed = time.perf_counter() - t0
    trace = [set_resistance(rm, chosen[: m + 1]) for m in range(k)]
    return PlacementResult([rm.labels[i] for i in chosen], trace, elapsed, "greedy", chosen)


@njit(cache=True, nogil=True)
def _scan_block(R, k, first_lo, first_hi, rel_tol):
    """Best k-subset whose smallest element lies in [first_lo, first_hi).

    Subsets are visited in lexicographic order and only a strictly better
    value (beyond the relative tolerance) replaces the incumbent.
    """
    n = R.shape[0]
    best = np.inf
    best_combo = np.full(k, -1, np.int64)
    combo = np.zeros(k, np.int64)
    mins = np.empty((k, n))
    inset = np.zeros(n, np.bool_)

    if k == 1:
        for c in range(first_lo, first_hi):
            s = 0.0
            for j in range(n):
                if j != c:
                    s += R[c, j]
            if best_combo[0] < 0 or s < best - rel_tol * max(1.0, abs(best)):
                best = s
                best_combo[0] = c
        return best, best_combo

    for first in range(first_lo, first_hi):
        if first > n - k:
            break
        combo[0] = first
        inset[first] = True
        for j in range(n):
            mins[0, j] = R[first, j]
        pos = 1
        combo[1] = first
        while pos >= 1:
            if pos == k - 1:
                prev = combo[k - 2]
                for c in range(prev + 1, n):
                    s = 0.0
                    for j in range(n):
                        if inset[j] or j == c:
                            continue
                        a = mins[k - 2, j]
                        b = R[c, j]
                        s += a if a < b else b
                    if best_combo[0] < 0 or s < best - rel_tol * max(1.0, abs(best)):
                        best = s
                        for q in range(k - 1):
                            best_combo[q] = combo[q]
                        best_combo[k - 1] = c
                pos -= 1
                continue
            if combo[pos] > combo[pos - 1]:
                inset[combo[pos]] = False
            nxt = combo[pos] + 1 if combo[pos] > combo[pos - 1] else combo[pos - 1] + 1
            if nxt > n - (k - pos):
                combo[pos] = combo[pos - 1]
                pos -= 1
                continue
            combo[pos] = nxt
            inset[nxt] = True
            for j in range(n):
                a = mins[pos - 1, j]
                b = R[nxt, j]
                mins[pos, j] = a if a < b else b
            pos += 1
            if pos < k - 1:
                combo[pos] = combo[pos - 1]
        inset[first] = False
    return best, best_combo


def _blocks(n: int, k: int, parts: int) -> list[tuple[int, int]]:
    """Split the first-element range into about ``parts`` runs of similar work."""
    if parts <= 1:
        return [(0, n - k + 1)]
    firsts = range(n - k + 1)
    work = [math.comb(n - 1 - f, k - 1) for f in firsts]
    target = sum(work) / parts
    out, lo, acc = [], 0, 0
    for f, w in zip(firsts, work):
        acc += w
        if acc >= target:
            out.append((lo, f + 1))
            lo, acc = f + 1, 0
    if lo < n - k + 1:
        out.append((lo, n - k + 1))
    return out


def exhaustive_place(
    rm: ResistanceMatrix,
    k: int,
    budget: int = DEFAULT_BUDGET,
    workers: int = 1,
) -> PlacementResult:
    """Global minimiser of the set objective over all k-subsets.

    The search space is split by smallest element into independent blocks
    that may run on ``workers`` threads; blocks are merged in order with the
    same tie rule, so the answer does not depend on ``workers``.  Ties go
    to the lexicographically smallest label set.
    """
    _check_k(rm, k)
    count = math.comb(rm.n, k)
    if count > budget:
        raise PlacementError(
            f"exhaustive search needs C({rm.n},{k}) = {count} subsets, budget is {budget}"
        )
    t0 = time.perf_counter()
    order = np.argsort(np.asarray(rm.labels), kind="stable")
    if np.array_equal(order, np.arange(rm.n)):
        R = np.ascontiguousarray(rm.r)
    else:
        R = np.ascontiguousarray(rm.r[np.ix_(order, order)])
    n = rm.n
    if k == n:
        blocks = [(float(0.0), np.arange(n))]
    else:
        bounds = _blocks(n, k, 1 if workers == 1 else 8 * workers)

        def run(b):
            return _scan_block(R, k, b[0], b[1], TIE_TOL)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                blocks = list(pool.map(run, bounds))
        else:
            blocks = [run(b) for b in bounds]
    best, best_combo = None, None
    for value, combo in blocks:
        if combo[0] < 0:
            continue
        if best is None or _better(value, best):
            best, best_combo = value, combo
    idx = [int(order[c]) for c in best_combo]
    elapsed = time.perf_counter() - t0
    labels = sorted(rm.labels[i] for i in idx)
    idx = [rm.index_of(lab) for lab in labels]
    return PlacementResult(labels, [set_resistance(rm, idx)], elapsed, "exhaustive", idx)


def rank_placements(
    rm: ResistanceMatrix, k: int, top: int = 2, budget: int = 10**7
) -> list[tuple[tuple[int, ...], float]]:
    """The ``top`` best k-subsets as ``(labels, objective)``, best first.

    Used to find runner-up placements; intended for small searches.
    """
    _check_k(rm, k)
    count = math.comb(rm.n, k)
    if count > budget:
        raise PlacementError(f"ranking needs C({rm.n},{k}) = {count} subsets, budget is {budget}")
    scored = []
    for combo in itertools.combinations(range(rm.n), k):
        scored.append((set_resistance(rm, combo), tuple(sorted(rm.labels[i] for i in combo))))
    scored.sort()
    return [(labels, value) for value, labels in scored[:top]]


@dataclass
class ComparisonRow:
    k: int
    greedy: PlacementResult
    exhaustive: PlacementResult

    @property
    def gap(self) -> float:
        g, o = self.greedy.objective, self.exhaustive.objective
        if o == 0:
            return 0.0 if g == 0 else math.inf
        return (g - o) / abs(o)


@dataclass
class ComparisonReport:
    rows: list[ComparisonRow]

    def render_text(self) -> str:
        head = f"{'k':>3}  {'method':<10}  {'buses':<28}  {'objective':>14}  {'time (s)':>9}  {'gap':>8}"
        out = [head, "-" * len(head)]
        for row in self.rows:
            for res in (row.exhaustive, row.greedy):
                buses = ", ".join(str(b) for b in res.selected)
                gap = f"{row.gap:8.2e}" if res.method == "greedy" else ""
                out.append(
                    f"{row.k:>3}  {res.method:<10}  {buses:<28}  {res.objective:14.8f}  "
                    f"{res.elapsed:9.2f}  {gap:>8}"
                )
        return "\n".join(out)

    def render_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "method", "buses", "objective", "seconds"])
        for row in self.rows:
            for res in (row.greedy, row.exhaustive):
                w.writerow(
                    [row.k, res.method, " ".join(str(b) for b in res.selected),
                     repr(res.objective), f"{res.elapsed:.2f}"]
                )
        return buf.getvalue()


def compare_methods(
    rm: ResistanceMatrix,
    k_values: Sequence[int],
    budget: int = DEFAULT_BUDGET,
    workers: int = 1,
) -> ComparisonReport:
    ks = list(k_values)
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise PlacementError(f"k values must be strictly ascending, got {ks}")
    for k in ks:
        _check_k(rm, k)
        if math.comb(rm.n, k) > budget:
            raise PlacementError(
                f"exhaustive search needs C({rm.n},{k}) = {math.comb(rm.n, k)} subsets, "
                f"budget is {budget}"
            )
    rows = [
        ComparisonRow(k, greedy_place(rm, k), exhaustive_place(rm, k, budget, workers))
        for k in ks
    ]
    return ComparisonReport(rows)


def random_placement(
    labels: Sequence[int], k: int, seed: int, exclude: Sequence[int] = ()
) -> list[int]:
    """``k`` distinct labels drawn with a seeded generator, skipping ``exclude``."""
    pool = sorted(set(labels) - set(exclude))
    if not 1 <= k <= len(pool):
        raise PlacementError(f"cannot draw {k} buses from {len(pool)} candidates")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), size=k, replace=False)
    return sorted(pool[int(i)] for i in picks)
