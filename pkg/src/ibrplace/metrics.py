"""Time-step-scaled L1 norms and placement comparison reports."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .case_io import CaseFile
from .control import ControlWeights, LqrController
from .dynamics import (
    CASE39_LOW_INERTIA,
    DisturbanceSpec,
    ReducedNetwork,
    SimConfig,
    StudySetup,
    Trajectory,
    build_network,
    simulate,
)
from .errors import IbrPlaceError


def scaled_l1(series, h: float, nominal=None) -> float:
    """``h * sum |x_t - x_0|`` over every step and every column of ``series``.

    ``series`` is ``(steps,)`` or ``(steps, signals)``; ``nominal`` replaces
    the first row as the reference.
    """
    x = np.asarray(series, float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"series must be 1-D or 2-D, got shape {x.shape}")
    if x.shape[0] == 0 or x.shape[1] == 0:
        return 0.0
    ref = x[0] if nominal is None else np.broadcast_to(np.asarray(nominal, float), x.shape[1:])
    return float(h * np.abs(x - ref).sum())


def combined_l1(series_list: Sequence, h: float) -> float:
    """Norm over several series that must share one time grid."""
    lengths = {np.asarray(s).shape[0] for s in series_list}
    if len(lengths) > 1:
        raise ValueError(f"series do not share a time grid: lengths {sorted(lengths)}")
    return sum(scaled_l1(s, h) for s in series_list)


@dataclass
class ScenarioMetrics:
    generator: int
    f_norm: float = 0.0  # Hz s
    p_gen_norm: float = 0.0  # p.u. s
    p_ibr_norm: float = 0.0
    error: str | None = None


@dataclass
class ResponseMetrics:
    label: str
    placement: tuple[int, ...]
    rows: list[ScenarioMetrics] = field(default_factory=list)

    def _total(self, attr: str) -> float:
        return float(sum(getattr(r, attr) for r in self.rows if r.error is None))

    @property
    def f_norm(self) -> float:
        return self._total("f_norm")

    @property
    def p_gen_norm(self) -> float:
        return self._total("p_gen_norm")

    @property
    def p_ibr_norm(self) -> float:
        return self._total("p_ibr_norm")

    @property
    def failed(self) -> list[ScenarioMetrics]:
        return [r for r in self.rows if r.error is not None]


def trajectory_metrics(traj: Trajectory, h: float, base_frequency: float = 60.0):
    """``(f, P_gen, P_ibr)`` norms; frequency in Hz, powers in p.u."""
    return (
        scaled_l1(base_frequency * traj.omega, h),
        scaled_l1(traj.p_elec, h),
        scaled_l1(traj.p_ibr, h),
    )


def _controller_factory(control: str, weights: ControlWeights) -> Callable:
    if control == "lqr":
        return lambda: LqrController(weights)
    if control == "none":
        return lambda: None
    raise ValueError(f"unknown controller {control!r}")


def sweep(
    net: ReducedNetwork,
    cfg: SimConfig = SimConfig(),
    fraction_lost: float = 0.6,
    window: tuple[float, float] = (0.5, 5.0),
    control: str = "lqr",
    weights: ControlWeights = ControlWeights(),
    workers: int = 1,
) -> list[ScenarioMetrics]:
    """Disturb each synchronous generator in turn and score the response."""
    make = _controller_factory(control, weights)

    def one(gen: int) -> ScenarioMetrics:
        dist = DisturbanceSpec(gen, fraction_lost, window[0], window[1])
        try:
            traj = simulate(net, dist, make(), cfg)
        except IbrPlaceError as exc:
            return ScenarioMetrics(gen, error=str(exc))
        return ScenarioMetrics(gen, *trajectory_metrics(traj, cfg.h, cfg.base_frequency))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, net.gen_numbers))
    return [one(g) for g in net.gen_numbers]


def evaluate_placements(
    case: CaseFile,
    placements: dict[str, Sequence[int]] | Sequence[Sequence[int]],
    cfg: SimConfig = SimConfig(),
    setup: StudySetup = CASE39_LOW_INERTIA,
    fraction_lost: float = 0.6,
    window: tuple[float, float] = (0.5, 5.0),
    control: str = "lqr",
    weights: ControlWeights = ControlWeights(),
    workers: int = 1,
) -> list[ResponseMetrics]:
    """Full disturbance sweep for every placement, in the order given."""
    if not isinstance(placements, dict):
        placements = {" ".join(map(str, p)): p for p in placements}
    out = []
    for label, buses in placements.items():
        buses = tuple(int(b) for b in buses)
        net = build_network(case, buses, setup)
        rows = sweep(net, cfg, fraction_lost, window, control, weights, workers)
        out.append(ResponseMetrics(label, buses, rows))
    return out


_COLS = ("f (Hz)", "P_gen (pu)", "P_ibr (pu)")


def render_report_text(results: Sequence[ResponseMetrics]) -> str:
    """One block of three columns per placement, one row per disturbed generator."""
    if not results:
        return ""
    width = 11
    head1 = f"{'':<10}"
    head2 = f"{'Disturbed':<10}"
    for res in results:
        title = f"{res.label} ({', '.join(map(str, res.placement))})"
        head1 += " | " + title[: 3 * width + 2].center(3 * width + 2)
        head2 += " | " + " ".join(f"{c:>{width}}" for c in _COLS)
    lines = [head1, head2, "-" * len(head2)]
    gens = [r.generator for r in results[0].rows]
    for k, gen in enumerate(gens):
        line = f"{'Gen ' + str(gen):<10}"
        for res in results:
            row = res.rows[k]
            if row.error:
                cells = [f"{'failed':>{width}}"] * 3
            else:
                cells = [f"{v:>{width}.2f}" for v in (row.f_norm, row.p_gen_norm, row.p_ibr_norm)]
            line += " | " + " ".join(cells)
        lines.append(line)
    lines.append("-" * len(head2))
    line = f"{'Total':<10}"
    for res in results:
        line += " | " + " ".join(
            f"{v:>{width}.2f}" for v in (res.f_norm, res.p_gen_norm, res.p_ibr_norm)
        )
    lines.append(line)
    for res in results:
        for row in res.failed:
            lines.append(f"{res.label}: Gen {row.generator} failed: {row.error}")
    return "\n".join(lines)


def render_report_csv(results: Sequence[ResponseMetrics]) -> str:
    """Columns: placement, buses, disturbed, f_norm_hz, p_gen_norm_pu, p_ibr_norm_pu, error."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["placement", "buses", "disturbed", "f_norm_hz", "p_gen_norm_pu", "p_ibr_norm_pu", "error"])
    for res in results:
        buses = " ".join(map(str, res.placement))
        for row in res.rows:
            w.writerow([res.label, buses, f"gen{row.generator}", repr(row.f_norm),
                        repr(row.p_gen_norm), repr(row.p_ibr_norm), row.error or ""])
        w.writerow([res.label, buses, "total", repr(res.f_norm), repr(res.p_gen_norm),
                    repr(res.p_ibr_norm), ""])
    return buf.getvalue()
