"""Command-line interface: ``ibrplace {place,compare,simulate,evaluate}``.

Exit codes: 0 success, 1 usage error, 2 bad input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path


from .case_io import CaseFile, bundled_case_path, load_case
from .control import ControlWeights, LqrController
from .dynamics import (
    CASE39_LOW_INERTIA,
    DisturbanceSpec,
    SimConfig,
    StudySetup,
    build_network,
    simulate,
)
from .errors import (
    CaseSemanticError,
    CaseSyntaxError,
    ControlError,
    GraphError,
    PlacementError,
    SimulationError,
)
from .metrics import evaluate_placements, render_report_csv, render_report_text, trajectory_metrics
from .placement import (
    DEFAULT_BUDGET,
    case_resistance,
    compare_methods,
    exhaustive_place,
    greedy_place,
    random_placement,
    rank_placements,
)

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

SETUPS = {"none": StudySetup(), "case39-low-inertia": CASE39_LOW_INERTIA}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return v


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected bus numbers like '6,16', got {text!r}") from None


def _k_range(text: str) -> list[int]:
    try:
        if "-" in text:
            lo, hi = text.split("-", 1)
            lo, hi = int(lo), int(hi)
            if lo > hi:
                raise argparse.ArgumentTypeError(f"k range must be ascending, got {text!r}")
            ks = list(range(lo, hi + 1))
        else:
            ks = [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a range like '1-4' or '1,2,3', got {text!r}") from None
    if any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError("k values must be at least 1")
    return ks


def _window(text: str) -> tuple[float, float]:
    try:
        a, b = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'start,end' in seconds, got {text!r}") from None
    return a, b


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ibrplace", description="IBR placement and frequency-response studies.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def case_args(sp):
        sp.add_argument("--case", required=True,
                        help="MATPOWER case file, or the name of a bundled case (case39, case145, case300)")
        sp.add_argument("--dynamics", help="separate dynamics sidecar file")

    def graph_args(sp):
        sp.add_argument("--weight-model", choices=["magnitude", "signed"], default="magnitude")
        sp.add_argument("--labels", choices=["id", "position"], default="id",
                        help="report buses by id or by 1-based row in the bus table")
        sp.add_argument("--budget", type=_positive_int, default=DEFAULT_BUDGET,
                        help="largest number of subsets exhaustive search may visit")
        sp.add_argument("--workers", type=_positive_int, default=1)

    def sim_args(sp):
        sp.add_argument("--setup", choices=sorted(SETUPS), default="none",
                        help="network modification before simulation")
        sp.add_argument("--h", type=_positive_float, default=0.01)
        sp.add_argument("--duration", type=_positive_float, default=30.0)
        sp.add_argument("--loss-fraction", type=float, default=0.6)
        sp.add_argument("--window", type=_window, default=(0.5, 5.0), help="start,end in seconds")
        sp.add_argument("--control", choices=["none", "lqr"], default="lqr")
        sp.add_argument("--q1", type=float, default=1.0)
        sp.add_argument("--q2", type=float, default=None, help="default 1/h")
        sp.add_argument("--droop-weight", type=float, default=0.05, help="IBR power weight r")

    sp = sub.add_parser("place", help="select IBR buses")
    case_args(sp)
    graph_args(sp)
    sp.add_argument("--k", type=_positive_int, required=True)
    sp.add_argument("--method", choices=["greedy", "exhaustive"], default="greedy")

    sp = sub.add_parser("compare", help="greedy against exhaustive search")
    case_args(sp)
    graph_args(sp)
    sp.add_argument("--k-range", type=_k_range, default=[1, 2, 3, 4])
    sp.add_argument("--out", help="write the comparison as CSV")

    sp = sub.add_parser("simulate", help="one transient simulation")
    case_args(sp)
    sim_args(sp)
    sp.add_argument("--buses", type=_int_list, default=[], help="IBR buses, e.g. 6,16")
    sp.add_argument("--disturbed-gen", type=_positive_int,
                    help="generator number (row in the gen table); omit for no disturbance")
    sp.add_argument("--out", help="trajectory CSV path")

    sp = sub.add_parser("evaluate", help="disturbance sweep over several placements")
    case_args(sp)
    sim_args(sp)
    graph_args(sp)
    sp.add_argument("--placements", help="semicolon-separated bus sets, e.g. '6,16;5,16;3,23'")
    sp.add_argument("--k", type=_positive_int, default=2)
    sp.add_argument("--seed", type=int, default=0, help="seed for the random baseline")
    sp.add_argument("--out", help="report CSV path")
    return p


def _load(args) -> CaseFile:
    path = Path(args.case)
    if not path.exists() and path.suffix in ("", ".m") and path.parent == Path("."):
        try:
            path = bundled_case_path(path.stem)
        except FileNotFoundError:
            pass
    if not path.exists():
        raise FileNotFoundError(f"case file not found: {args.case}")
    dyn = args.dynamics
    if dyn is None:
        side = path.with_name(f"{path.stem}_dynamics.m")
        dyn = side if side.exists() else None
    case = load_case(path, dyn)
    return case


def _weights(args) -> ControlWeights:
    return ControlWeights(args.q1, args.q2, args.droop_weight)


def _config(args) -> SimConfig:
    return SimConfig(h=args.h, duration=args.duration)


def cmd_place(args) -> int:
    rm = case_resistance(_load(args), args.weight_model, args.labels)
    if args.method == "greedy":
        res = greedy_place(rm, args.k)
    else:
        res = exhaustive_place(rm, args.k, args.budget, args.workers)
    print(f"method:    {res.method}")
    print(f"buses:     {' '.join(map(str, res.selected))}")
    print(f"objective: {res.objective:.8f}")
    print(f"time (s):  {res.elapsed:.2f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    rm = case_resistance(_load(args), args.weight_model, args.labels)
    report = compare_methods(rm, args.k_range, args.budget, args.workers)
    print(report.render_text())
    if args.out:
        Path(args.out).write_text(report.render_csv(), encoding="utf-8")
    return EXIT_OK


def cmd_simulate(args) -> int:
    case = _load(args)
    cfg = _config(args)
    net = build_network(case, args.buses, SETUPS[args.setup])
    dist = None
    if args.disturbed_gen is not None:
        dist = DisturbanceSpec(args.disturbed_gen, args.loss_fraction, *args.window)
    ctl = LqrController(_weights(args)) if args.control == "lqr" and net.n_ibr else None
    traj = simulate(net, dist, ctl, cfg)
    if args.out:
        Path(args.out).write_text(traj.to_csv(cfg.base_frequency), encoding="utf-8")
    f, pg, pi = trajectory_metrics(traj, cfg.h, cfg.base_frequency)
    nadir = cfg.base_frequency * (1.0 + traj.omega.min())
    print(f"nadir {nadir:.4f} Hz  |f|1,h {f:.4f} Hz  |P_gen|1,h {pg:.4f} pu  |P_ibr|1,h {pi:.4f} pu")
    return EXIT_OK


def _default_placements(case: CaseFile, args) -> dict[str, list[int]]:
    rm = case_resistance(case, args.weight_model, args.labels)
    ranked = rank_placements(rm, args.k, top=2, budget=args.budget)
    greedy = greedy_place(rm, args.k).selected
    out = {"optimal": list(ranked[0][0])}
    if len(ranked) > 1:
        out["next"] = list(ranked[1][0])
    exclude = set(greedy) | set(SETUPS[args.setup].remove_buses)
    out["random"] = random_placement(rm.labels, args.k, args.seed, exclude)
    return out


def cmd_evaluate(args) -> int:
    case = _load(args)
    if args.placements:
        sets = [_int_list(s) for s in args.placements.split(";") if s.strip()]
        placements = {" ".join(map(str, s)): s for s in sets}
    else:
        placements = _default_placements(case, args)
    results = evaluate_placements(
        case, placements, _config(args), SETUPS[args.setup], args.loss_fraction,
        args.window, args.control, _weights(args), args.workers,
    )
    print(render_report_text(results))
    if args.out:
        Path(args.out).write_text(render_report_csv(results), encoding="utf-8")
    failed = any(r.failed for r in results)
    return EXIT_NUMERIC if failed else EXIT_OK


COMMANDS = {
    "place": cmd_place,
    "compare": cmd_compare,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (SimulationError, ControlError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CaseSyntaxError, CaseSemanticError, GraphError, PlacementError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
