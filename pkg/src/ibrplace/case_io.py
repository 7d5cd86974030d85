"""MATPOWER case-file reader, writer and validator.

Supported input is the matrix subset of the MATPOWER format::

    mpc.baseMVA = 100;
    mpc.bus = [ ... ];
    mpc.gen = [ ... ];
    mpc.branch = [ ... ];

Every other ``mpc.*`` assignment (gencost, bus_name cell arrays, areas) is
skipped.  Dynamic machine data is not part of MATPOWER, so it lives in a
comment-delimited sidecar block that MATPOWER itself ignores::

    %% dynamics
    %   bus      m      d    droop    Tg     E     xd
    %    30   84.0    1.0   0.0048   0.5  1.047  0.031
    %% end

The ``xd`` (transient reactance) column is optional.  Generators without a
sidecar row get :data:`DEFAULT_DYNAMICS`.  Powers are stored in per unit on
``base_mva``; out-of-service branches and generators are dropped on read.
"""

from __future__ import annotations

import math
import re
from collections import defaultdict
from dataclasses import dataclass, replace
from enum import IntEnum
from pathlib import Path

from .errors import CaseSemanticError, CaseSyntaxError, GraphError
from .graph import PowerGraph


class BusKind(IntEnum):
    PQ = 1
    PV = 2
    REF = 3


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    p_demand: float
    q_demand: float
    voltage_mag: float = 1.0
    voltage_ang: float = 0.0  # degrees, as in the file


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    resistance_pu: float
    reactance_pu: float
    charging_pu: float = 0.0
    tap: float = 1.0
    in_service: bool = True

    @property
    def conductance(self) -> float:
        """Real part of the series admittance 1 / (r + jx)."""
        r, x = self.resistance_pu, self.reactance_pu
        return r / (r * r + x * x)

    @property
    def susceptance(self) -> float:
        """Imaginary part of the series admittance, -x / (r^2 + x^2)."""
        r, x = self.resistance_pu, self.reactance_pu
        return -x / (r * r + x * x)


@dataclass(frozen=True)
class Generator:
    bus: int
    p_set: float
    p_max: float
    q_set: float = 0.0
    voltage_set: float = 1.0
    in_service: bool = True


@dataclass(frozen=True)
class GenDynamics:
    bus: int
    inertia: float  # m = 2H, seconds on system base
    damping: float
    droop_gain: float
    governor_time_const: float
    emf: float
    transient_reactance: float = 0.2


DEFAULT_DYNAMICS = dict(
    inertia=5.0,
    damping=1.0,
    droop_gain=0.05,
    governor_time_const=0.5,
    emf=1.0,
    transient_reactance=0.2,
)


@dataclass(frozen=True)
class CaseFile:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    dynamics: tuple[GenDynamics, ...] = ()
    name: str = "case"

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def dynamics_for(self, gen_index: int) -> GenDynamics:
        return self.dynamics[gen_index]


# ---------------------------------------------------------------------------
# tokenizer
# ---------------------------------------------------------------------------

_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*")
_FUNC = re.compile(r"^\s*function\s+\w+\s*=\s*(\w+)")
_TOKEN = re.compile(r"[^\s,;\[\]]+")

_MIN_COLS = {"bus": 9, "gen": 10, "branch": 11}


def _strip_comment(line: str) -> str:
    quoted = False
    for i, ch in enumerate(line):
        if ch == "'":
            quoted = not quoted
        elif ch == "%" and not quoted:
            return line[:i]
    return line


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def _read_matrix(lines, start, offset, name):
    """Collect rows of a ``[ ... ]`` block.

    Rows end at ``;`` or at a line break.  Returns ``(rows, row_line_numbers,
    index_of_next_line)``.
    """
    rows: list[list[float]] = []
    row_lines: list[int] = []
    current: list[float] = []
    i = start
    pos = offset
    while i < len(lines):
        code = _strip_comment(lines[i])
        segment = code[pos:]
        close = segment.find("]")
        body = segment if close < 0 else segment[:close]
        for piece_start, piece in _split_rows(body):
            for m in _TOKEN.finditer(piece):
                tok = m.group(0)
                try:
                    current.append(float(tok))
                except ValueError:
                    col = pos + piece_start + m.start() + 1
                    raise CaseSyntaxError(
                        f"non-numeric token {tok!r} in mpc.{name}", i + 1, col
                    ) from None
            if current and piece.endswith(";"):
                rows.append(current)
                row_lines.append(i + 1)
                current = []
        if current:
            rows.append(current)
            row_lines.append(i + 1)
            current = []
        if close >= 0:
            return rows, row_lines, i + 1
        i += 1
        pos = 0
    raise CaseSyntaxError(f"unterminated matrix mpc.{name}", len(lines), 1)


def _split_rows(body: str):
    """Yield (offset, piece) with each piece ending at a ';' where present."""
    start = 0
    for i, ch in enumerate(body):
        if ch == ";":
            yield start, body[start : i + 1]
            start = i + 1
    if start < len(body):
        yield start, body[start:]


def _skip_cell(lines, start, offset):
    depth = 0
    i, pos = start, offset
    while i < len(lines):
        code = _strip_comment(lines[i])[pos:]
        for ch in code:
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return i + 1
        i += 1
        pos = 0
    raise CaseSyntaxError("unterminated cell array", len(lines), 1)


def _parse_sidecar_rows(lines, first_line_no):
    """Parse sidecar rows; header lines (non-numeric first token) are skipped."""
    rows = {}
    for k, raw in enumerate(lines):
        line_no = first_line_no + k
        text = raw.lstrip()
        lead = len(raw) - len(text)
        while text.startswith("%"):
            text = text[1:]
            lead += 1
        tokens = list(_TOKEN.finditer(text))
        if not tokens or not _is_number(tokens[0].group(0)):
            continue
        values = []
        for m in tokens:
            try:
                values.append(float(m.group(0)))
            except ValueError:
                raise CaseSyntaxError(
                    f"non-numeric token {m.group(0)!r} in dynamics table",
                    line_no,
                    lead + m.start() + 1,
                ) from None
        if len(values) not in (6, 7):
            raise CaseSyntaxError(
                f"dynamics row needs 6 or 7 columns, got {len(values)}", line_no, lead + 1
            )
        if not values[0].is_integer():
            raise CaseSyntaxError("dynamics bus id must be an integer", line_no, lead + 1)
        rows[int(values[0])] = values[1:]
    return rows


def parse_dynamics(text: str) -> dict[int, list[float]]:
    """Read a dynamics table keyed by generator bus id.

    Accepts either a full case file containing a ``%% dynamics`` block, or a
    bare table (one row per line, optionally commented out).
    """
    lines = text.splitlines()
    for i, line in enumerate(lines):
        if line.strip().lower() == "%% dynamics":
            for j in range(i + 1, len(lines)):
                if lines[j].strip().lower() == "%% end":
                    return _parse_sidecar_rows(lines[i + 1 : j], i + 2)
            raise CaseSyntaxError("unterminated %% dynamics block", len(lines), 1)
    return _parse_sidecar_rows(lines, 1)


# ---------------------------------------------------------------------------
# parse
# ---------------------------------------------------------------------------


def parse_case(text: str, dynamics_text: str | None = None) -> CaseFile:
    """Parse MATPOWER case text into a validated :class:`CaseFile`.

    ``dynamics_text`` overrides any sidecar block embedded in ``text``.
    Raises :class:`CaseSyntaxError` with line/column on malformed input and
    :class:`CaseSemanticError` when the data violates an invariant.
    """
    lines = text.splitlines()
    name = "case"
    base_mva = None
    matrices: dict[str, tuple[list, list, int]] = {}
    sidecar: dict[int, list[float]] = {}

    i = 0
    while i < len(lines):
        raw = lines[i]
        if raw.strip().lower() == "%% dynamics":
            end = next(
                (j for j in range(i + 1, len(lines)) if lines[j].strip().lower() == "%% end"),
                None,
            )
            if end is None:
                raise CaseSyntaxError("unterminated %% dynamics block", len(lines), 1)
            sidecar = _parse_sidecar_rows(lines[i + 1 : end], i + 2)
            i = end + 1
            continue
        code = _strip_comment(raw)
        fm = _FUNC.match(code)
        if fm:
            name = fm.group(1)
            i += 1
            continue
        m = _ASSIGN.match(code)
        if not m:
            i += 1
            continue
        key = m.group(1)
        rest = code[m.end() :].lstrip()
        offset = len(code) - len(rest)
        if rest.startswith("["):
            rows, row_lines, nxt = _read_matrix(lines, i, offset + 1, key)
            matrices[key] = (rows, row_lines, i + 1)
            i = nxt
        elif rest.startswith("{"):
            i = _skip_cell(lines, i, offset)
        else:
            if key == "baseMVA":
                tok = rest.rstrip().rstrip(";").strip()
                try:
                    base_mva = float(tok)
                except ValueError:
                    raise CaseSyntaxError(
                        f"baseMVA is not a number: {tok!r}", i + 1, offset + 1
                    ) from None
            i += 1

    if base_mva is None:
        raise CaseSyntaxError("missing mpc.baseMVA", len(lines), 1)
    for key in ("bus", "gen", "branch"):
        if key not in matrices:
            raise CaseSyntaxError(f"missing mpc.{key}", len(lines), 1)
        rows, row_lines, line_no = matrices[key]
        for row, ln in zip(rows, row_lines):
            if len(row) < _MIN_COLS[key]:
                raise CaseSyntaxError(
                    f"mpc.{key} row has {len(row)} columns, need at least {_MIN_COLS[key]}",
                    ln,
                    1,
                )

    if dynamics_text is not None:
        sidecar = parse_dynamics(dynamics_text)

    problems = []
    base = base_mva if base_mva > 0 else 1.0

    buses = []
    for row, ln in zip(*matrices["bus"][:2]):
        if not row[0].is_integer():
            raise CaseSyntaxError("bus id must be an integer", ln, 1)
        kind = int(row[1])
        if kind not in (1, 2, 3):
            problems.append(f"bus {int(row[0])}: unsupported bus type {kind}")
            continue
        buses.append(
            Bus(int(row[0]), BusKind(kind), row[2] / base, row[3] / base, row[7], row[8])
        )

    branches = []
    for row, ln in zip(*matrices["branch"][:2]):
        if not (row[0].is_integer() and row[1].is_integer()):
            raise CaseSyntaxError("branch endpoints must be integers", ln, 1)
        if row[10] == 0:
            continue
        tap = row[8] if row[8] != 0 else 1.0
        branches.append(Branch(int(row[0]), int(row[1]), row[2], row[3], row[4], tap))

    generators = []
    for row, ln in zip(*matrices["gen"][:2]):
        if not row[0].is_integer():
            raise CaseSyntaxError("generator bus must be an integer", ln, 1)
        if row[7] <= 0:
            continue
        generators.append(
            Generator(int(row[0]), row[1] / base, row[8] / base, row[2] / base, row[5])
        )

    dynamics = []
    for g in generators:
        vals = sidecar.get(g.bus)
        if vals is None:
            dynamics.append(GenDynamics(g.bus, **DEFAULT_DYNAMICS))
        else:
            xd = vals[5] if len(vals) > 5 else DEFAULT_DYNAMICS["transient_reactance"]
            dynamics.append(GenDynamics(g.bus, *vals[:5], transient_reactance=xd))
    gen_buses = {g.bus for g in generators}
    for bus_id in sidecar:
        if bus_id not in gen_buses:
            problems.append(f"dynamics row for bus {bus_id} has no in-service generator")

    case = CaseFile(
        base_mva, tuple(buses), tuple(branches), tuple(generators), tuple(dynamics), name
    )
    problems.extend(_invariant_diagnostics(case))
    if problems:
        raise CaseSemanticError(problems)
    return case


def load_case(path, dynamics_path=None) -> CaseFile:
    """Read a case file from disk; ``dynamics_path`` names a separate sidecar."""
    text = Path(path).read_text(encoding="utf-8")
    dyn = Path(dynamics_path).read_text(encoding="utf-8") if dynamics_path else None
    return parse_case(text, dyn)


def bundled_case_path(name: str) -> Path:
    """Path of a case shipped with the package (``case39``, ``case145``, ``case300``)."""
    path = Path(__file__).parent / "data" / f"{name}.m"
    if not path.exists():
        raise FileNotFoundError(path)
    return path


def load_bundled(name: str, with_dynamics: bool = True) -> CaseFile:
    dyn = Path(__file__).parent / "data" / f"{name}_dynamics.m"
    return load_case(bundled_case_path(name), dyn if with_dynamics and dyn.exists() else None)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def _invariant_diagnostics(case: CaseFile) -> list[str]:
    out = []
    if not case.base_mva > 0:
        out.append(f"base_mva must be positive, got {case.base_mva}")
    seen = set()
    for b in case.buses:
        if b.id in seen:
            out.append(f"duplicate bus id {b.id}")
        seen.add(b.id)
        if not b.voltage_mag > 0:
            out.append(f"bus {b.id}: voltage magnitude must be positive")
    refs = [b.id for b in case.buses if b.kind == BusKind.REF]
    if len(refs) != 1:
        out.append(f"expected exactly one reference bus, found {len(refs)}")
    for k, br in enumerate(case.branches):
        for end in (br.from_bus, br.to_bus):
            if end not in seen:
                out.append(f"branch {k + 1} ({br.from_bus}-{br.to_bus}) references unknown bus {end}")
        if br.from_bus == br.to_bus:
            out.append(f"branch {k + 1} is a self loop at bus {br.from_bus}")
        if br.in_service and br.reactance_pu == 0:
            out.append(f"branch {k + 1} ({br.from_bus}-{br.to_bus}) has zero reactance")
    for k, g in enumerate(case.generators):
        if g.bus not in seen:
            out.append(f"generator {k + 1} references unknown bus {g.bus}")
        if g.p_set < 0 or g.p_max < 0:
            out.append(f"generator {k + 1} at bus {g.bus}: negative active power limits")
    if case.dynamics and len(case.dynamics) != len(case.generators):
        out.append("dynamics list must have one entry per generator")
    for d in case.dynamics:
        if not d.inertia > 0:
            out.append(f"dynamics at bus {d.bus}: inertia must be positive")
        if d.damping < 0:
            out.append(f"dynamics at bus {d.bus}: damping must be non-negative")
        if not d.governor_time_const > 0:
            out.append(f"dynamics at bus {d.bus}: governor time constant must be positive")
        if not d.emf > 0:
            out.append(f"dynamics at bus {d.bus}: internal emf must be positive")
        if not d.droop_gain > 0:
            out.append(f"dynamics at bus {d.bus}: droop gain must be positive")
        if not d.transient_reactance > 0:
            out.append(f"dynamics at bus {d.bus}: transient reactance must be positive")
    return out


def _components(case: CaseFile) -> list[set[int]]:
    adj = defaultdict(set)
    for br in case.branches:
        if br.in_service:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
    remaining = [b.id for b in case.buses]
    seen: set[int] = set()
    comps = []
    for start in remaining:
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in comp:
                    comp.add(v)
                    stack.append(v)
        seen |= comp
        comps.append(comp)
    return comps


def validate_case(case: CaseFile) -> list[str]:
    """Return human-readable diagnostics; empty when the case is usable."""
    out = _invariant_diagnostics(case)
    comps = _components(case)
    if len(comps) > 1:
        small = sorted(comps, key=len)[0]
        out.append(
            f"branch graph has {len(comps)} connected components; "
            f"smallest contains buses {sorted(small)[:10]}"
        )
    return out


# ---------------------------------------------------------------------------
# graph conversion
# ---------------------------------------------------------------------------

WEIGHT_MODELS = ("magnitude", "signed")


def to_power_graph(case: CaseFile, weight_model: str = "magnitude") -> PowerGraph:
    """One node per bus, one edge per in-service branch; parallel lines merged.

    ``magnitude`` weights each branch by ``|x / (r^2 + x^2)|`` and is the
    default.  ``signed`` keeps the sign of ``x`` so series capacitors
    (``x < 0``) contribute negative weight, which is what a susceptance
    matrix assembled directly from branch data contains.
    """
    if weight_model not in WEIGHT_MODELS:
        raise ValueError(f"unknown weight model {weight_model!r}")
    diags = validate_case(case)
    if any("connected components" in d for d in diags):
        raise GraphError(next(d for d in diags if "connected components" in d))
    index = case.bus_index()
    merged: dict[tuple[int, int], float] = defaultdict(float)
    for br in case.branches:
        if not br.in_service:
            continue
        i, j = index[br.from_bus], index[br.to_bus]
        key = (min(i, j), max(i, j))
        w = -br.susceptance
        merged[key] += abs(w) if weight_model == "magnitude" else w
    edges = [(i, j, w) for (i, j), w in sorted(merged.items())]
    return PowerGraph(len(case.buses), case.bus_ids, edges, allow_negative=weight_model == "signed")


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def _to_mw(pu: float, base: float) -> float:
    """Value v with v / base == pu exactly, so parse(render(c)) == c."""
    v = pu * base
    for _ in range(64):
        back = v / base
        if back == pu:
            return v
        v = math.nextafter(v, math.inf if back < pu else -math.inf)
    return pu * base


def render_case(case: CaseFile) -> str:
    """Write ``case`` back out as MATPOWER text with a dynamics sidecar block."""
    base = case.base_mva
    out = [
        f"function mpc = {case.name}",
        "mpc.version = '2';",
        f"mpc.baseMVA = {_fmt(base)};",
        "",
        "%% bus data",
        "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin",
        "mpc.bus = [",
    ]
    for b in case.buses:
        vals = [b.id, int(b.kind), _to_mw(b.p_demand, base), _to_mw(b.q_demand, base),
                0, 0, 1, b.voltage_mag, b.voltage_ang, 0, 1, 1.1, 0.9]
        out.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    out += [
        "];",
        "",
        "%% generator data",
        "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin",
        "mpc.gen = [",
    ]
    for g in case.generators:
        vals = [g.bus, _to_mw(g.p_set, base), _to_mw(g.q_set, base), 0, 0,
                g.voltage_set, base, 1, _to_mw(g.p_max, base), 0]
        out.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    out += [
        "];",
        "",
        "%% branch data",
        "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax",
        "mpc.branch = [",
    ]
    for br in case.branches:
        vals = [br.from_bus, br.to_bus, br.resistance_pu, br.reactance_pu, br.charging_pu,
                0, 0, 0, br.tap, 0, 1, -360, 360]
        out.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    out += ["];", ""]
    if case.dynamics:
        out += ["%% dynamics", "%\tbus\tm\td\tdroop\tTg\tE\txd"]
        seen = set()
        for d in case.dynamics:
            if d.bus in seen:
                continue
            seen.add(d.bus)
            vals = [d.bus, d.inertia, d.damping, d.droop_gain, d.governor_time_const,
                    d.emf, d.transient_reactance]
            out.append("%\t" + "\t".join(_fmt(v) for v in vals))
        out += ["%% end", ""]
    return "\n".join(out)


def without_buses(case: CaseFile, drop: set[int]) -> CaseFile:
    """Copy of ``case`` with buses (and everything attached to them) removed."""
    keep_gen = [k for k, g in enumerate(case.generators) if g.bus not in drop]
    return replace(
        case,
        buses=tuple(b for b in case.buses if b.id not in drop),
        branches=tuple(
            br for br in case.branches if br.from_bus not in drop and br.to_bus not in drop
        ),
        generators=tuple(case.generators[k] for k in keep_gen),
        dynamics=tuple(case.dynamics[k] for k in keep_gen) if case.dynamics else (),
    )
