"""Discrete-time swing-equation simulation over a Kron-reduced AC network.

Each synchronous generator is a voltage source of constant magnitude behind
its transient reactance.  Each IBR is a grid-forming source whose angle is
set by a controller, connected to its bus through a coupling reactance.
Loads become constant impedances, every bus is eliminated by Kron
reduction, and what is left is a small dense admittance matrix over the
internal source nodes.  Generators come first in that matrix, then IBRs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy.optimize import root

from .case_io import BusKind, CaseFile, without_buses
from .errors import GraphError, SimulationError


@dataclass(frozen=True)
class SimConfig:
    h: float = 0.01
    omega_b: float = 2 * math.pi * 60.0
    duration: float = 30.0
    base_frequency: float = 60.0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"step size must be positive, got {self.h}")
        if not self.omega_b > 0:
            raise ValueError(f"base speed must be positive, got {self.omega_b}")
        if not self.duration >= self.h:
            raise ValueError(f"duration {self.duration} shorter than one step {self.h}")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.h))


@dataclass(frozen=True)
class DisturbanceSpec:
    """Loss of a fraction of one generator's capacity over a time window.

    ``generator`` is the 1-based row of the generator in the case's gen table.
    """

    generator: int
    fraction_lost: float = 0.6
    t_start: float = 0.5
    t_end: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.fraction_lost <= 1.0:
            raise ValueError(f"fraction_lost must be in [0, 1], got {self.fraction_lost}")
        if not self.t_start < self.t_end:
            raise ValueError(f"window start {self.t_start} not before end {self.t_end}")

    def active(self, t: float) -> bool:
        return self.t_start <= t < self.t_end


@dataclass
class SwingState:
    """Rotor angles (rad), speed deviations (p.u.) and mechanical power (p.u.).

    The governor is a first-order lag, so ``p_mech`` is its whole state.
    """

    delta: np.ndarray
    omega: np.ndarray
    p_mech: np.ndarray

    def copy(self) -> SwingState:
        return SwingState(self.delta.copy(), self.omega.copy(), self.p_mech.copy())


@dataclass(frozen=True)
class StudySetup:
    """How a base case is turned into the system that gets simulated.

    ``remove_buses`` are deleted with everything attached.  Generators at
    ``replaced_generators`` (bus ids) are taken out and their dispatch and
    voltage set-point are handed to the IBRs, first replaced generator to
    first placement bus.

    With ``emf_from_flow`` (the default) the modified network's power flow
    is solved first; loads are turned into impedances at the solved
    voltages and every source emf is computed from its solved current, so
    the sidecar emf column is not used.  Otherwise loads use the case
    voltages, generators use the sidecar emf and IBRs ``ibr_emf``.
    """

    remove_buses: tuple[int, ...] = ()
    replaced_generators: tuple[int, ...] = ()
    emf_from_flow: bool = True
    ibr_emf: float = 1.0


# New England system with the external-grid equivalent removed and two
# machines turned into IBRs.
CASE39_LOW_INERTIA = StudySetup(remove_buses=(39,), replaced_generators=(32, 34))


@dataclass(frozen=True)
class ReducedNetwork:
    """Internal-node network: ``n_gen`` generators followed by the IBRs."""

    Y: np.ndarray
    emf: np.ndarray
    n_gen: int
    inertia: np.ndarray
    damping: np.ndarray
    droop: np.ndarray
    gov_time: np.ndarray
    p_max: np.ndarray
    delta0: np.ndarray
    ibr_angle0: np.ndarray
    p_mech0: np.ndarray
    ibr_power0: np.ndarray
    gen_numbers: tuple[int, ...] = ()
    gen_buses: tuple[int, ...] = ()
    ibr_buses: tuple[int, ...] = ()

    @property
    def n_ibr(self) -> int:
        return self.Y.shape[0] - self.n_gen

    def angles(self, delta, u) -> np.ndarray:
        return np.concatenate([np.asarray(delta, float), np.asarray(u, float)])

    def injections(self, delta, u) -> np.ndarray:
        return ac_injection(self.angles(delta, u), self.emf, self.Y)

    def jacobian(self, delta, u) -> np.ndarray:
        return sync_jacobian(self.angles(delta, u), self.emf, self.Y)

    def gen_index(self, number: int) -> int:
        try:
            return self.gen_numbers.index(number)
        except ValueError:
            raise ValueError(
                f"generator {number} is not a synchronous machine here; "
                f"available: {list(self.gen_numbers)}"
            ) from None


@dataclass
class Trajectory:
    time: np.ndarray
    delta: np.ndarray  # (steps + 1, n_gen)
    omega: np.ndarray
    p_mech: np.ndarray
    p_elec: np.ndarray
    p_ibr: np.ndarray  # (steps + 1, n_ibr)
    gen_numbers: tuple[int, ...] = ()
    ibr_buses: tuple[int, ...] = ()

    def frequency(self, base_frequency: float = 60.0) -> np.ndarray:
        return base_frequency * (1.0 + self.omega)

    def to_csv(self, base_frequency: float = 60.0) -> str:
        """Columns: time, f_g<n> (Hz), p_g<n> (p.u.), p_ibr<bus> (p.u.)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(
            ["time"]
            + [f"f_g{g}" for g in self.gen_numbers]
            + [f"p_g{g}" for g in self.gen_numbers]
            + [f"p_ibr{b}" for b in self.ibr_buses]
        )
        freq = self.frequency(base_frequency)
        for t in range(len(self.time)):
            row = [f"{self.time[t]:.6f}"]
            row += [repr(float(v)) for v in freq[t]]
            row += [repr(float(v)) for v in self.p_elec[t]]
            row += [repr(float(v)) for v in self.p_ibr[t]]
            w.writerow(row)
        return buf.getvalue()


# ---------------------------------------------------------------------------
# network equations
# ---------------------------------------------------------------------------


def ac_injection(angles, emf, Y) -> np.ndarray:
    """Active power out of each node: ``sum_j E_i E_j (G_ij cos + B_ij sin)``.

    ``Y`` is a nodal admittance matrix in the usual sign convention
    (off-diagonal entries are minus the branch admittance).
    """
    v = np.asarray(emf, float) * np.exp(1j * np.asarray(angles, float))
    return np.real(v * np.conj(np.asarray(Y) @ v))


def sync_jacobian(angles, emf, Y) -> np.ndarray:
    """Derivative of :func:`ac_injection` with respect to the angles."""
    a = np.asarray(angles, float)
    E = np.asarray(emf, float)
    Y = np.asarray(Y, dtype=complex)
    diff = a[:, None] - a[None, :]
    EE = E[:, None] * E[None, :]
    J = EE * (Y.real * np.sin(diff) - Y.imag * np.cos(diff))
    np.fill_diagonal(J, 0.0)
    J[np.diag_indices_from(J)] = -J.sum(axis=1)
    return J


def dc_flow(theta, B) -> np.ndarray:
    """Linear power-flow injections ``B @ theta`` (``B`` Laplacian-like)."""
    return np.asarray(B, float) @ np.asarray(theta, float)


def kron_reduce(Y, keep: Sequence[int]) -> np.ndarray:
    """Schur complement of ``Y`` onto the ``keep`` nodes (in the given order)."""
    Y = np.asarray(Y)
    n = Y.shape[0]
    keep = list(keep)
    if not keep:
        raise GraphError("Kron reduction needs at least one kept node")
    if len(set(keep)) != len(keep) or any(not 0 <= k < n for k in keep):
        raise GraphError(f"invalid kept node set {keep} for n={n}")
    drop = [i for i in range(n) if i not in set(keep)]
    Ykk = Y[np.ix_(keep, keep)]
    if not drop:
        return Ykk.copy()
    Yee = Y[np.ix_(drop, drop)]
    if np.linalg.cond(Yee) > 1e13:
        raise GraphError("interior block of the admittance matrix is singular")
    return Ykk - Y[np.ix_(keep, drop)] @ np.linalg.solve(Yee, Y[np.ix_(drop, keep)])


def bus_admittance(case: CaseFile, loads: bool = True, voltages=None) -> np.ndarray:
    """Complex bus admittance matrix (pi model with taps; shifts ignored).

    With ``loads`` set, each demand is added as the constant impedance that
    draws it at ``voltages`` (magnitudes per bus; the case voltages by default).
    """
    index = case.bus_index()
    n = len(case.buses)
    Y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        if not br.in_service:
            continue
        f, t = index[br.from_bus], index[br.to_bus]
        ys = 1.0 / complex(br.resistance_pu, br.reactance_pu)
        half = 0.5j * br.charging_pu
        tau = br.tap
        Y[f, f] += (ys + half) / tau**2
        Y[t, t] += ys + half
        Y[f, t] -= ys / tau
        Y[t, f] -= ys / tau
    if loads:
        for i, b in enumerate(case.buses):
            vm = b.voltage_mag if voltages is None else voltages[i]
            Y[i, i] += complex(b.p_demand, -b.q_demand) / vm**2
    return Y


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------


def step_swing(state: SwingState, p_elec, inertia, damping, cfg: SimConfig) -> SwingState:
    """One explicit step: speed from the power imbalance, then angle from speed."""
    w = state.omega + cfg.h / inertia * (state.p_mech - p_elec - damping * state.omega)
    d = state.delta + cfg.h * cfg.omega_b * w
    return SwingState(d, w, state.p_mech.copy())


def governor_update(p_mech, omega, reference, droop, time_const, h, ceiling) -> np.ndarray:
    """First-order lag toward ``reference - omega / droop``, clamped to [0, ceiling].

    The lag is discretized exactly for a target held over the step.
    """
    target = reference - omega / droop
    alpha = -np.expm1(-h / np.asarray(time_const, float))
    return np.clip(p_mech + alpha * (target - p_mech), 0.0, ceiling)


# ---------------------------------------------------------------------------
# controllers
# ---------------------------------------------------------------------------


class Controller(Protocol):
    def start(self, net: ReducedNetwork, cfg: SimConfig) -> None: ...

    def command(self, delta: np.ndarray, omega: np.ndarray) -> np.ndarray:
        """Absolute IBR angles for the coming step."""
        ...


class ConstantPower:
    """Open loop: every IBR holds its initial active power."""

    def __init__(self, tol: float = 1e-11, max_iter: int = 50):
        self.tol = tol
        self.max_iter = max_iter

    def start(self, net, cfg):
        self.net = net
        self.u = net.ibr_angle0.copy()

    def command(self, delta, omega):
        net = self.net
        if net.n_ibr == 0:
            return self.u
        u = self.u
        k = net.n_gen
        for _ in range(self.max_iter):
            P = net.injections(delta, u)[k:]
            err = P - net.ibr_power0
            if np.max(np.abs(err)) < self.tol:
                break
            J = net.jacobian(delta, u)[k:, k:]
            u = u - np.linalg.solve(J, err)
        else:
            raise SimulationError("IBR constant-power solve did not converge")
        self.u = u
        return u


class FixedAngle:
    """IBR angles frozen at their initial values (infinite-bus behaviour)."""

    def start(self, net, cfg):
        self.u = net.ibr_angle0.copy()

    def command(self, delta, omega):
        return self.u


# ---------------------------------------------------------------------------
# network construction
# ---------------------------------------------------------------------------


def _strongest_branch(case: CaseFile, bus: int) -> float:
    best = 0.0
    for br in case.branches:
        if br.in_service and bus in (br.from_bus, br.to_bus):
            best = max(best, abs(br.susceptance))
    if best == 0.0:
        raise ValueError(f"bus {bus} has no branches to couple an IBR to")
    return best


def solve_power_flow(case: CaseFile, source_buses, p_set, v_set, ref: int) -> np.ndarray:
    """Complex bus voltages of a constant-power-load AC power flow.

    Buses holding a source are voltage controlled (first source's set-point
    wins); the bus of source ``ref`` is the slack.  Reactive limits are not
    enforced.
    """
    index = case.bus_index()
    n = len(case.buses)
    Y = bus_admittance(case, loads=False)
    p_inj = np.array([-b.p_demand for b in case.buses])
    q_inj = np.array([-b.q_demand for b in case.buses])
    vm = np.array([b.voltage_mag for b in case.buses])
    controlled = np.zeros(n, bool)
    for bus, p, v in zip(source_buses, p_set, v_set):
        i = index[bus]
        p_inj[i] += p
        if not controlled[i]:
            vm[i] = v
            controlled[i] = True
    slack = index[source_buses[ref]]
    th_idx = [i for i in range(n) if i != slack]
    vm_idx = [i for i in range(n) if not controlled[i]]
    va0 = np.deg2rad([b.voltage_ang for b in case.buses])

    def voltages(x):
        va = va0 - va0[slack]
        va[th_idx] = x[: len(th_idx)]
        v = vm.copy()
        v[vm_idx] = x[len(th_idx):]
        return v * np.exp(1j * va)

    def mismatch(x):
        V = voltages(x)
        S = V * np.conj(Y @ V)
        return np.concatenate([S.real[th_idx] - p_inj[th_idx], S.imag[vm_idx] - q_inj[vm_idx]])

    x0 = np.concatenate([(va0 - va0[slack])[th_idx], vm[vm_idx]])
    sol = root(mismatch, x0, method="hybr", options={"xtol": 1e-12})
    res = np.max(np.abs(mismatch(sol.x))) if len(x0) else 0.0
    if not np.all(np.isfinite(sol.x)) or res > 1e-8:
        raise SimulationError(f"power flow did not converge (mismatch {res:.3e})")
    return voltages(sol.x)


def _source_emfs(V, S_bus, source_buses, index, p_set, ties, ref):
    """Internal emf magnitudes and angles that reproduce the solved flow.

    Each source's active power is its set-point (the slack takes the
    remainder at its bus); reactive power at a bus is shared equally.
    """
    count: dict[int, int] = {}
    p_other: dict[int, float] = {}
    for k, bus in enumerate(source_buses):
        count[bus] = count.get(bus, 0) + 1
        if k != ref:
            p_other[bus] = p_other.get(bus, 0.0) + p_set[k]
    E = np.empty(len(source_buses), dtype=complex)
    for k, (bus, y) in enumerate(zip(source_buses, ties)):
        i = index[bus]
        s_bus = S_bus[i]
        p = s_bus.real - p_other.get(bus, 0.0) if k == ref else p_set[k]
        s = complex(p, s_bus.imag / count[bus])
        E[k] = V[i] + np.conj(s / V[i]) / y
    return np.abs(E), np.angle(E)


def build_network(
    case: CaseFile,
    placement: Sequence[int] = (),
    setup: StudySetup = StudySetup(),
    ibr_power: Sequence[float] | None = None,
) -> ReducedNetwork:
    """Attach sources to ``case``, Kron-reduce and solve for the operating point.

    IBR dispatch comes from ``ibr_power`` when given, otherwise from the
    generators named in ``setup.replaced_generators`` (zero when none).
    """
    if not case.dynamics:
        raise ValueError("case has no generator dynamics; supply a sidecar")
    gen_numbers = list(range(1, len(case.generators) + 1))
    work = case
    if setup.remove_buses:
        dropped = set(setup.remove_buses)
        gen_numbers = [n for n, g in zip(gen_numbers, case.generators) if g.bus not in dropped]
        work = without_buses(case, dropped)

    placement = [int(b) for b in placement]
    if len(set(placement)) != len(placement):
        raise ValueError(f"placement has repeated buses: {placement}")
    known = set(work.bus_ids)
    for b in placement:
        if b not in known:
            raise ValueError(f"placement bus {b} is not in the network")

    replaced = [k for k, g in enumerate(work.generators) if g.bus in setup.replaced_generators]
    ibr_voltage = None
    if ibr_power is None:
        if setup.replaced_generators:
            order = {b: i for i, b in enumerate(setup.replaced_generators)}
            replaced.sort(key=lambda k: order[work.generators[k].bus])
            if len(replaced) != len(placement):
                raise ValueError(
                    f"{len(replaced)} generators are replaced but {len(placement)} IBR buses given"
                )
            ibr_power = [work.generators[k].p_set for k in replaced]
            ibr_voltage = [work.generators[k].voltage_set for k in replaced]
        else:
            ibr_power = [0.0] * len(placement)
    ibr_power = np.asarray(ibr_power, float)
    if ibr_power.shape != (len(placement),):
        raise ValueError("one IBR power per placement bus expected")

    keep = [k for k in range(len(work.generators)) if k not in set(replaced)]
    gens = [work.generators[k] for k in keep]
    dyn = [work.dynamics[k] for k in keep]
    gen_numbers = [gen_numbers[k] for k in keep]
    if not gens:
        raise ValueError("no synchronous generators left to simulate")

    index = work.bus_index()
    n = len(work.buses)
    K, I = len(gens), len(placement)
    ties = [1.0 / (1j * d.transient_reactance) for d in dyn]
    ties += [-1j * _strongest_branch(work, b) for b in placement]
    source_buses = [g.bus for g in gens] + placement
    target = np.concatenate([[g.p_set for g in gens], ibr_power])
    ref = next((k for k, g in enumerate(gens) if work.buses[index[g.bus]].kind == BusKind.REF), 0)

    if setup.emf_from_flow:
        vset = [g.voltage_set for g in gens]
        if ibr_voltage is None:
            ibr_voltage = [work.buses[index[b]].voltage_mag for b in placement]
        vset += list(ibr_voltage)
        V = solve_power_flow(work, source_buses, target, vset, ref)
        Ybus = bus_admittance(work, voltages=np.abs(V))
        S_bus = V * np.conj(Ybus @ V)
        emf, guess = _source_emfs(V, S_bus, source_buses, index, target, ties, ref)
    else:
        Ybus = bus_admittance(work)
        emf = np.concatenate([[d.emf for d in dyn], np.full(I, setup.ibr_emf)])
        guess = None

    Y = np.zeros((n + K + I, n + K + I), dtype=complex)
    Y[:n, :n] = Ybus
    for k, (bus, y) in enumerate(zip(source_buses, ties)):
        node, b = n + k, index[bus]
        Y[node, node] += y
        Y[b, b] += y
        Y[node, b] -= y
        Y[b, node] -= y
    Yred = kron_reduce(Y, list(range(n, n + K + I)))
    return network_from_admittance(
        Yred, emf, K, target,
        inertia=[d.inertia for d in dyn],
        damping=[d.damping for d in dyn],
        droop=[d.droop_gain for d in dyn],
        gov_time=[d.governor_time_const for d in dyn],
        p_max=[g.p_max for g in gens],
        ref=ref,
        guess=guess,
        gen_numbers=tuple(gen_numbers),
        gen_buses=tuple(g.bus for g in gens),
        ibr_buses=tuple(placement),
    )


def network_from_admittance(
    Y, emf, n_gen: int, p_set, inertia, damping, droop, gov_time, p_max=None,
    ref: int = 0, guess=None, **labels,
) -> ReducedNetwork:
    """Wrap an internal-node admittance matrix and find its operating point.

    ``p_set`` gives the wanted injection of every node; node ``ref`` (a
    generator) is held at angle 0 and takes whatever the network needs.
    """
    Y = np.asarray(Y, dtype=complex)
    emf = np.asarray(emf, float)
    p_set = np.asarray(p_set, float)
    N = Y.shape[0]
    if Y.shape != (N, N) or emf.shape != (N,) or p_set.shape != (N,) or not 1 <= n_gen <= N:
        raise ValueError("admittance, emf and power set-points must agree in size")
    angles = _operating_point(Y, emf, p_set, ref, guess)
    P = ac_injection(angles, emf, Y)
    K = n_gen

    def vec(v):
        return np.broadcast_to(np.asarray(v, float), (K,)).copy()

    p_mech0 = P[:K]
    return ReducedNetwork(
        Y=Y,
        emf=emf,
        n_gen=K,
        inertia=vec(inertia),
        damping=vec(damping),
        droop=vec(droop),
        gov_time=vec(gov_time),
        p_max=p_mech0.copy() if p_max is None else vec(p_max),
        delta0=angles[:K],
        ibr_angle0=angles[K:],
        p_mech0=p_mech0,
        ibr_power0=P[K:],
        gen_numbers=labels.get("gen_numbers", tuple(range(1, K + 1))),
        gen_buses=labels.get("gen_buses", ()),
        ibr_buses=labels.get("ibr_buses", ()),
    )


def _operating_point(Y, emf, target, ref: int, guess=None) -> np.ndarray:
    """Angles meeting ``target`` injections everywhere but at ``ref`` (held at 0)."""
    N = len(emf)
    free = [i for i in range(N) if i != ref]
    x0 = np.zeros(len(free)) if guess is None else (guess - guess[ref])[free]

    def full(x):
        a = np.zeros(N)
        a[free] = x
        return a

    def fun(x):
        a = full(x)
        r = ac_injection(a, emf, Y)[free] - target[free]
        J = sync_jacobian(a, emf, Y)[np.ix_(free, free)]
        return r, J

    sol = root(fun, x0, jac=True, method="hybr", options={"xtol": 1e-13})
    res = np.max(np.abs(fun(sol.x)[0])) if free else 0.0
    if not free:
        return np.zeros(N)
    if not np.all(np.isfinite(sol.x)) or res > 1e-8:
        raise SimulationError(f"no operating point found (residual {res:.3e})")
    return full(sol.x)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def simulate(
    net: ReducedNetwork,
    disturbance: DisturbanceSpec | None = None,
    controller: Controller | None = None,
    cfg: SimConfig = SimConfig(),
    initial: SwingState | None = None,
) -> Trajectory:
    """Run the step loop: governor, controller, network power, swing update.

    Without a controller the IBRs hold constant power.  ``initial``
    overrides the equilibrium start (used for perturbation studies).
    """
    if controller is None:
        controller = ConstantPower()
    K = net.n_gen
    ceiling0 = np.maximum(net.p_max, net.p_mech0)
    target_gen = None
    if disturbance is not None:
        if disturbance.t_end > cfg.duration + 1e-12:
            raise ValueError("disturbance window ends after the simulation")
        target_gen = net.gen_index(disturbance.generator)

    state = initial.copy() if initial is not None else SwingState(
        net.delta0.copy(), np.zeros(K), net.p_mech0.copy()
    )
    T = cfg.steps
    delta = np.empty((T + 1, K))
    omega = np.empty((T + 1, K))
    p_mech = np.empty((T + 1, K))
    p_elec = np.empty((T + 1, K))
    p_ibr = np.empty((T + 1, net.n_ibr))
    controller.start(net, cfg)

    reference = net.p_mech0.copy()
    ceiling = ceiling0.copy()
    for t in range(T + 1):
        now = t * cfg.h
        reference[:] = net.p_mech0
        ceiling[:] = ceiling0
        if target_gen is not None and disturbance.active(now):
            keep = 1.0 - disturbance.fraction_lost
            reference[target_gen] *= keep
            ceiling[target_gen] *= keep
        state.p_mech = governor_update(
            state.p_mech, state.omega, reference, net.droop, net.gov_time, cfg.h, ceiling
        )
        u = controller.command(state.delta, state.omega)
        P = net.injections(state.delta, u)
        delta[t], omega[t], p_mech[t] = state.delta, state.omega, state.p_mech
        p_elec[t], p_ibr[t] = P[:K], P[K:]
        if t == T:
            break
        state = step_swing(state, P[:K], net.inertia, net.damping, cfg)
        if not (np.all(np.isfinite(state.delta)) and np.all(np.isfinite(state.omega))):
            raise SimulationError("state became non-finite", step=t + 1)
        if np.max(np.abs(state.omega)) > 1.0:
            raise SimulationError(
                f"speed deviation {np.max(np.abs(state.omega)):.3g} p.u.; system lost synchronism",
                step=t + 1,
            )
    return Trajectory(
        np.arange(T + 1) * cfg.h, delta, omega, p_mech, p_elec, p_ibr,
        net.gen_numbers, net.ibr_buses,
    )
