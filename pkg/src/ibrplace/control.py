"""Infinite-horizon LQR controller for grid-forming IBRs with a disturbance observer.

The controller works on the swing dynamics linearized at the operating
point.  Generator angles are measured from the inertia-weighted centre of
angle, so the common rotation of the whole system (which the network
cannot see) is projected out.  The state is

    z = [angle deviations from the centre (K); speeds (K); disturbances (K)]

and the input is the IBR angle deviation, also measured from the centre.
The stage cost penalizes the next-step speeds, their change over the step
scaled by ``1/h``, and the IBR power deviation weighted by ``r``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .dynamics import ReducedNetwork, SimConfig
from .errors import ControlError

OBSERVER_POLE = 0.5


@dataclass(frozen=True)
class ControlWeights:
    q1: float = 1.0  # speed penalty
    q2: float | None = None  # speed-change penalty, 1/h when None
    r: float | tuple[float, ...] = 0.05  # IBR power weight, scalar or one per IBR


@dataclass(frozen=True)
class ControlModel:
    """``z+ = A z + B u`` with cost ``y' W y``, ``y = C z + D u``.

    ``A`` and ``B`` cover the full augmented state; the disturbance block of
    ``A`` is the identity (constant disturbances).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Q1: np.ndarray
    Q2: np.ndarray
    r: np.ndarray
    n_gen: int
    coi_weights: np.ndarray
    observer_gain: np.ndarray  # diagonal gain on the speed prediction error

    @property
    def n_state(self) -> int:
        return self.A.shape[0]

    @property
    def n_input(self) -> int:
        return self.B.shape[1]

    @property
    def W(self) -> np.ndarray:
        k, i = self.n_gen, len(self.r)
        W = np.zeros((2 * k + i, 2 * k + i))
        W[:k, :k] = self.Q1
        W[k : 2 * k, k : 2 * k] = self.Q2
        W[2 * k :, 2 * k :] = np.eye(i)
        return W

    def cost_matrices(self):
        """``(Q, R, N)`` with stage cost ``z'Qz + 2 z'Nu + u'Ru``."""
        W = self.W
        return self.C.T @ W @ self.C, self.D.T @ W @ self.D, self.C.T @ W @ self.D


@dataclass(frozen=True)
class LqrSolution:
    P: np.ndarray  # Riccati matrix of the angle/speed block
    H: np.ndarray
    F: np.ndarray  # cross term over the full state, K = H^-1 F'
    K: np.ndarray
    iterations: int
    spectral_radius: float

    def gain_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"z{j}" for j in range(self.K.shape[1])])
        for row in self.K:
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def build_control_model(
    S: np.ndarray,
    n_gen: int,
    inertia,
    damping,
    cfg: SimConfig = SimConfig(),
    weights: ControlWeights = ControlWeights(),
) -> ControlModel:
    """Linear model from the synchronizing-power matrix ``S = dP/dangle``.

    ``S`` is ordered generators first, then IBRs.  For a lossless network at
    zero angles with unit emfs it is the susceptance Laplacian.
    """
    S = np.asarray(S, float)
    K = int(n_gen)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] <= K or K < 1:
        raise ControlError(f"synchronizing matrix {S.shape} does not fit {n_gen} generators plus IBRs")
    I = S.shape[0] - K
    m = np.asarray(inertia, float)
    d = np.asarray(damping, float)
    if m.shape != (K,) or d.shape != (K,):
        raise ControlError("inertia and damping need one entry per generator")
    h, wb = cfg.h, cfg.omega_b
    q2 = 1.0 / h if weights.q2 is None else weights.q2
    r = np.broadcast_to(np.asarray(weights.r, float), (I,)).copy()
    if weights.q1 < 0 or q2 < 0 or np.any(r < 0):
        raise ControlError("weights must be non-negative")

    w = m / m.sum()
    Pi = np.eye(K) - np.outer(np.ones(K), w)
    Sgg, Sgu = S[:K, :K], S[:K, K:]
    Sug, Suu = S[K:, :K], S[K:, K:]
    hM = h / m

    # speed row of the Euler step
    Awd = -hM[:, None] * (Sgg @ Pi)
    Aww = np.eye(K) - np.diag(hM * d)
    Awe = -np.diag(hM)
    Bw = -hM[:, None] * Sgu
    # angle row: delta+ = Pi (delta + h wb omega+)
    Add = Pi + h * wb * Pi @ Awd
    Adw = h * wb * Pi @ Aww
    Ade = h * wb * Pi @ Awe
    Bd = h * wb * Pi @ Bw

    Z = np.zeros((K, K))
    A = np.block([[Add, Adw, Ade], [Awd, Aww, Awe], [Z, Z, np.eye(K)]])
    B = np.vstack([Bd, Bw, np.zeros((K, I))])
    C = np.block(
        [
            [Awd, Aww, Awe],
            [Awd, Aww - np.eye(K), Awe],
            [r[:, None] * (Sug @ Pi), np.zeros((I, K)), np.zeros((I, K))],
        ]
    )
    D = np.vstack([Bw, Bw, r[:, None] * Suu])
    model = ControlModel(
        A, B, C, D, weights.q1 * np.eye(K), q2 * np.eye(K), r, K, w,
        observer_gain=-(1.0 - OBSERVER_POLE) * m / h,
    )
    _check_stabilizable(model)
    return model


def network_control_model(
    net: ReducedNetwork, cfg: SimConfig = SimConfig(), weights: ControlWeights = ControlWeights()
) -> ControlModel:
    S = net.jacobian(net.delta0, net.ibr_angle0)
    return build_control_model(S, net.n_gen, net.inertia, net.damping, cfg, weights)


def _check_stabilizable(model: ControlModel) -> None:
    n = 2 * model.n_gen
    A, B = model.A[:n, :n], model.B[:n]
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1.0 - 1e-9:
            M = np.hstack([A - lam * np.eye(n), B])
            if np.linalg.matrix_rank(M, tol=1e-9 * max(1.0, np.abs(M).max())) < n:
                raise ControlError(f"mode {lam:.6g} is neither stable nor controllable")


def solve_dare(A, B, Q, R, N=None, tol: float = 1e-12, max_iter: int = 10_000):
    """Stabilizing solution of the discrete Riccati equation with cross term.

    Uses the structured doubling algorithm after folding the cross term into
    the dynamics.  Returns ``(P, iterations)``.
    """
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    n = A.shape[0]
    N = np.zeros_like(B) if N is None else np.asarray(N, float)
    try:
        Rinv_Nt = np.linalg.solve(R, N.T)
        Rinv_Bt = np.linalg.solve(R, B.T)
    except np.linalg.LinAlgError:
        raise ControlError("input weight R is singular") from None
    Ak = A - B @ Rinv_Nt
    Gk = B @ Rinv_Bt
    Hk = Q - N @ Rinv_Nt
    Gk = 0.5 * (Gk + Gk.T)
    Hk = 0.5 * (Hk + Hk.T)
    eye = np.eye(n)
    for it in range(1, max_iter + 1):
        W = eye + Gk @ Hk
        try:
            WA = np.linalg.solve(W, Ak)
            WG = np.linalg.solve(W, Gk)
        except np.linalg.LinAlgError:
            raise ControlError("doubling iteration hit a singular matrix") from None
        H_next = Hk + Ak.T @ Hk @ WA
        Gk = Gk + Ak @ WG @ Ak.T
        Ak = Ak @ WA
        H_next = 0.5 * (H_next + H_next.T)
        Gk = 0.5 * (Gk + Gk.T)
        step = np.max(np.abs(H_next - Hk))
        Hk = H_next
        if not np.all(np.isfinite(Hk)):
            raise ControlError("Riccati iteration diverged")
        if step <= tol * max(1.0, np.max(np.abs(Hk))):
            return Hk, it
    raise ControlError(f"Riccati iteration did not converge in {max_iter} steps")


def solve_lqr(model: ControlModel, tol: float = 1e-12, max_iter: int = 10_000) -> LqrSolution:
    """Optimal feedback ``u = -K z`` for the augmented model.

    The angle/speed block is solved as a Riccati equation; the constant
    disturbances only add a feedforward term found from a linear solve.
    """
    k = model.n_gen
    n = 2 * k
    Q, R, N = model.cost_matrices()
    A, B = model.A[:n, :n], model.B[:n]
    E = model.A[:n, n:]
    Qx, Qxd = Q[:n, :n], Q[:n, n:]
    Nx, Nd = N[:n], N[n:]
    P, iters = solve_dare(A, B, Qx, R, Nx, tol, max_iter)

    H = R + B.T @ P @ B
    H = 0.5 * (H + H.T)
    ev = np.linalg.eigvalsh(H)
    if ev.min() <= 1e-14 * max(1.0, ev.max()):
        raise ControlError(f"input Hessian is not positive definite (min eigenvalue {ev.min():.3e})")
    Fx = A.T @ P @ B + Nx
    Kx = np.linalg.solve(H, Fx.T)
    Acl = A - B @ Kx
    rho = float(np.max(np.abs(np.linalg.eigvals(Acl))))

    BPE = B.T @ P @ E
    rhs = Qxd + A.T @ P @ E - Fx @ np.linalg.solve(H, BPE + Nd.T)
    Sxd = np.linalg.solve(np.eye(n) - Acl.T, rhs)
    Fd = (BPE + B.T @ Sxd + Nd.T).T
    F = np.vstack([Fx, Fd])
    gain = np.linalg.solve(H, F.T)
    return LqrSolution(P, H, F, gain, iters, rho)


def riccati_residual(model: ControlModel, sol: LqrSolution) -> float:
    """Relative residual of the Riccati equation on the angle/speed block."""
    n = 2 * model.n_gen
    Q, R, N = model.cost_matrices()
    A, B = model.A[:n, :n], model.B[:n]
    P = sol.P
    F = A.T @ P @ B + N[:n]
    rhs = Q[:n, :n] + A.T @ P @ A - F @ np.linalg.solve(R + B.T @ P @ B, F.T)
    return float(np.max(np.abs(P - rhs)) / max(1.0, np.max(np.abs(P))))


def control_action(sol: LqrSolution, z) -> np.ndarray:
    z = np.asarray(z, float)
    if z.shape != (sol.K.shape[1],):
        raise ControlError(f"state has shape {z.shape}, gain expects ({sol.K.shape[1]},)")
    return -sol.K @ z


def observe_disturbance(model: ControlModel, x_prev, u_prev, omega, d_prev) -> np.ndarray:
    """Correct the disturbance estimate from the speed prediction error.

    ``x_prev`` and ``u_prev`` are the angle/speed state and input of the
    previous step.  The estimate error shrinks by ``OBSERVER_POLE`` per step
    on the linear plant.
    """
    k = model.n_gen
    rows = slice(k, 2 * k)
    pred = model.A[rows, : 2 * k] @ x_prev + model.B[rows] @ u_prev + model.A[rows, 2 * k :] @ d_prev
    return d_prev + model.observer_gain * (np.asarray(omega, float) - pred)


def observer_error_matrix(model: ControlModel) -> np.ndarray:
    """Per-step map of the disturbance estimation error."""
    k = model.n_gen
    E_w = model.A[k : 2 * k, 2 * k :]
    return np.eye(k) - np.diag(model.observer_gain) @ E_w


def angle_to_power(u, delta, net: ReducedNetwork) -> np.ndarray:
    """IBR active power when the IBRs sit at angles ``u`` against generator angles ``delta``."""
    return net.injections(delta, u)[net.n_gen :]


class LqrController:
    """State feedback plus disturbance feedforward around the operating point."""

    def __init__(self, weights: ControlWeights = ControlWeights()):
        self.weights = weights

    def start(self, net: ReducedNetwork, cfg: SimConfig) -> None:
        self.net = net
        self.model = network_control_model(net, cfg, self.weights)
        self.solution = solve_lqr(self.model)
        w = self.model.coi_weights
        self.w = w
        self.u_rel0 = net.ibr_angle0 - w @ net.delta0
        k = net.n_gen
        self.d_hat = np.zeros(k)
        self.x_prev = None
        self.u_prev = None

    def command(self, delta, omega):
        net, w = self.net, self.w
        dd = delta - net.delta0
        x = np.concatenate([dd - w @ dd, omega])
        if self.x_prev is not None:
            self.d_hat = observe_disturbance(self.model, self.x_prev, self.u_prev, omega, self.d_hat)
        u = control_action(self.solution, np.concatenate([x, self.d_hat]))
        self.x_prev, self.u_prev = x, u
        return w @ delta + self.u_rel0 + u
