"""Certifying quadratic program: minimally modify a commanded joint velocity.

Each tick solves

    min ||u - u_cmd||^2 + w_rot^T L_rot(q, u)   s.t.  A u >= -alpha(h),  u in U

where the rows of A are barrier time-derivative gradients and U is the
joint velocity box. The solver is a dense dual active-set method: starting
from the unconstrained minimum, the most violated row enters the active
set and a nonnegative-multiplier subproblem is re-solved until primal
feasible, which terminates finitely for strictly convex problems.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .barriers import BarrierEval, BarrierStack, evaluate_stack
from .kinematics import JointState, KinematicChain, frame_transforms, jacobians, rotation_log
from .semantics import CONSTRAINED_ROTATION, SemanticContext

KKT_TOL = 1e-6
PRIMAL_TOL = 1e-9
SLACK_WEIGHT = 1e4
H_RECOVER = 0.05
W_ROT_DEFAULT = (20.0, 2.0)


class QPInfeasible(RuntimeError):
    """No point satisfies every constraint row and the box."""


class InvalidState(RuntimeError):
    """A geometric barrier is deeper than the recoverable band."""


@dataclass(frozen=True)
class RotationObjective:
    """Softened pose objective: weights, desired rotation, tick duration."""

    w_rot: np.ndarray  # (w1, w2) >= 0
    R_des: np.ndarray
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "w_rot", np.asarray(self.w_rot, dtype=float))
        object.__setattr__(self, "R_des", np.asarray(self.R_des, dtype=float))
        if self.w_rot.shape != (2,) or (self.w_rot < 0).any():
            raise ValueError("w_rot must be two nonnegative weights")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def active(self) -> bool:
        return bool((self.w_rot > 0).any())

    @classmethod
    def free(cls, dt: float) -> "RotationObjective":
        return cls(w_rot=np.zeros(2), R_des=np.eye(3), dt=dt)

    @classmethod
    def for_context(
        cls, context: SemanticContext | None, R_des: np.ndarray, dt: float, w_rot=W_ROT_DEFAULT
    ) -> "RotationObjective":
        if context is not None and context.pose == CONSTRAINED_ROTATION:
            return cls(w_rot=np.asarray(w_rot, dtype=float), R_des=R_des, dt=dt)
        return cls.free(dt)


@dataclass(frozen=True)
class QPProblem:
    """min 1/2 u^T H u + f^T u  s.t.  A_ineq u >= b_ineq,  box_lo <= u <= box_hi."""

    H: np.ndarray
    f: np.ndarray
    A_ineq: np.ndarray
    b_ineq: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.f)
        if self.H.shape != (n, n) or not np.allclose(self.H, self.H.T, atol=1e-9):
            raise ValueError("H must be square symmetric")
        if self.A_ineq.shape[1] != n or len(self.b_ineq) != self.A_ineq.shape[0]:
            raise ValueError("inconsistent constraint dimensions")
        if not ((self.box_lo < 0).all() and (self.box_hi > 0).all()):
            raise ValueError("velocity box must contain 0 strictly")


@dataclass
class CertificationResult:
    """Certified input plus per-constraint diagnostics from the QP."""

    u_cert: np.ndarray
    status: str  # 'optimal' | 'relaxed' | 'fallback_zero'
    active_rows: list[str]
    kkt_residual: float
    slack_used: np.ndarray
    solve_time: float
    objective: float = 0.0

    def __post_init__(self):
        if self.status == "optimal" and (
            (np.abs(self.slack_used) > 0).any() or self.kkt_residual > KKT_TOL
        ):
            raise ValueError("optimal status requires zero slack and tight KKT residual")


def rotation_cost_terms(
    chain: KinematicChain, q: np.ndarray, rot: RotationObjective, frames=None
) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic and linear cost contribution of the softened pose objective.

    With e = log(R_des R_cur^T)^vee and M = dt * J_rot, the terms
    w1 ||e - M u||^2 + w2 ||M u||^2 expand to H += 2 (w1 + w2) M^T M and
    f += -2 w1 M^T e.
    """
    n = chain.n
    if not rot.active:
        return np.zeros((n, n)), np.zeros(n)
    if frames is None:
        frames = frame_transforms(chain, q)
    _, J_rot = jacobians(chain, q, frames=frames)
    R_cur = frames[-1][:3, :3]
    e = rotation_log(rot.R_des @ R_cur.T)
    M = rot.dt * J_rot
    w1, w2 = rot.w_rot
    return 2.0 * (w1 + w2) * (M.T @ M), -2.0 * w1 * (M.T @ e)


def assemble(
    chain: KinematicChain,
    q: np.ndarray,
    u_cmd: np.ndarray,
    barrier_eval: BarrierEval,
    rot: RotationObjective,
    vel_limit: np.ndarray,
    frames=None,
) -> QPProblem:
    """Stack the tracking cost, rotation terms, barrier rows, and box."""
    n = chain.n
    u_cmd = np.asarray(u_cmd, dtype=float)
    if u_cmd.shape != (n,):
        raise ValueError(f"u_cmd must have length {n}")
    Hq, fq = rotation_cost_terms(chain, q, rot, frames=frames)
    return QPProblem(
        H=2.0 * np.eye(n) + Hq,
        f=-2.0 * u_cmd + fq,
        A_ineq=barrier_eval.A,
        b_ineq=-barrier_eval.alpha_h,
        box_lo=-np.asarray(vel_limit, dtype=float),
        box_hi=np.asarray(vel_limit, dtype=float),
        labels=tuple(barrier_eval.labels),
    )


def _with_box_rows(p: QPProblem) -> tuple[np.ndarray, np.ndarray, list[str]]:
    n = len(p.f)
    eye = np.eye(n)
    A = np.vstack([p.A_ineq, eye, -eye])
    b = np.concatenate([p.b_ineq, p.box_lo, -p.box_hi])
    labels = list(p.labels) if p.labels else [f"row{i}" for i in range(len(p.b_ineq))]
    labels += [f"box:lo:j{j}" for j in range(n)] + [f"box:hi:j{j}" for j in range(n)]
    return A, b, labels


def _dual_active_set(H, f, A, b) -> tuple[np.ndarray, np.ndarray]:
    """Multipliers-first active-set solve of min 1/2 u'Hu + f'u, Au >= b.

    Works on the dual: the most violated row's multiplier grows while the
    active multipliers move along the step direction that keeps active rows
    tight, dropping any multiplier that hits zero. A violated row whose
    normal is dependent on the active set with no blocking multiplier is an
    exact infeasibility certificate.

    Returns (u, lambda). Raises QPInfeasible when no feasible point exists.
    """
    factor = cho_factor(H)
    u0 = cho_solve(factor, -f)
    m = len(b)
    lam = np.zeros(m)
    if m == 0:
        return u0, lam
    viol0 = b - A @ u0
    if viol0.max() <= PRIMAL_TOL:
        return u0, lam

    # Normalize rows to unit gradient so thresholds are scale-free; barrier
    # rows span many orders of magnitude far from their boundaries.
    scale = np.linalg.norm(A, axis=1)
    degenerate = scale < 1e-12
    if degenerate.any():
        if (b[degenerate] > PRIMAL_TOL).any():
            raise QPInfeasible("zero-gradient row with positive bound")
        scale = np.where(degenerate, 1.0, scale)
    A = A / scale[:, None]
    b = b / scale

    W = cho_solve(factor, A.T)  # n x m
    M = A @ W
    r = b - A @ u0
    active: list[int] = []
    for _ in range(10 * m + 100):
        v = r - M @ lam
        i = int(np.argmax(v))
        if v[i] <= PRIMAL_TOL:
            break
        # Drive row i tight, dropping blockers along the way.
        for _ in range(m + 2):
            if active:
                sub = np.ix_(active, active)
                try:
                    dS = -np.linalg.solve(M[sub], M[active, i])
                except np.linalg.LinAlgError:
                    dS = -np.linalg.lstsq(M[sub], M[active, i], rcond=1e-12)[0]
                schur = float(M[i, i] + M[active, i] @ dS)
            else:
                dS = np.zeros(0)
                schur = float(M[i, i])
            vi = float(r[i] - M[i] @ lam)
            t_full = vi / schur if schur > 1e-11 else np.inf
            lam_S = lam[active] if active else np.zeros(0)
            neg = dS < -1e-15
            with np.errstate(divide="ignore", invalid="ignore"):
                steps = np.where(neg, -lam_S / dS, np.inf)
            t_max = float(steps.min()) if len(steps) else np.inf
            t = min(t_full, t_max)
            if not np.isfinite(t):
                raise QPInfeasible("dual step is unbounded")
            if active:
                lam[active] = np.maximum(lam_S + t * dS, 0.0)
            lam[i] += t
            if t_full <= t_max:
                active.append(i)
                break
            j = int(np.argmin(steps))
            lam[active[j]] = 0.0
            active.pop(j)
        if np.abs(lam).max() > 1e12:
            raise QPInfeasible("multipliers diverged")

    u = u0 + W @ lam
    if (b - A @ u).max() > 1e-7:
        raise QPInfeasible("violated rows remain after active-set termination")
    return u, lam / scale  # multipliers in the original row scaling


def _kkt_residual(H, f, A, b, u, lam) -> float:
    """Scale-free KKT residual: primal feasibility per unit row gradient,
    complementarity (already scale-invariant), and stationarity."""
    stationarity = float(np.abs(H @ u + f - A.T @ lam).max()) if len(b) else float(np.abs(H @ u + f).max())
    if not len(b):
        return stationarity
    slack = A @ u - b
    norms = np.maximum(np.linalg.norm(A, axis=1), 1e-12)
    primal = float(max(0.0, -(slack / norms).min()))
    comp = float(np.abs(lam * slack).max())
    return max(stationarity, primal, comp)


def solve(p: QPProblem) -> CertificationResult:
    """Solve the certifying QP to KKT residual <= 1e-6, deterministically."""
    t0 = time.perf_counter()
    A, b, labels = _with_box_rows(p)
    u, lam = _dual_active_set(p.H, p.f, A, b)
    kkt = _kkt_residual(p.H, p.f, A, b, u, lam)
    tight = (A @ u - b) < 1e-7
    active_rows = [labels[i] for i in range(len(b)) if tight[i]]
    return CertificationResult(
        u_cert=u,
        status="optimal",
        active_rows=active_rows,
        kkt_residual=kkt,
        slack_used=np.zeros(len(p.b_ineq)),
        solve_time=time.perf_counter() - t0,
        objective=float(0.5 * u @ p.H @ u + p.f @ u),
    )


def _solve_relaxed(p: QPProblem, sem_rows: np.ndarray, slack_weight: float) -> CertificationResult:
    """Retry with nonnegative slack on semantic rows only; geometric rows stay hard."""
    t0 = time.perf_counter()
    n = len(p.f)
    k = int(sem_rows.sum())
    A, b, labels = _with_box_rows(p)
    m = len(b)
    Hz = np.zeros((n + k, n + k))
    Hz[:n, :n] = p.H
    Hz[n:, n:] = 2.0 * slack_weight * np.eye(k)
    fz = np.concatenate([p.f, np.zeros(k)])
    Az = np.zeros((m + k, n + k))
    Az[:m, :n] = A
    sem_idx = np.flatnonzero(sem_rows)
    for si, row in enumerate(sem_idx):
        Az[row, n + si] = 1.0  # A_sem u + s >= b
        Az[m + si, n + si] = 1.0  # s >= 0
    bz = np.concatenate([b, np.zeros(k)])
    z, lam = _dual_active_set(Hz, fz, Az, bz)
    u, s = z[:n], z[n:]
    slack_used = np.zeros(len(p.b_ineq))
    slack_used[sem_idx] = s
    kkt = _kkt_residual(Hz, fz, Az, bz, z, lam)
    tight = (Az @ z - bz) < 1e-7
    active_rows = [labels[i] for i in range(m) if tight[i]]
    return CertificationResult(
        u_cert=u,
        status="relaxed",
        active_rows=active_rows,
        kkt_residual=kkt,
        slack_used=slack_used,
        solve_time=time.perf_counter() - t0,
        objective=float(0.5 * u @ p.H @ u + p.f @ u),
    )


def certify(
    chain: KinematicChain,
    state: JointState,
    q: np.ndarray,
    u_cmd: np.ndarray,
    stack: BarrierStack,
    rot: RotationObjective,
    barrier_eval: BarrierEval | None = None,
    frames=None,
    slack_weight: float = SLACK_WEIGHT,
    h_recover: float = H_RECOVER,
) -> CertificationResult:
    """Evaluate barriers, assemble, and solve; degrade gracefully if infeasible.

    Infeasible problems are retried with slack on semantic rows (status
    'relaxed'); if geometry itself is contradictory the zero input is
    returned (status 'fallback_zero'), which is feasible whenever h >= 0.
    """
    if frames is None:
        frames = frame_transforms(chain, q)
    if barrier_eval is None:
        barrier_eval = evaluate_stack(chain, state, q, stack, frames=frames)
    geometric = np.array([c != "sem" for c in barrier_eval.classes])
    if len(barrier_eval.h) and geometric.any():
        worst = float(barrier_eval.h[geometric].min())
        if worst < -h_recover:
            raise InvalidState(f"geometric barrier at {worst:.4f} is beyond the recoverable band")

    p = assemble(chain, q, u_cmd, barrier_eval, rot, state.vel_limit, frames=frames)
    try:
        return solve(p)
    except QPInfeasible:
        pass
    sem_rows = np.array([c == "sem" for c in barrier_eval.classes])
    if sem_rows.any():
        try:
            return _solve_relaxed(p, sem_rows, slack_weight)
        except QPInfeasible:
            pass
    return CertificationResult(
        u_cert=np.zeros(chain.n),
        status="fallback_zero",
        active_rows=[],
        kkt_residual=float("nan"),
        slack_used=np.zeros(len(p.b_ineq)),
        solve_time=0.0,
        objective=float(p.f @ np.zeros(chain.n)),
    )
