"""Barrier vectors and their time-derivative rows as linear functions of u.

Four constraint classes stack into one evaluation: semantic envelopes on
the end effector, environment collision for control-point spheres against
fitted scene solids, self collision between control-point spheres, and
joint angle limits. Velocity limits are not barrier rows; they form the
box constraint of the certifying program.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envelopes import EnvelopeSet
from .kinematics import ControlPoint, JointState, KinematicChain, frame_transforms, jacobians, point_kinematics
from .semantics import SemanticContext
from .superquadrics import Superquadric, sq_eval_grad

SEM_GAIN = 1.0
GEO_GAIN = 3.0
CAUTION_WEIGHT = 0.25
SMOOTH_BETA = 50.0  # 1/m^2 sharpness of the optional smooth union min


@dataclass(frozen=True)
class ClassK:
    """Odd-extended class-K function: w * gain * h or w * gain * sign(h) h^2."""

    family: str  # 'linear' | 'quadratic'
    gain: float
    caution: float = 1.0  # w_alpha in (0, 1]

    def __post_init__(self):
        if self.family not in ("linear", "quadratic"):
            raise ValueError(f"unknown class-K family {self.family!r}")
        if self.gain <= 0:
            raise ValueError("class-K gain must be positive")
        if not (0.0 < self.caution <= 1.0):
            raise ValueError("caution weight must lie in (0, 1]")


def eval_class_k(k: ClassK, h: float) -> float:
    if k.family == "linear":
        return k.caution * k.gain * h
    return k.caution * k.gain * float(np.sign(h)) * h * h


@dataclass(frozen=True)
class SemanticBarrier:
    object_id: str
    solids: tuple[Superquadric, ...]
    classk: ClassK


@dataclass(frozen=True)
class EnvBarrier:
    cp_index: int
    object_id: str
    solid: Superquadric  # already inflated by the control point's radius
    classk: ClassK
    margin: float  # the per-axis inflation applied (m)


@dataclass(frozen=True)
class SelfBarrier:
    pair: tuple[int, int]
    combined_radius: float
    classk: ClassK


@dataclass(frozen=True)
class BarrierStack:
    """All barrier definitions for one session, in fixed row order."""

    control_points: tuple[ControlPoint, ...]
    sem: tuple[SemanticBarrier, ...]
    env: tuple[EnvBarrier, ...]
    self_pairs: tuple[SelfBarrier, ...]
    lim_classk: ClassK
    smooth_min: bool = False

    @property
    def row_count_without_lim(self) -> int:
        return len(self.sem) + len(self.env) + len(self.self_pairs)


@dataclass
class BarrierEval:
    """Stacked h, row gradients A (so h-dot = A u), alpha(h), and labels."""

    h: np.ndarray
    A: np.ndarray
    alpha_h: np.ndarray
    labels: list[str]
    classes: list[str]

    def __post_init__(self):
        if not (len(self.h) == len(self.A) == len(self.alpha_h) == len(self.labels) == len(self.classes)):
            raise ValueError("barrier evaluation rows are inconsistent")

    def by_class(self, name: str) -> np.ndarray:
        mask = [c == name for c in self.classes]
        return self.h[mask]

    def min_by_class(self) -> dict[str, float]:
        out = {}
        for name in ("sem", "env", "self", "lim"):
            vals = self.by_class(name)
            out[name] = float(vals.min()) if len(vals) else float("inf")
        return out


def _alpha(classk: ClassK, h: np.ndarray) -> np.ndarray:
    if classk.family == "linear":
        return classk.caution * classk.gain * h
    return classk.caution * classk.gain * np.sign(h) * h * h


def inflated_by_radius(solid: Superquadric, radius: float) -> Superquadric:
    """Solid grown by a sphere radius: each scale length gains the radius.

    Exact for boxes and spheres, and a tight sphere-swept approximation in
    between; keeps h = 0 within the fit error of the sphere actually
    touching the object, which a normalized g-offset cannot do for small
    exponents (g grows as a 2/eps power of the radial overshoot).
    """
    return Superquadric(solid.center, solid.orientation, solid.scale + radius, solid.eps1, solid.eps2)


def build_stack(
    chain: KinematicChain,
    scene_solids: list[tuple[str, list[Superquadric]]],
    envelopes: EnvelopeSet,
    context: SemanticContext | None = None,
    sem_gain: float = SEM_GAIN,
    geo_gain: float = GEO_GAIN,
    caution_weight: float = CAUTION_WEIGHT,
    smooth_min: bool = False,
    ee_radius_bonus: float = 0.0,
) -> BarrierStack:
    """Assemble the barrier stack for a chain, scene, and semantic context.

    Caution flags from the context scale the class-K of both the flagged
    object's semantic row and its environment rows.
    """
    cps = list(chain.control_points)
    if ee_radius_bonus > 0.0 and cps:
        last = cps[-1]
        cps[-1] = ControlPoint(frame=last.frame, offset=last.offset, radius=last.radius + ee_radius_bonus)
    cps = tuple(cps)

    cautious = context.caution_objects() if context is not None else set()

    sem = tuple(
        SemanticBarrier(
            object_id=obj,
            solids=tuple(solids),
            classk=ClassK("quadratic", sem_gain, caution_weight if obj in cautious else 1.0),
        )
        for obj, _rel, solids in envelopes
    )

    env = []
    for obj, solids in scene_solids:
        w = caution_weight if obj in cautious else 1.0
        for si, solid in enumerate(solids):
            # One inflated copy per distinct radius keeps rows batched.
            by_radius = {}
            for k, cp in enumerate(cps):
                if cp.radius not in by_radius:
                    by_radius[cp.radius] = inflated_by_radius(solid, cp.radius)
                env.append(
                    EnvBarrier(
                        cp_index=k,
                        object_id=f"{obj}:s{si}",
                        solid=by_radius[cp.radius],
                        classk=ClassK("linear", geo_gain, w),
                        margin=cp.radius,
                    )
                )

    self_pairs = []
    for i in range(len(cps)):
        for j in range(i + 1, len(cps)):
            # Kinematically adjacent spheres (same or neighboring frames)
            # ride on rigidly-coupled links and are excluded.
            if abs(cps[i].frame - cps[j].frame) <= 1:
                continue
            self_pairs.append(
                SelfBarrier(
                    pair=(i, j),
                    combined_radius=cps[i].radius + cps[j].radius,
                    classk=ClassK("linear", geo_gain),
                )
            )

    return BarrierStack(
        control_points=cps,
        sem=sem,
        env=tuple(env),
        self_pairs=tuple(self_pairs),
        lim_classk=ClassK("linear", geo_gain),
        smooth_min=smooth_min,
    )


def eval_semantic(
    chain: KinematicChain,
    q: np.ndarray,
    stack: BarrierStack,
    frames=None,
    x_ee: np.ndarray | None = None,
    J_trans: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
    """One row per constrained object: min over its union of (g - 1)."""
    n = chain.n
    m = len(stack.sem)
    h = np.empty(m)
    A = np.zeros((m, n))
    alpha = np.empty(m)
    labels = []
    if m == 0:
        return h, A, alpha, labels
    if frames is None:
        frames = frame_transforms(chain, q)
    if x_ee is None:
        x_ee = frames[-1][:3, 3]
    if J_trans is None:
        J_trans, _ = jacobians(chain, q, frames=frames)
    for i, bar in enumerate(stack.sem):
        gs = np.empty(len(bar.solids))
        grads = np.empty((len(bar.solids), 3))
        for j, solid in enumerate(bar.solids):
            gs[j], grads[j] = sq_eval_grad(solid, x_ee)
        if stack.smooth_min and len(bar.solids) > 1:
            # log-sum-exp soft min keeps the row differentiable across members
            z = -SMOOTH_BETA * (gs - 1.0)
            zmax = z.max()
            w = np.exp(z - zmax)
            w /= w.sum()
            h[i] = -(zmax + np.log(np.exp(z - zmax).sum())) / SMOOTH_BETA
            grad = w @ grads
        else:
            j = int(np.argmin(gs))
            h[i] = gs[j] - 1.0
            grad = grads[j]
        A[i] = grad @ J_trans
        alpha[i] = eval_class_k(bar.classk, h[i])
        labels.append(f"sem:{bar.object_id}")
    return h, A, alpha, labels


def eval_environment(
    chain: KinematicChain,
    q: np.ndarray,
    stack: BarrierStack,
    frames=None,
    P=None,
    Jp=None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
    """h = g(p_k) - 1 against radius-inflated solids, per (point, solid)."""
    n = chain.n
    m = len(stack.env)
    h = np.empty(m)
    A = np.zeros((m, n))
    alpha = np.empty(m)
    labels = [f"env:{b.object_id}:cp{b.cp_index}" for b in stack.env]
    if m == 0:
        return h, A, alpha, labels
    if P is None or Jp is None:
        P, Jp = point_kinematics(chain, q, stack.control_points, frames=frames)
    # Consecutive rows sharing one inflated solid evaluate as a batch.
    i = 0
    while i < m:
        solid = stack.env[i].solid
        j = i
        while j < m and stack.env[j].solid is solid:
            j += 1
        idx = [stack.env[r].cp_index for r in range(i, j)]
        g, grad = sq_eval_grad(solid, P[idx])
        for r, row in enumerate(range(i, j)):
            bar = stack.env[row]
            h[row] = g[r] - 1.0
            A[row] = grad[r] @ Jp[bar.cp_index]
            alpha[row] = eval_class_k(bar.classk, h[row])
        i = j
    return h, A, alpha, labels


def eval_self_collision(
    chain: KinematicChain,
    q: np.ndarray,
    stack: BarrierStack,
    frames=None,
    P=None,
    Jp=None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
    """h = ||p_i - p_j||^2 - (r_i + r_j)^2 for non-adjacent sphere pairs."""
    n = chain.n
    m = len(stack.self_pairs)
    h = np.empty(m)
    A = np.zeros((m, n))
    alpha = np.empty(m)
    labels = [f"self:cp{b.pair[0]}-cp{b.pair[1]}" for b in stack.self_pairs]
    if m == 0:
        return h, A, alpha, labels
    if P is None or Jp is None:
        P, Jp = point_kinematics(chain, q, stack.control_points, frames=frames)
    for row, bar in enumerate(stack.self_pairs):
        i, j = bar.pair
        d = P[i] - P[j]
        h[row] = float(d @ d) - bar.combined_radius**2
        A[row] = 2.0 * d @ (Jp[i] - Jp[j])
        alpha[row] = eval_class_k(bar.classk, h[row])
    return h, A, alpha, labels


def eval_joint_limits(
    q: np.ndarray, state: JointState, classk: ClassK
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
    """2n rows: distance to the upper limits, then to the lower limits.

    States outside the limits simply report negative h; no exception.
    """
    n = len(q)
    h = np.concatenate([state.limits_hi - q, q - state.limits_lo])
    A = np.vstack([-np.eye(n), np.eye(n)])
    alpha = _alpha(classk, h)
    labels = [f"lim:hi:j{j}" for j in range(n)] + [f"lim:lo:j{j}" for j in range(n)]
    return h, A, alpha, labels


def evaluate_h(
    chain: KinematicChain, state: JointState, q: np.ndarray, stack: BarrierStack, frames=None
) -> np.ndarray:
    """Barrier values only (no gradients), in stack row order; for finite
    differencing and cheap monitoring."""
    from .superquadrics import sq_eval

    if frames is None:
        frames = frame_transforms(chain, q)
    P, _ = point_kinematics(chain, q, stack.control_points, frames=frames)
    x_ee = frames[-1][:3, 3]
    parts = []
    for bar in stack.sem:
        gs = np.array([sq_eval(s, x_ee) for s in bar.solids])
        if stack.smooth_min and len(gs) > 1:
            z = -SMOOTH_BETA * (gs - 1.0)
            zmax = z.max()
            parts.append(-(zmax + np.log(np.exp(z - zmax).sum())) / SMOOTH_BETA)
        else:
            parts.append(gs.min() - 1.0)
    i = 0
    m = len(stack.env)
    while i < m:
        solid = stack.env[i].solid
        j = i
        while j < m and stack.env[j].solid is solid:
            j += 1
        g = sq_eval(solid, P[[stack.env[r].cp_index for r in range(i, j)]])
        parts.extend(g - 1.0)
        i = j
    for bar in stack.self_pairs:
        a, b = bar.pair
        d = P[a] - P[b]
        parts.append(float(d @ d) - bar.combined_radius**2)
    parts.extend(state.limits_hi - q)
    parts.extend(q - state.limits_lo)
    return np.array(parts)


def evaluate_stack(
    chain: KinematicChain, state: JointState, q: np.ndarray, stack: BarrierStack, frames=None
) -> BarrierEval:
    """All barrier rows at q, ordered sem, env, self, lim."""
    if frames is None:
        frames = frame_transforms(chain, q)
    P, Jp = point_kinematics(chain, q, stack.control_points, frames=frames)
    J_trans, _ = jacobians(chain, q, frames=frames)
    x_ee = frames[-1][:3, 3]

    parts = [
        ("sem", eval_semantic(chain, q, stack, frames=frames, x_ee=x_ee, J_trans=J_trans)),
        ("env", eval_environment(chain, q, stack, frames=frames, P=P, Jp=Jp)),
        ("self", eval_self_collision(chain, q, stack, frames=frames, P=P, Jp=Jp)),
        ("lim", eval_joint_limits(q, state, stack.lim_classk)),
    ]
    h = np.concatenate([p[1][0] for p in parts])
    A = np.vstack([p[1][1] for p in parts])
    alpha = np.concatenate([p[1][2] for p in parts])
    labels = [lbl for p in parts for lbl in p[1][3]]
    classes = [p[0] for p in parts for _ in p[1][3]]
    return BarrierEval(h=h, A=A, alpha_h=alpha, labels=labels, classes=classes)
