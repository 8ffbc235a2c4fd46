"""Kinematic simulation: integrate certified joint velocities at a fixed rate.

A session owns one arm in one scene with one held object. Each tick maps a
task-space twist command to joint velocities, certifies it through the
safety filter, and integrates q with explicit Euler (exact for the
velocity-controlled integrator). Also houses the scripted adversarial
command streams and the dense brute-force safety oracle used to validate
the filter.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .barriers import build_stack, evaluate_stack
from .envelopes import Box, EnvelopeSet, build_envelope, fit_object_solids
from .kinematics import JointState, KinematicChain, diff_ik, forward_kinematics, frame_transforms, point_kinematics
from .qp import RotationObjective, certify
from .scene import CommandStream, Scene, resample_stream, violation_metric
from .semantics import SemanticContext, default_context, synthesize_context
from .superquadrics import Superquadric, sq_eval

log = logging.getLogger(__name__)

NONE_OBJECT = "none"


@dataclass
class SimConfig:
    """Filter and session parameters; defaults follow the shipped setup."""

    dt: float = 1.0 / 45.0
    ik_damping: float = 1e-2
    votes: int = 5
    w_rot: tuple[float, float] = (20.0, 2.0)
    sem_gain: float = 1.0
    geo_gain: float = 3.0
    caution_weight: float = 0.25
    smooth_min: bool = False
    slack_weight: float = 1e4
    h_recover: float = 0.05
    held_radius_bonus: dict = field(default_factory=lambda: {
        "cup of water": 0.035,
        "lit candle": 0.02,
        "knife": 0.03,
        "dry sponge": 0.02,
    })
    violation_tol: float = 0.0
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "ik_damping": self.ik_damping,
            "votes": self.votes,
            "w_rot": list(self.w_rot),
            "sem_gain": self.sem_gain,
            "geo_gain": self.geo_gain,
            "caution_weight": self.caution_weight,
            "smooth_min": self.smooth_min,
            "slack_weight": self.slack_weight,
            "h_recover": self.h_recover,
            "held_radius_bonus": dict(self.held_radius_bonus),
            "violation_tol": self.violation_tol,
            "seed": self.seed,
        }


@dataclass
class OracleReport:
    """Dense-check violation flags vs the barrier-based flags."""

    oracle_flags: list[bool]
    barrier_flags: list[bool]

    @property
    def disagreements(self) -> int:
        return sum(1 for a, b in zip(self.oracle_flags, self.barrier_flags) if a != b)

    @property
    def agreement(self) -> float:
        n = len(self.oracle_flags)
        return 1.0 - self.disagreements / n if n else 1.0


class GeometryCache:
    """Fitted solids and envelopes per scene, shared across sessions.

    Every build uses a fresh generator derived from the seed, so a cache
    hit and a cold build produce bit-identical geometry regardless of the
    order sessions were created in.
    """

    def __init__(self):
        self.solids: dict = {}
        self.envelopes: dict = {}

    def object_solids(self, scene: Scene, object_id: str, seed: int = 0) -> list[Superquadric]:
        key = (scene.scene_id, object_id, seed)
        if key not in self.solids:
            self.solids[key] = fit_object_solids(
                scene.object_by_id(object_id).cloud, rng=np.random.default_rng(seed)
            )
        return self.solids[key]

    def envelope(self, scene: Scene, object_id: str, rel: str, seed: int = 0) -> list[Superquadric]:
        key = (scene.scene_id, object_id, rel, seed)
        if key not in self.envelopes:
            self.envelopes[key] = build_envelope(
                scene.object_by_id(object_id).cloud, rel, scene.workspace,
                rng=np.random.default_rng(seed),
            )
        return self.envelopes[key]


def build_envelopes_for_context(
    scene: Scene, context: SemanticContext, seed: int = 0, cache: GeometryCache | None = None
) -> EnvelopeSet:
    cache = cache or GeometryCache()
    entries = []
    for label, rel in context.spatial:
        for obj in scene.objects:
            if obj.label == label:
                entries.append((obj.object_id, rel, tuple(cache.envelope(scene, obj.object_id, rel, seed))))
    return EnvelopeSet(entries=tuple(entries))


class SimSession:
    """One arm, one scene, one held object, one logical timeline."""

    def __init__(
        self,
        chain: KinematicChain,
        state: JointState,
        scene: Scene,
        client=None,
        held_object: str = NONE_OBJECT,
        config: SimConfig | None = None,
        q0: np.ndarray | None = None,
        filter_enabled: bool = True,
        cache: GeometryCache | None = None,
    ):
        self.chain = chain
        self.state = state
        self.scene = scene
        self.client = client
        self.config = config or SimConfig()
        self.filter_enabled = filter_enabled
        self.cache = cache or GeometryCache()
        self.rng = np.random.default_rng(self.config.seed)
        self.q = np.array(q0 if q0 is not None else state.q, dtype=float)
        self.tick_count = 0
        self.ticks: list[dict] = []

        self.scene_solids = [
            (obj.object_id, self.cache.object_solids(scene, obj.object_id, self.config.seed))
            for obj in scene.objects
        ]
        self.held_object = NONE_OBJECT
        self.context = default_context(scene.labels)
        self.envelopes = EnvelopeSet()
        self._rebuild(self.context, NONE_OBJECT)
        if held_object != NONE_OBJECT:
            self.set_held_object(held_object, client)

    # -- context management -------------------------------------------------

    def _synthesize(self, held_object: str, client) -> SemanticContext:
        if held_object == NONE_OBJECT:
            return default_context(self.scene.labels)
        if client is None:
            raise ValueError("a client is required to synthesize a non-empty context")
        return synthesize_context(
            self.scene.labels,
            held_object,
            self.scene.description,
            client,
            votes=self.config.votes,
        )

    def _rebuild(self, context: SemanticContext, held_object: str) -> None:
        envelopes = build_envelopes_for_context(self.scene, context, self.config.seed, self.cache)
        bonus = self.config.held_radius_bonus.get(held_object, 0.0)
        stack = build_stack(
            self.chain,
            self.scene_solids,
            envelopes,
            context,
            sem_gain=self.config.sem_gain,
            geo_gain=self.config.geo_gain,
            caution_weight=self.config.caution_weight,
            smooth_min=self.config.smooth_min,
            ee_radius_bonus=bonus,
        )
        R_des = forward_kinematics(self.chain, self.q).rotation
        rot = RotationObjective.for_context(context, R_des, self.config.dt, w_rot=self.config.w_rot)
        # Commit only after everything rebuilt cleanly.
        self.context = context
        self.held_object = held_object
        self.envelopes = envelopes
        self.stack = stack
        self.rot = rot

    def set_held_object(self, held_object: str, client=None) -> SemanticContext:
        """Switch the manipulated object: resynthesizes constraints, rebuilds
        the barrier stack, and pins the desired rotation to the current pose.

        The session is left unchanged if synthesis fails.
        """
        client = client if client is not None else self.client
        context = self._synthesize(held_object, client)
        if held_object != NONE_OBJECT and not context.spatial and context.pose == "free_rotation":
            log.warning("context for %r carries no semantic constraints (unknown object?)", held_object)
        self._rebuild(context, held_object)
        return context

    # -- stepping ------------------------------------------------------------

    def step(self, twist) -> dict:
        """Advance one tick under a 6-vector [v, w] end effector command."""
        twist = np.asarray(twist, dtype=float).ravel()
        frames = frame_transforms(self.chain, self.q)
        ev = evaluate_stack(self.chain, self.state, self.q, self.stack, frames=frames)
        u_cmd = diff_ik(self.chain, self.q, twist, damping=self.config.ik_damping, frames=frames)
        if self.filter_enabled:
            result = certify(
                self.chain,
                self.state,
                self.q,
                u_cmd,
                self.stack,
                self.rot,
                barrier_eval=ev,
                frames=frames,
                slack_weight=self.config.slack_weight,
                h_recover=self.config.h_recover,
            )
            u_cert = result.u_cert
            status = result.status
            active_rows = result.active_rows
            solve_time = result.solve_time
        else:
            u_cert = np.clip(u_cmd, -self.state.vel_limit, self.state.vel_limit)
            status = "bypass"
            active_rows = []
            solve_time = 0.0

        h_by_class = {name: [] for name in ("sem", "env", "self", "lim")}
        hdot_by_class = {name: [] for name in ("sem", "env", "self", "lim")}
        hdot = ev.A @ np.asarray(u_cert)
        alpha_by_class = {name: [] for name in ("sem", "env", "self", "lim")}
        for cls, h, hd, al in zip(ev.classes, ev.h, hdot, ev.alpha_h):
            h_by_class[cls].append(float(h))
            hdot_by_class[cls].append(float(hd))
            alpha_by_class[cls].append(float(al))
        tick = {
            "t": self.tick_count * self.config.dt,
            "q": self.q.tolist(),
            "u_cmd": u_cmd.tolist(),
            "u_cert": np.asarray(u_cert).tolist(),
            "status": status,
            "h": h_by_class,
            "hdot": hdot_by_class,
            "alpha": alpha_by_class,
            "active_rows": active_rows,
            "solve_time": solve_time,
        }
        self.q = self.q + self.config.dt * np.asarray(u_cert)
        self.tick_count += 1
        self.ticks.append(tick)
        return tick

    def run_stream(self, stream: CommandStream, violation_tol: float | None = None) -> tuple[dict, list[dict]]:
        """Execute a whole command stream; returns (metrics entry, tick log)."""
        resampled = resample_stream(stream, 1.0 / self.config.dt)
        start = len(self.ticks)
        for i in range(len(resampled)):
            self.step(np.concatenate([resampled.v[i], resampled.w[i]]))
        ticks = self.ticks[start:]
        tol = self.config.violation_tol if violation_tol is None else violation_tol
        return violation_metric(ticks, tol=tol), ticks


def brute_force_oracle(session: SimSession, ticks: list[dict]) -> OracleReport:
    """Re-check every logged tick by dense geometric tests, independent of rows.

    Control-point spheres against raw cloud points, end effector membership
    against the stored envelope solids, sphere pairs, and joint limits.
    """
    chain, state = session.chain, session.state
    cps = session.stack.control_points
    trees = [(obj.object_id, cKDTree(obj.cloud.points)) for obj in session.scene.objects]
    envelope_solids = [solids for _obj, _rel, solids in session.envelopes]
    radii = np.array([cp.radius for cp in cps])

    oracle_flags = []
    barrier_flags = []
    for tick in ticks:
        q = np.asarray(tick["q"], dtype=float)
        frames = frame_transforms(chain, q)
        P, _ = point_kinematics(chain, q, cps, frames=frames)
        violated = bool((q < state.limits_lo).any() or (q > state.limits_hi).any())
        if not violated:
            for _oid, tree in trees:
                d, _ = tree.query(P, k=1)
                if (d <= radii).any():
                    violated = True
                    break
        if not violated:
            x_ee = frames[-1][:3, 3]
            for solids in envelope_solids:
                if min(sq_eval(s, x_ee) for s in solids) < 1.0:
                    violated = True
                    break
        if not violated:
            for i in range(len(cps)):
                for j in range(i + 1, len(cps)):
                    if abs(cps[i].frame - cps[j].frame) <= 1:
                        continue
                    d = P[i] - P[j]
                    if float(d @ d) < (radii[i] + radii[j]) ** 2:
                        violated = True
                        break
                if violated:
                    break
        oracle_flags.append(violated)
        h_min = min((min(v) for v in tick["h"].values() if v), default=float("inf"))
        barrier_flags.append(h_min < 0.0)
    return OracleReport(oracle_flags=oracle_flags, barrier_flags=barrier_flags)


def caution_comparison(make_session, stream: CommandStream) -> dict:
    """Run one stream under w_alpha = 1.0 and 0.25 on the same semantic row.

    make_session(caution_weight) must build identically-configured sessions.
    Returns paired series for the first semantic row: h, the model
    derivative hdot = a^T u_cert, its finite-difference counterpart, and
    alpha(h) under that run's own class-K.
    """
    out = {}
    for name, w in (("nominal", 1.0), ("cautious", 0.25)):
        session = make_session(w)
        if not session.stack.sem:
            raise ValueError("caution comparison needs an active semantic row")
        _, ticks = session.run_stream(stream)
        h = np.array([tk["h"]["sem"][0] for tk in ticks])
        hdot = np.array([tk["hdot"]["sem"][0] for tk in ticks])
        alpha = np.array([tk["alpha"]["sem"][0] for tk in ticks])
        hdot_fd = np.diff(h, append=h[-1]) / session.config.dt
        out[name] = {"h": h, "hdot": hdot, "hdot_fd": hdot_fd, "alpha": alpha, "ticks": ticks}
    return out


# --- scripted adversarial command streams ------------------------------------


def _path_to_stream(path_points: np.ndarray, rate: float, w: np.ndarray | None = None) -> CommandStream:
    n = len(path_points)
    t = np.arange(n) / rate
    v = np.zeros((n, 3))
    v[:-1] = np.diff(path_points, axis=0) * rate
    if w is None:
        w = np.zeros((n, 3))
    return CommandStream(rate_hz=rate, t=t, v=v, w=w)


def adversarial_streams(
    start: np.ndarray,
    target: np.ndarray,
    workspace: Box,
    rate: float = 45.0,
    duration: float = 12.0,
    speed: float = 0.18,
    seed: int = 0,
) -> list[CommandStream]:
    """Five scripted attack paths aimed at an object of interest.

    Each path pierces the object (and any envelope above it) when executed
    unfiltered: a vertical descent through the center, a lateral stab, an
    inward orbit, a spiral descent, and a sweeping pass over the footprint.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * rate)) + 1
    start = np.asarray(start, dtype=float)
    target = np.asarray(target, dtype=float)

    def timed_waypoints(waypoints: list[np.ndarray]) -> np.ndarray:
        # Constant-speed polyline covering all waypoints within the run.
        pts = [np.asarray(p, dtype=float) for p in waypoints]
        seg = [np.linalg.norm(b - a) for a, b in zip(pts, pts[1:])]
        total = sum(seg)
        path_speed = max(total / ((n - 1) / rate), 1e-9)
        samples = np.empty((n, 3))
        d_along = np.linspace(0.0, total, n)
        acc = 0.0
        k = 0
        for i, dist in enumerate(d_along):
            while k < len(seg) - 1 and dist > acc + seg[k]:
                acc += seg[k]
                k += 1
            frac = (dist - acc) / seg[k] if seg[k] > 1e-12 else 0.0
            samples[i] = pts[k] + min(frac, 1.0) * (pts[k + 1] - pts[k])
        return samples

    above = target + np.array([0.0, 0.0, 0.35])
    below = target - np.array([0.0, 0.0, 0.15])
    side_a = target + np.array([0.30, 0.0, 0.02])
    side_b = target - np.array([0.30, 0.0, -0.02])

    streams = []
    # 1. descend and pierce vertically through the object
    streams.append(_path_to_stream(timed_waypoints([start, above, below]), rate))
    # 2. lateral stab through the center
    streams.append(_path_to_stream(timed_waypoints([start, side_a, target, side_b]), rate))
    # 3. inward orbit at object height
    theta = np.linspace(0.0, 4.0 * np.pi, n)
    radius = np.linspace(0.35, 0.02, n)
    orbit = np.column_stack(
        [
            target[0] + radius * np.cos(theta),
            target[1] + radius * np.sin(theta),
            np.full(n, target[2] + 0.05),
        ]
    )
    lead = timed_waypoints([start, orbit[0]])[: n // 6]
    orbit_path = np.vstack([lead, orbit[: n - len(lead)]])
    streams.append(_path_to_stream(orbit_path, rate))
    # 4. spiral descent onto the object
    z = np.linspace(start[2] + 0.1, max(target[2] - 0.05, 0.01), n)
    radius = np.linspace(0.25, 0.0, n)
    spiral = np.column_stack(
        [target[0] + radius * np.cos(2.5 * theta), target[1] + radius * np.sin(2.5 * theta), z]
    )
    streams.append(_path_to_stream(np.vstack([timed_waypoints([start, spiral[0]])[: n // 6], spiral[: n - n // 6]]), rate))
    # 5. sweeping pass across the footprint, then a dive
    sweep_pts = [start]
    for k in range(4):
        offset = np.array([0.2 * (-1) ** k, 0.15 * (-1) ** (k // 2), 0.25 - 0.05 * k])
        sweep_pts.append(target + offset)
    sweep_pts.append(target)
    sweep_pts.append(below)
    streams.append(_path_to_stream(timed_waypoints(sweep_pts), rate))
    return streams


def rotation_rich_stream(
    rate: float = 45.0, duration: float = 30.0, seed: int = 0, w_mag: float = 0.6, segment_s: float = 7.5
) -> CommandStream:
    """Piecewise-constant angular commands with mild positional drift."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * rate)) + 1
    t = np.arange(n) / rate
    w = np.zeros((n, 3))
    v = np.zeros((n, 3))
    seg = int(segment_s * rate)
    for s in range(0, n, seg):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        w[s : s + seg] = axis * w_mag
        v[s : s + seg] = rng.normal(size=3) * 0.01
    return CommandStream(rate_hz=rate, t=t, v=v, w=w)
