"""Live teleoperation service: sessions over WebSocket plus scene HTTP API.

Wire protocol "semfilter/wire/1": every message carries a type tag (cmd,
state, context, error, hello), a per-direction monotone sequence number,
and a timestamp in milliseconds since session start. One stepper task per
session advances the filter at the tick rate; network reads overwrite a
single latest-command slot, and a deadman timeout substitutes zero twist
when the driver goes quiet. The first connection drives; later ones
observe.
"""

from __future__ import annotations

import asyncio
import json
import logging
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from aiohttp import WSMsgType, web

from .kinematics import fr3_chain, forward_kinematics, load_chain, matrix_to_quaternion
from .scene import Scene, load_scene
from .semantics import FixtureClient
from .simulation import GeometryCache, SimConfig, SimSession
from .superquadrics import sq_mesh

log = logging.getLogger(__name__)

WIRE_SCHEMA = "semfilter/wire/1"
DEADMAN_TIMEOUT_S = 0.25


@dataclass
class CommandSlot:
    """Latest twist command; overwritten on every cmd, never queued."""

    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    deadman: bool = False
    received_at: float = 0.0

    def twist(self, now: float) -> np.ndarray:
        if not self.deadman or now - self.received_at > DEADMAN_TIMEOUT_S:
            return np.zeros(6)
        return np.concatenate([self.v, self.w])


class LiveSession:
    """A simulation session driven by a fixed-rate asyncio stepper."""

    def __init__(self, session_id: str, sim: SimSession):
        self.session_id = session_id
        self.sim = sim
        self.slot = CommandSlot()
        self.subscribers: set[asyncio.Queue] = set()
        self.driver_id: str | None = None
        self.seq_out = 0
        self.started_at = time.monotonic()
        self.latest_tick: dict | None = None
        self._task: asyncio.Task | None = None

    def timestamp_ms(self) -> int:
        return int((time.monotonic() - self.started_at) * 1000)

    def envelope_meshes(self) -> list[dict]:
        return [
            {
                "object_id": obj,
                "relationship": rel,
                "meshes": [sq_mesh(s) for s in solids],
                "class": "sem",
            }
            for obj, rel, solids in self.sim.envelopes
        ]

    def scene_meshes(self) -> list[dict]:
        return [
            {
                "object_id": obj,
                "meshes": [sq_mesh(s) for s in solids],
                "class": "env",
            }
            for obj, solids in self.sim.scene_solids
        ]

    def hello_message(self) -> dict:
        sim = self.sim
        return self._stamp(
            {
                "type": "hello",
                "schema": WIRE_SCHEMA,
                "scene_id": sim.scene.scene_id,
                "n": sim.chain.n,
                "dt": sim.config.dt,
                "held_object": sim.held_object,
                "objects": [
                    {"object_id": o.object_id, "label": o.label} for o in sim.scene.objects
                ],
                # display-only chain description so clients can draw the arm
                "chain": {
                    "joints": [
                        {"axis": j.axis.tolist(), "origin": j.origin.tolist()} for j in sim.chain.joints
                    ],
                    "base_pose": sim.chain.base_pose.tolist(),
                    "ee_offset": sim.chain.ee_offset.tolist(),
                },
                "workspace": {
                    "lo": sim.scene.workspace.lo.tolist(),
                    "hi": sim.scene.workspace.hi.tolist(),
                },
                "envelopes": self.envelope_meshes(),
                "scene_solids": self.scene_meshes(),
            }
        )

    def context_message(self, warning: str | None = None) -> dict:
        msg = {
            "type": "context",
            "context": self.sim.context.to_dict(),
            "envelopes": self.envelope_meshes(),
        }
        if warning:
            msg["warning"] = warning
        return self._stamp(msg)

    def state_message(self, tick: dict) -> dict:
        q = np.asarray(tick["q"], dtype=float)
        pose = forward_kinematics(self.sim.chain, q)
        return self._stamp(
            {
                "type": "state",
                "q": tick["q"],
                "x_ee": pose.position.tolist(),
                "R_cur": matrix_to_quaternion(pose.rotation).tolist(),
                "u_cmd": tick["u_cmd"],
                "u_cert": tick["u_cert"],
                "status": tick["status"],
                "h": tick["h"],
                "labels": self._labels,
                "active_rows": tick["active_rows"],
                "tick": self.sim.tick_count,
            }
        )

    def _stamp(self, msg: dict) -> dict:
        self.seq_out += 1
        msg["seq"] = self.seq_out
        msg["t_ms"] = self.timestamp_ms()
        return msg

    @property
    def _labels(self) -> dict:
        from .barriers import evaluate_stack  # local import to avoid cycles

        if not hasattr(self, "_label_cache"):
            ev = evaluate_stack(self.sim.chain, self.sim.state, self.sim.q, self.sim.stack)
            by_class = {name: [] for name in ("sem", "env", "self", "lim")}
            for cls, lbl in zip(ev.classes, ev.labels):
                by_class[cls].append(lbl)
            self._label_cache = by_class
        return self._label_cache

    def invalidate_labels(self) -> None:
        if hasattr(self, "_label_cache"):
            del self._label_cache

    async def run(self) -> None:
        dt = self.sim.config.dt
        next_tick = time.monotonic()
        while True:
            now = time.monotonic()
            tick = self.sim.step(self.slot.twist(now))
            self.latest_tick = tick
            msg = self.state_message(tick)
            for queue in list(self.subscribers):
                if queue.full():
                    try:
                        queue.get_nowait()  # drop the oldest snapshot
                    except asyncio.QueueEmpty:
                        pass
                queue.put_nowait(msg)
            next_tick += dt
            delay = next_tick - time.monotonic()
            if delay < -1.0:  # fell far behind; resynchronize
                next_tick = time.monotonic()
                delay = 0.0
            await asyncio.sleep(max(delay, 0.0))

    def start(self) -> None:
        self._task = asyncio.get_running_loop().create_task(self.run())

    async def stop(self) -> None:
        if self._task is not None:
            self._task.cancel()
            try:
                await self._task
            except asyncio.CancelledError:
                pass


class Service:
    """HTTP/WebSocket front: scenes, session lifecycle, live telemetry."""

    def __init__(self, scene_dir, fixture_rules=None, config: SimConfig | None = None, chain_path=None):
        self.scene_dir = Path(scene_dir)
        if not self.scene_dir.is_dir():
            raise FileNotFoundError(f"scene directory {scene_dir} does not exist")
        self.config = config or SimConfig()
        self.client = (
            FixtureClient.from_file(fixture_rules) if fixture_rules else FixtureClient.default()
        )
        if chain_path:
            self.chain, self.joint_state = load_chain(chain_path)
        else:
            self.chain, self.joint_state = fr3_chain()
        self.sessions: dict[str, LiveSession] = {}
        self.cache = GeometryCache()
        self.scenes: dict[str, Scene] = {}
        for manifest in sorted(self.scene_dir.glob("*.json")):
            try:
                scene = load_scene(manifest)
            except Exception as exc:
                log.warning("skipping %s: %s", manifest, exc)
                continue
            self.scenes[scene.scene_id] = scene

    # -- HTTP ------------------------------------------------------------

    async def handle_scenes(self, request: web.Request) -> web.Response:
        return web.json_response(
            {
                "scenes": [
                    {
                        "scene_id": s.scene_id,
                        "description": s.description,
                        "objects": [{"object_id": o.object_id, "label": o.label} for o in s.objects],
                    }
                    for s in self.scenes.values()
                ]
            }
        )

    async def handle_scene_meshes(self, request: web.Request) -> web.Response:
        scene_id = request.match_info["scene_id"]
        if scene_id not in self.scenes:
            raise web.HTTPNotFound(text=f"unknown scene {scene_id!r}")
        scene = self.scenes[scene_id]
        rng = np.random.default_rng(self.config.seed)
        meshes = []
        for obj in scene.objects:
            solids = self.cache.object_solids(scene, obj.object_id, rng)
            meshes.append(
                {
                    "object_id": obj.object_id,
                    "label": obj.label,
                    "points": obj.cloud.points[:: max(len(obj.cloud.points) // 500, 1)].tolist(),
                    "meshes": [sq_mesh(s) for s in solids],
                }
            )
        return web.json_response({"scene_id": scene_id, "objects": meshes})

    async def handle_create_session(self, request: web.Request) -> web.Response:
        try:
            body = await request.json()
        except json.JSONDecodeError:
            raise web.HTTPBadRequest(text="body must be JSON")
        scene_id = body.get("scene_id")
        if scene_id not in self.scenes:
            raise web.HTTPBadRequest(text=f"unknown scene {scene_id!r}")
        held = body.get("object", "none")
        sim = SimSession(
            self.chain,
            self.joint_state,
            self.scenes[scene_id],
            client=self.client,
            held_object=held,
            config=self.config,
            cache=self.cache,
        )
        session_id = uuid.uuid4().hex[:12]
        live = LiveSession(session_id, sim)
        self.sessions[session_id] = live
        live.start()
        return web.json_response(
            {
                "session_id": session_id,
                "scene_id": scene_id,
                "n": sim.chain.n,
                "dt": sim.config.dt,
                "ws_path": f"/ws/session/{session_id}",
            }
        )

    async def handle_set_context(self, request: web.Request) -> web.Response:
        session = self.sessions.get(request.match_info["session_id"])
        if session is None:
            raise web.HTTPNotFound(text="unknown session")
        try:
            body = await request.json()
            held = body["held_object"]
        except (json.JSONDecodeError, KeyError):
            raise web.HTTPBadRequest(text="body must be JSON with held_object")
        try:
            session.sim.set_held_object(held)
        except Exception as exc:
            return web.json_response(
                {"error": str(exc), "context": session.sim.context.to_dict()}, status=409
            )
        session.invalidate_labels()
        msg = session.context_message()
        for queue in list(session.subscribers):
            if not queue.full():
                queue.put_nowait(msg)
        return web.json_response(msg)

    # -- WebSocket ---------------------------------------------------------

    async def handle_ws(self, request: web.Request) -> web.WebSocketResponse:
        session = self.sessions.get(request.match_info["session_id"])
        if session is None:
            raise web.HTTPNotFound(text="unknown session")
        ws = web.WebSocketResponse(heartbeat=30.0)
        await ws.prepare(request)

        conn_id = uuid.uuid4().hex[:8]
        is_driver = session.driver_id is None
        if is_driver:
            session.driver_id = conn_id
        queue: asyncio.Queue = asyncio.Queue(maxsize=8)
        session.subscribers.add(queue)
        await ws.send_json(session.hello_message())

        async def pump_states():
            while True:
                msg = await queue.get()
                await ws.send_json(msg)

        pump = asyncio.get_running_loop().create_task(pump_states())
        seq_in = 0
        try:
            async for raw in ws:
                if raw.type != WSMsgType.TEXT:
                    continue
                try:
                    msg = json.loads(raw.data)
                except json.JSONDecodeError:
                    await ws.send_json(session._stamp({"type": "error", "error": "malformed JSON"}))
                    continue
                kind = msg.get("type")
                if kind == "cmd":
                    if conn_id != session.driver_id:
                        await ws.send_json(
                            session._stamp({"type": "error", "error": "observer connections cannot drive"})
                        )
                        continue
                    seq = msg.get("seq")
                    if isinstance(seq, int):
                        if seq <= seq_in:
                            continue  # stale or replayed command
                        seq_in = seq
                    try:
                        v = np.asarray(msg["v"], dtype=float).reshape(3)
                        w = np.asarray(msg["w"], dtype=float).reshape(3)
                        if not (np.isfinite(v).all() and np.isfinite(w).all()):
                            raise ValueError("non-finite twist")
                        deadman = bool(msg.get("deadman", False))
                    except (KeyError, ValueError, TypeError) as exc:
                        session.slot = CommandSlot()  # substitute zero twist
                        await ws.send_json(session._stamp({"type": "error", "error": f"bad cmd: {exc}"}))
                        continue
                    session.slot = CommandSlot(v=v, w=w, deadman=deadman, received_at=time.monotonic())
                else:
                    await ws.send_json(
                        session._stamp({"type": "error", "error": f"unknown message type {kind!r}"})
                    )
        finally:
            pump.cancel()
            session.subscribers.discard(queue)
            if session.driver_id == conn_id:
                session.driver_id = None
                session.slot = CommandSlot()
        return ws

    # -- app -----------------------------------------------------------------

    def build_app(self) -> web.Application:
        app = web.Application()
        app.router.add_get("/scenes", self.handle_scenes)
        app.router.add_get("/scene/{scene_id}/meshes", self.handle_scene_meshes)
        app.router.add_post("/session", self.handle_create_session)
        app.router.add_post("/session/{session_id}/context", self.handle_set_context)
        app.router.add_get("/ws/session/{session_id}", self.handle_ws)
        static_dir = Path(__file__).parent / "static"
        if static_dir.is_dir():
            app.router.add_get("/", self._index)
            app.router.add_static("/ui", static_dir)
        app.on_shutdown.append(self._shutdown)
        return app

    async def _index(self, request: web.Request) -> web.Response:
        index = Path(__file__).parent / "static" / "index.html"
        return web.Response(text=index.read_text(), content_type="text/html")

    async def _shutdown(self, app: web.Application) -> None:
        for session in self.sessions.values():
            await session.stop()


def run_service(scene_dir, port: int = 8745, fixture_rules=None, config: SimConfig | None = None) -> None:
    service = Service(scene_dir, fixture_rules=fixture_rules, config=config)
    web.run_app(service.build_app(), port=port)
