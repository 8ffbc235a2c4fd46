"""Scene, command-stream, and report IO.

Scenes are JSON manifests (schema "semfilter/scene/1") referencing labeled
PLY point clouds. Command streams are end effector twists over time, from
CSV (t, vx, vy, vz, wx, wy, wz) or JSONL. Run reports aggregate violation
fractions across trajectories with the full resolved configuration echoed
for reproducibility.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envelopes import Box
from .kinematics import rpy_to_matrix
from .superquadrics import PointCloud

SCENE_SCHEMA = "semfilter/scene/1"


class SceneError(ValueError):
    """Malformed manifest, stream, or point cloud file."""


# --- PLY ------------------------------------------------------------------

_PLY_TYPES = {
    "float": ("f", 4),
    "float32": ("f", 4),
    "double": ("d", 8),
    "float64": ("d", 8),
    "uchar": ("B", 1),
    "uint8": ("B", 1),
    "char": ("b", 1),
    "int8": ("b", 1),
    "short": ("h", 2),
    "ushort": ("H", 2),
    "int": ("i", 4),
    "int32": ("i", 4),
    "uint": ("I", 4),
    "uint32": ("I", 4),
}


def read_ply(path) -> np.ndarray:
    """Vertex positions from an ASCII or binary little-endian PLY file.

    Only the vertex element is consumed; faces and extra properties are
    ignored.
    """
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise SceneError(f"{path}: not a PLY file")
        fmt = None
        elements = []  # (name, count, [(prop_name, type_code, size)])
        while True:
            line = fh.readline()
            if not line:
                raise SceneError(f"{path}: unexpected end of header")
            tokens = line.decode("ascii", "replace").split()
            if not tokens or tokens[0] == "comment":
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                elements.append((tokens[1], int(tokens[2]), []))
            elif tokens[0] == "property":
                if tokens[1] == "list":
                    elements[-1][2].append((tokens[-1], "list", (tokens[2], tokens[3])))
                else:
                    elements[-1][2].append((tokens[-1], *_PLY_TYPES[tokens[1]]))
            elif tokens[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise SceneError(f"{path}: unsupported PLY format {fmt!r}")

        points = None
        for name, count, props in elements:
            is_vertex = name == "vertex"
            if is_vertex:
                names = [p[0] for p in props]
                if any(axis not in names for axis in "xyz"):
                    raise SceneError(f"{path}: vertex element missing x/y/z")
            if fmt == "ascii":
                rows = []
                for _ in range(count):
                    rows.append(fh.readline().split())
                if is_vertex:
                    cols = [names.index(a) for a in "xyz"]
                    points = np.array([[float(r[c]) for c in cols] for r in rows])
            else:
                if any(p[1] == "list" for p in props):
                    if is_vertex:
                        raise SceneError(f"{path}: list properties unsupported on vertices")
                    for _ in range(count):  # skip e.g. face elements item by item
                        for _pname, kind, info in props:
                            if kind == "list":
                                ccode, csize = _PLY_TYPES[info[0]]
                                (k,) = struct.unpack("<" + ccode, fh.read(csize))
                                icode, isize = _PLY_TYPES[info[1]]
                                fh.read(isize * k)
                            else:
                                fh.read(info)
                    continue
                codes = "".join(p[1] for p in props)
                size = struct.calcsize("<" + codes)
                raw = fh.read(size * count)
                if len(raw) != size * count:
                    raise SceneError(f"{path}: truncated binary payload")
                if is_vertex:
                    rows = list(struct.iter_unpack("<" + codes, raw))
                    cols = [names.index(a) for a in "xyz"]
                    points = np.array([[r[c] for c in cols] for r in rows], dtype=float)
        if points is None:
            raise SceneError(f"{path}: no vertex element")
        if len(points) == 0:
            raise SceneError(f"{path}: empty point cloud")
        return points


def write_ply(path, points: np.ndarray, binary: bool = True) -> None:
    points = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    header = (
        "ply\n"
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
        f"element vertex {len(points)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(points.astype("<f4").tobytes())
        else:
            for p in points:
                fh.write(f"{p[0]} {p[1]} {p[2]}\n".encode("ascii"))


# --- scenes ----------------------------------------------------------------


@dataclass(frozen=True)
class SceneObject:
    object_id: str
    label: str
    cloud: PointCloud


@dataclass(frozen=True)
class Scene:
    scene_id: str
    description: str
    workspace: Box
    objects: tuple[SceneObject, ...]

    @property
    def labels(self) -> list[str]:
        return [o.label for o in self.objects]

    def object_by_id(self, object_id: str) -> SceneObject:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)


def load_scene(manifest_path) -> Scene:
    """Scene from a manifest; clouds land in the world frame, labels attached."""
    manifest_path = Path(manifest_path)
    try:
        with open(manifest_path) as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if data.get("schema") != SCENE_SCHEMA:
        raise SceneError(f"{manifest_path}: expected schema {SCENE_SCHEMA!r}")
    for key in ("scene_id", "workspace", "objects"):
        if key not in data:
            raise SceneError(f"{manifest_path}: missing {key!r}")
    ws = Box(lo=data["workspace"]["lo"], hi=data["workspace"]["hi"])
    seen = set()
    objects = []
    for entry in data["objects"]:
        oid = entry["object_id"]
        if oid in seen:
            raise SceneError(f"{manifest_path}: duplicate object_id {oid!r}")
        seen.add(oid)
        ply_path = manifest_path.parent / entry["ply_path"]
        if not ply_path.exists():
            raise SceneError(f"{manifest_path}: missing PLY {ply_path}")
        points = read_ply(ply_path)
        cloud = PointCloud(points, label=entry["label"], object_id=oid)
        pose = entry.get("pose")
        if pose:
            cloud = cloud.transformed(
                rpy_to_matrix(pose.get("rpy", (0, 0, 0))), np.asarray(pose.get("xyz", (0, 0, 0)), dtype=float)
            )
        objects.append(SceneObject(object_id=oid, label=entry["label"], cloud=cloud))
    return Scene(
        scene_id=data["scene_id"],
        description=data.get("description", ""),
        workspace=ws,
        objects=tuple(objects),
    )


# --- command streams --------------------------------------------------------


@dataclass(frozen=True)
class CommandStream:
    """End effector twist commands over time."""

    rate_hz: float
    t: np.ndarray
    v: np.ndarray  # (T, 3) linear (m/s)
    w: np.ndarray  # (T, 3) angular (rad/s)

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float).reshape(-1, 3))
        if self.rate_hz <= 0:
            raise SceneError("stream rate must be positive")
        if len(self.t) != len(self.v) or len(self.t) != len(self.w):
            raise SceneError("stream arrays must share one length")
        if len(self.t) > 1 and not (np.diff(self.t) > 0).all():
            raise SceneError("stream timestamps must strictly increase")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1]) if len(self.t) else 0.0


def load_stream(path, rate_hz: float | None = None) -> CommandStream:
    """CSV (t,vx,vy,vz,wx,wy,wz) or JSONL ({t, v, w}) command stream."""
    path = Path(path)
    t, v, w = [], [], []
    if path.suffix.lower() == ".csv":
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("t,"):
                    continue
                vals = [float(x) for x in line.split(",")]
                if len(vals) != 7:
                    raise SceneError(f"{path}: CSV rows need 7 columns")
                t.append(vals[0])
                v.append(vals[1:4])
                w.append(vals[4:7])
    else:
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                t.append(float(row["t"]))
                v.append(row["v"])
                w.append(row["w"])
    if not t:
        raise SceneError(f"{path}: empty stream")
    if rate_hz is None:
        rate_hz = 1.0 / float(np.median(np.diff(t))) if len(t) > 1 else 1.0
    return CommandStream(rate_hz=rate_hz, t=np.array(t), v=np.array(v), w=np.array(w))


def save_stream(path, stream: CommandStream) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, "w") as f:
            f.write("t,vx,vy,vz,wx,wy,wz\n")
            for i in range(len(stream)):
                row = [stream.t[i], *stream.v[i], *stream.w[i]]
                f.write(",".join(f"{x:.9g}" for x in row) + "\n")
    else:
        with open(path, "w") as f:
            for i in range(len(stream)):
                f.write(
                    json.dumps({"t": float(stream.t[i]), "v": stream.v[i].tolist(), "w": stream.w[i].tolist()})
                    + "\n"
                )


def resample_stream(stream: CommandStream, rate_hz: float) -> CommandStream:
    """Zero-order hold resampling onto a uniform grid at rate_hz."""
    if rate_hz <= 0:
        raise SceneError("resample rate must be positive")
    n = max(int(round(stream.duration * rate_hz)) + 1, 1)
    t = np.arange(n) / rate_hz
    idx = np.clip(np.searchsorted(stream.t, t, side="right") - 1, 0, len(stream) - 1)
    return CommandStream(rate_hz=rate_hz, t=t, v=stream.v[idx], w=stream.w[idx])


def smooth_stream(stream: CommandStream, cutoff_hz: float) -> CommandStream:
    """First-order low-pass per channel, zero initial state.

    Time constant 1/(2 pi cutoff); timestamps are unchanged.
    """
    if not (0.0 < cutoff_hz < stream.rate_hz / 2.0):
        raise SceneError("cutoff must lie in (0, rate/2)")
    dt = 1.0 / stream.rate_hz
    a = 1.0 - math.exp(-dt * 2.0 * math.pi * cutoff_hz)
    v = np.empty_like(stream.v)
    w = np.empty_like(stream.w)
    sv = np.zeros(3)
    sw = np.zeros(3)
    for i in range(len(stream)):
        sv = sv + a * (stream.v[i] - sv)
        sw = sw + a * (stream.w[i] - sw)
        v[i] = sv
        w[i] = sw
    return CommandStream(rate_hz=stream.rate_hz, t=stream.t.copy(), v=v, w=w)


# --- tick logs and reports ---------------------------------------------------


def write_tick_log(path, ticks: list[dict]) -> None:
    with open(path, "w") as f:
        for tick in ticks:
            f.write(json.dumps(tick) + "\n")


def read_tick_log(path) -> list[dict]:
    ticks = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                ticks.append(json.loads(line))
    return ticks


def _tick_h_min(tick: dict, cls: str | None = None) -> float:
    h = tick["h"]
    if cls is not None:
        vals = h.get(cls, [])
        return min(vals) if vals else float("inf")
    vals = [x for series in h.values() for x in series]
    return min(vals) if vals else float("inf")


def violation_metric(ticks: list[dict], tol: float = 0.0) -> dict:
    """Fraction of ticks whose minimum barrier value falls below -tol.

    Includes a per-constraint-class breakdown; an empty log counts as 0%.
    """
    n = len(ticks)
    if n == 0:
        return {"ticks": 0, "fraction": 0.0, "per_class": {c: 0.0 for c in ("sem", "env", "self", "lim")}}
    overall = sum(1 for tk in ticks if _tick_h_min(tk) < -tol)
    per_class = {}
    for cls in ("sem", "env", "self", "lim"):
        per_class[cls] = sum(1 for tk in ticks if _tick_h_min(tk, cls) < -tol) / n
    return {"ticks": n, "fraction": overall / n, "per_class": per_class}


@dataclass
class RunReport:
    """Violation statistics across trajectories plus the resolved config."""

    trajectories: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def add(self, name: str, metrics: dict) -> None:
        self.trajectories.append({"name": name, **metrics})

    @property
    def fractions(self) -> np.ndarray:
        return np.array([t["fraction"] for t in self.trajectories], dtype=float)

    def summary(self) -> dict:
        fr = self.fractions
        mean = float(fr.mean()) if len(fr) else 0.0
        std = float(fr.std(ddof=1)) if len(fr) > 1 else 0.0
        return {"mean": mean, "std": std, "count": len(fr)}

    def to_dict(self) -> dict:
        return {"trajectories": self.trajectories, "summary": self.summary(), "config": self.config}

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(trajectories=list(d.get("trajectories", [])), config=dict(d.get("config", {})))

    @classmethod
    def load(cls, path) -> "RunReport":
        with open(path) as f:
            return cls.from_dict(json.load(f))
