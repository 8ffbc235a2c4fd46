"""Spatial-relationship envelopes built from unions of superquadrics.

Each of the 12 relationship tags has a construction rule that turns an
object's point cloud into a region of end effector positions to exclude:
axis extensions push a flattened duplicate of the cloud to the workspace
boundary, dilations grow the cloud outward, and column rules span the
full workspace height over the footprint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .superquadrics import PointCloud, Superquadric, inflate_to_contain, sq_fit

RELATIONSHIPS = (
    "above",
    "under",
    "left_of",
    "right_of",
    "in_front_of",
    "behind",
    "around",
    "near",
    "inside",
    "on_top_of",
    "overhead_column",
    "beneath_column",
)

# axis extensions: (coordinate index, direction toward the workspace boundary)
_AXIS_RULES = {
    "above": (2, +1),
    "under": (2, -1),
    "left_of": (1, +1),
    "right_of": (1, -1),
    "in_front_of": (0, +1),
    "behind": (0, -1),
}

AROUND_MARGIN = 0.15
NEAR_MARGIN = 0.30
ON_TOP_MARGIN = 0.10

RANSAC_INLIER_THRESHOLD = 0.01  # 1 cm
RANSAC_MIN_PART_FRACTION = 0.15
RANSAC_ITERATIONS = 120


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, used for the robot workspace."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if not (self.lo < self.hi).all():
            raise ValueError("box must have lo < hi elementwise")

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool((p >= self.lo).all() and (p <= self.hi).all())


@dataclass(frozen=True)
class EnvelopeSet:
    """Per-object unions of superquadrics, tagged by relationship."""

    entries: tuple[tuple[str, str, tuple[Superquadric, ...]], ...] = ()

    def __post_init__(self):
        entries = tuple(
            (obj, rel, tuple(solids)) for obj, rel, solids in self.entries
        )
        for obj, rel, solids in entries:
            if rel not in RELATIONSHIPS:
                raise ValueError(f"unknown relationship tag {rel!r}")
            if not solids:
                raise ValueError(f"empty envelope union for {obj!r}/{rel!r}")
        object.__setattr__(self, "entries", entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


def _plane_from_points(p0, p1, p2):
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return None
    n = n / norm
    return n, float(-np.dot(n, p0))


def _best_plane(points: np.ndarray, rng: np.random.Generator):
    """RANSAC plane search; returns (normal, offset, inlier mask) or None."""
    m = len(points)
    if m < 3:
        return None
    best = None
    best_count = 0
    for _ in range(RANSAC_ITERATIONS):
        idx = rng.choice(m, size=3, replace=False)
        plane = _plane_from_points(*points[idx])
        if plane is None:
            continue
        n, d = plane
        dist = np.abs(points @ n + d)
        count = int((dist < RANSAC_INLIER_THRESHOLD).sum())
        if count > best_count:
            best_count = count
            best = (n, d)
    if best is None:
        return None
    # One refinement round: refit to inliers by SVD, recollect.
    n, d = best
    mask = np.abs(points @ n + d) < RANSAC_INLIER_THRESHOLD
    sub = points[mask]
    if len(sub) >= 3:
        c = sub.mean(axis=0)
        _, _, vt = np.linalg.svd(sub - c, full_matrices=False)
        n = vt[2]
        d = float(-np.dot(n, c))
        mask = np.abs(points @ n + d) < RANSAC_INLIER_THRESHOLD
    return n, d, mask


def split_by_parts(cloud: PointCloud, rng: np.random.Generator | None = None) -> list[PointCloud]:
    """Partition a cloud into approximately-planar parts by plane extraction.

    Splitting requires at least two planes that each hold >= 15% of the
    cloud; otherwise the cloud is returned whole. Leftover points join the
    part whose plane they are closest to.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    pts = cloud.points
    total = len(pts)
    min_count = max(int(np.ceil(RANSAC_MIN_PART_FRACTION * total)), 3)

    planes = []
    masks = []
    rest_idx = np.arange(total)
    while len(rest_idx) >= min_count:
        found = _best_plane(pts[rest_idx], rng)
        if found is None:
            break
        n, d, mask = found
        if int(mask.sum()) < min_count:
            break
        planes.append((n, d))
        masks.append(rest_idx[mask])
        rest_idx = rest_idx[~mask]

    if len(planes) < 2:
        return [cloud]

    # Assign leftovers to the nearest extracted plane.
    groups = [list(m) for m in masks]
    if len(rest_idx):
        dists = np.stack([np.abs(pts[rest_idx] @ n + d) for n, d in planes])
        nearest = np.argmin(dists, axis=0)
        for i, part in zip(rest_idx, nearest):
            groups[part].append(i)
    return [
        PointCloud(pts[np.sort(np.asarray(g))], label=cloud.label, object_id=cloud.object_id)
        for g in groups
    ]


def _flatten_to(points: np.ndarray, axis: int, value: float) -> np.ndarray:
    dup = points.copy()
    dup[:, axis] = value
    return dup


def _dilate(points: np.ndarray, margin: float) -> np.ndarray:
    """Offset copy of a part at the given margin.

    Near-planar parts grow along their plane normal and radially in-plane
    (a slab's Minkowski ball sum); rounder parts grow radially from the
    centroid, which is the outward normal for closed shapes.
    """
    center = points.mean(axis=0)
    d = points - center
    svals = np.linalg.svd(d, compute_uv=False)
    if svals[2] < 0.25 * svals[0]:
        _, _, vt = np.linalg.svd(d, full_matrices=False)
        n = vt[2]
        in_plane = d - np.outer(d @ n, n)
        norms = np.linalg.norm(in_plane, axis=1, keepdims=True)
        dirs = np.divide(in_plane, norms, out=np.zeros_like(in_plane), where=norms > 1e-9)
        return np.vstack([points + margin * n, points - margin * n, points + margin * dirs])
    norms = np.linalg.norm(d, axis=1, keepdims=True)
    dirs = np.divide(d, norms, out=np.zeros_like(d), where=norms > 1e-9)
    return points + margin * dirs


def _extend_part(points: np.ndarray, relationship: str, workspace: Box, margin: float | None):
    """Constructed (possibly extended) point set for one planar part."""
    if relationship in _AXIS_RULES:
        axis, sign = _AXIS_RULES[relationship]
        overshoot = max(0.2 * workspace.extent[axis], 0.2)
        target = (workspace.hi[axis] + overshoot) if sign > 0 else (workspace.lo[axis] - overshoot)
        return np.vstack([points, _flatten_to(points, axis, target)])
    if relationship in ("around", "near"):
        m = margin if margin is not None else (AROUND_MARGIN if relationship == "around" else NEAR_MARGIN)
        return np.vstack([points, _dilate(points, m / 2.0), _dilate(points, m)])  # shells at m/2 and m
    if relationship == "inside":
        return points.copy()
    if relationship == "on_top_of":
        top = points[:, 2].max() + (margin if margin is not None else ON_TOP_MARGIN)
        return np.vstack([points, _flatten_to(points, 2, top)])
    if relationship == "overhead_column":
        overshoot = max(0.2 * workspace.extent[2], 0.2)
        return np.vstack(
            [
                points,
                _flatten_to(points, 2, points[:, 2].min()),
                _flatten_to(points, 2, workspace.hi[2] + overshoot),
            ]
        )
    if relationship == "beneath_column":
        overshoot = max(0.2 * workspace.extent[2], 0.2)
        return np.vstack(
            [
                points,
                _flatten_to(points, 2, points[:, 2].max()),
                _flatten_to(points, 2, workspace.lo[2] - overshoot),
            ]
        )
    raise ValueError(f"unknown relationship tag {relationship!r}")


def constructed_point_sets(
    cloud: PointCloud,
    relationship: str,
    workspace: Box,
    rng: np.random.Generator | None = None,
    margin: float | None = None,
) -> list[np.ndarray]:
    """The per-part extended point sets a relationship envelope is fit to."""
    if relationship not in RELATIONSHIPS:
        raise ValueError(f"unknown relationship tag {relationship!r}")
    return [
        _extend_part(part.points, relationship, workspace, margin)
        for part in split_by_parts(cloud, rng=rng)
    ]


def build_envelope(
    cloud: PointCloud,
    relationship: str,
    workspace: Box,
    rng: np.random.Generator | None = None,
    fit_slack: float = 0.1,
    margin: float | None = None,
) -> list[Superquadric]:
    """Union of superquadrics covering the relationship's excluded region.

    The cloud is split into planar parts first, each part is extended by the
    relationship's rule, and one solid is fitted per extended part. Every
    constructed point ends up at g <= 1 + fit_slack for its part's solid.
    """
    solids = []
    for extended in constructed_point_sets(cloud, relationship, workspace, rng=rng, margin=margin):
        sq = sq_fit(PointCloud(extended, label=cloud.label, object_id=cloud.object_id), fit_slack=fit_slack)
        solids.append(inflate_to_contain(sq, extended, 1.0 + fit_slack))
    return solids


def fit_object_solids(cloud: PointCloud, rng: np.random.Generator | None = None) -> list[Superquadric]:
    """Plain union-of-parts fit of an object, for collision constraints."""
    return [sq_fit(part) for part in split_by_parts(cloud, rng=rng)]
