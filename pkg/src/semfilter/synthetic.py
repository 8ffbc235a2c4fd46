"""Synthetic desk scenes: scan-style point clouds and manifest writers.

Clouds imitate RGB-D reconstructions of tabletop objects (dense top
surfaces, sparser sides, mild sensor noise) so that fitting and plane
splitting behave as they would on real captures.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .scene import SCENE_SCHEMA, Scene, load_scene, write_ply

def make_box_cloud(
    center, half, rng: np.random.Generator, n_top: int = 400, n_side: int = 70, noise: float = 0.0015
) -> np.ndarray:
    """Top-down scan of a box: dense top face, sparse side faces."""
    cx, cy, cz = center
    hx, hy, hz = half
    top = np.column_stack(
        [rng.uniform(-hx, hx, n_top) + cx, rng.uniform(-hy, hy, n_top) + cy, np.full(n_top, cz + hz)]
    )
    parts = [top]
    for sx in (-hx, hx):
        parts.append(
            np.column_stack(
                [np.full(n_side, cx + sx), rng.uniform(-hy, hy, n_side) + cy, rng.uniform(-hz, hz, n_side) + cz]
            )
        )
    for sy in (-hy, hy):
        parts.append(
            np.column_stack(
                [rng.uniform(-hx, hx, n_side) + cx, np.full(n_side, cy + sy), rng.uniform(-hz, hz, n_side) + cz]
            )
        )
    cloud = np.vstack(parts)
    return cloud + rng.normal(0.0, noise, cloud.shape)


def make_sphere_cloud(center, radius: float, rng: np.random.Generator, n: int = 400, noise: float = 0.0015) -> np.ndarray:
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return np.asarray(center) + radius * dirs + rng.normal(0.0, noise, (n, 3))


def make_laptop_cloud(
    hinge, width: float, depth: float, opening_deg: float, rng: np.random.Generator, n: int = 350, noise: float = 0.0015
) -> np.ndarray:
    """Open laptop: keyboard slab plus a screen slab raised at the hinge."""
    hx, hy, hz = hinge
    base = np.column_stack(
        [
            hx + rng.uniform(0.0, depth, n),
            hy + rng.uniform(-width / 2.0, width / 2.0, n),
            np.full(n, hz),
        ]
    )
    ang = np.deg2rad(opening_deg)
    d = np.array([np.cos(ang), 0.0, np.sin(ang)])
    u = rng.uniform(0.0, depth, n)
    screen = np.outer(u, d) + np.column_stack(
        [np.full(n, hx), hy + rng.uniform(-width / 2.0, width / 2.0, n), np.full(n, hz)]
    )
    cloud = np.vstack([base, screen])
    return cloud + rng.normal(0.0, noise, cloud.shape)


_WORKSPACE = {"lo": [-0.85, -0.85, 0.0], "hi": [0.85, 0.85, 1.2]}

HELD_OBJECTS = ("none", "dry sponge", "cup of water", "lit candle", "knife")


def build_demo_scene(scene_id: str, out_dir, seed: int = 0) -> Path:
    """Write one of the scripted desk scenes (manifest + PLY files).

    Available: 'books', 'laptop_books', 'balloons_towel'.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    objects = []

    def add(object_id, label, points, pose=None):
        ply = f"{object_id}.ply"
        write_ply(out_dir / ply, points)
        entry = {"object_id": object_id, "label": label, "ply_path": ply}
        if pose:
            entry["pose"] = pose
        objects.append(entry)

    if scene_id == "books":
        add("books", "books", make_box_cloud((0.48, -0.28, 0.0), (0.12, 0.09, 0.06), rng))
        description = "An office desk with a stack of books on it."
    elif scene_id == "laptop_books":
        # The laptop sits far enough from the home pose that even its
        # dilated 'near' envelope starts satisfied.
        add("laptop", "laptop", make_laptop_cloud((0.58, 0.48, 0.0), 0.24, 0.18, 100.0, rng))
        add("books", "books", make_box_cloud((0.50, -0.30, 0.0), (0.11, 0.08, 0.05), rng))
        description = "An office desk with an open laptop and a stack of books."
    elif scene_id == "balloons_towel":
        # The balloon sits far enough out that its dilated 'near' envelope
        # leaves the arm's home end effector pose in the safe set.
        add("balloons", "balloons", make_sphere_cloud((0.62, 0.45, 0.55), 0.10, rng))
        add("towel", "paper towel", make_box_cloud((0.52, -0.30, 0.0), (0.06, 0.06, 0.10), rng))
        description = "A party table with floating balloons and a paper towel roll."
    else:
        raise ValueError(f"unknown demo scene {scene_id!r}")

    manifest = {
        "schema": SCENE_SCHEMA,
        "scene_id": scene_id,
        "description": description,
        "workspace": _WORKSPACE,
        "objects": objects,
    }
    manifest_path = out_dir / f"{scene_id}.json"
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2)
    return manifest_path


def demo_scene(scene_id: str, tmp_dir, seed: int = 0) -> Scene:
    return load_scene(build_demo_scene(scene_id, tmp_dir, seed=seed))
