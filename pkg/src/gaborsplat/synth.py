"""Analytic synthetic videos: textured ellipses on parametric trajectories.

Frames are rasterized directly from the recipe (never through the
splatter), so depth, masks and tracks are exact by construction. All
randomness (texture phases, track point placement) derives from the
recipe seed; identical recipes produce identical datasets.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import dataio


@dataclass
class ObjectSpec:
    center: tuple                    # (x, y) at t = 0
    radii: tuple = (8.0, 8.0)
    color: tuple = (0.8, 0.3, 0.2)
    z: float = 5.0
    motion: str = "linear"           # linear | sine | bounce | none
    velocity: tuple = (0.0, 0.0)     # displacement over t in [0, 1]
    sine_amp: tuple = (0.0, 0.0)     # sine path amplitude per axis
    sine_cycles: float = 1.0
    angle: float = 0.0
    spin: float = 0.0                # total rotation over t in [0, 1]
    texture: str = "none"            # none | sine
    tex_freq: float = 0.2            # cycles per pixel along tex_dir
    tex_dir: tuple = (1.0, 0.0)
    tex_amp: float = 1.0
    tex_phase: float = 0.0
    track_points: int = 8
    foreground: bool = True

    def position(self, t: float) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        v = np.asarray(self.velocity, dtype=float)
        if self.motion == "linear":
            return c + v * t
        if self.motion == "sine":
            amp = np.asarray(self.sine_amp, dtype=float)
            return c + v * t + amp * np.sin(2 * np.pi * self.sine_cycles * t)
        if self.motion == "bounce":
            # triangle wave: out along v and straight back, sine_cycles legs
            phase = (t * self.sine_cycles) % 2.0
            tri = phase if phase <= 1.0 else 2.0 - phase
            return c + v * tri
        return c

    def orientation(self, t: float) -> float:
        return self.angle + self.spin * t


@dataclass
class SynthRecipe:
    width: int = 64
    height: int = 64
    frames: int = 8
    seed: int = 0
    background_z: float = 10.0
    objects: list = field(default_factory=list)


def recipe_from_json(path) -> SynthRecipe:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    objects = [ObjectSpec(**{**obj, "center": tuple(obj["center"])})
               for obj in payload.pop("objects", [])]
    return SynthRecipe(objects=objects, **payload)


def recipe_to_json(recipe: SynthRecipe, path) -> None:
    payload = asdict(recipe)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)


def _object_frame(obj: ObjectSpec, t: float, xs: np.ndarray, ys: np.ndarray):
    """(inside mask, local coords) of every pixel for one object at time t."""
    pos = obj.position(t)
    ang = obj.orientation(t)
    ca, sa = np.cos(ang), np.sin(ang)
    dx = xs - pos[0]
    dy = ys - pos[1]
    ex = ca * dx + sa * dy
    ey = -sa * dx + ca * dy
    rx, ry = obj.radii
    inside = (ex / rx) ** 2 + (ey / ry) ** 2 <= 1.0
    return inside, ex, ey


def _object_color(obj: ObjectSpec, ex: np.ndarray, ey: np.ndarray) -> np.ndarray:
    base = np.asarray(obj.color, dtype=float)
    if obj.texture == "sine":
        d = np.asarray(obj.tex_dir, dtype=float)
        d = d / np.linalg.norm(d)
        wave = np.sin(2 * np.pi * obj.tex_freq * (d[0] * ex + d[1] * ey) + obj.tex_phase)
        mod = 1.0 - obj.tex_amp * (0.5 + 0.5 * wave)
        return np.clip(base[None, None, :] * mod[..., None], 0.0, 1.0)
    return np.broadcast_to(base, ex.shape + (3,)).copy()


def render_frame(recipe: SynthRecipe, t: float):
    """(rgb, depth, mask) at normalized time t, front object wins per pixel."""
    h, w = recipe.height, recipe.width
    cols, rows = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    rgb = np.zeros((h, w, 3))
    depth = np.full((h, w), recipe.background_z, dtype=float)
    zbuf = np.full((h, w), np.inf)
    mask = np.zeros((h, w))
    for obj in recipe.objects:
        inside, ex, ey = _object_frame(obj, t, cols, rows)
        closer = inside & (obj.z < zbuf)
        color = _object_color(obj, ex, ey)
        rgb[closer] = color[closer]
        depth[closer] = obj.z
        zbuf[closer] = obj.z
        if obj.foreground:
            mask[closer] = 1.0
    return rgb, depth, mask


def _track_layout(recipe: SynthRecipe, rng: np.random.Generator):
    """Rigid per-object anchor points in the unit disk of the local frame."""
    anchors = []
    pid = 0
    for obj in recipe.objects:
        pts = []
        for _ in range(obj.track_points):
            r = 0.8 * np.sqrt(rng.uniform())
            a = rng.uniform(0, 2 * np.pi)
            pts.append((pid, r * np.cos(a), r * np.sin(a)))
            pid += 1
        anchors.append(pts)
    return anchors


def track_rows(recipe: SynthRecipe, anchors) -> list:
    """Exact track table: world position and occlusion-aware visibility."""
    rows = []
    f_count = recipe.frames
    for f_idx in range(f_count):
        t = dataio.frame_time(f_idx, f_count)
        for obj, pts in zip(recipe.objects, anchors):
            pos = obj.position(t)
            ang = obj.orientation(t)
            ca, sa = np.cos(ang), np.sin(ang)
            rx, ry = obj.radii
            for pid, ux, uy in pts:
                ex, ey = ux * rx, uy * ry
                x = pos[0] + ca * ex - sa * ey
                y = pos[1] + sa * ex + ca * ey
                visible = 0.0 <= x <= recipe.width and 0.0 <= y <= recipe.height
                if visible:
                    for other in recipe.objects:
                        if other is obj or other.z >= obj.z:
                            continue
                        inside, _, _ = _object_frame(other, t, np.array([[x]]), np.array([[y]]))
                        if inside[0, 0]:
                            visible = False
                            break
                rows.append((pid, f_idx, float(x), float(y), 1.0 if visible else 0.0))
    return rows


def generate(recipe: SynthRecipe, out_dir) -> str:
    """Write the dataset and return the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(recipe.seed)
    anchors = _track_layout(recipe, rng)
    rgb_paths, depth_paths, mask_paths = [], [], []
    for f_idx in range(recipe.frames):
        t = dataio.frame_time(f_idx, recipe.frames)
        rgb, depth, mask = render_frame(recipe, t)
        rgb_name = f"rgb_{f_idx:04d}.png"
        depth_name = f"depth_{f_idx:04d}.pfm"
        mask_name = f"mask_{f_idx:04d}.png"
        dataio.write_png(os.path.join(out_dir, rgb_name), rgb)
        dataio.write_pfm(os.path.join(out_dir, depth_name), depth)
        dataio.write_png(os.path.join(out_dir, mask_name), mask)
        rgb_paths.append(rgb_name)
        depth_paths.append(depth_name)
        mask_paths.append(mask_name)
    dataio.write_tracks(os.path.join(out_dir, "tracks.csv"), track_rows(recipe, anchors))
    manifest = os.path.join(out_dir, "manifest.json")
    dataio.write_manifest(manifest, rgb_paths, depth_paths, mask_paths, "tracks.csv")
    return manifest


# ---------------------------------------------------------------------------
# Built-in recipes
# ---------------------------------------------------------------------------

def two_patches(size: int = 64, frames: int = 8, seed: int = 0) -> SynthRecipe:
    """Two moving textured patches (the end-to-end fitting workload)."""
    s = size / 64.0
    return SynthRecipe(width=size, height=size, frames=frames, seed=seed, objects=[
        ObjectSpec(center=(22 * s, 24 * s), radii=(11 * s, 8 * s), color=(0.85, 0.35, 0.2),
                   z=4.0, motion="linear", velocity=(6 * s, 3 * s),
                   texture="sine", tex_freq=0.16 / s, tex_dir=(1.0, 0.4), tex_amp=0.7,
                   angle=0.4, track_points=10),
        ObjectSpec(center=(42 * s, 38 * s), radii=(9 * s, 12 * s), color=(0.25, 0.5, 0.9),
                   z=6.0, motion="sine", velocity=(-5 * s, 2 * s),
                   sine_amp=(0.0, 3 * s), sine_cycles=1.0,
                   texture="sine", tex_freq=0.13 / s, tex_dir=(0.2, 1.0), tex_amp=0.6,
                   angle=-0.3, track_points=10),
    ])


def highfreq(size: int = 48, frames: int = 3, seed: int = 0) -> SynthRecipe:
    """A single slow patch with strong high-frequency texture (kernel ablation)."""
    s = size / 48.0
    return SynthRecipe(width=size, height=size, frames=frames, seed=seed, objects=[
        ObjectSpec(center=(size / 2, size / 2), radii=(16 * s, 13 * s),
                   color=(0.9, 0.8, 0.75), z=5.0, motion="none",
                   texture="sine", tex_freq=0.4, tex_dir=(1.0, 0.25),
                   tex_amp=1.0, angle=0.25, track_points=8),
    ])


def nonlinear_motion(size: int = 48, frames: int = 16, seed: int = 0) -> SynthRecipe:
    """A bouncing patch with sharp direction reversals (spline ablation)."""
    s = size / 48.0
    return SynthRecipe(width=size, height=size, frames=frames, seed=seed, objects=[
        ObjectSpec(center=(16 * s, 24 * s), radii=(7 * s, 7 * s), color=(0.9, 0.7, 0.2),
                   z=4.0, motion="bounce", velocity=(9 * s, 0.0), sine_cycles=3.0,
                   texture="sine", tex_freq=0.12 / s, tex_dir=(1.0, 0.3), tex_amp=0.6,
                   track_points=10),
    ])


def static_scene(size: int = 32, frames: int = 4, seed: int = 0) -> SynthRecipe:
    return SynthRecipe(width=size, height=size, frames=frames, seed=seed, objects=[
        ObjectSpec(center=(size * 0.5, size * 0.5), radii=(size * 0.25, size * 0.2),
                   color=(0.4, 0.7, 0.3), z=5.0, motion="none", track_points=6),
    ])


RECIPES = {
    "two_patches": two_patches,
    "highfreq": highfreq,
    "nonlinear": nonlinear_motion,
    "static": static_scene,
}


def make_recipe(name: str, size=None, frames=None, seed=None) -> SynthRecipe:
    if name not in RECIPES:
        raise ValueError(f"unknown recipe {name!r}; choose from {sorted(RECIPES)}")
    kwargs = {}
    if size is not None:
        kwargs["size"] = size
    if frames is not None:
        kwargs["frames"] = frames
    if seed is not None:
        kwargs["seed"] = seed
    return RECIPES[name](**kwargs)
