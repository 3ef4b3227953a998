"""Adaptive seeding of the initial primitive set from the supervision stack.

Candidates are pixels drawn from every frame (plus one candidate per
tracked point, placed at its first visible position). Each candidate is
scored by temporal support and local density, sequentially re-weighted
for grid coverage (a cell's weight shrinks as it accumulates samples)
and boosted near foreground-mask boundaries. Sampled candidates are
back-projected with the depth prior; tracked candidates bind their
primitive to the track id for flow supervision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .config import InitConfig, PipelineConfig
from .dataio import FrameBundle
from .scene import SceneModel


@dataclass
class CandidatePoint:
    """Scored seeding candidate (spec surface for the weight formulas)."""

    pixel: tuple       # (x, y) image coordinates
    frame: int
    depth: float
    tau: float         # frames of temporal support (1 for plain pixels)
    rho: float         # local candidate density (per unit area)
    grid_cell: tuple   # (u, v)
    boundary_strength: float
    point_id: int = -1


def base_probability(p: CandidatePoint, lambda_tau: float, epsilon: float) -> float:
    """Unnormalized seed weight: prefers short-lived, sparse candidates."""
    return 1.0 / (p.tau + epsilon) + lambda_tau / (p.rho + epsilon)


def grid_modulate(weight: float, cell_count: float, lambda_g: float) -> float:
    """Shrink a weight by the samples its grid cell has already received."""
    return weight / (1.0 + lambda_g * cell_count)


def boundary_compensate(weight: float, boundary_strength: float, lambda_b: float) -> float:
    """Boost weights near foreground-mask boundaries."""
    return weight * (1.0 + lambda_b * boundary_strength)


@dataclass
class CandidateSet:
    """Vectorized candidate pool (one row per candidate)."""

    xy: np.ndarray        # (C, 2)
    frame: np.ndarray     # (C,)
    depth: np.ndarray     # (C,)
    tau: np.ndarray       # (C,)
    rho: np.ndarray       # (C,)
    cell: np.ndarray      # (C,) flattened grid cell index
    boundary: np.ndarray  # (C,)
    point_id: np.ndarray  # (C,) supervised track id or -1
    color: np.ndarray     # (C, 3) frame color at the candidate pixel
    grid_cells: int

    @property
    def count(self) -> int:
        return len(self.xy)


def _mask_gradient(mask: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(mask.astype(float))
    return np.hypot(gx, gy)


def gather_candidates(bundles: list[FrameBundle], cfg: InitConfig) -> CandidateSet:
    if not bundles:
        raise ValueError("need at least one frame bundle")
    height, width = bundles[0].rgb.shape[:2]
    cell_w = width / cfg.grid
    cell_h = height / cfg.grid
    diag = float(np.hypot(width, height))
    radius = max(diag / cfg.radius_divisor, 1e-6)

    # temporal support per track id = number of frames it is visible in
    support: dict = {}
    first_seen: dict = {}
    for bundle in bundles:
        vis = bundle.track_vis > 0
        for pid, xy in zip(bundle.track_ids[vis], bundle.track_xy[vis]):
            pid = int(pid)
            support[pid] = support.get(pid, 0) + 1
            if pid not in first_seen:
                first_seen[pid] = (bundle.index, float(xy[0]), float(xy[1]))

    xs, ys, frames, depths, taus, bnds, pids, colors = [], [], [], [], [], [], [], []
    stride = max(1, cfg.candidate_stride)
    for bundle in bundles:
        grad = _mask_gradient(bundle.mask)
        rows = np.arange(0, height, stride)
        cols = np.arange(0, width, stride)
        cg, rg = np.meshgrid(cols, rows)
        cg, rg = cg.ravel(), rg.ravel()
        xs.append(cg + 0.5)
        ys.append(rg + 0.5)
        frames.append(np.full(cg.size, bundle.index))
        depths.append(bundle.depth[rg, cg])
        taus.append(np.ones(cg.size))
        bnds.append(grad[rg, cg])
        pids.append(np.full(cg.size, -1, dtype=int))
        colors.append(bundle.rgb[rg, cg])
    for pid in sorted(first_seen):
        f_idx, x, y = first_seen[pid]
        bundle = bundles[f_idx]
        col = min(int(x), width - 1)
        row = min(int(y), height - 1)
        xs.append([x])
        ys.append([y])
        frames.append([f_idx])
        depths.append([bundle.depth[row, col]])
        taus.append([float(support[pid])])
        bnds.append([_mask_gradient(bundle.mask)[row, col]])
        pids.append([pid])
        colors.append(bundle.rgb[row, col][None, :])

    xy = np.column_stack([np.concatenate(xs), np.concatenate(ys)])
    frame = np.concatenate(frames).astype(int)
    cand = CandidateSet(
        xy=xy, frame=frame,
        depth=np.concatenate(depths).astype(float),
        tau=np.concatenate(taus).astype(float),
        rho=np.zeros(len(xy)),
        cell=np.minimum((xy[:, 0] / cell_w).astype(int), cfg.grid - 1)
             + cfg.grid * np.minimum((xy[:, 1] / cell_h).astype(int), cfg.grid - 1),
        boundary=np.concatenate(bnds).astype(float),
        point_id=np.concatenate(pids).astype(int),
        color=np.concatenate(colors).reshape(-1, 3).astype(float),
        grid_cells=cfg.grid * cfg.grid,
    )
    for f_idx in np.unique(frame):
        sel = frame == f_idx
        tree = cKDTree(cand.xy[sel])
        counts = np.array([len(n) for n in tree.query_ball_point(cand.xy[sel], radius)])
        cand.rho[sel] = counts / (np.pi * radius * radius)
    return cand


def sample_candidates(cand: CandidateSet, count: int, cfg: InitConfig,
                      rng: np.random.Generator, forced: np.ndarray | None = None):
    """Sequential weighted draws without replacement, grid re-modulated.

    ``forced`` candidate indices are seeded first (they still count toward
    their grid cells). Returns the selected candidate indices in draw order.
    """
    if cand.count == 0:
        raise ValueError("no candidates to sample from")
    base = (1.0 / (cand.tau + cfg.epsilon)
            + cfg.lambda_tau / (cand.rho + cfg.epsilon))
    base = base * (1.0 + cfg.lambda_b * cand.boundary)
    alive = np.ones(cand.count, dtype=bool)
    cell_counts = np.zeros(cand.grid_cells)
    chosen = []
    if forced is not None:
        for idx in forced:
            if len(chosen) >= count:
                break
            if not alive[idx]:
                continue
            alive[idx] = False
            cell_counts[cand.cell[idx]] += 1
            chosen.append(int(idx))
    n_left = min(count - len(chosen), int(np.sum(alive)))
    for _ in range(n_left):
        w = np.where(alive, base / (1.0 + cfg.lambda_g * cell_counts[cand.cell]), 0.0)
        total = w.sum()
        if total <= 0:
            break
        idx = int(rng.choice(cand.count, p=w / total))
        alive[idx] = False
        cell_counts[cand.cell[idx]] += 1
        chosen.append(idx)
    return np.asarray(chosen, dtype=int)


def keyframe_grid(frame_count: int) -> np.ndarray:
    """Shared keyframe times: one control point per ~4 frames, at least 4."""
    m = max(4, int(np.ceil(frame_count / 4)))
    return np.linspace(0.0, 1.0, m)


def build_initial_scene(bundles: list[FrameBundle], target_count: int,
                        pipe: PipelineConfig | None = None,
                        seed: int = 0):
    """Sample primitives and assemble the starting scene.

    Tracked points are force-seeded first so the track-id binding is a
    bijection (flow supervision needs one primitive per supervised id);
    remaining capacity follows the adaptive weights. Primitives start as
    pure Gaussians (wave weights at the hard-sigmoid floor) with zero
    motion, identity rotation and color taken from the source frame.
    """
    pipe = pipe or PipelineConfig()
    cfg = pipe.init
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    cand = gather_candidates(bundles, cfg)
    rng = np.random.default_rng(seed)
    forced = np.flatnonzero(cand.point_id >= 0)
    if len(forced) > target_count:
        forced = forced[:target_count]
    chosen = sample_candidates(cand, target_count, cfg, rng, forced=forced)
    p = len(chosen)

    xy = cand.xy[chosen]
    mu = np.column_stack([xy, cand.depth[chosen]])
    if p > 1:
        tree = cKDTree(xy)
        dists, _ = tree.query(xy, k=2)
        spacing = float(np.median(dists[:, 1]))
    else:
        spacing = 1.0
    sigma = max(0.5 * spacing, 1e-3)

    opacity_raw = float(np.log(cfg.init_opacity / (1.0 - cfg.init_opacity)))
    times = keyframe_grid(len(bundles))
    m = len(times)
    n_waves = pipe.scene.wave_count
    omega_raw0 = cfg.init_omega_raw
    if pipe.scene.variant == "gabor0":
        # without the compensation offset, zero wave weights leave every
        # splat invisible with a zero floor subgradient; start half-on
        omega_raw0 = max(omega_raw0, 0.0)
    scene = SceneModel(
        mu_base=mu,
        log_scale=np.full((p, 3), np.log(sigma)),
        rotation_base=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (p, 1)),
        opacity_raw=np.full(p, opacity_raw),
        color=cand.color[chosen],
        omega_raw=np.full((p, n_waves), omega_raw0),
        times=times,
        trans_ctrl=np.zeros((p, m, 3)),
        rot_ctrl=np.zeros((p, m, 3)),
        track_binding=cand.point_id[chosen].astype(np.int32),
        config=pipe.scene,
    )
    scene.quantize_to_f32()
    scene.validate()
    return scene
