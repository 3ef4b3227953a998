"""Two-stage fitting loop: appearance warm-up, then joint optimization.

Warm-up touches only appearance (color, opacity, scale, rotation, wave
weights) against the RGB loss with motion frozen. The main stage
optimizes everything against the full objective; control-point gradients
accumulate and are applied (averaged) every ``control_update_every``
iterations. The supervising frame for iteration i is drawn from
(seed, i), so ingestion order cannot change the result. Parameters are
re-projected after every step (quaternions renormalized, rotation
controls rewrapped) and snapped to the float32 grid the scene file
stores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .dataio import FrameBundle
from .scene import SceneModel, GradBuffer, PARAM_NAMES
from . import losses, motion, renderer, metrics
from . import quaternions as quat


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration: int, groups):
        self.iteration = iteration
        self.groups = list(groups)
        super().__init__(
            f"non-finite values at iteration {iteration} in parameter group(s): "
            f"{', '.join(self.groups) or 'unknown'}")


APPEARANCE_GROUPS = ("color", "opacity_raw", "log_scale", "rotation_base", "omega_raw")
CONTROL_GROUPS = ("trans_ctrl", "rot_ctrl")

METRICS_HEADER = "iter,l_rgb,l_flow,l_depth,l_curv,total,psnr"


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15,
              group: str = "") -> None:
    """In-place adaptive moment update with bias correction."""
    if not np.all(np.isfinite(grads)):
        raise TrainingDivergedError(state.step + 1, [group or "unnamed"])
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)


def _frame_choice(seed: int, iteration: int, frame_count: int) -> int:
    return int(np.random.default_rng([seed, iteration]).integers(frame_count))


def _compute_losses(scene: SceneModel, bundle: FrameBundle, pipe: PipelineConfig,
                    target: renderer.RenderTarget, ctx):
    """All four loss terms plus their upstream/positional gradients."""
    lw = pipe.loss
    l_rgb, g_rgb = losses.rgb_loss(target.rgb, bundle.rgb, lw.lambda_ssim)

    valid = (target.alpha > 0.5) & np.isfinite(bundle.depth)
    l_depth, g_depth = losses.depth_loss(target.depth, bundle.depth, valid)

    l_flow = 0.0
    g_pos = np.zeros((scene.count, 3))
    sup = bundle.track_vis > 0
    bound_ids = set(int(t) for t in scene.track_binding if t >= 0)
    sup &= np.isin(bundle.track_ids, list(bound_ids)) if len(bundle.track_ids) else sup
    if np.any(sup):
        prim_idx = losses.bind_tracks(scene.track_binding, bundle.track_ids[sup])
        pred_xy = ctx.center[prim_idx]
        l_flow, g_xy = losses.flow_loss(pred_xy, bundle.track_xy[sup], bundle.track_vis[sup])
        np.add.at(g_pos, prim_idx, np.column_stack([g_xy, np.zeros(len(g_xy))]))

    l_curv, g_ctrl = motion.curvature_energy(scene.times, scene.trans_ctrl)
    total = losses.total_loss(
        {"rgb": l_rgb, "flow": l_flow, "depth": l_depth, "curv": l_curv}, lw)
    return {
        "rgb": (l_rgb, g_rgb), "depth": (l_depth, g_depth),
        "flow": (l_flow, g_pos), "curv": (l_curv, g_ctrl), "total": total,
    }


def _project_constraints(scene: SceneModel) -> None:
    scene.rotation_base /= np.linalg.norm(scene.rotation_base, axis=-1, keepdims=True)
    scene.rot_ctrl[...] = quat.wrap_rotvec(scene.rot_ctrl)
    scene.quantize_to_f32()


def train(scene: SceneModel, bundles: list[FrameBundle], pipe: PipelineConfig,
          metrics_path=None):
    """Fit the scene against the bundles; returns (scene, metrics rows).

    Metrics rows are (iter, l_rgb, l_flow, l_depth, l_curv, total, psnr),
    logged every ``log_every`` iterations and at the end of each stage.
    """
    cfg = pipe.train
    cfg.validate()
    if not bundles:
        raise ValueError("need at least one frame bundle")
    frames = sorted(bundles, key=lambda b: b.index)
    f_count = len(frames)
    height, width = frames[0].rgb.shape[:2]

    states = {name: AdamState(np.zeros_like(getattr(scene, name)),
                              np.zeros_like(getattr(scene, name)))
              for name in PARAM_NAMES}
    ctrl_accum = {name: np.zeros_like(getattr(scene, name)) for name in CONTROL_GROUPS}
    ctrl_count = 0
    rows = []
    total_iters = cfg.warmup_iters + cfg.main_iters

    def lr_for(name: str, main_iter: int) -> float:
        table = {
            "mu_base": cfg.lr_position, "color": cfg.lr_color,
            "opacity_raw": cfg.lr_opacity, "log_scale": cfg.lr_scale,
            "rotation_base": cfg.lr_rotation, "omega_raw": cfg.lr_omega,
            "trans_ctrl": cfg.lr_control, "rot_ctrl": cfg.lr_control,
        }
        lr = table[name]
        if name == "mu_base" and cfg.main_iters > 0:
            lr *= cfg.position_lr_decay ** (main_iter / cfg.main_iters)
        return lr

    for it in range(1, total_iters + 1):
        warm = it <= cfg.warmup_iters
        main_iter = 0 if warm else it - cfg.warmup_iters
        bundle = frames[_frame_choice(cfg.seed, it, f_count)]
        t = bundle.time

        ctx = renderer.project(scene, t, pipe.render)
        target = renderer.render(scene, t, width, height, pipe.render)
        parts = _compute_losses(scene, bundle, pipe, target, ctx)
        objective = parts["rgb"][0] if warm else parts["total"]
        if not np.isfinite(objective):
            bad = [name for name in ("rgb", "flow", "depth", "curv")
                   if not np.isfinite(parts[name][0])]
            raise TrainingDivergedError(it, bad or ["total"])

        lw = pipe.loss
        upstream = {"rgb": lw.lambda_rgb * parts["rgb"][1]}
        if not warm:
            upstream["depth"] = lw.lambda_depth * parts["depth"][1]
        grads = renderer.render_backward(scene, t, upstream, pipe.render)
        if not warm:
            renderer.accumulate_position_grads(scene, ctx, lw.lambda_flow * parts["flow"][1], grads)
            grads.trans_ctrl += lw.lambda_curv * parts["curv"][1]

        bad = grads.nonfinite_groups()
        if bad:
            raise TrainingDivergedError(it, bad)

        if warm:
            for name in APPEARANCE_GROUPS:
                adam_step(getattr(scene, name), getattr(grads, name), states[name],
                          lr_for(name, 0), cfg.adam_beta1, cfg.adam_beta2,
                          cfg.adam_eps, group=name)
        else:
            for name in APPEARANCE_GROUPS + ("mu_base",):
                adam_step(getattr(scene, name), getattr(grads, name), states[name],
                          lr_for(name, main_iter), cfg.adam_beta1, cfg.adam_beta2,
                          cfg.adam_eps, group=name)
            for name in CONTROL_GROUPS:
                ctrl_accum[name] += getattr(grads, name)
            ctrl_count += 1
            if main_iter % cfg.control_update_every == 0 or main_iter == cfg.main_iters:
                for name in CONTROL_GROUPS:
                    adam_step(getattr(scene, name), ctrl_accum[name] / ctrl_count,
                              states[name], lr_for(name, main_iter), cfg.adam_beta1,
                              cfg.adam_beta2, cfg.adam_eps, group=name)
                    ctrl_accum[name][...] = 0.0
                ctrl_count = 0
        _project_constraints(scene)

        if it % cfg.log_every == 0 or it == total_iters:
            snapshot = renderer.render(scene, t, width, height, pipe.render)
            rows.append((it, parts["rgb"][0], parts["flow"][0], parts["depth"][0],
                         parts["curv"][0], parts["total"],
                         metrics.psnr(np.clip(snapshot.rgb, 0, 1), bundle.rgb)))

    if metrics_path is not None:
        write_metrics(metrics_path, rows)
    return scene, rows


def write_metrics(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(METRICS_HEADER + "\n")
        for row in rows:
            it = int(row[0])
            fh.write(",".join([str(it)] + [f"{v:.10g}" for v in row[1:]]) + "\n")
