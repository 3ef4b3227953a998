"""Orthographic splatter: forward RGB/depth/alpha and analytic backward.

Screen mapping is orthographic: scene X/Y are pixel coordinates (pixel
(row, col) has center (col + 0.5, row + 0.5)), scene Z is composited
into an alpha-weighted expected depth. Primitives are depth-sorted once
per frame (stable ties) and composited front to back per pixel with a
hard Mahalanobis cutoff: a splat contributes nothing past
``cutoff_sigma`` standard deviations. The cutoff is part of the image
definition, which is what makes conservative screen-space culling exact:
a naive per-pixel compositor and this rasterizer agree to float
precision.

Rasterization is organized as a flat (primitive, pixel) pair list - one
pair per pixel inside a splat's cutoff bounding box - sorted by pixel
with front-to-back rank as the tiebreaker. Per-pixel transmittance
chains and the backward pass's suffix sums become segmented scans over
that list, which keeps the Python overhead independent of image size.
The backward pass replays the forward truncation exactly and routes
pixel gradients into every raw scene parameter, including motion
control points through the spline weight maps and the quaternion
exponential. Set AGSV_THREADS > 1 to split the per-pair kernel
evaluation across worker threads (outputs are disjoint slices, so the
result does not depend on scheduling).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RenderConfig, SceneConfig
from .scene import SceneModel, GradBuffer
from . import kernel, motion
from . import quaternions as quat


@dataclass
class RenderTarget:
    rgb: np.ndarray    # (H, W, 3)
    depth: np.ndarray  # (H, W) alpha-weighted expected Z, 0 where uncovered
    alpha: np.ndarray  # (H, W) in [0, 1]


@dataclass
class ProjectionContext:
    """Per-primitive screen-space state at one timestamp."""

    t: float
    center: np.ndarray       # (P, 2)
    z: np.ndarray            # (P,)
    cov: np.ndarray          # (P, 2, 2)
    conic: np.ndarray        # (P, 3) rows (a, b, c) of the inverse covariance
    radius: np.ndarray       # (P,) cull radius = cutoff * sqrt(lambda_max)
    valid: np.ndarray        # (P,) finite, positive-definite screens
    R: np.ndarray            # (P, 3, 3)
    scale: np.ndarray        # (P, 3)
    wave_axes: np.ndarray    # (P, 2, N): theta = offset @ wave_axes
    color: np.ndarray        # (P, 3)
    alpha: np.ndarray        # (P,) activated opacity
    omegas: np.ndarray       # (P, N)
    ste: np.ndarray          # (P, N) STE backward factors
    order: np.ndarray        # (P,) front-to-back primitive order
    # motion intermediates for the backward chain
    trans_idx: np.ndarray = None
    trans_w: np.ndarray = None
    rot_idx: np.ndarray = None
    rot_w: np.ndarray = None
    delta_raw: np.ndarray = None      # (P, 3) interpolated rotation vector
    delta_wrapped: np.ndarray = None  # (P, 3)
    exp_q: np.ndarray = None          # (P, 4)
    q_base_hat: np.ndarray = None     # (P, 4)
    q_raw: np.ndarray = None          # (P, 4) before final normalize
    q_eff: np.ndarray = None          # (P, 4) unit effective rotation

    def whitening(self) -> np.ndarray:
        """Inverse Cholesky factors W with W^T W = conic (for tests)."""
        L = np.linalg.cholesky(self.cov)
        eye = np.broadcast_to(np.eye(2), self.cov.shape)
        return np.linalg.solve(L, eye.copy())


def project(scene: SceneModel, t: float, render_cfg: RenderConfig | None = None) -> ProjectionContext:
    """Activate parameters and build per-primitive screen state at time t."""
    cfg = render_cfg or RenderConfig()
    sc = scene.config
    p = scene.count
    freqs = np.asarray(sc.freqs, dtype=float)

    trans_idx, trans_w = motion.spline_weights(scene.times, scene.trans_ctrl,
                                               sc.beta, t, sc.spline)
    disp = np.sum(np.broadcast_to(trans_w, (p, len(trans_idx), 3))
                  * scene.trans_ctrl[:, trans_idx, :], axis=-2)
    mu = scene.mu_base + disp

    rot_idx, rot_w = motion.spline_weights(scene.times, scene.rot_ctrl,
                                           sc.beta, t, sc.spline)
    delta_raw = np.sum(np.broadcast_to(rot_w, (p, len(rot_idx), 3))
                       * scene.rot_ctrl[:, rot_idx, :], axis=-2)
    delta_wrapped = quat.wrap_rotvec(delta_raw)
    q_base_hat = quat.normalize(scene.rotation_base)
    exp_q = quat.exp_rotvec(delta_wrapped)
    q_raw = quat.multiply(q_base_hat, exp_q)
    q_eff = quat.normalize(q_raw)

    R = quat.to_rotation_matrix(q_eff)
    s = scene.scales()
    cov = kernel.batch_cov2d(R, s)
    a, b, c, det = kernel.batch_conic(cov)
    conic = np.stack([a, b, c], axis=-1)

    tr = cov[:, 0, 0] + cov[:, 1, 1]
    disc = np.sqrt(np.maximum((cov[:, 0, 0] - cov[:, 1, 1]) ** 2 + 4 * cov[:, 0, 1] ** 2, 0.0))
    lam_max = 0.5 * (tr + disc)
    radius = cfg.cutoff_sigma * np.sqrt(np.maximum(lam_max, 0.0))

    valid = (np.isfinite(det) & (det > 0)
             & np.all(np.isfinite(mu), axis=-1) & np.isfinite(radius))
    z = mu[:, 2]
    order = np.argsort(z, kind="stable")

    n_w = len(freqs)
    wave_axes = (R[:, :2, :n_w] / s[:, None, :n_w] * (freqs * np.pi)[None, None, :])

    omegas, ste = kernel.hard_sigmoid_ste(scene.omega_raw)
    return ProjectionContext(
        t=t, center=mu[:, :2], z=z, cov=cov, conic=conic, radius=radius,
        valid=valid, R=R, scale=s, wave_axes=wave_axes, color=scene.color,
        alpha=kernel.sigmoid(scene.opacity_raw), omegas=omegas, ste=ste,
        order=order,
        trans_idx=trans_idx, trans_w=trans_w, rot_idx=rot_idx, rot_w=rot_w,
        delta_raw=delta_raw, delta_wrapped=delta_wrapped, exp_q=exp_q,
        q_base_hat=q_base_hat, q_raw=q_raw, q_eff=q_eff,
    )


def sort_primitives(scene: SceneModel, t: float) -> np.ndarray:
    """Front-to-back primitive order: ascending depth, stable index ties."""
    return project(scene, t).order


# ---------------------------------------------------------------------------
# Pair list construction and segmented scans
# ---------------------------------------------------------------------------

@dataclass
class PairList:
    """(primitive, pixel) pairs sorted by pixel, front-to-back within."""

    prim: np.ndarray        # (n,) primitive index per pair, pixel-sorted
    pixel: np.ndarray       # (n,) flat pixel index per pair, ascending
    seg_starts: np.ndarray  # (S,) first pair of each pixel segment
    seg_pixel: np.ndarray   # (S,) flat pixel index per segment
    seg_id: np.ndarray      # (n,) segment index per pair
    inv_perm: np.ndarray    # (n,) pixel-order -> primitive-major order
    kept: np.ndarray        # (Q,) primitives that own at least one pair
    prim_starts: np.ndarray  # (Q,) segment starts in primitive-major order

    @property
    def count(self) -> int:
        return len(self.prim)


def _build_pairs(ctx: ProjectionContext, width: int, height: int) -> PairList | None:
    """One pair per pixel inside each splat's cutoff bounding box."""
    order = ctx.order[ctx.valid[ctx.order]]
    if len(order) == 0:
        return None
    cx = ctx.center[order, 0]
    cy = ctx.center[order, 1]
    r = ctx.radius[order]
    x0 = np.maximum(np.floor(cx - r - 0.5).astype(int), 0)
    x1 = np.minimum(np.ceil(cx + r - 0.5).astype(int), width - 1)
    y0 = np.maximum(np.floor(cy - r - 0.5).astype(int), 0)
    y1 = np.minimum(np.ceil(cy + r - 0.5).astype(int), height - 1)
    w_box = x1 - x0 + 1
    h_box = y1 - y0 + 1
    keep = (w_box > 0) & (h_box > 0)
    if not np.any(keep):
        return None
    order, x0, y0, w_box, h_box = (arr[keep] for arr in (order, x0, y0, w_box, h_box))
    counts = (w_box * h_box).astype(np.int64)
    total = int(counts.sum())
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    pair_prim = np.repeat(order, counts)
    offset = np.arange(total, dtype=np.int64) - np.repeat(starts, counts)
    wrep = np.repeat(w_box, counts)
    row = offset // wrep
    col = offset - row * wrep
    pair_pixel = ((np.repeat(y0, counts) + row) * width
                  + np.repeat(x0, counts) + col)

    perm = np.argsort(pair_pixel, kind="stable")  # stable: keeps z rank per pixel
    pixel_sorted = pair_pixel[perm]
    prim_sorted = pair_prim[perm]
    boundary = np.empty(total, dtype=bool)
    boundary[0] = True
    boundary[1:] = pixel_sorted[1:] != pixel_sorted[:-1]
    seg_starts = np.flatnonzero(boundary)
    seg_id = np.cumsum(boundary) - 1
    inv_perm = np.argsort(perm, kind="stable")
    return PairList(prim=prim_sorted, pixel=pixel_sorted, seg_starts=seg_starts,
                    seg_pixel=pixel_sorted[seg_starts], seg_id=seg_id,
                    inv_perm=inv_perm, kept=order, prim_starts=starts)


def _seg_cumsum_exclusive(x: np.ndarray, pairs: PairList) -> np.ndarray:
    c = np.cumsum(x)
    excl = c - x
    base = excl[pairs.seg_starts]
    return excl - base[pairs.seg_id]


def _seg_sum(x: np.ndarray, pairs: PairList) -> np.ndarray:
    return np.add.reduceat(x, pairs.seg_starts, axis=0)


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("AGSV_THREADS", "1")))
    except ValueError:
        return 1


def _pair_alpha(ctx: ProjectionContext, pairs: PairList, width: int,
                sc: SceneConfig, rc: RenderConfig):
    """Per-pair envelope, modulation and clamped opacity contribution."""
    ids = pairs.prim
    px = (pairs.pixel % width) + 0.5
    py = (pairs.pixel // width) + 0.5
    d = np.stack([px, py], axis=-1) - ctx.center[ids]

    def evaluate(sl):
        i = ids[sl]
        dx, dy = d[sl, 0], d[sl, 1]
        a, b, c = ctx.conic[i, 0], ctx.conic[i, 1], ctx.conic[i, 2]
        q_form = a * dx * dx + 2 * b * dx * dy + c * dy * dy
        inside = q_form <= rc.cutoff_sigma ** 2
        g_env = np.where(inside, np.exp(-0.5 * q_form), 0.0)
        theta = np.einsum("nj,njm->nm", d[sl], ctx.wave_axes[i])
        s_mod, cos_t = kernel.modulation_forward(theta, ctx.omegas[i], sc)
        v_raw = ctx.alpha[i] * g_env * s_mod
        return g_env, theta, s_mod, cos_t, v_raw

    n = pairs.count
    workers = _thread_count()
    if workers > 1 and n > 4 * workers:
        bounds = np.linspace(0, n, workers + 1).astype(int)
        slices = [slice(bounds[i], bounds[i + 1]) for i in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(evaluate, slices))
        g_env = np.concatenate([p[0] for p in parts])
        theta = np.concatenate([p[1] for p in parts])
        s_mod = np.concatenate([p[2] for p in parts])
        cos_t = np.concatenate([p[3] for p in parts])
        v_raw = np.concatenate([p[4] for p in parts])
    else:
        g_env, theta, s_mod, cos_t, v_raw = evaluate(slice(0, n))
    alpha_c = np.clip(v_raw, 0.0, rc.alpha_clamp)
    return d, g_env, theta, s_mod, cos_t, v_raw, alpha_c


def _composite(alpha_c: np.ndarray, pairs: PairList, rc: RenderConfig):
    """Per-pair exclusive transmittance and composited weight u."""
    t_excl = np.exp(_seg_cumsum_exclusive(np.log1p(-alpha_c), pairs))
    live = t_excl >= rc.term_tau
    u = np.where(live, t_excl * alpha_c, 0.0)
    return t_excl, live, u


@dataclass
class RenderState:
    t: float
    width: int
    height: int
    scene: SceneModel = field(repr=False, default=None)


def render(scene: SceneModel, t: float, width: int, height: int,
           render_cfg: RenderConfig | None = None, keep_state: bool = False):
    """Composite the scene at time t into RGB, expected depth and alpha."""
    rc = render_cfg or RenderConfig()
    sc = scene.config
    target = RenderTarget(rgb=np.zeros((height, width, 3)),
                          depth=np.zeros((height, width)),
                          alpha=np.zeros((height, width)))
    pairs = None
    if scene.count > 0:
        ctx = project(scene, t, rc)
        pairs = _build_pairs(ctx, width, height)
    if pairs is not None:
        _, _, _, _, _, _, alpha_c = _pair_alpha(ctx, pairs, width, sc, rc)
        _, _, u = _composite(alpha_c, pairs, rc)
        rgb_seg = _seg_sum(u[:, None] * ctx.color[pairs.prim], pairs)
        a_seg = _seg_sum(u, pairs)
        z_seg = _seg_sum(u * ctx.z[pairs.prim], pairs)
        rows, cols = pairs.seg_pixel // width, pairs.seg_pixel % width
        target.rgb[rows, cols] = rgb_seg
        target.alpha[rows, cols] = a_seg
        target.depth[rows, cols] = z_seg / np.maximum(a_seg, rc.depth_eps)
    if keep_state:
        return target, RenderState(t=t, width=width, height=height, scene=scene)
    return target


def render_backward(scene: SceneModel, t: float, upstream: dict,
                    render_cfg: RenderConfig | None = None,
                    state: RenderState | None = None) -> GradBuffer:
    """Chain pixel gradients into a GradBuffer over all raw parameters.

    ``upstream`` maps "rgb" (H, W, 3), "depth" (H, W) and "alpha" (H, W)
    to the loss gradients of the corresponding render outputs (missing
    entries are treated as zero). The forward compositing is replayed
    with the same truncation rules. If an explicit render state is
    supplied it must match this call.
    """
    rc = render_cfg or RenderConfig()
    shapes = [v.shape[:2] for v in upstream.values() if v is not None]
    if not shapes:
        raise ValueError("upstream gradients required")
    height, width = shapes[0]
    if state is not None:
        if state.scene is not scene or state.t != t or (state.width, state.height) != (width, height):
            raise ValueError("render state does not match this backward call")
    g_rgb_img = upstream.get("rgb")
    g_depth_img = upstream.get("depth")
    g_alpha_img = upstream.get("alpha")

    grads = GradBuffer.zeros_like(scene)
    if scene.count == 0:
        return grads
    sc = scene.config
    freqs = np.asarray(sc.freqs, dtype=float)
    ctx = project(scene, t, rc)
    pairs = _build_pairs(ctx, width, height)
    if pairs is None:
        return grads

    ids = pairs.prim
    d, g_env, theta, s_mod, cos_t, v_raw, alpha_c = _pair_alpha(ctx, pairs, width, sc, rc)
    t_excl, live, u = _composite(alpha_c, pairs, rc)

    color = ctx.color[ids]
    z = ctx.z[ids]
    a_seg = _seg_sum(u, pairs)
    z_seg = _seg_sum(u * z, pairs)
    den_seg = np.maximum(a_seg, rc.depth_eps)

    flat = pairs.seg_pixel
    g_rgb_seg = (g_rgb_img.reshape(-1, 3)[flat] if g_rgb_img is not None
                 else np.zeros((len(flat), 3)))
    g_depth_seg = (g_depth_img.ravel()[flat] if g_depth_img is not None
                   else np.zeros(len(flat)))
    g_alpha_seg = (g_alpha_img.ravel()[flat] if g_alpha_img is not None
                   else np.zeros(len(flat)))
    g_z_seg = g_depth_seg / den_seg
    g_a_seg = g_alpha_seg + np.where(a_seg > rc.depth_eps,
                                     -g_depth_seg * z_seg / (den_seg * den_seg), 0.0)

    sid = pairs.seg_id
    g_rgb_pair = g_rgb_seg[sid]
    g_zp = g_z_seg[sid]
    g_ap = g_a_seg[sid]

    # suffix sums over later pairs in the same pixel segment
    def suffix(wx):
        incl = _seg_cumsum_exclusive(wx, pairs) + wx
        totals = _seg_sum(wx, pairs)
        return totals[sid] - incl

    w_c = u[:, None] * color
    s_c = np.column_stack([suffix(w_c[:, i]) for i in range(3)])
    s_z = suffix(u * z)
    s_a = suffix(u)

    inv_rem = 1.0 / (1.0 - alpha_c)
    g_alpha_k = (np.einsum("nc,nc->n", g_rgb_pair,
                           t_excl[:, None] * color - s_c * inv_rem[:, None])
                 + g_zp * (t_excl * z - s_z * inv_rem)
                 + g_ap * (t_excl - s_a * inv_rem))

    active = live & (v_raw > 0.0) & (v_raw < rc.alpha_clamp)
    g_v = np.where(active, g_alpha_k, 0.0)

    alpha_act = ctx.alpha[ids]
    g_genv = g_v * alpha_act * s_mod
    g_smod = g_v * alpha_act * g_env
    g_alpha_pair = g_v * g_env * s_mod

    a, b, c = (ctx.conic[ids, i] for i in range(3))
    gd = np.stack([a * d[:, 0] + b * d[:, 1],
                   b * d[:, 0] + c * d[:, 1]], axis=-1)   # Sigma^{-1} d per pair

    gg = g_genv * g_env
    g_theta = g_smod[:, None] * kernel.modulation_theta_grad(theta, ctx.omegas[ids], sc)

    g_center_pair = (gg[:, None] * gd
                     - np.einsum("nm,njm->nj", g_theta, ctx.wave_axes[ids]))
    w_axes = np.einsum("nj,nji->ni", gd, ctx.R[ids][:, :2, :])
    s2 = ctx.scale[ids] ** 2
    g_ls_pair = gg[:, None] * (w_axes ** 2) * s2
    n_w = len(freqs)
    g_ls_pair[:, :n_w] -= g_theta * theta

    gr_pair = np.empty((pairs.count, 2, 3))
    gr_pair[:] = (gg[:, None] * gd)[:, :, None] * (w_axes * s2)[:, None, :]
    gr_pair[:, :, :n_w] += (g_theta[:, None, :] * d[:, :, None]
                            * (freqs * np.pi)[None, None, :]
                            / ctx.scale[ids][:, None, :n_w])
    g_omega_pair = g_smod[:, None] * kernel.modulation_omega_grad(cos_t, sc)
    g_color_pair = u[:, None] * g_rgb_pair
    g_zk_pair = u * g_zp

    # reduce pairs to primitives: gather into primitive-major order, reduceat
    def reduce_to_prims(arr):
        return np.add.reduceat(arr[pairs.inv_perm], pairs.prim_starts, axis=0)

    kept = pairs.kept
    flatcat = np.concatenate([
        g_center_pair, g_ls_pair, g_color_pair,
        gr_pair.reshape(pairs.count, 6), g_omega_pair,
        g_alpha_pair[:, None], g_zk_pair[:, None],
    ], axis=1)
    red = reduce_to_prims(flatcat)
    g_center = np.zeros((scene.count, 2))
    g_logscale = np.zeros((scene.count, 3))
    g_z = np.zeros(scene.count)
    g_alpha_act = np.zeros(scene.count)
    g_omega_hat = np.zeros((scene.count, sc.wave_count))
    gr = np.zeros((scene.count, 3, 3))
    g_center[kept] = red[:, 0:2]
    g_logscale[kept] = red[:, 2:5]
    grads.color[kept] += red[:, 5:8]
    gr[kept, :2, :] = red[:, 8:14].reshape(-1, 2, 3)
    g_omega_hat[kept] = red[:, 14:14 + n_w]
    g_alpha_act[kept] = red[:, 14 + n_w]
    g_z[kept] = red[:, 15 + n_w]

    g_qeff = np.einsum("pqab,pab->pq", quat.rotation_matrix_jacobian(ctx.q_eff), gr)

    grads.log_scale += g_logscale
    grads.opacity_raw += g_alpha_act * ctx.alpha * (1.0 - ctx.alpha)
    grads.omega_raw += g_omega_hat * ctx.ste

    g_disp = np.concatenate([g_center, g_z[:, None]], axis=-1)
    accumulate_position_grads(scene, ctx, g_disp, grads)

    # rotation chain: q_eff = normalize(q_base_hat * exp(wrap(delta)))
    g_qraw = np.einsum("pij,pi->pj", quat.normalize_jacobian(ctx.q_raw), g_qeff)
    g_qbase_hat = np.einsum("pij,pi->pj", quat.right_matrix(ctx.exp_q), g_qraw)
    g_exp = np.einsum("pij,pi->pj", quat.left_matrix(ctx.q_base_hat), g_qraw)
    g_delta_w = np.einsum("pij,pi->pj", quat.exp_rotvec_jacobian(ctx.delta_wrapped), g_exp)
    g_delta = np.einsum("pij,pi->pj", quat.wrap_rotvec_jacobian(ctx.delta_raw), g_delta_w)
    grads.rotation_base += np.einsum("pij,pi->pj",
                                     quat.normalize_jacobian(scene.rotation_base), g_qbase_hat)
    _scatter_ctrl(grads.rot_ctrl, ctx.rot_idx, ctx.rot_w, g_delta)
    return grads


def accumulate_position_grads(scene: SceneModel, ctx: ProjectionContext,
                              g_disp: np.ndarray, grads: GradBuffer) -> None:
    """Route d(loss)/d(position at ctx.t) into mu_base and trans_ctrl."""
    grads.mu_base += g_disp
    _scatter_ctrl(grads.trans_ctrl, ctx.trans_idx, ctx.trans_w, g_disp)


def _scatter_ctrl(grad_ctrl, idx, w, g_val):
    p = grad_ctrl.shape[0]
    contrib = np.broadcast_to(w, (p, len(idx), 3)) * g_val[:, None, :]
    np.add.at(grad_ctrl, (np.arange(p)[:, None], idx[None, :]), contrib)
