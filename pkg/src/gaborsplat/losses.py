"""Supervision terms: RGB (L1 + SSIM), flow, scale/shift-invariant depth.

Every loss returns (scalar, gradient w.r.t. its prediction input) so the
trainer can chain into the renderer backward. The SSIM window is the
customary 11x11 Gaussian, sigma 1.5, stabilizers (0.01)^2 and (0.03)^2
on unit dynamic range; its gradient is computed analytically through the
windowed moments (adjoint of the valid-mode correlation is a full-mode
convolution with the same symmetric window).
"""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d, correlate2d

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
FLOW_EPS = 1e-8


def _ssim_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


_WINDOW = _ssim_window()


def _ssim_channel(x: np.ndarray, y: np.ndarray, grad: bool):
    w = _WINDOW
    if x.shape[0] < w.shape[0] or x.shape[1] < w.shape[1]:
        raise ValueError("image smaller than the SSIM window")
    mu_x = correlate2d(x, w, mode="valid")
    mu_y = correlate2d(y, w, mode="valid")
    sxx = correlate2d(x * x, w, mode="valid")
    syy = correlate2d(y * y, w, mode="valid")
    sxy = correlate2d(x * y, w, mode="valid")
    var_x = sxx - mu_x * mu_x
    var_y = syy - mu_y * mu_y
    cov = sxy - mu_x * mu_y
    a1 = 2 * mu_x * mu_y + SSIM_C1
    a2 = 2 * cov + SSIM_C2
    b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    b2 = var_x + var_y + SSIM_C2
    s_map = (a1 * a2) / (b1 * b2)
    value = float(np.mean(s_map))
    if not grad:
        return value, None
    npos = s_map.size
    inv = 1.0 / (b1 * b2)
    d_mu = 2 * mu_y * (a2 - a1) * inv - 2 * mu_x * s_map * (1.0 / b1 - 1.0 / b2)
    d_sxx = -s_map / b2
    d_sxy = 2 * a1 * inv
    g = (convolve2d(d_mu, w, mode="full")
         + convolve2d(d_sxx, w, mode="full") * 2 * x
         + convolve2d(d_sxy, w, mode="full") * y) / npos
    return value, g


def ssim(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean structural similarity; channels averaged, symmetric, ssim(I, I) = 1."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.ndim == 2:
        return _ssim_channel(pred, target, grad=False)[0]
    vals = [_ssim_channel(pred[..., c], target[..., c], grad=False)[0]
            for c in range(pred.shape[-1])]
    return float(np.mean(vals))


def ssim_with_grad(pred: np.ndarray, target: np.ndarray):
    """(mean SSIM, d(mean SSIM)/d(pred))."""
    if pred.ndim == 2:
        v, g = _ssim_channel(pred, target, grad=True)
        return v, g
    vals, grads = [], np.zeros_like(pred)
    nch = pred.shape[-1]
    for c in range(nch):
        v, g = _ssim_channel(pred[..., c], target[..., c], grad=True)
        vals.append(v)
        grads[..., c] = g / nch
    return float(np.mean(vals)), grads


def rgb_loss(pred: np.ndarray, target: np.ndarray, lambda_ssim: float):
    """(1 - l) * mean-L1 + l * (1 - mean SSIM), with pixel gradients."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - lambda_ssim) * np.sign(diff) / diff.size
    loss = (1.0 - lambda_ssim) * l1
    if lambda_ssim > 0.0:
        s_val, s_grad = ssim_with_grad(pred, target)
        loss += lambda_ssim * (1.0 - s_val)
        grad -= lambda_ssim * s_grad
    return loss, grad


def flow_loss(pred_xy: np.ndarray, target_xy: np.ndarray, weights: np.ndarray):
    """Visibility-weighted L1 between projected and tracked positions."""
    pred_xy = np.asarray(pred_xy, dtype=float).reshape(-1, 2)
    target_xy = np.asarray(target_xy, dtype=float).reshape(-1, 2)
    weights = np.asarray(weights, dtype=float).ravel()
    if not (len(pred_xy) == len(target_xy) == len(weights)):
        raise ValueError("track arrays must have equal length")
    diff = pred_xy - target_xy
    den = float(np.sum(weights)) + FLOW_EPS
    loss = float(np.sum(weights[:, None] * np.abs(diff))) / den
    grad = weights[:, None] * np.sign(diff) / den
    return loss, grad


def bind_tracks(track_binding: np.ndarray, point_ids: np.ndarray) -> np.ndarray:
    """Primitive index for each supervised point id; raises on unbound ids."""
    lookup = {int(tid): i for i, tid in enumerate(track_binding) if tid >= 0}
    out = np.empty(len(point_ids), dtype=int)
    for j, pid in enumerate(point_ids):
        if int(pid) not in lookup:
            raise KeyError(f"track id {int(pid)} has no bound primitive")
        out[j] = lookup[int(pid)]
    return out


def normalize_depth(depth: np.ndarray, valid_mask: np.ndarray) -> np.ndarray:
    """Median-centered, mean-absolute-deviation-scaled depth.

    Invariant to positive affine remapping of the input; a constant map
    (zero deviation) normalizes to zeros. Pixels outside the mask are 0.
    """
    valid = np.asarray(valid_mask, dtype=bool)
    if not np.any(valid):
        raise ValueError("normalize_depth requires at least one valid pixel")
    vals = depth[valid]
    med = float(np.median(vals))
    dev = float(np.mean(np.abs(vals - med)))
    out = np.zeros_like(depth, dtype=float)
    if dev > 0.0:
        out[valid] = (vals - med) / dev
    return out


def _median_weights(vals: np.ndarray) -> np.ndarray:
    """Subgradient of np.median w.r.t. the samples."""
    n = len(vals)
    order = np.argsort(vals, kind="stable")
    w = np.zeros(n)
    if n % 2 == 1:
        w[order[n // 2]] = 1.0
    else:
        w[order[n // 2 - 1]] = 0.5
        w[order[n // 2]] = 0.5
    return w


def depth_loss(pred: np.ndarray, prior: np.ndarray, valid_mask: np.ndarray):
    """Scale/shift-invariant L1 between normalized depth maps.

    Zero whenever pred is a positive affine map of the prior. The
    gradient w.r.t. pred is exact, including the dependence of the
    median and the deviation normalizer on the prediction.
    """
    valid = np.asarray(valid_mask, dtype=bool)
    grad = np.zeros_like(pred, dtype=float)
    if not np.any(valid):
        return 0.0, grad
    g_prior = normalize_depth(prior, valid)[valid]
    vals = pred[valid]
    n = len(vals)
    med = float(np.median(vals))
    dev = float(np.mean(np.abs(vals - med)))
    if dev == 0.0:
        # constant prediction normalizes to zeros; the normalizer is not
        # differentiable here, use the zero subgradient
        return float(np.mean(np.abs(g_prior))), grad
    u = (vals - med) / dev
    t = np.sign(u - g_prior)
    loss = float(np.mean(np.abs(u - g_prior)))

    w_med = _median_weights(vals)
    s = np.sign(vals - med)
    sum_t = float(np.sum(t))
    sum_tu = float(np.sum(t * u))
    grad[valid] = (t - sum_t * w_med
                   - sum_tu * (s - float(np.sum(s)) * w_med) / n) / (n * dev)
    return loss, grad


def total_loss(parts: dict, weights) -> float:
    """Weighted sum of the four supervision terms."""
    return (weights.lambda_rgb * parts.get("rgb", 0.0)
            + weights.lambda_flow * parts.get("flow", 0.0)
            + weights.lambda_depth * parts.get("depth", 0.0)
            + weights.lambda_curv * parts.get("curv", 0.0))
