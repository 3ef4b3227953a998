"""Adaptive Gabor splat evaluation and its analytic parameter derivatives.

A splat's screen-space opacity is

    alpha(x) = clamp(opacity * G(x) * S(x), 0, clamp_max)

with a Gaussian envelope G and a frequency modulation S. G uses the exact
orthographic 2D covariance (Z row of R*S dropped). S is evaluated in the
primitive-local frame so the wave pattern translates and rotates with the
splat: p = R^T (x - center) / scale, wave argument = freq * pi * p. The
pi factor makes one unit of frequency span a half period per local sigma.

Everything here is a pure function; batch variants broadcast over leading
axes and back the renderer's vectorized forward/backward passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SceneConfig
from . import quaternions as quat

ALPHA_CLAMP = 0.999


def sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500))),
                    np.exp(np.clip(x, -500, 500)) / (1.0 + np.exp(np.clip(x, -500, 500))))


def hard_sigmoid_ste(omega_raw):
    """Forward hard-sigmoid clip of a raw wave weight plus its STE factor.

    Forward clips (omega+1)/2 into [0, 1]; the returned backward scale is
    the smooth sigmoid derivative, so gradients survive the clip. The
    derivative is evaluated as exp(-|x|) / (1 + exp(-|x|))^2, which stays
    strictly positive where the naive sigma * (1 - sigma) underflows.
    """
    x = np.asarray(omega_raw, dtype=float)
    forward = np.clip((x + 1.0) * 0.5, 0.0, 1.0)
    e = np.exp(-np.abs(np.clip(x, -500, 500)))
    return forward, e / (1.0 + e) ** 2


def gaussian_density(offset) -> float:
    """Unit-height Gaussian of a whitened offset: exp(-|u|^2 / 2)."""
    u = np.asarray(offset, dtype=float)
    return float(np.exp(-0.5 * np.dot(u, u)))


def wave_sum(local_pos, omegas, cfg: SceneConfig) -> float:
    """Weighted cosine mixture: sum_i omega_i cos(f_i * p_i), phase 0.

    ``local_pos`` is already expressed in wave-argument units (the caller
    applies the pi-per-sigma scaling), with the wave directions being the
    local coordinate axes.
    """
    p = np.asarray(local_pos, dtype=float)
    w = np.asarray(omegas, dtype=float)
    f = np.asarray(cfg.freqs, dtype=float)
    if w.shape[-1] != cfg.wave_count:
        raise ValueError(f"expected {cfg.wave_count} wave weights, got {w.shape[-1]}")
    return float(np.sum(w * np.cos(f * p[: len(f)])))


def energy_compensation(omegas, gamma: float) -> float:
    """Offset keeping total splat energy stable as wave weights grow.

    Equals 1 with all waves off and gamma with all waves at full weight;
    strictly decreasing in every weight when gamma < 1.
    """
    w = np.asarray(omegas, dtype=float)
    return float(gamma + (1.0 - gamma) * (1.0 - np.mean(w)))


def adaptive_modulation(local_pos, omegas, cfg: SceneConfig) -> float:
    """Energy-compensated modulation; exactly 1 when all weights vanish.

    Variants: "gaussian" ignores the waves entirely, "gabor0" drops the
    compensation offset, "onepluss" is the naive 1 + full wave sum.
    """
    p = np.asarray(local_pos, dtype=float)
    w = np.asarray(omegas, dtype=float)
    f = np.asarray(cfg.freqs, dtype=float)
    if cfg.variant == "gaussian":
        return 1.0
    waves = w * np.cos(f * p[: len(f)])
    if cfg.variant == "onepluss":
        return float(1.0 + np.sum(waves))
    mean_wave = float(np.mean(waves))
    if cfg.variant == "gabor0":
        return mean_wave
    return energy_compensation(w, cfg.gamma) + mean_wave


@dataclass
class GaborPrimitive:
    """One renderable splat with raw (unconstrained) parameters.

    Activated views: scale = exp(log_scale) > 0, opacity in (0, 1) via a
    logistic, wave weights in [0, 1] via the hard sigmoid, rotation
    normalized on access. ``track`` names the motion track that displaces
    mu_base over time; the kernel itself is time-free.
    """

    mu_base: np.ndarray
    log_scale: np.ndarray
    rotation_base: np.ndarray
    opacity_raw: float
    color: np.ndarray
    omega_raw: np.ndarray
    track: int = -1
    config: SceneConfig = field(default_factory=SceneConfig)

    def __post_init__(self):
        self.mu_base = np.asarray(self.mu_base, dtype=float)
        self.log_scale = np.asarray(self.log_scale, dtype=float)
        self.rotation_base = np.asarray(self.rotation_base, dtype=float)
        self.color = np.asarray(self.color, dtype=float)
        self.omega_raw = np.asarray(self.omega_raw, dtype=float)

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def rotation(self) -> np.ndarray:
        return quat.normalize(self.rotation_base)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_raw))

    @property
    def omegas(self) -> np.ndarray:
        return hard_sigmoid_ste(self.omega_raw)[0]

    def cov2d(self) -> np.ndarray:
        """Exact orthographic screen covariance: drop the Z row of R*S."""
        R = quat.to_rotation_matrix(self.rotation)
        A = R[:2, :] * self.scale[None, :]
        return A @ A.T

    def whiten(self, offset2d) -> np.ndarray:
        """Whitened screen offset u with |u|^2 = d^T Sigma^{-1} d."""
        L = np.linalg.cholesky(self.cov2d())
        return np.linalg.solve(L, np.asarray(offset2d, dtype=float))

    def local_coords(self, pixel) -> np.ndarray:
        """Rotated, sigma-normalized in-plane coordinates of a pixel."""
        d = np.asarray(pixel, dtype=float) - self.mu_base[:2]
        R = quat.to_rotation_matrix(self.rotation)
        ell = R.T @ np.array([d[0], d[1], 0.0])
        return ell[:2] / self.scale[:2]


def gabor_opacity(prim: GaborPrimitive, pixel) -> float:
    """Splat opacity at a pixel, clamped into [0, ALPHA_CLAMP].

    The wave argument applies the pi-per-local-sigma frequency scaling to
    the primitive-local coordinates before the cosine mixture.
    """
    u = prim.whiten(np.asarray(pixel, dtype=float) - prim.mu_base[:2])
    g = gaussian_density(u)
    s = adaptive_modulation(np.pi * prim.local_coords(pixel), prim.omegas, prim.config)
    return float(np.clip(prim.opacity * g * s, 0.0, ALPHA_CLAMP))


# ---------------------------------------------------------------------------
# Batch evaluation (leading axes broadcast; used by the renderer)
# ---------------------------------------------------------------------------

def batch_cov2d(R: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Screen covariance sum_i s_i^2 r_i r_i^T with r_i = R[:2, i]."""
    A = R[..., :2, :] * scale[..., None, :]
    return A @ np.swapaxes(A, -1, -2)


def batch_conic(cov: np.ndarray):
    """Inverse covariance entries (a, b, c) and the determinant."""
    s00 = cov[..., 0, 0]
    s01 = cov[..., 0, 1]
    s11 = cov[..., 1, 1]
    det = s00 * s11 - s01 * s01
    return s11 / det, -s01 / det, s00 / det, det


def modulation_forward(theta: np.ndarray, omegas: np.ndarray, cfg: SceneConfig):
    """Modulation S and the per-wave cosines for arbitrary batch shapes.

    theta: (..., N) wave arguments (already includes freq * pi scaling);
    omegas: (..., N) activated weights broadcastable against theta.
    """
    cos_t = np.cos(theta)
    if cfg.variant == "gaussian":
        return np.ones(theta.shape[:-1]), cos_t
    waves = omegas * cos_t
    if cfg.variant == "onepluss":
        return 1.0 + np.sum(waves, axis=-1), cos_t
    mean_wave = np.mean(waves, axis=-1)
    if cfg.variant == "gabor0":
        return mean_wave, cos_t
    b = cfg.gamma + (1.0 - cfg.gamma) * (1.0 - np.mean(omegas, axis=-1))
    return b + mean_wave, cos_t


def modulation_omega_grad(cos_t: np.ndarray, cfg: SceneConfig) -> np.ndarray:
    """dS/d(omega_i) given the cached cosines."""
    n = cfg.wave_count
    if cfg.variant == "gaussian":
        return np.zeros_like(cos_t)
    if cfg.variant == "onepluss":
        return cos_t
    if cfg.variant == "gabor0":
        return cos_t / n
    return (cos_t - (1.0 - cfg.gamma)) / n


def modulation_theta_grad(theta: np.ndarray, omegas: np.ndarray, cfg: SceneConfig) -> np.ndarray:
    """dS/d(theta_i)."""
    if cfg.variant == "gaussian":
        return np.zeros_like(theta)
    sin_t = np.sin(theta)
    if cfg.variant == "onepluss":
        return -omegas * sin_t
    return -omegas * sin_t / cfg.wave_count


# ---------------------------------------------------------------------------
# Analytic parameter derivatives for a single primitive
# ---------------------------------------------------------------------------

def gabor_opacity_gradients(prim: GaborPrimitive, pixel) -> dict:
    """Partials of gabor_opacity w.r.t. every raw primitive parameter.

    Returns {"mu": (2,) w.r.t. the projected center, "log_scale": (3,),
    "rotation": (4,) w.r.t. the raw quaternion, "omega_raw": (N,) routed
    through the STE surrogate, "opacity_raw": float}. The clamp boundaries
    have zero outgoing gradient.
    """
    cfg = prim.config
    x = np.asarray(pixel, dtype=float)
    d = x - prim.mu_base[:2]
    s = prim.scale
    q_unit = prim.rotation
    R = quat.to_rotation_matrix(q_unit)

    cov = batch_cov2d(R, s)
    a, b, c, _ = batch_conic(cov)
    Q = a * d[0] ** 2 + 2 * b * d[0] * d[1] + c * d[1] ** 2
    G = np.exp(-0.5 * Q)
    gd = np.array([a * d[0] + b * d[1], b * d[0] + c * d[1]])  # Sigma^{-1} d

    ell = R.T @ np.array([d[0], d[1], 0.0])
    p = ell[:2] / s[:2]
    freqs = np.asarray(cfg.freqs, dtype=float)
    theta = freqs * np.pi * p[: len(freqs)]
    omegas, ste = hard_sigmoid_ste(prim.omega_raw)
    S, cos_t = modulation_forward(theta, omegas, cfg)
    S = float(S)

    alpha = prim.opacity
    v = alpha * G * S
    active = 1.0 if 0.0 < v < ALPHA_CLAMP else 0.0

    gG = active * alpha * S
    gS = active * alpha * G
    dS_dtheta = modulation_theta_grad(theta, omegas, cfg)
    # theta_i = f_i * pi * (R[0,i] dx + R[1,i] dy) / s_i for the wave axes
    n_w = len(freqs)
    fpi = freqs * np.pi

    # --- d / d(center): through both the envelope and the wave argument
    dG_dd = -G * gd
    dtheta_dd = (fpi[:, None] * R[:2, :n_w].T / s[:n_w, None])  # (N, 2)
    dS_dd = dS_dtheta @ dtheta_dd
    g_mu = -(gG * dG_dd + gS * dS_dd)

    # --- d / d(log_scale): cov path for all axes, wave path for x/y
    r_cols = R[:2, :]                       # r_i = first two rows of column i
    w_axes = gd @ r_cols                    # (3,)
    g_log_scale = gG * G * (s ** 2) * (w_axes ** 2)
    g_log_scale[:n_w] += gS * dS_dtheta * (-theta)   # dtheta_i/dlog(s_i) = -theta_i

    # --- d / d(rotation): accumulate dL/dR then chain through the quaternion
    GR = np.zeros((3, 3))
    GR[:2, :] = gG * G * (s ** 2)[None, :] * gd[:, None] * w_axes[None, :]
    for i in range(n_w):
        GR[0, i] += gS * dS_dtheta[i] * fpi[i] * d[0] / s[i]
        GR[1, i] += gS * dS_dtheta[i] * fpi[i] * d[1] / s[i]
    dR_dq = quat.rotation_matrix_jacobian(q_unit)           # (4, 3, 3)
    g_q_unit = np.einsum("qab,ab->q", dR_dq, GR)
    g_q_raw = quat.normalize_jacobian(prim.rotation_base).T @ g_q_unit

    # --- waves and opacity
    g_omega_hat = gS * modulation_omega_grad(cos_t, cfg)
    g_omega_raw = g_omega_hat * ste
    g_opacity_raw = active * G * S * alpha * (1.0 - alpha)

    return {
        "mu": g_mu,
        "log_scale": g_log_scale,
        "rotation": g_q_raw,
        "omega_raw": g_omega_raw,
        "opacity_raw": float(g_opacity_raw),
    }
