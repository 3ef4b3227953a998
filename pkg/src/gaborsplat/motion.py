"""Per-primitive motion: gated cubic Hermite splines over shared keyframes.

Translation and rotation tracks share one ascending keyframe grid. The
interpolant at a query time is a *linear* map of the control points once
the monotone gates are fixed, so every spline kind is evaluated through a
(support indices, weights) pair that both the forward pass and the
backward scatter reuse. Rotation control points live in so(3); the
interpolated vector is wrapped into (-pi, pi] and pushed through the
quaternion exponential.

"cubic" (natural cubic) and "bspline" (clamped cubic B-spline) are
ablation baselines without gating.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quaternions as quat

CURV_EPS = 1e-8


def hermite_basis(s):
    """Cubic Hermite basis (H00, H10, H01, H11) on s in [0, 1]."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or np.any(s > 1):
        raise ValueError("hermite_basis defined on [0, 1]")
    s2 = s * s
    s3 = s2 * s
    return (2 * s3 - 3 * s2 + 1, s3 - 2 * s2 + s, -2 * s3 + 3 * s2, s3 - s2)


def auto_slopes(times: np.ndarray, y: np.ndarray, beta: float) -> np.ndarray:
    """Gated tangents: beta-scaled secant averages, zeroed at sign flips.

    y has shape (..., M, D). Interior tangents are
    beta * (delta_{k-1} + delta_k) / 2 where the two secant slopes agree
    in sign (componentwise), else 0; endpoints use the one-sided secant.
    """
    times = np.asarray(times, dtype=float)
    y = np.asarray(y, dtype=float)
    m_count = times.shape[0]
    if m_count < 2:
        raise ValueError("need at least two keyframes")
    if y.shape[-2] != m_count:
        raise ValueError("control point count does not match keyframe count")
    h = np.diff(times)
    delta = np.diff(y, axis=-2) / h[:, None]
    slopes = np.zeros_like(y)
    slopes[..., 0, :] = beta * delta[..., 0, :]
    slopes[..., -1, :] = beta * delta[..., -1, :]
    if m_count > 2:
        prev_d = delta[..., :-1, :]
        next_d = delta[..., 1:, :]
        gate = np.sign(prev_d) == np.sign(next_d)
        slopes[..., 1:-1, :] = np.where(gate, beta * 0.5 * (prev_d + next_d), 0.0)
    return slopes


def _locate(times: np.ndarray, t: float):
    tq = float(np.clip(t, times[0], times[-1]))
    k = int(np.searchsorted(times, tq, side="right")) - 1
    k = min(max(k, 0), len(times) - 2)
    h = times[k + 1] - times[k]
    return k, h, (tq - times[k]) / h


def _hermite_weights(times, y, beta, t):
    """Support indices {k-1..k+2} and per-component control weights.

    The weights fold in the dependence of the gated tangents on their
    neighboring control points, so d(value)/d(y_j) is exactly W.
    """
    times = np.asarray(times, dtype=float)
    y = np.asarray(y, dtype=float)
    m_count = len(times)
    k, h, s = _locate(times, t)
    h00, h10, h01, h11 = hermite_basis(s)
    batch = y.shape[:-2]
    d = y.shape[-1]
    w = np.zeros(batch + (4, d))
    w[..., 1, :] += h00
    w[..., 2, :] += h01

    hs = np.diff(times)
    delta = np.diff(y, axis=-2) / hs[:, None]

    def slope_partials(j):
        """(lane, coeff) terms of d(m_j)/d(y_lane_control)."""
        if j == 0:
            return [(1, -beta / hs[0]), (2, beta / hs[0])]
        if j == m_count - 1:
            # lanes relative to support start k-1; j-1 = m-2 -> lane m-2-(k-1)
            base = j - 1 - (k - 1)
            return [(base, -beta / hs[-1]), (base + 1, beta / hs[-1])]
        gate = (np.sign(delta[..., j - 1, :]) == np.sign(delta[..., j, :])).astype(float)
        half = 0.5 * beta * gate
        lane = j - (k - 1)
        return [
            (lane - 1, -half / hs[j - 1]),
            (lane, half / hs[j - 1] - half / hs[j]),
            (lane + 1, half / hs[j]),
        ]

    for basis_w, j in ((h10 * h, k), (h11 * h, k + 1)):
        for lane, coeff in slope_partials(j):
            w[..., lane, :] += basis_w * coeff
    support = np.clip(np.arange(k - 1, k + 3), 0, m_count - 1)
    return support, w


_natural_cache: dict = {}


def _natural_second_derivative_map(times: tuple) -> np.ndarray:
    """K with sigma = K @ y for a natural cubic spline (rows 0, M-1 zero)."""
    if times in _natural_cache:
        return _natural_cache[times]
    t = np.asarray(times, dtype=float)
    m_count = len(t)
    K = np.zeros((m_count, m_count))
    if m_count > 2:
        h = np.diff(t)
        n = m_count - 2
        tri = np.zeros((n, n))
        rhs = np.zeros((n, m_count))
        for i, k in enumerate(range(1, m_count - 1)):
            tri[i, i] = (h[k - 1] + h[k]) / 3.0
            if i > 0:
                tri[i, i - 1] = h[k - 1] / 6.0
            if i < n - 1:
                tri[i, i + 1] = h[k] / 6.0
            rhs[i, k - 1] += 1.0 / h[k - 1]
            rhs[i, k] += -1.0 / h[k - 1] - 1.0 / h[k]
            rhs[i, k + 1] += 1.0 / h[k]
        K[1:-1, :] = np.linalg.solve(tri, rhs)
    _natural_cache[times] = K
    return K


def _natural_cubic_weights(times, t):
    times = np.asarray(times, dtype=float)
    m_count = len(times)
    k, h, s = _locate(times, t)
    K = _natural_second_derivative_map(tuple(times.tolist()))
    ta, tb = times[k], times[k + 1]
    tq = float(np.clip(t, times[0], times[-1]))
    w = np.zeros(m_count)
    w[k] += (tb - tq) / h
    w[k + 1] += (tq - ta) / h
    ca = ((tb - tq) ** 3 / h - h * (tb - tq)) / 6.0
    cb = ((tq - ta) ** 3 / h - h * (tq - ta)) / 6.0
    w += ca * K[k, :] + cb * K[k + 1, :]
    return np.arange(m_count), w[:, None]


def _bspline_weights(times, t):
    from scipy.interpolate import BSpline

    times = np.asarray(times, dtype=float)
    m_count = len(times)
    if m_count < 4:
        raise ValueError("bspline baseline needs at least 4 control points")
    t0, te = times[0], times[-1]
    knots = np.concatenate([[t0] * 3, np.linspace(t0, te, m_count - 2), [te] * 3])
    tq = np.clip(t, t0, te)
    design = BSpline.design_matrix(np.array([tq]), knots, 3, extrapolate=False)
    w = np.asarray(design.todense()).ravel()
    return np.arange(m_count), w[:, None]


def spline_weights(times, y, beta: float, t: float, kind: str = "hermite"):
    """(support indices, weights) with value = sum_j W_j * y[..., idx_j, :].

    Hermite weights vary per batch element and component (gates); the
    ablation kinds return data-independent weights broadcast over both.
    """
    if kind == "hermite":
        return _hermite_weights(times, y, beta, t)
    if kind == "cubic":
        return _natural_cubic_weights(times, t)
    if kind == "bspline":
        return _bspline_weights(times, t)
    raise ValueError(f"unknown spline kind {kind!r}")


def interpolate(times, y, beta: float, t: float, kind: str = "hermite") -> np.ndarray:
    """Displacement at time t, shape (..., D)."""
    idx, w = spline_weights(times, y, beta, t, kind)
    y = np.asarray(y, dtype=float)
    return np.sum(w * y[..., idx, :], axis=-2)


def second_differences(times, y) -> np.ndarray:
    """Interior curvature estimates 2(d+ - d-)/(h- + h+), shape (..., M-2, D)."""
    times = np.asarray(times, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(times) < 3:
        raise ValueError("need at least three keyframes for curvature")
    h = np.diff(times)
    d = np.diff(y, axis=-2) / h[:, None]
    return 2.0 * np.diff(d, axis=-2) / (h[:-1] + h[1:])[:, None]


def curvature_energy(times, y, eps: float = CURV_EPS):
    """Duration-weighted second-order energy and its control gradients.

    Returns (loss, grad) with grad shaped like y. The normalizer counts
    every interior knot of every track times the coordinate dimension, so
    the value is invariant to track count and time units. Grids with
    fewer than 3 knots contribute nothing.
    """
    times = np.asarray(times, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(times) < 3:
        return 0.0, np.zeros_like(y)
    h = np.diff(times)
    w_k = 0.5 * (h[:-1] + h[1:])
    ypp = second_differences(times, y)
    n_tracks = int(np.prod(y.shape[:-2], dtype=int)) if y.ndim > 2 else 1
    d = y.shape[-1]
    denom = n_tracks * float(np.sum(w_k)) * d + eps
    num = float(np.sum(w_k[:, None] * ypp ** 2))
    loss = num / denom

    g_ypp = 2.0 * w_k[:, None] * ypp / denom
    grad = np.zeros_like(y)
    c_prev = 2.0 / (h[:-1] * (h[:-1] + h[1:]))
    c_next = 2.0 / (h[1:] * (h[:-1] + h[1:]))
    grad[..., :-2, :] += g_ypp * c_prev[:, None]
    grad[..., 1:-1, :] += g_ypp * (-(c_prev + c_next))[:, None]
    grad[..., 2:, :] += g_ypp * c_next[:, None]
    return loss, grad


@dataclass
class MotionTrack:
    """Keyframed displacement and rotation controls for one primitive.

    times must be strictly ascending with M >= 2; rotation controls are
    so(3) vectors rewrapped so their angles stay in (-pi, pi].
    """

    times: np.ndarray
    y: np.ndarray
    r: np.ndarray | None = None
    beta: float = 1.0
    kind: str = "hermite"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.times.ndim != 1 or len(self.times) < 2:
            raise ValueError("need at least two keyframes")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("keyframe times must be strictly increasing")
        if self.y.shape != (len(self.times), 3):
            raise ValueError("y must have shape (M, 3)")
        if self.r is None:
            self.r = np.zeros_like(self.y)
        self.r = quat.wrap_rotvec(np.asarray(self.r, dtype=float))
        if self.r.shape != self.y.shape:
            raise ValueError("r must have shape (M, 3)")

    def slopes(self) -> np.ndarray:
        return auto_slopes(self.times, self.y, self.beta)

    def displacement_at(self, t: float) -> np.ndarray:
        return interpolate(self.times, self.y, self.beta, t, self.kind)

    def position_at(self, mu_base, t: float) -> np.ndarray:
        return np.asarray(mu_base, dtype=float) + self.displacement_at(t)

    def rotation_at(self, q_base, t: float) -> np.ndarray:
        delta = interpolate(self.times, self.r, self.beta, t, self.kind)
        return compose_rotation(np.asarray(q_base, dtype=float), delta)

    def curvature_loss(self) -> tuple[float, np.ndarray]:
        if len(self.times) < 3:
            return 0.0, np.zeros_like(self.y)
        return curvature_energy(self.times, self.y)


def compose_rotation(q_base: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """normalize(normalize(q_base) * exp(wrap(delta))), batched."""
    wrapped = quat.wrap_rotvec(delta)
    return quat.normalize(quat.multiply(quat.normalize(q_base), quat.exp_rotvec(wrapped)))


def curvature_loss(tracks) -> tuple[float, list[np.ndarray]]:
    """Pooled curvature loss over a collection of MotionTracks.

    Numerator and normalizer aggregate across tracks (one global ratio);
    returns the scalar and one gradient array per track.
    """
    num = 0.0
    den = CURV_EPS
    pieces = []
    for tr in tracks:
        if len(tr.times) < 3:
            pieces.append(None)
            continue
        h = np.diff(tr.times)
        w_k = 0.5 * (h[:-1] + h[1:])
        ypp = second_differences(tr.times, tr.y)
        num += float(np.sum(w_k[:, None] * ypp ** 2))
        den += float(np.sum(w_k)) * tr.y.shape[-1]
        pieces.append((h, w_k, ypp))
    loss = num / den
    grads = []
    for tr, piece in zip(tracks, pieces):
        if piece is None:
            grads.append(np.zeros_like(tr.y))
            continue
        h, w_k, ypp = piece
        g_ypp = 2.0 * w_k[:, None] * ypp / den
        g = np.zeros_like(tr.y)
        c_prev = 2.0 / (h[:-1] * (h[:-1] + h[1:]))
        c_next = 2.0 / (h[1:] * (h[:-1] + h[1:]))
        g[:-2, :] += g_ypp * c_prev[:, None]
        g[1:-1, :] += g_ypp * (-(c_prev + c_next))[:, None]
        g[2:, :] += g_ypp * c_next[:, None]
        grads.append(g)
    return loss, grads
