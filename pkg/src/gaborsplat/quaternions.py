"""Quaternion and so(3) helpers, batch-friendly over leading axes.

Convention: quaternions are (w, x, y, z) with Hamilton product; rotation
vectors carry the full rotation angle (the quaternion stores half of it).
All Jacobians are laid out d(output)/d(input) so chaining is
``g_in = J.T @ g_out`` for column gradients.
"""

from __future__ import annotations

import numpy as np

_SMALL_ANGLE = 1e-8


def normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def normalize_jacobian(q: np.ndarray) -> np.ndarray:
    """d(normalize(q))/dq, shape (..., 4, 4)."""
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    u = q / n
    eye = np.broadcast_to(np.eye(4), q.shape + (4,))
    return (eye - u[..., :, None] * u[..., None, :]) / n[..., None]


def multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a * b."""
    aw, ax, ay, az = (a[..., i] for i in range(4))
    bw, bx, by, bz = (b[..., i] for i in range(4))
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def left_matrix(a: np.ndarray) -> np.ndarray:
    """L(a) with a*b = L(a) @ b; shape (..., 4, 4)."""
    w, x, y, z = (a[..., i] for i in range(4))
    rows = [
        np.stack([w, -x, -y, -z], axis=-1),
        np.stack([x, w, -z, y], axis=-1),
        np.stack([y, z, w, -x], axis=-1),
        np.stack([z, -y, x, w], axis=-1),
    ]
    return np.stack(rows, axis=-2)


def right_matrix(b: np.ndarray) -> np.ndarray:
    """R(b) with a*b = R(b) @ a; shape (..., 4, 4)."""
    w, x, y, z = (b[..., i] for i in range(4))
    rows = [
        np.stack([w, -x, -y, -z], axis=-1),
        np.stack([x, w, z, -y], axis=-1),
        np.stack([y, -z, w, x], axis=-1),
        np.stack([z, y, -x, w], axis=-1),
    ]
    return np.stack(rows, axis=-2)


def exp_rotvec(v: np.ndarray) -> np.ndarray:
    """Map a rotation vector (angle * axis) to a unit quaternion."""
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * theta
    # sin(theta/2)/theta, series for tiny angles
    k = np.where(theta > _SMALL_ANGLE,
                 np.sin(half) / np.where(theta > _SMALL_ANGLE, theta, 1.0),
                 0.5 - theta * theta / 48.0)
    return np.concatenate([np.cos(half), k * v], axis=-1)


def exp_rotvec_jacobian(v: np.ndarray) -> np.ndarray:
    """d exp_rotvec(v) / dv, shape (..., 4, 3)."""
    theta = np.linalg.norm(v, axis=-1)
    safe = np.where(theta > _SMALL_ANGLE, theta, 1.0)
    half = 0.5 * theta
    s, c = np.sin(half), np.cos(half)
    k = np.where(theta > _SMALL_ANGLE, s / safe, 0.5 - theta * theta / 48.0)
    # dk/dtheta * theta, series-safe (exact limit 0 at theta=0)
    kp_theta = np.where(theta > _SMALL_ANGLE, (0.5 * c * theta - s) / safe, -theta * theta / 24.0)
    u = v / safe[..., None]
    J = np.zeros(v.shape[:-1] + (4, 3))
    # dw/dv = -(1/2) sin(half) u  ->  -(1/4) v at the origin
    J[..., 0, :] = np.where((theta > _SMALL_ANGLE)[..., None], -0.5 * s[..., None] * u, -0.25 * v)
    eye = np.broadcast_to(np.eye(3), v.shape[:-1] + (3, 3))
    J[..., 1:, :] = k[..., None, None] * eye + kp_theta[..., None, None] * (u[..., :, None] * u[..., None, :])
    return J


def wrap_rotvec(v: np.ndarray) -> np.ndarray:
    """Rewrap so the rotation angle lies in (-pi, pi], keeping the axis."""
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    wrapped = theta - 2.0 * np.pi * np.floor((theta + np.pi) / (2.0 * np.pi))
    scale = np.where(theta > _SMALL_ANGLE, wrapped / np.where(theta > _SMALL_ANGLE, theta, 1.0), 1.0)
    return v * scale


def wrap_rotvec_jacobian(v: np.ndarray) -> np.ndarray:
    """d wrap_rotvec(v)/dv; identity when no wrap occurred."""
    theta = np.linalg.norm(v, axis=-1)
    safe = np.where(theta > _SMALL_ANGLE, theta, 1.0)
    wrapped = theta - 2.0 * np.pi * np.floor((theta + np.pi) / (2.0 * np.pi))
    scale = np.where(theta > _SMALL_ANGLE, wrapped / safe, 1.0)
    u = v / safe[..., None]
    eye = np.broadcast_to(np.eye(3), v.shape[:-1] + (3, 3)).copy()
    # v' = scale * v with scale = (theta - 2 pi n)/theta; d theta/dv = u
    return (scale[..., None, None] * eye
            + (1.0 - scale)[..., None, None] * (u[..., :, None] * u[..., None, :]))


def to_rotation_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternion to 3x3 rotation matrix, shape (..., 3, 3)."""
    w, x, y, z = (q[..., i] for i in range(4))
    rows = [
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
    ]
    return np.stack(rows, axis=-2)


def rotation_matrix_jacobian(q: np.ndarray) -> np.ndarray:
    """dR/dq for a unit quaternion, shape (..., 4, 3, 3).

    Valid on the unit sphere; compose with normalize_jacobian for raw
    quaternion parameters.
    """
    w, x, y, z = (q[..., i] for i in range(4))
    zero = np.zeros_like(w)

    def mat(rows):
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    dw = 2.0 * mat([[zero, -z, y], [z, zero, -x], [-y, x, zero]])
    dx = 2.0 * mat([[zero, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dy = 2.0 * mat([[-2 * y, x, w], [x, zero, z], [-w, z, -2 * y]])
    dz = 2.0 * mat([[-2 * z, -w, x], [w, -2 * z, y], [x, y, zero]])
    return np.stack([dw, dx, dy, dz], axis=-3)
