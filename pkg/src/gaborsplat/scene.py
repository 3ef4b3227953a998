"""Scene state: the full primitive set in structure-of-arrays layout.

All learnable parameters are float64 arrays keyed by name; GradBuffer
mirrors the same shapes. Motion control points share one keyframe grid
across primitives. ``track_binding`` records which supervised track id a
primitive was seeded from (-1 = none); it rides along in the scene file
so flow supervision survives a save/load round trip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SceneConfig
from . import kernel, motion
from . import quaternions as quat

PARAM_NAMES = ("mu_base", "log_scale", "rotation_base", "opacity_raw",
               "color", "omega_raw", "trans_ctrl", "rot_ctrl")


@dataclass
class SceneModel:
    mu_base: np.ndarray        # (P, 3)
    log_scale: np.ndarray      # (P, 3)
    rotation_base: np.ndarray  # (P, 4)
    opacity_raw: np.ndarray    # (P,)
    color: np.ndarray          # (P, 3)
    omega_raw: np.ndarray      # (P, N)
    times: np.ndarray          # (M,) shared keyframe grid
    trans_ctrl: np.ndarray     # (P, M, 3)
    rot_ctrl: np.ndarray       # (P, M, 3)
    track_binding: np.ndarray  # (P,) int32, supervised track id or -1
    config: SceneConfig = field(default_factory=SceneConfig)

    def __post_init__(self):
        for name in PARAM_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.times = np.asarray(self.times, dtype=float)
        self.track_binding = np.asarray(self.track_binding, dtype=np.int32)

    @property
    def count(self) -> int:
        return self.mu_base.shape[0]

    @property
    def keyframe_count(self) -> int:
        return len(self.times)

    def validate(self) -> None:
        p = self.count
        n = self.config.wave_count
        m = self.keyframe_count
        expected = {
            "mu_base": (p, 3), "log_scale": (p, 3), "rotation_base": (p, 4),
            "opacity_raw": (p,), "color": (p, 3), "omega_raw": (p, n),
            "trans_ctrl": (p, m, 3), "rot_ctrl": (p, m, 3),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {actual}")
        if m < 2 or np.any(np.diff(self.times) <= 0):
            raise ValueError("keyframe times must be strictly increasing with M >= 2")
        self.config.validate()

    def copy(self) -> "SceneModel":
        return SceneModel(
            **{name: getattr(self, name).copy() for name in PARAM_NAMES},
            times=self.times.copy(),
            track_binding=self.track_binding.copy(),
            config=self.config,
        )

    # Activated views -------------------------------------------------
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scale)

    def opacities(self) -> np.ndarray:
        return kernel.sigmoid(self.opacity_raw)

    def omegas(self) -> np.ndarray:
        return kernel.hard_sigmoid_ste(self.omega_raw)[0]

    def rotations_base(self) -> np.ndarray:
        return quat.normalize(self.rotation_base)

    def primitive(self, i: int) -> kernel.GaborPrimitive:
        return kernel.GaborPrimitive(
            mu_base=self.mu_base[i], log_scale=self.log_scale[i],
            rotation_base=self.rotation_base[i], opacity_raw=float(self.opacity_raw[i]),
            color=self.color[i], omega_raw=self.omega_raw[i], track=i,
            config=self.config,
        )

    def motion_track(self, i: int) -> motion.MotionTrack:
        return motion.MotionTrack(self.times, self.trans_ctrl[i], self.rot_ctrl[i],
                                  beta=self.config.beta, kind=self.config.spline)

    def positions_at(self, t: float) -> np.ndarray:
        disp = motion.interpolate(self.times, self.trans_ctrl, self.config.beta,
                                  t, self.config.spline)
        return self.mu_base + disp

    def rotations_at(self, t: float) -> np.ndarray:
        delta = motion.interpolate(self.times, self.rot_ctrl, self.config.beta,
                                   t, self.config.spline)
        return motion.compose_rotation(self.rotation_base, delta)

    def quantize_to_f32(self) -> None:
        """Snap parameters onto the float32 grid the scene file stores.

        Keeps save -> load bitwise lossless for pipeline-produced scenes.
        """
        for name in PARAM_NAMES:
            arr = getattr(self, name)
            arr[...] = arr.astype(np.float32).astype(np.float64)


@dataclass
class GradBuffer:
    mu_base: np.ndarray
    log_scale: np.ndarray
    rotation_base: np.ndarray
    opacity_raw: np.ndarray
    color: np.ndarray
    omega_raw: np.ndarray
    trans_ctrl: np.ndarray
    rot_ctrl: np.ndarray

    @staticmethod
    def zeros_like(scene: SceneModel) -> "GradBuffer":
        return GradBuffer(**{name: np.zeros_like(getattr(scene, name))
                             for name in PARAM_NAMES})

    def add_scaled(self, other: "GradBuffer", factor: float = 1.0) -> None:
        for name in PARAM_NAMES:
            getattr(self, name)[...] += factor * getattr(other, name)

    def scale(self, factor: float) -> None:
        for name in PARAM_NAMES:
            getattr(self, name)[...] *= factor

    def nonfinite_groups(self) -> list[str]:
        return [name for name in PARAM_NAMES
                if not np.all(np.isfinite(getattr(self, name)))]
