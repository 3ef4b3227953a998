"""Versioned binary scene container ("AGSV").

Little-endian throughout; keyframe times are float64, everything else
float32. Layout:

    magic "AGSV" | u32 version | u32 P | u32 M | u32 N
    f32 gamma | f32 beta | u8 variant | u8 spline | 2 pad bytes
    f32 freqs[N]
    f64 times[M]
    P primitive records:
        f32 mu[3] | f32 log_scale[3] | f32 rotation[4] | f32 opacity
        f32 color[3] | f32 omega[N] | i32 track_binding
    P track records:
        f32 y[M*3] | f32 r[M*3]

Pipeline scenes keep their parameters on the float32 grid, so
load(save(scene)) reproduces every parameter bitwise.
"""

from __future__ import annotations

import struct

import numpy as np

from .config import SceneConfig, KERNEL_VARIANTS, SPLINE_KINDS
from .scene import SceneModel

MAGIC = b"AGSV"
VERSION = 1


def save_scene(path, scene: SceneModel) -> None:
    cfg = scene.config
    p = scene.count
    m = scene.keyframe_count
    n = cfg.wave_count
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIIII", MAGIC, VERSION, p, m, n))
        fh.write(struct.pack("<ffBBxx", cfg.gamma, cfg.beta,
                             KERNEL_VARIANTS.index(cfg.variant),
                             SPLINE_KINDS.index(cfg.spline)))
        fh.write(np.asarray(cfg.freqs, dtype="<f4").tobytes())
        fh.write(scene.times.astype("<f8").tobytes())
        for i in range(p):
            fh.write(scene.mu_base[i].astype("<f4").tobytes())
            fh.write(scene.log_scale[i].astype("<f4").tobytes())
            fh.write(scene.rotation_base[i].astype("<f4").tobytes())
            fh.write(np.float32(scene.opacity_raw[i]).tobytes())
            fh.write(scene.color[i].astype("<f4").tobytes())
            fh.write(scene.omega_raw[i].astype("<f4").tobytes())
            fh.write(struct.pack("<i", int(scene.track_binding[i])))
        for i in range(p):
            fh.write(scene.trans_ctrl[i].astype("<f4").tobytes())
            fh.write(scene.rot_ctrl[i].astype("<f4").tobytes())


def load_scene(path) -> SceneModel:
    with open(path, "rb") as fh:
        head = fh.read(20)
        if len(head) < 20:
            raise ValueError(f"{path}: truncated scene file")
        magic, version, p, m, n = struct.unpack("<4sIIII", head)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        gamma, beta, variant_code, spline_code = struct.unpack("<ffBBxx", fh.read(12))
        freqs = np.frombuffer(fh.read(4 * n), dtype="<f4").astype(float)
        cfg = SceneConfig(gamma=float(np.float32(gamma)), beta=float(np.float32(beta)),
                          freqs=tuple(freqs.tolist()),
                          variant=KERNEL_VARIANTS[variant_code],
                          spline=SPLINE_KINDS[spline_code])
        times = np.frombuffer(fh.read(8 * m), dtype="<f8").astype(float)

        rec = struct.Struct("<" + "f" * (3 + 3 + 4 + 1 + 3 + n) + "i")
        mu = np.zeros((p, 3)); log_scale = np.zeros((p, 3))
        rot = np.zeros((p, 4)); opacity = np.zeros(p)
        color = np.zeros((p, 3)); omega = np.zeros((p, n))
        binding = np.zeros(p, dtype=np.int32)
        for i in range(p):
            vals = rec.unpack(fh.read(rec.size))
            mu[i] = vals[0:3]
            log_scale[i] = vals[3:6]
            rot[i] = vals[6:10]
            opacity[i] = vals[10]
            color[i] = vals[11:14]
            omega[i] = vals[14:14 + n]
            binding[i] = vals[14 + n]
        trans = np.zeros((p, m, 3)); rotc = np.zeros((p, m, 3))
        for i in range(p):
            trans[i] = np.frombuffer(fh.read(12 * m), dtype="<f4").reshape(m, 3)
            rotc[i] = np.frombuffer(fh.read(12 * m), dtype="<f4").reshape(m, 3)
        extra = fh.read(1)
        if extra:
            raise ValueError(f"{path}: trailing bytes after scene payload")
    scene = SceneModel(mu_base=mu, log_scale=log_scale, rotation_base=rot,
                       opacity_raw=opacity, color=color, omega_raw=omega,
                       times=times, trans_ctrl=trans, rot_ctrl=rotc,
                       track_binding=binding, config=cfg)
    scene.validate()
    return scene
