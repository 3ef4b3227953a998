"""Dataset ingestion: manifest JSON, 8-bit PNG frames, PFM depth, CSV tracks.

A dataset directory holds one JSON manifest listing per-frame rgb/depth/
mask files plus a single tracks CSV (`point_id,frame,x,y,visibility`).
Frame i maps to normalized time i / (F - 1) (t = 0 for a single frame).
Depth is stored as PFM (float32, sign of the scale header encodes
endianness, bottom-to-top scanlines per the format).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image


@dataclass
class FrameBundle:
    """One frame's supervision: image, depth prior, visible tracks, mask."""

    index: int
    time: float
    rgb: np.ndarray          # (H, W, 3) in [0, 1]
    depth: np.ndarray        # (H, W) float, prior units
    mask: np.ndarray         # (H, W) in {0, 1}
    track_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    track_xy: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    track_vis: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]


@dataclass
class DatasetManifest:
    root: str
    rgb_paths: list
    depth_paths: list
    mask_paths: list
    tracks_path: str

    @property
    def frame_count(self) -> int:
        return len(self.rgb_paths)


def frame_time(index: int, frame_count: int) -> float:
    return 0.0 if frame_count <= 1 else index / (frame_count - 1)


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------

def write_pfm(path, data: np.ndarray, little_endian: bool = True) -> None:
    """Grayscale or color PFM; bottom-to-top rows, scale sign = endianness."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError("PFM supports (H, W) or (H, W, 3) arrays")
    scale = -1.0 if little_endian else 1.0
    flipped = np.flipud(data)
    if not little_endian:
        flipped = flipped.astype(">f4")
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{data.shape[1]} {data.shape[0]}\n".encode("ascii"))
        fh.write(f"{scale}\n".encode("ascii"))
        fh.write(flipped.tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic == b"Pf":
            channels = 1
        elif magic == b"PF":
            channels = 3
        else:
            raise ValueError(f"{path}: not a PFM file (magic {magic!r})")
        dims = fh.readline().split()
        if len(dims) != 2:
            raise ValueError(f"{path}: malformed PFM dimension line")
        width, height = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        count = width * height * channels
        payload = fh.read(count * 4)
        if len(payload) != count * 4:
            raise ValueError(f"{path}: truncated PFM payload")
        raw = np.frombuffer(payload, dtype=dtype)
    shape = (height, width) if channels == 1 else (height, width, 3)
    data = np.flipud(raw.reshape(shape)).astype(np.float64)
    if abs(scale) not in (0.0, 1.0):
        data = data * abs(scale)
    return data


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------

def write_png(path, data: np.ndarray) -> None:
    """Float arrays in [0, 1] are quantized to 8 bits; uint8 passes through."""
    arr = np.asarray(data)
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(path)


def read_png(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img)
    return arr.astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# Tracks CSV
# ---------------------------------------------------------------------------

TRACK_HEADER = ["point_id", "frame", "x", "y", "visibility"]


def write_tracks(path, rows) -> None:
    """rows: iterable of (point_id, frame, x, y, visibility)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACK_HEADER)
        for row in rows:
            writer.writerow(row)


def read_tracks(path, frame_count: int, width: int, height: int):
    """Per-frame track arrays; validation errors name the file and row."""
    per_frame = {f: ([], [], []) for f in range(frame_count)}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRACK_HEADER:
            raise ValueError(f"{path}: expected header {','.join(TRACK_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 columns, got {len(row)}")
            try:
                pid = int(row[0])
                frame = int(row[1])
                x, y, vis = float(row[2]), float(row[3]), float(row[4])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            if not 0 <= frame < frame_count:
                raise ValueError(f"{path}:{lineno}: frame {frame} outside dataset "
                                 f"(F = {frame_count})")
            vis = float(np.clip(vis, 0.0, 1.0))
            if vis > 0 and not (0.0 <= x <= width and 0.0 <= y <= height):
                raise ValueError(f"{path}:{lineno}: visible point ({x}, {y}) outside "
                                 f"{width}x{height} image")
            ids, xys, viss = per_frame[frame]
            ids.append(pid)
            xys.append((x, y))
            viss.append(vis)
    return {
        f: (np.asarray(ids, dtype=int),
            np.asarray(xys, dtype=float).reshape(-1, 2),
            np.asarray(viss, dtype=float))
        for f, (ids, xys, viss) in per_frame.items()
    }


# ---------------------------------------------------------------------------
# Manifest and bundles
# ---------------------------------------------------------------------------

def write_manifest(path, rgb_paths, depth_paths, mask_paths, tracks_path) -> None:
    payload = {
        "frames": [
            {"rgb": r, "depth": d, "mask": m}
            for r, d, m in zip(rgb_paths, depth_paths, mask_paths)
        ],
        "tracks": tracks_path,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)


def load_manifest(path) -> DatasetManifest:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if "frames" not in payload or not payload["frames"]:
        raise ValueError(f"{path}: manifest lists no frames")
    root = os.path.dirname(os.path.abspath(path))
    manifest = DatasetManifest(
        root=root,
        rgb_paths=[f["rgb"] for f in payload["frames"]],
        depth_paths=[f["depth"] for f in payload["frames"]],
        mask_paths=[f["mask"] for f in payload["frames"]],
        tracks_path=payload.get("tracks", ""),
    )
    for rel in (manifest.rgb_paths + manifest.depth_paths + manifest.mask_paths
                + ([manifest.tracks_path] if manifest.tracks_path else [])):
        full = os.path.join(root, rel)
        if not os.path.exists(full):
            raise FileNotFoundError(f"{path}: referenced file missing: {rel}")
    return manifest


def load_dataset(manifest_path) -> list[FrameBundle]:
    manifest = load_manifest(manifest_path)
    f_count = manifest.frame_count
    bundles = []
    dims = None
    for i in range(f_count):
        rgb = read_png(os.path.join(manifest.root, manifest.rgb_paths[i]))
        if rgb.ndim == 2:
            rgb = np.repeat(rgb[:, :, None], 3, axis=2)
        rgb = rgb[:, :, :3]
        depth = read_pfm(os.path.join(manifest.root, manifest.depth_paths[i]))
        if depth.ndim == 3:
            depth = depth.mean(axis=2)
        mask_raw = read_png(os.path.join(manifest.root, manifest.mask_paths[i]))
        if mask_raw.ndim == 3:
            mask_raw = mask_raw[:, :, 0]
        levels = np.unique(np.round(mask_raw * 255.0))
        if not np.all(np.isin(levels, (0.0, 255.0))):
            raise ValueError(f"{manifest.mask_paths[i]}: mask must be binary 0/255, "
                             f"found levels {levels.tolist()}")
        mask = (mask_raw > 0.5).astype(np.float64)
        if dims is None:
            dims = rgb.shape[:2]
        for name, arr in (("rgb", rgb), ("depth", depth), ("mask", mask)):
            if arr.shape[:2] != dims:
                raise ValueError(f"frame {i}: {name} is {arr.shape[:2]}, expected {dims}")
        bundles.append(FrameBundle(index=i, time=frame_time(i, f_count),
                                   rgb=rgb, depth=depth, mask=mask))
    if manifest.tracks_path:
        tracks = read_tracks(os.path.join(manifest.root, manifest.tracks_path),
                             f_count, dims[1], dims[0])
        for bundle in bundles:
            ids, xys, vis = tracks[bundle.index]
            bundle.track_ids = ids
            bundle.track_xy = xys
            bundle.track_vis = vis
    return bundles
