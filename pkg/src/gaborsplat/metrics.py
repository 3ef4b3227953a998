"""Image quality metrics reported by the trainer and the eval command."""

from __future__ import annotations

import numpy as np

PSNR_CAP = 99.0


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    """10 log10(1 / MSE) on unit-range images, capped at 99 dB."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    mse = float(np.mean((np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)
