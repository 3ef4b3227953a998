"""Video fitting with frequency-adaptive Gabor splats on Hermite motion splines."""

from .config import (PipelineConfig, SceneConfig, LossWeights, InitConfig,
                     RenderConfig, TrainConfig)
from .kernel import GaborPrimitive, gabor_opacity, hard_sigmoid_ste
from .motion import MotionTrack, hermite_basis, auto_slopes
from .scene import SceneModel, GradBuffer
from .renderer import render, render_backward, project, RenderTarget
from .dataio import FrameBundle, load_dataset
from .seeding import build_initial_scene
from .trainer import train, TrainingDivergedError
from .scenefile import save_scene, load_scene
from .metrics import psnr

__all__ = [
    "PipelineConfig", "SceneConfig", "LossWeights", "InitConfig", "RenderConfig",
    "TrainConfig", "GaborPrimitive", "gabor_opacity", "hard_sigmoid_ste",
    "MotionTrack", "hermite_basis", "auto_slopes", "SceneModel", "GradBuffer",
    "render", "render_backward", "project", "RenderTarget", "FrameBundle",
    "load_dataset", "build_initial_scene", "train", "TrainingDivergedError",
    "save_scene", "load_scene", "psnr",
]

__version__ = "0.1.0"
