"""Configuration objects and the key=value override file format.

Every tunable default of the pipeline lives in one of the dataclasses
below and can be overridden from a plain-text config file of
``section.key = value`` lines (see :func:`load_overrides`).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace


KERNEL_VARIANTS = ("adaptive", "gaussian", "gabor0", "onepluss")
SPLINE_KINDS = ("hermite", "cubic", "bspline")


@dataclass(frozen=True)
class SceneConfig:
    """Global scene hyperparameters shared by every primitive.

    gamma:  degradation-smoothness coefficient in [0, 1]; modulation energy
            compensation interpolates between 1 (all waves off) and gamma
            (all waves on).
    beta:   spline smoothness coefficient in (0, 1] scaling auto slopes.
    freqs:  per-wave frequency magnitudes (cycles per pi local-sigma units).
    variant: kernel ablation switch: "adaptive" (compensated), "gaussian"
            (modulation forced to 1), "gabor0" (no compensation term),
            "onepluss" (naive 1 + full wave sum).
    spline: motion interpolation kind; "cubic" and "bspline" are ablation
            baselines without the monotone gate.
    """

    gamma: float = 0.5
    beta: float = 1.0
    freqs: tuple[float, ...] = (1.0, 2.0)
    variant: str = "adaptive"
    spline: str = "hermite"

    @property
    def wave_count(self) -> int:
        return len(self.freqs)

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if len(self.freqs) == 0 or any(f <= 0 for f in self.freqs):
            raise ValueError(f"freqs must be positive, got {self.freqs}")
        if len(self.freqs) > 2:
            raise ValueError("at most two waves: directions are the two in-plane axes")
        if self.variant not in KERNEL_VARIANTS:
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.spline not in SPLINE_KINDS:
            raise ValueError(f"unknown spline kind {self.spline!r}")


@dataclass(frozen=True)
class LossWeights:
    lambda_rgb: float = 1.0
    lambda_ssim: float = 0.2
    lambda_flow: float = 0.1
    lambda_depth: float = 0.1
    lambda_curv: float = 0.01

    def validate(self) -> None:
        for f_ in fields(self):
            v = getattr(self, f_.name)
            if v < 0:
                raise ValueError(f"{f_.name} must be nonnegative, got {v}")
        if not 0.0 <= self.lambda_ssim <= 1.0:
            raise ValueError(f"lambda_ssim must be in [0, 1], got {self.lambda_ssim}")


@dataclass(frozen=True)
class InitConfig:
    """Adaptive seeding of the initial primitive set."""

    lambda_tau: float = 0.5     # temporal-support vs density balance
    lambda_g: float = 1.0      # grid-coverage modulation strength
    lambda_b: float = 2.0      # mask-boundary compensation strength
    epsilon: float = 1e-6
    grid: int = 16             # cells per image side
    radius_divisor: float = 64.0   # density radius = image diagonal / this
    candidate_stride: int = 1  # pixel stride for non-track candidates
    init_opacity: float = 0.5
    init_omega_raw: float = -1.0   # hard sigmoid maps -1 to 0: pure Gaussian


@dataclass(frozen=True)
class RenderConfig:
    tile: int = 16
    cutoff_sigma: float = 3.0   # Mahalanobis truncation radius of every splat
    term_tau: float = 1e-4      # stop compositing once transmittance < this
    alpha_clamp: float = 0.999
    depth_eps: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    warmup_iters: int = 500
    main_iters: int = 10000
    control_update_every: int = 100
    seed: int = 0
    lr_position: float = 2e-3
    position_lr_decay: float = 0.1   # total decay factor over the main stage
    lr_color: float = 2.5e-2
    lr_opacity: float = 2.5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 5e-3
    lr_omega: float = 1e-2
    # control gradients apply only every control_update_every iterations and
    # Adam moves at most lr per application, so the rate carries the cadence
    # factor: ~20 applications over a default main stage span a few pixels
    lr_control: float = 0.2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15
    log_every: int = 50

    def validate(self) -> None:
        if self.warmup_iters < 0 or self.main_iters < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.control_update_every < 1:
            raise ValueError("control_update_every must be >= 1")
        for name in ("lr_position", "lr_color", "lr_opacity", "lr_scale",
                     "lr_rotation", "lr_omega", "lr_control"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class PipelineConfig:
    """Bundle of all sub-configs, addressable as section.key overrides."""

    scene: SceneConfig = field(default_factory=SceneConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    init: InitConfig = field(default_factory=InitConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        self.scene.validate()
        self.loss.validate()
        self.train.validate()


def _coerce(text: str, like) -> object:
    if isinstance(like, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected boolean, got {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    return text


def parse_override_lines(lines, base: PipelineConfig | None = None) -> PipelineConfig:
    """Apply ``section.key = value`` lines on top of a base config."""
    cfg = base or PipelineConfig()
    sections = {f_.name: getattr(cfg, f_.name) for f_ in fields(cfg)}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'section.key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if "." not in key:
            raise ValueError(f"config line {lineno}: key {key!r} must be section.key")
        section, _, name = key.partition(".")
        if section not in sections:
            raise ValueError(f"config line {lineno}: unknown section {section!r}")
        target = sections[section]
        if not any(f_.name == name for f_ in fields(target)):
            raise ValueError(f"config line {lineno}: unknown key {name!r} in section {section!r}")
        current = getattr(target, name)
        sections[section] = replace(target, **{name: _coerce(value, current)})
    out = PipelineConfig(**sections)
    out.validate()
    return out


def load_overrides(path, base: PipelineConfig | None = None) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_override_lines(fh.readlines(), base)
