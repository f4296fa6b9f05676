"""Flat ``key = value`` configuration files.

Every key has a default on the dataclass; unknown keys and unparsable
values raise :class:`~bvinet.errors.ConfigError`. ``#`` starts a comment.
"""
from dataclasses import asdict, dataclass, fields
import math
from pathlib import Path

from .data_synthesis import MotionParams, SmoothingParams, StrokeParams, FILL_KINDS
from .errors import ConfigError
from .losses import LossWeights, SoftBinarizer
from .mask_prediction import LTRConfig, STPConfig
from .video_completion import VCNetConfig


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # mask prediction
    stp_channels: int = 8
    stp_res_blocks: int = 2
    ltr_channels: int = 8
    ltr_res_blocks: int = 2
    ltr_blocks: int = 1
    ltr_groups: int = 4
    ltr_radius: int = 3
    ltr_max_frames: int = 8
    ltr_relative_bias: bool = True
    # video completion
    vc_channels: int = 8
    vc_blocks: int = 2
    vc_heads: int = 2
    vc_max_frames: int = 8
    vc_bias_extent: int = 16
    attention: str = "both"
    # objective
    lambda_m: float = 3.0
    lambda_v: float = 5.0
    lambda_c: float = 0.02
    bin_tau: float = 2.0 / 255.0
    bin_kappa: float = 50.0
    # optimisation
    lr: float = 1e-3
    steps: int = 500
    batch_clips: int = 2
    frames: int = 8
    crop_h: int = 48
    crop_w: int = 48
    checkpoint_every: int = 100

    def __post_init__(self):
        if self.crop_h % 8 or self.crop_w % 8 or self.crop_h < 8 or self.crop_w < 8:
            raise ConfigError(f"crop {self.crop_h}x{self.crop_w} must be positive multiples of 8")
        if self.frames < 2:
            raise ConfigError("frames must be >= 2")
        if self.lr <= 0 or self.steps < 0 or self.batch_clips < 1 or self.checkpoint_every < 1:
            raise ConfigError("lr, steps, batch_clips and checkpoint_every must be positive")
        # sub-configs validate their own fields
        self.stp, self.ltr, self.vcnet, self.weights, self.binarizer

    @property
    def stp(self) -> STPConfig:
        return STPConfig(self.stp_channels, 3, self.stp_res_blocks)

    @property
    def ltr(self) -> LTRConfig:
        return LTRConfig(self.ltr_channels, 3, self.ltr_res_blocks, self.ltr_blocks, self.ltr_groups,
                         self.ltr_radius, self.ltr_max_frames, self.ltr_relative_bias)

    @property
    def vcnet(self) -> VCNetConfig:
        return VCNetConfig(self.vc_channels, self.vc_blocks, self.vc_heads, self.vc_max_frames,
                           self.vc_bias_extent, self.attention)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_m, self.lambda_v, self.lambda_c)

    @property
    def binarizer(self) -> SoftBinarizer:
        return SoftBinarizer(self.bin_tau, self.bin_kappa)


@dataclass(frozen=True)
class SynthConfig:
    height: int = 48
    width: int = 48
    scale_strokes: bool = True
    strokes_min: int = 1
    strokes_max: int = 4
    vertices_min: int = 4
    vertices_max: int = 12
    brush_min: int = 8
    brush_max: int = 24
    step_min: int = 20
    step_max: int = 60
    max_turn: float = math.pi / 4
    coverage_min: float = 0.05
    coverage_max: float = 0.40
    velocity_max: float = 1.0
    translate_jitter: float = 1.0
    rotate_jitter: float = 3.0
    scale_jitter: float = 0.03
    smooth_iterations: int = 3
    smooth_sigma: float = 1.5
    smooth_band: int = 4
    fill: str = "natural"

    def __post_init__(self):
        if self.height % 8 or self.width % 8:
            raise ConfigError("height and width must be multiples of 8")
        if self.fill not in FILL_KINDS:
            raise ConfigError(f"fill must be one of {FILL_KINDS}")
        self.strokes, self.smoothing

    @property
    def strokes(self) -> StrokeParams:
        p = StrokeParams((self.strokes_min, self.strokes_max), (self.vertices_min, self.vertices_max),
                         (self.brush_min, self.brush_max), (self.step_min, self.step_max), self.max_turn,
                         (self.coverage_min, self.coverage_max))
        return p.scaled(self.height) if self.scale_strokes else p

    @property
    def motion(self) -> MotionParams:
        return MotionParams(None, self.velocity_max, self.translate_jitter, self.rotate_jitter, self.scale_jitter)

    @property
    def smoothing(self) -> SmoothingParams:
        return SmoothingParams(self.smooth_iterations, self.smooth_sigma, self.smooth_band)


def _convert(key, raw: str, kind):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config(text: str, cls=RunConfig, **overrides):
    types = {f.name: type(f.default) for f in fields(cls)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw, types[key])
    for key, val in overrides.items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = val
    return cls(**values)


def load_config(path, cls=RunConfig, **overrides):
    return parse_config(Path(path).read_text(encoding="utf-8"), cls, **overrides)


def dump_config(cfg) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(cfg).items())
