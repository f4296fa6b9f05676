"""Blind video inpainting toolkit."""
from .errors import (
    BVINetError,
    ConfigError,
    DimensionError,
    GenerationError,
    IntegrityError,
    TrainingAborted,
    UnsupportedVersionError,
    ValidationError,
)
from .wavelet import Subbands, dwt2d, idwt2d
from .mask_prediction import LTRConfig, MPNet, STPConfig, binarize, ltr_forward, stp_forward, windowed_st_attention
from .video_completion import VCNet, VCNetConfig, dsa, fuse_attention, ssa, vcnet_forward, wst_block
from .losses import LossWeights, SoftBinarizer, completion_loss, consistency_loss, mask_loss, total_loss
from .data_synthesis import ClipTriple, MotionParams, SmoothingParams, StrokeParams, animate_mask, blend_fill, gen_freeform_mask, synth_clip
from .metrics import evaluate, psnr, ssim, warping_error
from .config import RunConfig, SynthConfig, load_config
from .pipeline import BVINet, blind_inpaint, load_model, train

__version__ = "0.1.0"
