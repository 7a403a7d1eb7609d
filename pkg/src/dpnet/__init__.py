"""Dual-path lightweight detection network with verifiable kernels.

Forward inference built from a small set of differentiable primitives,
reverse-mode gradient checking, analytic parameter/compute accounting,
and bounding-box post-processing, behind one CLI.
"""

from . import analysis, detect, ops
from .attention import (
    BOTTOM_UP,
    TOP_DOWN,
    LcamParams,
    LsamParams,
    lcam_forward,
    lsam_forward,
)
from .blocks import (
    AsbParams,
    BifmParams,
    BottleneckParams,
    ConvBlockParams,
    StemParams,
    asb_forward,
    asb_params,
    bifm_forward,
    bifm_params,
    bottleneck_forward,
    bottleneck_params,
    convblock_forward,
    convblock_params,
    stem_forward,
    stem_params,
)
from .detect import (
    Box,
    Detection,
    ciou_alpha,
    ciou_loss,
    ciou_loss_tensor,
    decode,
    iou,
    nms,
)
from .gradcheck import GradCheckReport, grad_check
from .network import DpnetConfig, Model, build, forward, load_weights, save_weights
from .rng import Lcg64
from .tensor import (
    ConfigError,
    FormatError,
    ShapeError,
    Tape,
    Tensor,
    load_tensor,
    save_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "analysis",
    "detect",
    "ops",
    "Tensor",
    "Tape",
    "ShapeError",
    "ConfigError",
    "FormatError",
    "save_tensor",
    "load_tensor",
    "Lcg64",
    "grad_check",
    "GradCheckReport",
    "LsamParams",
    "LcamParams",
    "lsam_forward",
    "lcam_forward",
    "TOP_DOWN",
    "BOTTOM_UP",
    "AsbParams",
    "BifmParams",
    "ConvBlockParams",
    "BottleneckParams",
    "StemParams",
    "asb_params",
    "asb_forward",
    "bifm_params",
    "bifm_forward",
    "convblock_params",
    "convblock_forward",
    "bottleneck_params",
    "bottleneck_forward",
    "stem_params",
    "stem_forward",
    "DpnetConfig",
    "Model",
    "build",
    "forward",
    "save_weights",
    "load_weights",
    "Box",
    "Detection",
    "iou",
    "ciou_loss",
    "ciou_loss_tensor",
    "ciou_alpha",
    "decode",
    "nms",
    "__version__",
]
