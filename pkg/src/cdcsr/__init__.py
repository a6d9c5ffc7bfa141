"""Component divide-and-conquer super-resolution toolkit."""

from .imgcore import (
    GradientMaps,
    gaussian_blur,
    load_png,
    pixel_shuffle,
    pixel_unshuffle,
    resize_bicubic,
    rgb_to_y,
    save_png,
    spatial_gradients,
)
from .components import (
    ComponentMasks,
    HarrisConfig,
    classify_components,
    component_masks,
    harris_response,
    refine_masks,
)
from .losses import LossBreakdown, LossConfig, gw_loss, intermediate_loss, l1_loss, total_loss
from .model import (
    CdcNetwork,
    CdcOutput,
    ModelConfig,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .metrics import EvalReport, psnr_y, ssim_rgb
from .data import (
    DegradeConfig,
    PairManifest,
    PairRecord,
    align_translation,
    brightness_match,
    degrade,
    extract_patches,
    load_manifest,
    register_pair,
    write_manifest,
)
from .harness import TrainConfig, evaluate, infer, lr_at, sr_image, train

__version__ = "0.1.0"
