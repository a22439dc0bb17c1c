"""Edit-mask extraction, area-ratio loss weighting and a sharded FP32 EMA simulator."""

from .imagecore import BinaryMask, ImageBuffer, SynthSpec, load_image, save_mask, synth_pair
from .maskgen import EditStats, MaskGenConfig, generate_mask
from .weighting import WeightFunctionKind, build_weight_map, evaluate

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "EditStats",
    "ImageBuffer",
    "MaskGenConfig",
    "SynthSpec",
    "WeightFunctionKind",
    "build_weight_map",
    "evaluate",
    "generate_mask",
    "load_image",
    "save_mask",
    "synth_pair",
]
