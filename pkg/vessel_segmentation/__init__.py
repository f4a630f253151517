"""
Retinal Vessel Segmentation

Edge-aware five-class labelling, a deeply supervised residual U-net written
directly on numpy, patch-based training and FOV-restricted evaluation for
fundus photographs.
"""

__version__ = "1.0.0"
__author__ = "Vessel Segmentation Team"

from .config import Config
from .runconfig import RunConfig
from .network import NetConfig, init_params, unet_forward
from .training import train
from .evaluate import predict_image

__all__ = ["Config", "RunConfig", "NetConfig", "init_params", "unet_forward", "train", "predict_image"]
