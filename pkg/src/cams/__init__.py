from src.cams.core import (
    CamStack,
    ImageSample,
    gap_logits,
    gap_posterior,
    mask_to_labels,
    merge,
    normalize_cam,
    resize_maps,
    tile,
    tta_prior,
)
from src.cams.io import load_cams, save_cams
from src.cams.network import CamNetwork, ToyCamNet, build_trunk

__all__ = [
    "CamNetwork",
    "CamStack",
    "ImageSample",
    "ToyCamNet",
    "build_trunk",
    "gap_logits",
    "gap_posterior",
    "load_cams",
    "mask_to_labels",
    "merge",
    "normalize_cam",
    "resize_maps",
    "save_cams",
    "tile",
    "tta_prior",
]
