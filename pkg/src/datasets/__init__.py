from src.datasets.augment import augment, color_jitter
from src.datasets.masks import read_image, read_mask, write_gray, write_image, write_mask
from src.datasets.synthetic import CLASS_NAMES, DEFAULT_GROUPS, generate_synthetic
from src.datasets.voc import VocDataset, load_voc, parse_labels_file

__all__ = [
    "CLASS_NAMES",
    "DEFAULT_GROUPS",
    "VocDataset",
    "augment",
    "color_jitter",
    "generate_synthetic",
    "load_voc",
    "parse_labels_file",
    "read_image",
    "read_mask",
    "write_gray",
    "write_image",
    "write_mask",
]
