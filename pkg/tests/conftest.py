from pathlib import Path

import numpy as np
import pytest
import torch

from src.cams.core import ImageSample
from src.cams.network import ToyCamNet
from src.config import SyntheticConfig, config_from_dict, resolve_seeds
from src.datasets.synthetic import generate_synthetic
from src.datasets.voc import VocDataset

TINY_NETWORK = {"channels": [4, 8], "downsample": 1, "groups": 2}


def tiny_config_dict(output_root: Path) -> dict:
    return {
        "output_root": str(output_root),
        "seed": 7,
        "dataset": {"synthetic": {"n_images": 6, "image_size": 32}},
        "network": dict(TINY_NETWORK),
        "train": {"epochs": 1, "batch_size": 3, "crop_size": 16, "checkpoint_every": 1},
        "cams": {"scales": [1.0], "use_flip": False},
        "c2amh": {"epochs": 1, "batch_size": 3, "crop_size": 16},
        "refine": {"radius": 2, "t_iters": 5},
        "evaluation": {"common_size": 16, "sweep_deltas": [0.2, 0.5]},
    }


@pytest.fixture
def tiny_config(tmp_path):
    return resolve_seeds(config_from_dict(tiny_config_dict(tmp_path / "run")))


@pytest.fixture
def synthetic_dir(tmp_path) -> Path:
    config = SyntheticConfig(n_images=8, image_size=32, seed=3)
    return generate_synthetic(config, tmp_path / "data")


@pytest.fixture
def dataset(synthetic_dir) -> VocDataset:
    return VocDataset(synthetic_dir)


@pytest.fixture
def toy_net():
    def factory(num_classes: int = 5) -> ToyCamNet:
        torch.manual_seed(0)
        return ToyCamNet(num_classes, **TINY_NETWORK)

    return factory


@pytest.fixture
def make_sample():
    def factory(size: int = 16, labels=(1, 0, 1), with_mask: bool = True, seed: int = 0) -> ImageSample:
        rng = np.random.default_rng(seed)
        mask = None
        if with_mask:
            mask = np.zeros((size, size), dtype=np.uint8)
            mask[: size // 2, : size // 2] = 1
            mask[size // 2:, size // 2:] = 3
        return ImageSample(
            id=f"s{seed}",
            image=torch.from_numpy(rng.random((3, size, size)).astype(np.float32)),
            labels=torch.tensor(labels, dtype=torch.float32),
            gt_mask=mask,
        )

    return factory
