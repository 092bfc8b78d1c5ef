import logging
from abc import ABC, abstractmethod

import torch
from torch import nn
from torchvision.transforms import v2

from src.cams.core import CamStack
from src.models import CamSource

logger = logging.getLogger(__name__)

PIXEL_MEAN = (0.485, 0.456, 0.406)
PIXEL_STD = (0.229, 0.224, 0.225)


def erase_fill(dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """The color every trunk maps to zero input, [3, 1, 1]; erased pixels take it."""
    return torch.tensor(PIXEL_MEAN, dtype=dtype).reshape(3, 1, 1)


def build_trunk(channels: list[int], downsample: int = 2, groups: int = 4, in_channels: int = 3) -> nn.Sequential:
    """
    Input normalization, then conv blocks (3x3 conv, GroupNorm, ReLU). The
    first `downsample` blocks use stride 2. Replicate padding keeps constant
    inputs constant.
    """
    layers: list[nn.Module] = [v2.Normalize(mean=list(PIXEL_MEAN), std=list(PIXEL_STD))]
    previous = in_channels
    for i, width in enumerate(channels):
        stride = 2 if i < downsample else 1
        layers += [
            nn.Conv2d(previous, width, 3, stride=stride, padding=1, padding_mode="replicate", bias=False),
            nn.GroupNorm(min(groups, width), width),
            nn.ReLU(inplace=True),
        ]
        previous = width
    return nn.Sequential(*layers)


class CamNetwork(nn.Module, ABC):
    """Base class for CAM-producing classifiers."""

    num_classes: int

    @property
    @abstractmethod
    def stride(self) -> int:
        pass

    @abstractmethod
    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Backbone features [B, K, h, w]."""
        pass

    @abstractmethod
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Raw class activation maps [B, C, H/stride, W/stride]."""
        pass

    def cam_stack(self, x: torch.Tensor, source: CamSource = CamSource.MAIN) -> CamStack:
        return CamStack.from_raw(self(x), source)


class ToyCamNet(CamNetwork):
    """Small CNN with a bias-free 1x1 class head; GAP over its output gives the logits."""

    def __init__(self, num_classes: int, channels: list[int] | None = None, downsample: int = 2, groups: int = 4):
        super().__init__()
        channels = channels or [16, 32, 64, 64]
        if not 1 <= downsample <= len(channels):
            raise ValueError(f"downsample must lie in [1, {len(channels)}], got {downsample}")
        self.num_classes = num_classes
        self._stride = 2 ** downsample
        self.trunk = build_trunk(channels, downsample, groups)
        self.head = nn.Conv2d(channels[-1], num_classes, 1, bias=False)

    @property
    def stride(self) -> int:
        return self._stride

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.trunk(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.trunk(x))


def clone_weights(target: CamNetwork, source: CamNetwork) -> None:
    """Start `target` from the weights of a trained network of the same layout."""
    try:
        target.load_state_dict(source.state_dict())
    except RuntimeError as e:
        raise ValueError(f"Cannot initialize {type(target).__name__} from {type(source).__name__}: {e}") from e


def build_cam_network(num_classes: int, network_config) -> ToyCamNet:
    return ToyCamNet(
        num_classes,
        channels=list(network_config.channels),
        downsample=network_config.downsample,
        groups=network_config.groups,
    )


def load_cam_network(path, num_classes: int, network_config) -> ToyCamNet:
    model = build_cam_network(num_classes, network_config)
    state = torch.load(path, map_location="cpu")
    model.load_state_dict(state)
    model.eval()
    logger.info(f"Loaded CAM network from {path}")
    return model
