import logging

import torch
from torch import nn

from src.cams.network import CamNetwork, build_trunk

logger = logging.getLogger(__name__)


class Disentangler(nn.Module):
    """
    Convolutional trunk plus a 1x1 head d: R^K -> [0, 1]. The head starts at
    zero so an untrained model predicts P = 0.5 everywhere.
    """

    def __init__(self, channels: list[int] | None = None, downsample: int = 2, groups: int = 4):
        super().__init__()
        channels = channels or [16, 32, 64, 64]
        self.trunk = build_trunk(channels, downsample, groups)
        self.head = nn.Conv2d(channels[-1], 1, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Features A [B, K, h, w] and foreground probability P [B, h, w]."""
        features = self.trunk(x)
        return features, torch.sigmoid(self.head(features))[:, 0]

    def init_from_classifier(self, classifier: CamNetwork) -> None:
        trunk = getattr(classifier, "trunk", None)
        if trunk is None:
            logger.warning(f"{type(classifier).__name__} exposes no trunk; disentangler starts from scratch")
            return
        try:
            self.trunk.load_state_dict(trunk.state_dict())
        except RuntimeError as e:
            logger.warning(f"Classifier trunk does not fit the disentangler ({e}); starting from scratch")
            return
        logger.info("Disentangler trunk initialized from the classifier")


def build_disentangler(network_config) -> Disentangler:
    return Disentangler(list(network_config.channels), network_config.downsample, network_config.groups)


def load_disentangler(path, network_config) -> Disentangler:
    model = build_disentangler(network_config)
    model.load_state_dict(torch.load(path, map_location="cpu"))
    model.eval()
    return model
