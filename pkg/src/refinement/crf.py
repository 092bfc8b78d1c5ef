"""
CRF post-processing as a plugin registry. Plugins are callables
(image [3, H, W] in [0, 1], probs [K, H, W]) -> probs [K, H, W].
Any plugin failure falls back to the unrefined probabilities.
"""

import logging
from typing import Callable, Optional

import numpy as np

logger = logging.getLogger(__name__)

CrfPlugin = Callable[[np.ndarray, np.ndarray], np.ndarray]

CRF_PLUGINS: dict[str, CrfPlugin] = {}


def register_crf_plugin(name: str):
    def decorator(fn: CrfPlugin) -> CrfPlugin:
        if name in CRF_PLUGINS:
            logger.warning(f"CRF plugin '{name}' re-registered")
        CRF_PLUGINS[name] = fn
        return fn

    return decorator


def crf_refine(image, probs: np.ndarray, plugin: Optional[str] = None) -> np.ndarray:
    if plugin is None:
        logger.debug("CRF skipped: no plugin configured")
        return probs
    if plugin not in CRF_PLUGINS:
        raise ValueError(f"Unknown CRF plugin '{plugin}'; registered plugins: {sorted(CRF_PLUGINS)}")

    try:
        refined = np.asarray(CRF_PLUGINS[plugin](np.asarray(image), probs))
    except Exception as e:
        logger.warning(f"CRF plugin '{plugin}' failed ({e}); using unrefined probabilities")
        return probs
    if refined.shape != probs.shape:
        logger.warning(f"CRF plugin '{plugin}' returned shape {refined.shape}, expected {probs.shape}; ignored")
        return probs
    return refined


@register_crf_plugin("pydensecrf")
def dense_crf(image: np.ndarray, probs: np.ndarray, iterations: int = 10) -> np.ndarray:
    """Fully connected CRF via the optional pydensecrf package (pip install .[crf])."""
    import pydensecrf.densecrf as dcrf
    from pydensecrf.utils import unary_from_softmax

    k, h, w = probs.shape
    rgb = np.ascontiguousarray((np.clip(image, 0, 1) * 255).round().astype(np.uint8).transpose(1, 2, 0))
    model = dcrf.DenseCRF2D(w, h, k)
    model.setUnaryEnergy(np.ascontiguousarray(unary_from_softmax(probs.astype(np.float32))))
    model.addPairwiseGaussian(sxy=3, compat=3)
    model.addPairwiseBilateral(sxy=50, srgb=13, rgbim=rgb, compat=10)
    return np.array(model.inference(iterations)).reshape(k, h, w)
