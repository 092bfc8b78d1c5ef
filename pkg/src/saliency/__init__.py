from src.saliency.losses import (
    HintMask,
    SimilarityTriple,
    c2am_loss,
    c2amh_loss,
    cosine_matrix,
    extract_hints,
    fg_bg_features,
    hint_loss,
    rank_weights,
)
from src.saliency.network import Disentangler, build_disentangler, load_disentangler
from src.saliency.trainer import (
    emit_saliency,
    hint_precision,
    make_saliency,
    saliency_diagnostics,
    train_c2amh,
)

__all__ = [
    "Disentangler",
    "HintMask",
    "SimilarityTriple",
    "build_disentangler",
    "c2am_loss",
    "c2amh_loss",
    "cosine_matrix",
    "emit_saliency",
    "extract_hints",
    "fg_bg_features",
    "hint_loss",
    "hint_precision",
    "load_disentangler",
    "make_saliency",
    "rank_weights",
    "saliency_diagnostics",
    "train_c2amh",
]
