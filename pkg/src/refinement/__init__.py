from src.refinement.crf import CRF_PLUGINS, crf_refine, register_crf_plugin
from src.refinement.random_walk import AffinityGraph, build_affinity, random_walk, transition_matrix
from src.refinement.refine import anchor_to_seeds, make_seeds, refine_dataset, refine_sample, with_background
from src.refinement.seeds import SeedMap, binarize, seeds_from_priors, seeds_with_saliency, unknown_fraction

__all__ = [
    "AffinityGraph",
    "CRF_PLUGINS",
    "SeedMap",
    "anchor_to_seeds",
    "binarize",
    "build_affinity",
    "crf_refine",
    "make_seeds",
    "random_walk",
    "refine_dataset",
    "refine_sample",
    "register_crf_plugin",
    "seeds_from_priors",
    "seeds_with_saliency",
    "transition_matrix",
    "unknown_fraction",
    "with_background",
]
