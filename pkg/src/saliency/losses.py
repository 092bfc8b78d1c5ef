"""
Contrastive foreground/background disentangling losses and weak foreground hints.

A batch of n images yields fg and bg feature vectors v_f, v_b [n, K]. Three
cosine similarity matrices compare fg with fg, bg with bg and fg with bg.
Similar fg (and bg) pairs are pulled together with rank-decayed weights;
every fg/bg pair is pushed apart. Hints add a positive-only BCE term on
pixels whose prior activation is confidently high.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from src.validation import ensure_unit_interval

logger = logging.getLogger(__name__)

# Similarities are kept inside [COS_EPS, 1 - COS_EPS] so both logs stay finite
COS_EPS = 1e-6


@dataclass
class SimilarityTriple:
    s_f: torch.Tensor  # [n, n]
    s_b: torch.Tensor  # [n, n]
    s_neg: torch.Tensor  # [n, n], row = fg of image i, column = bg of image j

    @classmethod
    def from_features(cls, v_f: torch.Tensor, v_b: torch.Tensor) -> "SimilarityTriple":
        return cls(s_f=cosine_matrix(v_f), s_b=cosine_matrix(v_b), s_neg=cosine_matrix(v_f, v_b))

    @property
    def n(self) -> int:
        return self.s_f.shape[0]


@dataclass
class HintMask:
    fg: torch.Tensor  # bool [h, w]
    bg: torch.Tensor  # bool [h, w], diagnostics only
    source_prior_id: str = ""


def fg_bg_features(A: torch.Tensor, P: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Mean-weighted pooling: v_f = A P / hw, v_b = A (1 - P) / hw.
    A is [K, hw] with P [hw], or batched [n, K, hw] with P [n, hw].
    """
    if A.dim() != P.dim() + 1 or A.shape[:-2] != P.shape[:-1] or A.shape[-1] != P.shape[-1]:
        raise ValueError(f"fg_bg_features: A{tuple(A.shape)} does not match P{tuple(P.shape)}")
    ensure_unit_interval(P, "P")
    hw = P.shape[-1]
    v_f = (A * P.unsqueeze(-2)).sum(dim=-1) / hw
    v_b = (A * (1.0 - P).unsqueeze(-2)).sum(dim=-1) / hw
    return v_f, v_b


def cosine_matrix(a: torch.Tensor, b: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Pairwise cosine [n, n] between rows of a and b, rectified with max(cos, 0) and clamped."""
    b = a if b is None else b
    a_n = F.normalize(a, dim=-1, eps=1e-12)
    b_n = F.normalize(b, dim=-1, eps=1e-12)
    cos = a_n @ b_n.transpose(-1, -2)
    return cos.clamp(min=0.0).clamp(COS_EPS, 1.0 - COS_EPS)


def rank_weights(s: torch.Tensor, alpha: float) -> torch.Tensor:
    """
    w_ij = exp(-alpha * rank_i(s_ij)), rank 0 = most similar off-diagonal entry
    of row i, ties broken by column index. Diagonal weights are 0.
    """
    n = s.shape[0]
    if n < 2:
        raise ValueError(f"rank_weights needs at least 2 samples, got {n}")
    if s.shape != (n, n):
        raise ValueError(f"rank_weights expects a square matrix, got {tuple(s.shape)}")

    masked = s.detach().clone()
    masked.fill_diagonal_(float("-inf"))
    order = torch.argsort(-masked, dim=1, stable=True)
    ranks = torch.empty_like(order)
    ranks.scatter_(1, order, torch.arange(n).expand(n, n).contiguous())
    w = torch.exp(-alpha * ranks.to(s.dtype))
    w.fill_diagonal_(0.0)
    return w


def c2am_components(trip: SimilarityTriple, w_f: torch.Tensor, w_b: torch.Tensor) -> dict[str, torch.Tensor]:
    n = trip.n
    if n < 2:
        raise ValueError(f"c2am_loss needs at least 2 samples, got {n}")
    for name, s in (("s_f", trip.s_f), ("s_b", trip.s_b), ("s_neg", trip.s_neg)):
        if s.shape != (n, n):
            raise ValueError(f"{name} has shape {tuple(s.shape)}, expected ({n}, {n})")
        low, high = float(s.detach().min()), float(s.detach().max())
        if low <= 0.0 or high >= 1.0:
            raise ValueError(f"{name} must lie strictly inside (0, 1), got [{low:.3g}, {high:.3g}]")

    off = 1.0 - torch.eye(n, dtype=trip.s_f.dtype)
    pairs = n * (n - 1)
    return {
        "pos_f": -(off * w_f * torch.log(trip.s_f)).sum() / pairs,
        "pos_b": -(off * w_b * torch.log(trip.s_b)).sum() / pairs,
        "neg": -torch.log(1.0 - trip.s_neg).sum() / (n * n),
    }


def c2am_loss(trip: SimilarityTriple, w_f: torch.Tensor, w_b: torch.Tensor) -> torch.Tensor:
    """Positive pairs as weighted negative log-likelihood plus the fg/bg repulsion term."""
    return sum(c2am_components(trip, w_f, w_b).values())


def extract_hints(prior, delta_fg: float = 0.4, delta_bg: float = 0.1, source_prior_id: str = "") -> HintMask:
    """fg where max_c prior > delta_fg, bg where it is < delta_bg; the band in between is discarded."""
    if not 0 < delta_bg < delta_fg < 1:
        raise ValueError(f"hint thresholds must satisfy 0 < delta_bg < delta_fg < 1, got {delta_bg}, {delta_fg}")
    if not isinstance(prior, torch.Tensor):
        prior = torch.from_numpy(np.asarray(prior))
    peak = prior.amax(dim=-3)
    return HintMask(fg=peak > delta_fg, bg=peak < delta_bg, source_prior_id=source_prior_id)


def hint_loss(P: torch.Tensor, fg: torch.Tensor) -> torch.Tensor:
    """
    BCE(target=1) of P averaged over every fg-hint pixel of the batch; 0 when
    the batch holds no hint pixel. P and fg are [n, ...] aligned.
    """
    if P.shape != fg.shape:
        raise ValueError(f"hint_loss: P{tuple(P.shape)} and hints{tuple(fg.shape)} differ")
    mask = fg.to(P.dtype)
    bce = F.binary_cross_entropy(P, torch.ones_like(P), reduction="none")
    return (bce * mask).sum() / mask.sum().clamp(min=1.0)


def c2amh_loss(
    trip: SimilarityTriple,
    w_f: torch.Tensor,
    w_b: torch.Tensor,
    P: torch.Tensor,
    fg_hints: torch.Tensor,
    lambda_h: float = 1.0,
) -> torch.Tensor:
    loss = c2am_loss(trip, w_f, w_b)
    if lambda_h:
        loss = loss + lambda_h * hint_loss(P, fg_hints)
    return loss
