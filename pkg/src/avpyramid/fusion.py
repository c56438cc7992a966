"""Adaptive fusion of the pyramid levels into one vector per segment.

For every segment the retained unit outputs form a small sequence over the
level axis. A parameter-shared attention over that axis lets levels exchange
context, and a sigmoid-weighted sum (weights per level, not normalized)
picks which scales to trust. A linear head per modality then yields segment
probabilities: sigmoid for multi-label parsing, softmax over classes plus
background for single-event localization. The audio-visual track is the
elementwise product of the two uni-modal probability tracks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import AttentionParams, glorot, init_attention_params, scaled_dot_attention
from .autodiff import Tensor
from .pyramid import PyramidFeatures

TASKS = ("parsing", "localization")


@dataclass
class SelectiveFusionParams:
    w: Tensor  # (D, 1)
    b: Tensor  # (1,)

    def tensors(self) -> list[tuple[str, Tensor]]:
        return [("w", self.w), ("b", self.b)]


@dataclass
class LinearParams:
    w: Tensor
    b: Tensor

    def tensors(self) -> list[tuple[str, Tensor]]:
        return [("w", self.w), ("b", self.b)]


@dataclass
class FusionParams:
    """Level attention (shared across segments and modalities), per-modality
    selective-fusion projections, and per-modality classifiers."""

    unit_attention: AttentionParams
    sf_audio: SelectiveFusionParams
    sf_visual: SelectiveFusionParams
    classifier_audio: LinearParams
    classifier_visual: LinearParams

    def tensors(self) -> list[tuple[str, Tensor]]:
        out = [(f"unit_attention.{k}", t) for k, t in self.unit_attention.tensors()]
        for prefix, p in [
            ("sf_audio", self.sf_audio),
            ("sf_visual", self.sf_visual),
            ("classifier_audio", self.classifier_audio),
            ("classifier_visual", self.classifier_visual),
        ]:
            out.extend((f"{prefix}.{k}", t) for k, t in p.tensors())
        return out


def init_linear_params(rng: np.random.Generator, d_in: int, d_out: int) -> LinearParams:
    return LinearParams(
        w=glorot(rng, d_in, d_out), b=Tensor(np.zeros(d_out), requires_grad=True)
    )


def init_fusion_params(
    rng: np.random.Generator, dim: int, num_classes: int
) -> FusionParams:
    return FusionParams(
        unit_attention=init_attention_params(rng, dim),
        sf_audio=SelectiveFusionParams(
            w=glorot(rng, dim, 1), b=Tensor(np.zeros(1), requires_grad=True)
        ),
        sf_visual=SelectiveFusionParams(
            w=glorot(rng, dim, 1), b=Tensor(np.zeros(1), requires_grad=True)
        ),
        classifier_audio=init_linear_params(rng, dim, num_classes),
        classifier_visual=init_linear_params(rng, dim, num_classes),
    )


def stack_levels(features: list[Tensor]) -> Tensor:
    """Pile L per-level tensors (..., N, D) into (..., N, L, D)."""
    return ad.stack_last_pairs(features, axis=-2)


def unit_level_attention(stacked: Tensor, params: AttentionParams) -> Tensor:
    """Unmasked self-attention over the level axis, independently per segment.

    ``stacked`` is (..., N, L, D); the (..., N) axes behave as batch.
    """
    q = ad.matmul(stacked, params.w_q)
    k = ad.matmul(stacked, params.w_k)
    v = ad.matmul(stacked, params.w_v)
    return scaled_dot_attention(q, k, v)


def selective_fusion(refined: Tensor, params: SelectiveFusionParams) -> tuple[Tensor, Tensor]:
    """Sigmoid-weighted sum over the level axis.

    Each level gets a scalar weight in (0, 1) from a linear functional of its
    own vector; weights deliberately do not sum to one. Returns the fused
    (..., N, D) features and the (..., N, L) weights for inspection.
    """
    scores = ad.matmul(refined, params.w) + params.b  # (..., N, L, 1)
    weights = ad.sigmoid(scores)
    fused = ad.tsum(weights * refined, axis=-2)
    return fused, ad.reshape(weights, weights.shape[:-1])


def fuse_pyramid_levels(
    feats: PyramidFeatures,
    params: FusionParams,
    use_unit_attention: bool = True,
    use_selective_fusion: bool = True,
) -> dict:
    """Full fusion stage for both modalities.

    Returns fused features ``audio``/``visual`` of shape (..., N, D) and the
    per-level weights (uniform 1/L when selective fusion is ablated to an
    average pool).
    """
    out = {}
    for modality, levels, sf in [
        ("audio", feats.audio, params.sf_audio),
        ("visual", feats.visual, params.sf_visual),
    ]:
        stacked = stack_levels(levels)
        refined = (
            unit_level_attention(stacked, params.unit_attention)
            if use_unit_attention
            else stacked
        )
        if use_selective_fusion:
            fused, weights = selective_fusion(refined, sf)
        else:
            fused = ad.tmean(refined, axis=-2)
            w = np.full(refined.shape[:-1], 1.0 / refined.shape[-2])
            weights = Tensor(w)
        out[modality] = fused
        out[f"{modality}_level_weights"] = weights
    return out


def modality_head(fused: Tensor, classifier: LinearParams, task: str) -> Tensor:
    """Segment probabilities: sigmoid per class (parsing) or softmax
    over classes including background (localization)."""
    if task not in TASKS:
        raise ValueError(f"unknown task: {task}")
    logits = ad.matmul(fused, classifier.w) + classifier.b
    if task == "parsing":
        return ad.sigmoid(logits)
    return ad.softmax(logits, axis=-1)


def audio_visual_conjunction(p_audio: np.ndarray, p_visual: np.ndarray) -> np.ndarray:
    """Elementwise product of the two uni-modal probability tracks."""
    p_audio = np.asarray(p_audio, dtype=np.float64)
    p_visual = np.asarray(p_visual, dtype=np.float64)
    if p_audio.shape != p_visual.shape:
        raise ValueError(f"shape mismatch: {p_audio.shape} vs {p_visual.shape}")
    for name, p in (("audio", p_audio), ("visual", p_visual)):
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError(f"{name} probabilities outside [0, 1]")
    return p_audio * p_visual
