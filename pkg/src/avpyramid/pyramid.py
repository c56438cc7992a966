"""Stacked pyramid units producing multi-scale audio-visual features.

Each unit runs self-attention and cross-modal attention in parallel on the
same input, gates the two branches per channel, applies the residual
norm/feed-forward scaffolding, then integrates neighbors with a dilated
residual convolution whose dilation equals the unit's window radius. Units
are stacked with growing radii and every unit's output is kept, so
downstream fusion can pick the scale that fits each event.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .attention import (
    AttentionParams,
    PostBlockParams,
    glorot,
    init_attention_params,
    init_post_block_params,
    post_attention_block,
    windowed_cross_modal_attention,
    windowed_self_attention,
)
from .autodiff import Tensor


@dataclass(frozen=True)
class PyramidConfig:
    """Architecture switches for the pyramid stack.

    window_sizes are the per-unit interaction radii; the dilation of each
    unit's convolution is tied to its radius. The ablation switches map to
    the reduced variants exercised in the test suite.
    """

    num_units: int = 4
    window_sizes: tuple[int, ...] = (1, 2, 4, 8)
    feature_dim: int = 64
    num_heads: int = 1
    ffn_hidden: int | None = None  # defaults to 4 * feature_dim
    dropout: float = 0.1
    last_only: bool = False
    uniform_windows: bool = False
    disable_conv: bool = False
    plain_conv: bool = False
    share_cma: bool = True

    def __post_init__(self):
        if self.num_units < 1:
            raise ValueError("num_units must be >= 1")
        if len(self.window_sizes) != self.num_units:
            raise ValueError(
                f"expected {self.num_units} window sizes, got {len(self.window_sizes)}"
            )
        if any(d < 0 for d in self.window_sizes):
            raise ValueError("window sizes must be >= 0")
        if not self.uniform_windows and self.num_units > 1:
            if any(
                b <= a for a, b in zip(self.window_sizes, self.window_sizes[1:])
            ):
                raise ValueError("window sizes must be strictly increasing")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def effective_window_sizes(self) -> tuple[int, ...]:
        if self.uniform_windows:
            return (self.window_sizes[-1],) * self.num_units
        return self.window_sizes


@dataclass
class ChannelGateParams:
    """Sigmoid gates over channels, computed from the concatenated branches."""

    w_sa: Tensor  # (2D, D)
    b_sa: Tensor  # (D,)
    w_cma: Tensor  # (2D, D)
    b_cma: Tensor  # (D,)

    def tensors(self) -> list[tuple[str, Tensor]]:
        return [
            ("w_sa", self.w_sa),
            ("b_sa", self.b_sa),
            ("w_cma", self.w_cma),
            ("b_cma", self.b_cma),
        ]


@dataclass
class ConvBlockParams:
    """Kernel-3 dilated convolution with pointwise projection and residual."""

    w_center: Tensor  # (D, D)
    w_past: Tensor  # (D, D), tap at t - d
    w_future: Tensor  # (D, D), tap at t + d
    bias: Tensor  # (D,)
    w_point: Tensor  # (D, D), 1x1 convolution
    bias_point: Tensor  # (D,)

    def tensors(self) -> list[tuple[str, Tensor]]:
        return [
            ("w_center", self.w_center),
            ("w_past", self.w_past),
            ("w_future", self.w_future),
            ("bias", self.bias),
            ("w_point", self.w_point),
            ("bias_point", self.bias_point),
        ]


@dataclass
class PyramidUnitParams:
    sa_audio: AttentionParams
    sa_visual: AttentionParams
    cma_audio: AttentionParams  # audio queries, visual context
    cma_visual: AttentionParams  # the same object as cma_audio when shared
    gate_audio: ChannelGateParams
    gate_visual: ChannelGateParams
    post_audio: PostBlockParams
    post_visual: PostBlockParams
    conv_audio: ConvBlockParams
    conv_visual: ConvBlockParams

    @property
    def cma_shared(self) -> bool:
        return self.cma_audio is self.cma_visual

    def tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for prefix, params in [
            ("sa_audio", self.sa_audio),
            ("sa_visual", self.sa_visual),
            ("cma_audio", self.cma_audio),
            ("gate_audio", self.gate_audio),
            ("gate_visual", self.gate_visual),
            ("post_audio", self.post_audio),
            ("post_visual", self.post_visual),
            ("conv_audio", self.conv_audio),
            ("conv_visual", self.conv_visual),
        ]:
            out.extend((f"{prefix}.{k}", t) for k, t in params.tensors())
        if not self.cma_shared:
            out.extend(
                (f"cma_visual.{k}", t) for k, t in self.cma_visual.tensors()
            )
        return out


@dataclass
class PyramidFeatures:
    """Per-modality outputs of the retained pyramid units, each (..., N, D)."""

    audio: list[Tensor] = field(default_factory=list)
    visual: list[Tensor] = field(default_factory=list)

    @property
    def num_levels(self) -> int:
        return len(self.audio)


def init_channel_gate_params(rng: np.random.Generator, dim: int) -> ChannelGateParams:
    return ChannelGateParams(
        w_sa=glorot(rng, 2 * dim, dim),
        b_sa=Tensor(np.zeros(dim), requires_grad=True),
        w_cma=glorot(rng, 2 * dim, dim),
        b_cma=Tensor(np.zeros(dim), requires_grad=True),
    )


def init_conv_block_params(rng: np.random.Generator, dim: int) -> ConvBlockParams:
    return ConvBlockParams(
        w_center=glorot(rng, dim, dim),
        w_past=glorot(rng, dim, dim),
        w_future=glorot(rng, dim, dim),
        bias=Tensor(np.zeros(dim), requires_grad=True),
        w_point=glorot(rng, dim, dim),
        bias_point=Tensor(np.zeros(dim), requires_grad=True),
    )


def init_pyramid_unit_params(
    rng: np.random.Generator, config: PyramidConfig
) -> PyramidUnitParams:
    d = config.feature_dim
    heads = config.num_heads
    cma = init_attention_params(rng, d, num_heads=heads)
    return PyramidUnitParams(
        sa_audio=init_attention_params(rng, d, num_heads=heads),
        sa_visual=init_attention_params(rng, d, num_heads=heads),
        cma_audio=cma,
        cma_visual=cma
        if config.share_cma
        else init_attention_params(rng, d, num_heads=heads),
        gate_audio=init_channel_gate_params(rng, d),
        gate_visual=init_channel_gate_params(rng, d),
        post_audio=init_post_block_params(rng, d, config.ffn_hidden),
        post_visual=init_post_block_params(rng, d, config.ffn_hidden),
        conv_audio=init_conv_block_params(rng, d),
        conv_visual=init_conv_block_params(rng, d),
    )


def init_pyramid_params(
    rng: np.random.Generator, config: PyramidConfig
) -> list[PyramidUnitParams]:
    return [init_pyramid_unit_params(rng, config) for _ in range(config.num_units)]


def channel_fuse(f_sa: Tensor, f_cma: Tensor, gates: ChannelGateParams) -> Tensor:
    """Gate the two branches per channel and sum them.

    Both gates are sigmoids of a linear map of the channel-concatenated
    branches, so each output channel mixes its self-attended and
    cross-attended version with weights in (0, 1).
    """
    if f_sa.shape != f_cma.shape:
        raise ValueError(f"branch shapes differ: {f_sa.shape} vs {f_cma.shape}")
    f_c = ad.concat([f_sa, f_cma], axis=-1)
    gate_sa = ad.sigmoid(ad.matmul(f_c, gates.w_sa) + gates.b_sa)
    gate_cma = ad.sigmoid(ad.matmul(f_c, gates.w_cma) + gates.b_cma)
    return gate_sa * f_sa + gate_cma * f_cma


def dilated_residual_block(
    f: Tensor, dilation: int, params: ConvBlockParams, plain: bool = False
) -> Tensor:
    """Acausal kernel-3 temporal convolution at the given dilation.

    Taps at t - d and t + d are zero outside the sequence. The full block is
    ReLU(conv3) -> 1x1 conv -> residual add; ``plain`` keeps only the
    activated kernel-3 convolution.
    """
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    pre = (
        ad.matmul(f, params.w_center)
        + ad.matmul(ad.shift(f, dilation, axis=-2), params.w_past)
        + ad.matmul(ad.shift(f, -dilation, axis=-2), params.w_future)
        + params.bias
    )
    h = ad.relu(pre)
    if plain:
        return h
    return f + ad.matmul(h, params.w_point) + params.bias_point


def pyramid_unit_forward(
    f_audio: Tensor,
    f_visual: Tensor,
    radius: int,
    params: PyramidUnitParams,
    config: PyramidConfig,
    rng: np.random.Generator | None = None,
    train_mode: bool = False,
) -> tuple[Tensor, Tensor]:
    """One pyramid unit: parallel SA + CMA, gated fusion, post block, conv."""
    dropout = config.dropout if train_mode else 0.0
    sa_a = windowed_self_attention(f_audio, radius, params.sa_audio)
    sa_v = windowed_self_attention(f_visual, radius, params.sa_visual)
    cma_a = windowed_cross_modal_attention(f_audio, f_visual, radius, params.cma_audio)
    cma_v = windowed_cross_modal_attention(f_visual, f_audio, radius, params.cma_visual)
    fused_a = channel_fuse(sa_a, cma_a, params.gate_audio)
    fused_v = channel_fuse(sa_v, cma_v, params.gate_visual)
    h_a = post_attention_block(f_audio, fused_a, params.post_audio, dropout, rng)
    h_v = post_attention_block(f_visual, fused_v, params.post_visual, dropout, rng)
    if config.disable_conv:
        return h_a, h_v
    out_a = dilated_residual_block(h_a, radius, params.conv_audio, config.plain_conv)
    out_v = dilated_residual_block(h_v, radius, params.conv_visual, config.plain_conv)
    return out_a, out_v


def pyramid_forward(
    f_audio: Tensor,
    f_visual: Tensor,
    config: PyramidConfig,
    params: list[PyramidUnitParams],
    rng: np.random.Generator | None = None,
    train_mode: bool = False,
) -> PyramidFeatures:
    """Run all units in sequence, preserving each retained unit's output."""
    if len(params) != config.num_units:
        raise ValueError(
            f"expected {config.num_units} unit parameter sets, got {len(params)}"
        )
    feats = PyramidFeatures()
    cur_a, cur_v = f_audio, f_visual
    for radius, unit in zip(config.effective_window_sizes(), params):
        cur_a, cur_v = pyramid_unit_forward(
            cur_a, cur_v, radius, unit, config, rng=rng, train_mode=train_mode
        )
        feats.audio.append(cur_a)
        feats.visual.append(cur_v)
    if config.last_only:
        feats = PyramidFeatures(audio=[feats.audio[-1]], visual=[feats.visual[-1]])
    return feats


def variant_config(base: PyramidConfig, variant: str) -> PyramidConfig:
    """Apply a named reduced-variant switch to a pyramid configuration."""
    key = variant.lower().removeprefix("mm-").replace("_", "-")
    mapping = {
        "last": {"last_only": True},
        "pyramid-last": {"last_only": True},
        "unpyramid": {"uniform_windows": True},
        "no-conv": {"disable_conv": True},
        "no-residual": {"plain_conv": True},
        "no-share": {"share_cma": False},
    }
    if key not in mapping:
        raise ValueError(f"unknown pyramid variant: {variant}")
    return replace(base, **mapping[key])
