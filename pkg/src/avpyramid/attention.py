"""Scaled dot-product attention with interaction windows.

Self-attention and cross-modal attention share the same primitive: queries,
keys and values are linear projections of segment features, and a boolean
window mask limits which segments may interact. Cross-modal attention takes
queries from one modality and keys/values from the other; both directions
can run off a single shared projection triple. No positional encoding is
applied here, temporal order is modeled by the convolution stage downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class AttentionParams:
    """Projection triple for one attention block."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    num_heads: int = 1

    def tensors(self) -> list[tuple[str, Tensor]]:
        return [("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v)]


@dataclass
class PostBlockParams:
    """Residual + layer norm + position-wise feed-forward scaffolding."""

    ln1_gain: Tensor
    ln1_bias: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    def tensors(self) -> list[tuple[str, Tensor]]:
        return [
            ("ln1_gain", self.ln1_gain),
            ("ln1_bias", self.ln1_bias),
            ("ff_w1", self.ff_w1),
            ("ff_b1", self.ff_b1),
            ("ff_w2", self.ff_w2),
            ("ff_b2", self.ff_b2),
            ("ln2_gain", self.ln2_gain),
            ("ln2_bias", self.ln2_bias),
        ]


@dataclass(frozen=True)
class WindowMask:
    """Boolean interaction window: segment t may attend to |t - s| <= radius."""

    length: int
    radius: int
    allowed: np.ndarray  # (N, N) bool

    def __post_init__(self):
        if not self.allowed.any(axis=1).all():
            raise ValueError("window mask has a row with no allowed key")


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


def init_attention_params(
    rng: np.random.Generator,
    dim: int,
    model_dim: int | None = None,
    value_dim: int | None = None,
    num_heads: int = 1,
) -> AttentionParams:
    model_dim = dim if model_dim is None else model_dim
    value_dim = dim if value_dim is None else value_dim
    if model_dim % num_heads or value_dim % num_heads:
        raise ValueError("model/value dims must divide the head count")
    return AttentionParams(
        w_q=glorot(rng, dim, model_dim),
        w_k=glorot(rng, dim, model_dim),
        w_v=glorot(rng, dim, value_dim),
        num_heads=num_heads,
    )


def init_post_block_params(
    rng: np.random.Generator, dim: int, hidden: int | None = None
) -> PostBlockParams:
    hidden = 4 * dim if hidden is None else hidden
    return PostBlockParams(
        ln1_gain=Tensor(np.ones(dim), requires_grad=True),
        ln1_bias=Tensor(np.zeros(dim), requires_grad=True),
        ff_w1=glorot(rng, dim, hidden),
        ff_b1=Tensor(np.zeros(hidden), requires_grad=True),
        ff_w2=glorot(rng, hidden, dim),
        ff_b2=Tensor(np.zeros(dim), requires_grad=True),
        ln2_gain=Tensor(np.ones(dim), requires_grad=True),
        ln2_bias=Tensor(np.zeros(dim), requires_grad=True),
    )


def scaled_dot_attention(
    q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None
) -> Tensor:
    """``softmax(q k^T / sqrt(d)) v`` with an optional boolean key mask.

    Shapes: q (..., Tq, Dm), k (..., Tk, Dm), v (..., Tk, Dv). Each output
    row is a convex combination of value rows over the allowed keys; a query
    row with no allowed key is an error, never a silent NaN.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(
            f"query dim {q.shape[-1]} does not match key dim {k.shape[-1]}"
        )
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(
            f"key count {k.shape[-2]} does not match value count {v.shape[-2]}"
        )
    d_m = q.shape[-1]
    scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d_m))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not np.broadcast_to(mask, scores.shape).any(axis=-1).all():
            raise ValueError("attention mask leaves a query row fully masked")
    weights = ad.softmax(scores, axis=-1, mask=mask)
    return ad.matmul(weights, v)


def build_window_mask(length: int, radius: int) -> WindowMask:
    """Allow |t - s| <= radius, truncated (not wrapped) at sequence edges."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if radius < 0:
        raise ValueError("radius must be >= 0")
    idx = np.arange(length)
    allowed = np.abs(idx[:, None] - idx[None, :]) <= radius
    return WindowMask(length=length, radius=radius, allowed=allowed)


def _split_heads(x: Tensor, num_heads: int) -> Tensor:
    # (..., T, D) -> (..., H, T, D/H)
    *lead, t, d = x.shape
    x = ad.reshape(x, (*lead, t, num_heads, d // num_heads))
    return ad.swapaxes(x, -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    # (..., H, T, Dh) -> (..., T, H*Dh)
    x = ad.swapaxes(x, -2, -3)
    *lead, t, h, dh = x.shape
    return ad.reshape(x, (*lead, t, h * dh))


def _attend(q: Tensor, k: Tensor, v: Tensor, params: AttentionParams, mask) -> Tensor:
    if params.num_heads == 1:
        return scaled_dot_attention(q, k, v, mask=mask)
    out = scaled_dot_attention(
        _split_heads(q, params.num_heads),
        _split_heads(k, params.num_heads),
        _split_heads(v, params.num_heads),
        mask=mask,
    )
    return _merge_heads(out)


def windowed_self_attention(f: Tensor, radius: int, params: AttentionParams) -> Tensor:
    """Self-attention where segment t sees only segments within the window."""
    n = f.shape[-2]
    mask = build_window_mask(n, radius).allowed
    q = ad.matmul(f, params.w_q)
    k = ad.matmul(f, params.w_k)
    v = ad.matmul(f, params.w_v)
    return _attend(q, k, v, params, mask)


def windowed_cross_modal_attention(
    f_query: Tensor, f_context: Tensor, radius: int, params: AttentionParams
) -> Tensor:
    """Queries from one modality, windowed keys/values from the other."""
    if f_query.shape[-2] != f_context.shape[-2]:
        raise ValueError(
            f"modalities disagree on segment count: "
            f"{f_query.shape[-2]} vs {f_context.shape[-2]}"
        )
    n = f_query.shape[-2]
    mask = build_window_mask(n, radius).allowed
    q = ad.matmul(f_query, params.w_q)
    k = ad.matmul(f_context, params.w_k)
    v = ad.matmul(f_context, params.w_v)
    return _attend(q, k, v, params, mask)


def post_attention_block(
    f_in: Tensor,
    f_att: Tensor,
    params: PostBlockParams,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Residual add + layer norm, then feed-forward with its own residual + norm."""
    if f_in.shape != f_att.shape:
        raise ValueError(f"shape mismatch: {f_in.shape} vs {f_att.shape}")
    h = ad.layer_norm(f_in + f_att, params.ln1_gain, params.ln1_bias)
    ff = ad.relu(ad.matmul(h, params.ff_w1) + params.ff_b1)
    if dropout > 0.0:
        if rng is None:
            raise ValueError("dropout requires an rng")
        ff = ad.dropout(ff, dropout, rng)
    ff = ad.matmul(ff, params.ff_w2) + params.ff_b2
    return ad.layer_norm(h + ff, params.ln2_gain, params.ln2_bias)
