"""Windowed attention: interaction masks, locality, and cross-modal queries.

Segment t may only attend to segments within a fixed radius d. Small radii
keep a unit focused on short-range structure; large radii see almost the
whole sequence. Run: python demos/01_windowed_attention.py
"""

import numpy as np

from avpyramid import Tensor, build_window_mask, windowed_cross_modal_attention, windowed_self_attention
from avpyramid.attention import init_attention_params

rng = np.random.default_rng(0)

# A window of radius 1 over 6 segments: each row of the mask marks the keys
# one query segment is allowed to look at.
mask = build_window_mask(6, 1)
print("radius-1 mask over 6 segments:")
print(mask.allowed.astype(int))

# Self-attention under that mask. Perturbing segment 0 cannot move any
# output beyond segment 1.
params = init_attention_params(rng, dim=4)
features = rng.standard_normal((6, 4))
base = windowed_self_attention(Tensor(features), 1, params).data

bumped = features.copy()
bumped[0] += rng.standard_normal(4)
moved = windowed_self_attention(Tensor(bumped), 1, params).data
print("\nchange per segment after perturbing segment 0 (radius 1):")
print(np.abs(moved - base).max(axis=1).round(6))

# Cross-modal attention: queries from one stream, keys/values from the
# other, same windowing. A constant context stream collapses every output
# row to the same vector.
audio = rng.standard_normal((6, 4))
visual = np.tile(rng.standard_normal(4), (6, 1))
out = windowed_cross_modal_attention(Tensor(audio), Tensor(visual), 2, params).data
print("\ncross-modal attention with constant context, row spread:",
      float(np.ptp(out, axis=0).max()))

# A radius that covers the whole sequence reproduces ordinary attention.
full = windowed_self_attention(Tensor(features), 5, params).data
import avpyramid.autodiff as ad

q = ad.matmul(Tensor(features), params.w_q)
k = ad.matmul(Tensor(features), params.w_k)
v = ad.matmul(Tensor(features), params.w_v)
unmasked = ad.matmul(ad.softmax(ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1 / 2.0)), v).data
print("full-window equals unmasked attention:", np.allclose(full, unmasked, atol=1e-12))
