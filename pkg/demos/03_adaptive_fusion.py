"""Adaptive fusion: level attention, sigmoid-weighted sums, task heads.

The per-level features of one segment form a short sequence over the level
axis. Attention across that axis lets scales exchange context, then each
level gets a sigmoid weight (deliberately not normalized: several scales may
matter at once) and the weighted sum becomes the segment's vector.
Run: python demos/03_adaptive_fusion.py
"""

import numpy as np

from avpyramid import Tensor, audio_visual_conjunction, fuse_pyramid_levels, modality_head
from avpyramid.fusion import init_fusion_params
from avpyramid.pyramid import PyramidFeatures

rng = np.random.default_rng(2)
n, levels, dim, classes = 5, 4, 8, 3
params = init_fusion_params(rng, dim, classes)

feats = PyramidFeatures(
    audio=[Tensor(rng.standard_normal((n, dim))) for _ in range(levels)],
    visual=[Tensor(rng.standard_normal((n, dim))) for _ in range(levels)],
)
fused = fuse_pyramid_levels(feats, params)
print("fused audio shape:", fused["audio"].shape)
print("per-level weights for segment 0 (audio):",
      fused["audio_level_weights"].data[0].round(3))
print("weights need not sum to 1:", float(fused["audio_level_weights"].data[0].sum()))

# Ablations: skip the level attention, or replace the weighted sum with a
# plain average.
no_ula = fuse_pyramid_levels(feats, params, use_unit_attention=False)
no_sf = fuse_pyramid_levels(feats, params, use_selective_fusion=False)
print("average-pool weights are uniform:", no_sf["audio_level_weights"].data[0])

# Heads: multi-label parsing uses a sigmoid per class; single-event
# localization uses a softmax over classes plus background.
p_audio = modality_head(fused["audio"], params.classifier_audio, "parsing").data
p_visual = modality_head(fused["visual"], params.classifier_visual, "parsing").data
print("\nparsing probabilities, segment 0, audio:", p_audio[0].round(3))

soft = modality_head(fused["audio"], params.classifier_audio, "localization").data
print("localization rows sum to one:", np.allclose(soft.sum(axis=-1), 1.0))

# An event is audio-visual only where both tracks agree: the probability is
# the product, so it never exceeds either input.
p_av = audio_visual_conjunction(p_audio, p_visual)
print("conjunction <= min of the tracks:",
      bool((p_av <= np.minimum(p_audio, p_visual) + 1e-12).all()))
