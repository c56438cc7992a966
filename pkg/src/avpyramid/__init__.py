"""Audio-visual temporal pyramid network with a synthetic-data harness.

A numpy library for localizing and parsing audio-visual events: windowed
self/cross-modal attention units stacked at growing scales, adaptive fusion
of the per-scale features, weakly supervised training with attentive
multiple-instance pooling, and the full segment/event-level evaluation
suite. See the README for the command-line interface.
"""

from .attention import (
    AttentionParams,
    WindowMask,
    build_window_mask,
    post_attention_block,
    scaled_dot_attention,
    windowed_cross_modal_attention,
    windowed_self_attention,
)
from .autodiff import Tensor
from .data_io import (
    FeatureSequence,
    LabelSet,
    PredictionRecord,
    SyntheticSpec,
    VideoSample,
    decode_labels,
    decode_predictions,
    encode_labels,
    encode_predictions,
    generate_synthetic,
    load_dataset,
    load_feature_file,
    save_dataset,
    save_feature_file,
)
from .fusion import (
    FusionParams,
    audio_visual_conjunction,
    fuse_pyramid_levels,
    modality_head,
    selective_fusion,
    unit_level_attention,
)
from .metrics import (
    EventInterval,
    FScoreReport,
    ave_accuracy,
    event_f1,
    extract_events,
    localization_accuracy,
    parsing_report,
    segment_f1,
)
from .model import (
    ModelConfig,
    ModelParams,
    SegmentPredictions,
    forward_localization,
    forward_parsing,
    init_model,
    load_checkpoint,
    predict_localization,
    predict_parsing,
    predict_segment_probabilities,
    restore_params,
    save_checkpoint,
)
from .pyramid import (
    PyramidConfig,
    PyramidFeatures,
    channel_fuse,
    dilated_residual_block,
    pyramid_forward,
    pyramid_unit_forward,
)
from .training import (
    TrainConfig,
    TrainingDiverged,
    ave_head,
    learning_rate_at,
    localization_loss,
    mmil_pool,
    parsing_loss,
    smooth_labels,
    train,
)

__version__ = "0.1.0"
