"""Weakly supervised training: video-level labels in, segment labels out.

Training sees only which classes occur somewhere in each video. Attentive
multiple-instance pooling turns segment probabilities into video-level
predictions for the loss; at inference the segment probabilities themselves
localize the events. Takes ~20 seconds. Run: python demos/05_weak_training.py
"""

import numpy as np

from avpyramid import (
    ModelConfig,
    PyramidConfig,
    SyntheticSpec,
    TrainConfig,
    generate_synthetic,
    parsing_report,
    predict_parsing,
    train,
)

pool = generate_synthetic(
    SyntheticSpec(
        seed=11, num_videos=80, num_segments=10, feature_dim=12, num_classes=3,
        event_length_distribution=((1, 3, 0.4), (4, 10, 0.6)),
        noise_std=0.25, events_per_video=(1, 2),
        modality_weights=(0.0, 0.0, 1.0),
    )
)
train_set, test_set = pool[:64], pool[64:]

model_cfg = ModelConfig(
    audio_dim=12, visual_dim=12, num_classes=3, task="parsing",
    pyramid=PyramidConfig(num_units=3, window_sizes=(1, 2, 4), feature_dim=16, dropout=0.1),
)
train_cfg = TrainConfig(
    task="parsing", epochs=40, batch_size=16, seed=5,
    learning_rate=3e-3, decay_epoch=20, decay_factor=5.0, label_smoothing=0.0,
)
result = train(train_set, model_cfg, train_cfg)
print("loss trajectory:")
for line in result.log_lines[::8] + result.log_lines[-1:]:
    print(" ", line)

preds = predict_parsing(result.params, model_cfg, test_set)
report = parsing_report([(p, s.labels) for p, s in zip(preds, test_set)])
print("\nheld-out scores (trained on video-level labels only):")
print(report.to_text())

sample = test_set[0]
print("gold audio segments:\n", sample.labels.audio.T)
print("predicted audio segments:\n", preds[0].audio.T)
