"""The full command-line workflow in a temporary directory.

synth writes a dataset to disk, train fits a model and stores checkpoint +
log + config snapshot, eval scores it (or scores external prediction
files), plot renders qualitative timelines, ablate compares reduced
variants. Every artifact is reproducible byte for byte from the recorded
seed. Run: python demos/07_cli_workflow.py
"""

import tempfile
from pathlib import Path

from avpyramid.cli import main

CONFIG = """\
model.task=parsing
model.audio_dim=8
model.visual_dim=8
model.num_classes=3
pyramid.num_units=2
pyramid.window_sizes=1,3
pyramid.feature_dim=12
train.epochs=6
train.batch_size=8
train.seed=4
train.learning_rate=0.002
train.decay_epoch=3
train.decay_factor=5.0
synthetic.train_videos=24
synthetic.val_videos=8
synthetic.num_segments=8
synthetic.event_lengths=1:2:0.4;3:7:0.6
synthetic.noise_std=0.3
synthetic.events_min=1
synthetic.events_max=2
synthetic.modality_weights=0,0,1
"""

with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)
    cfg = root / "exp.cfg"
    cfg.write_text(CONFIG, encoding="utf-8")

    print("== synth ==")
    assert main(["synth", "--config", str(cfg), "--out", str(root / "data")]) == 0

    print("\n== train ==")
    assert main(["train", "--config", str(cfg), "--out", str(root / "run")]) == 0
    print("log tail:", (root / "run" / "train.log").read_text().splitlines()[-1])

    print("\n== eval (checkpoint) ==")
    assert main([
        "eval", "--checkpoint", str(root / "run" / "checkpoint.bin"),
        "--out", str(root / "scores"),
    ]) == 0

    print("\n== eval (model-free, gold vs gold) ==")
    gold = root / "data" / "val" / "labels.txt"
    preds = root / "scores" / "predictions.txt"
    assert main(["eval", "--predictions", str(preds), "--gold", str(gold)]) == 0

    print("\n== plot ==")
    assert main([
        "plot", "--checkpoint", str(root / "run" / "checkpoint.bin"),
        "--videos", "vid00024", "--out", str(root / "plots"),
    ]) == 0

    print("\n== ablate (two variants) ==")
    assert main([
        "ablate", "--config", str(cfg), "--variants", "unpyramid,no-sf",
        "--out", str(root / "abl"),
    ]) == 0
