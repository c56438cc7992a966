"""Static qualitative artifacts: prediction timelines and fusion weights.

Each video yields a text file (exact, diff-friendly) and a PNG with the
same content: predicted vs gold segments per track, and the per-level
selective-fusion weights for both modalities. Rendering is a pure function
of its inputs, so re-running a plot command reproduces the files byte for
byte.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .data_io import EVENT_TRACKS, LabelSet, PredictionRecord


def _bits(row: np.ndarray) -> str:
    return "".join("1" if x else "0" for x in row)


def timeline_text(
    gold: LabelSet,
    pred: PredictionRecord,
    level_weights: dict[str, np.ndarray],
) -> str:
    lines = [
        f"video={gold.video_id}",
        f"task={gold.task}",
        f"num_segments={gold.num_segments}",
        f"levels={next(iter(level_weights.values())).shape[-1]}",
    ]
    if gold.task == "localization":
        lines.append("gold_classes=" + ",".join(str(int(x)) for x in gold.segment_classes))
        lines.append("pred_classes=" + ",".join(str(int(x)) for x in pred.segment_classes))
    else:
        gold_tracks = {
            "audio": gold.audio, "visual": gold.visual, "audio_visual": gold.audio_visual,
        }
        for track in EVENT_TRACKS:
            g, p = gold_tracks[track], pred.track(track)
            for cls in range(gold.num_classes):
                if not g[:, cls].any() and not p[:, cls].any():
                    continue
                lines.append(
                    f"track={track} class={cls} gold={_bits(g[:, cls])} pred={_bits(p[:, cls])}"
                )
    for modality in ("audio", "visual"):
        w = level_weights[modality]
        rows = [",".join(f"{x:.6f}" for x in seg) for seg in w]
        lines.append(f"level_weights.{modality}=" + ";".join(rows))
    return "\n".join(lines) + "\n"


def render_video(
    gold: LabelSet,
    pred: PredictionRecord,
    level_weights: dict[str, np.ndarray],
    out_dir: str | Path,
) -> tuple[Path, Path]:
    """Write ``<video>.txt`` and ``<video>.png`` under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    txt_path = out_dir / f"{gold.video_id}.txt"
    txt_path.write_text(timeline_text(gold, pred, level_weights), encoding="utf-8")

    n = gold.num_segments
    fig, axes = plt.subplots(3, 1, figsize=(8, 7), constrained_layout=True)
    ax = axes[0]
    if gold.task == "localization":
        img = np.stack([gold.segment_classes, pred.segment_classes]).astype(float)
        ax.imshow(img, aspect="auto", interpolation="nearest", cmap="tab20",
                  vmin=0, vmax=max(gold.num_classes - 1, 1))
        ax.set_yticks([0, 1], ["gold", "pred"])
        ax.set_title(f"{gold.video_id}: segment classes")
    else:
        gold_tracks = {
            "audio": gold.audio, "visual": gold.visual, "audio_visual": gold.audio_visual,
        }
        rows, names = [], []
        for track in EVENT_TRACKS:
            for cls in range(gold.num_classes):
                g, p = gold_tracks[track][:, cls], pred.track(track)[:, cls]
                if not g.any() and not p.any():
                    continue
                rows += [g, p]
                names += [f"{track}/c{cls} gold", f"{track}/c{cls} pred"]
        img = np.stack(rows) if rows else np.zeros((1, n))
        ax.imshow(img, aspect="auto", interpolation="nearest", cmap="Greys", vmin=0, vmax=1)
        ax.set_yticks(range(len(names)), names, fontsize=6)
        ax.set_title(f"{gold.video_id}: events per track (gold vs predicted)")
    ax.set_xlabel("segment")
    for idx, modality in enumerate(("audio", "visual")):
        axw = axes[idx + 1]
        w = level_weights[modality]
        axw.imshow(w.T, aspect="auto", interpolation="nearest", cmap="viridis",
                   vmin=0.0, vmax=1.0)
        axw.set_ylabel("level")
        axw.set_xlabel("segment")
        axw.set_title(f"selective-fusion weights ({modality})")
    png_path = out_dir / f"{gold.video_id}.png"
    fig.savefig(png_path, dpi=100, metadata={"Software": "avpyramid"})
    plt.close(fig)
    return txt_path, png_path
