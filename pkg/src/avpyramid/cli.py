"""Command-line entry points: train, eval, ablate, synth, plot.

Every command exits 0 on success and prints a single ``error: ...`` line to
stderr otherwise (exit 2 for configuration or input problems, 1 for runtime
failures). All randomness flows from the one seed recorded in each output's
config snapshot, and log or checkpoint artifacts contain no wall-clock
content, so re-running a command with the same seed reproduces them byte
for byte.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import (
    ABLATION_VARIANTS,
    ConfigError,
    ExperimentConfig,
    apply_variant,
    build_datasets,
    config_to_text,
    load_config,
    parse_config,
    task_from_alias,
    with_overrides,
)
from .data_io import (
    DataFormatError,
    LabelValidationError,
    PackingError,
    decode_labels,
    decode_predictions,
    encode_predictions,
    load_dataset,
    save_dataset,
)
from .autodiff import Tensor
from .metrics import FScoreReport, localization_accuracy, parsing_report
from .model import (
    forward_localization,
    forward_parsing,
    load_checkpoint,
    predict_localization,
    predict_parsing,
    restore_params,
    save_checkpoint,
)
from .training import TrainingDiverged, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avpyramid",
        description="Audio-visual temporal pyramid: training, evaluation, ablations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("--config", required=True, help="config file path")
    p_train.add_argument("--seed", type=int, default=None, help="override train.seed")
    p_train.add_argument("--task", choices=["ave", "avvp"], default=None)
    p_train.add_argument("--mode", choices=["full", "weak"], default=None)
    p_train.add_argument("--variant", default=None, help="named reduced variant")
    p_train.add_argument("--out", default="runs/train", help="output directory")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint or prediction files")
    p_eval.add_argument("--checkpoint", default=None)
    p_eval.add_argument("--data", default=None, help="dataset directory override")
    p_eval.add_argument("--predictions", default=None, help="model-free: prediction file")
    p_eval.add_argument("--gold", default=None, help="model-free: gold label file")
    p_eval.add_argument("--out", default=None, help="optional output directory")

    p_abl = sub.add_parser("ablate", help="train/evaluate reduced variants")
    p_abl.add_argument("--config", required=True)
    p_abl.add_argument("--variants", default=",".join(ABLATION_VARIANTS))
    p_abl.add_argument("--seed", type=int, default=None)
    p_abl.add_argument("--out", default="runs/ablate")

    p_synth = sub.add_parser("synth", help="write the config's synthetic dataset to disk")
    p_synth.add_argument("--config", required=True)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("--out", required=True)

    p_plot = sub.add_parser("plot", help="qualitative timelines and fusion weights")
    p_plot.add_argument("--checkpoint", required=True)
    p_plot.add_argument("--videos", required=True, help="comma-separated video ids")
    p_plot.add_argument("--data", default=None, help="dataset directory override")
    p_plot.add_argument("--out", default="runs/plot")
    return parser


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _effective_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    task = task_from_alias(args.task) if getattr(args, "task", None) else None
    cfg = with_overrides(cfg, seed=args.seed, task=task, mode=getattr(args, "mode", None))
    if getattr(args, "variant", None):
        cfg = apply_variant(cfg, args.variant)
    return cfg


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    train_set, val_set = build_datasets(cfg)
    result = train(train_set, cfg.model, cfg.train, val_samples=val_set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = config_to_text(cfg)
    _write_text(out / "config.cfg", snapshot)
    _write_text(out / "train.log", result.log_text)
    save_checkpoint(out / "checkpoint.bin", result.params, snapshot)
    print(f"checkpoint={out / 'checkpoint.bin'}")
    print(f"final_loss={result.final_loss:.8f}")
    return 0


def _pair_predictions(preds, golds):
    gold_by_id = {g.video_id: g for g in golds}
    pairs = []
    for p in preds:
        if p.video_id not in gold_by_id:
            raise DataFormatError(f"prediction for unknown video: {p.video_id}")
        pairs.append((p, gold_by_id[p.video_id]))
    return pairs


def _report_text(task: str, pairs) -> str:
    if task == "parsing":
        report: FScoreReport = parsing_report(pairs)
        return report.to_text()
    acc = localization_accuracy(pairs)
    return f"accuracy={acc:.4f}\n"


def cmd_eval(args) -> int:
    if (args.predictions is None) != (args.gold is None):
        raise ConfigError("model-free eval needs both --predictions and --gold")
    if args.predictions is not None:
        for path in (args.predictions, args.gold):
            if not Path(path).exists():
                raise DataFormatError(f"missing file: {path}")
        preds = decode_predictions(Path(args.predictions).read_text(encoding="utf-8"))
        golds = decode_labels(Path(args.gold).read_text(encoding="utf-8"))
        if not preds:
            raise DataFormatError("prediction file holds no records")
        task = preds[0].task
        text = _report_text(task, _pair_predictions(preds, golds))
    else:
        if args.checkpoint is None:
            raise ConfigError("eval needs --checkpoint or --predictions/--gold")
        params, cfg, samples = _load_model_and_data(args.checkpoint, args.data)
        if cfg.model.task == "parsing":
            preds = predict_parsing(params, cfg.model, samples, cfg.threshold)
        else:
            preds = predict_localization(
                params, cfg.model, samples, cfg.train.relevance_threshold
            )
        text = _report_text(cfg.model.task, [(p, s.labels) for p, s in zip(preds, samples)])
        if args.out:
            _write_text(Path(args.out) / "predictions.txt", encode_predictions(preds))
    sys.stdout.write(text)
    if args.out:
        _write_text(Path(args.out) / "report.txt", text)
    return 0


def _load_model_and_data(checkpoint_path: str, data_dir: str | None):
    if not Path(checkpoint_path).exists():
        raise DataFormatError(f"missing checkpoint: {checkpoint_path}")
    tensors, config_text = load_checkpoint(checkpoint_path)
    cfg = parse_config(config_text)
    params = restore_params(cfg.model, tensors)
    if data_dir is not None:
        samples = load_dataset(data_dir)
    else:
        _, samples = build_datasets(cfg)
    if not samples:
        raise DataFormatError("no evaluation videos available")
    probe = samples[0]
    if probe.audio.dim != cfg.model.audio_dim or probe.visual.dim != cfg.model.visual_dim:
        raise DataFormatError(
            f"feature dim mismatch: checkpoint expects "
            f"({cfg.model.audio_dim}, {cfg.model.visual_dim}), dataset provides "
            f"({probe.audio.dim}, {probe.visual.dim})"
        )
    return params, cfg, samples


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    cfg = with_overrides(cfg, seed=args.seed)
    requested = [v.strip() for v in args.variants.split(",") if v.strip()]
    normalized = []
    for v in requested:
        key = v.lower().removeprefix("mm-").replace("_", "-")
        if key not in ABLATION_VARIANTS:
            raise ConfigError(f"unknown variant: {v}")
        normalized.append(key)
    rows = []
    for name in ["full", *normalized]:
        variant_cfg = cfg if name == "full" else apply_variant(cfg, name)
        train_set, val_set = build_datasets(variant_cfg)
        result = train(train_set, variant_cfg.model, variant_cfg.train, val_samples=None)
        n_params = result.params.num_parameters()
        if variant_cfg.model.task == "parsing":
            preds = predict_parsing(result.params, variant_cfg.model, val_set, variant_cfg.threshold)
            report = parsing_report([(p, s.labels) for p, s in zip(preds, val_set)])
            metrics = {
                f"{level}_{key}": values[key]
                for level, values in (("seg", report.segment), ("eve", report.event))
                for key in report.KEYS
            }
        else:
            preds = predict_localization(
                result.params, variant_cfg.model, val_set, variant_cfg.train.relevance_threshold
            )
            metrics = {
                "accuracy": localization_accuracy(
                    [(p, s.labels) for p, s in zip(preds, val_set)]
                )
            }
        rows.append((name, n_params, metrics))
    keys = list(rows[0][2].keys())
    lines = ["variant params " + " ".join(keys)]
    for name, n_params, metrics in rows:
        lines.append(
            f"{name} {n_params} " + " ".join(f"{metrics[k]:.6f}" for k in keys)
        )
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    _write_text(Path(args.out) / "ablation.txt", text)
    return 0


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    cfg = with_overrides(cfg, seed=args.seed)
    if cfg.synthetic is None:
        raise ConfigError("config has no synthetic section")
    train_set, val_set = build_datasets(cfg)
    out = Path(args.out)
    save_dataset(train_set, out / "train")
    save_dataset(val_set, out / "val")
    _write_text(out / "config.cfg", config_to_text(cfg))
    print(f"train={out / 'train'} videos={len(train_set)}")
    print(f"val={out / 'val'} videos={len(val_set)}")
    return 0


def cmd_plot(args) -> int:
    from .plotting import render_video

    params, cfg, samples = _load_model_and_data(args.checkpoint, args.data)
    by_id = {s.labels.video_id: s for s in samples}
    wanted = [v.strip() for v in args.videos.split(",") if v.strip()]
    for vid in wanted:
        if vid not in by_id:
            raise DataFormatError(f"unknown video id: {vid}")
    for vid in wanted:
        sample = by_id[vid]
        audio = Tensor(sample.audio.values[None].astype(np.float64))
        visual = Tensor(sample.visual.values[None].astype(np.float64))
        if cfg.model.task == "parsing":
            fwd = forward_parsing(params, cfg.model, audio, visual)
            pred = predict_parsing(params, cfg.model, [sample], cfg.threshold)[0]
            trunk = fwd.trunk
        else:
            fwd = forward_localization(params, cfg.model, audio, visual)
            pred = predict_localization(
                params, cfg.model, [sample], cfg.train.relevance_threshold
            )[0]
            trunk = fwd.trunk
        weights = {
            "audio": trunk.level_weights_audio.data[0],
            "visual": trunk.level_weights_visual.data[0],
        }
        txt, png = render_video(sample.labels, pred, weights, args.out)
        print(f"{vid}: {txt} {png}")
    return 0


_USAGE_ERRORS = (ConfigError, DataFormatError, LabelValidationError, PackingError)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "train": cmd_train,
        "eval": cmd_eval,
        "ablate": cmd_ablate,
        "synth": cmd_synth,
        "plot": cmd_plot,
    }
    try:
        return handlers[args.command](args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
