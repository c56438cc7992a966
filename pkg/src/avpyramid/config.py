"""Experiment configuration: flat ``section.key=value`` text files.

One file drives a whole run: model architecture, training schedule, and the
data source (a dataset directory pair, or a synthetic recipe generated from
the experiment seed). The serialized form is canonical, so a config snapshot
stored next to an artifact reproduces it bit for bit under the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data_io import SyntheticSpec, VideoSample, generate_synthetic, load_dataset
from .model import ModelConfig
from .pyramid import PyramidConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration content; message names the field."""


@dataclass(frozen=True)
class SyntheticDataConfig:
    """Synthetic data source; dims and classes follow the model section."""

    train_videos: int = 200
    val_videos: int = 50
    num_segments: int = 10
    event_lengths: tuple[tuple[int, int, float], ...] = ((1, 3, 0.5), (4, 10, 0.5))
    noise_std: float = 1.0
    events_min: int = 1
    events_max: int = 2
    modality_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    train: TrainConfig
    train_dir: str | None = None
    val_dir: str | None = None
    synthetic: SyntheticDataConfig | None = None
    threshold: float = 0.5

    def __post_init__(self):
        if self.model.task != self.train.task:
            raise ConfigError(
                f"model.task={self.model.task} disagrees with train task {self.train.task}"
            )
        if self.synthetic is None and self.train_dir is None:
            raise ConfigError("config needs either data.train_dir or a synthetic section")
        if self.synthetic is not None and self.model.audio_dim != self.model.visual_dim:
            raise ConfigError("synthetic data uses one feature_dim for both modalities")


_TASK_ALIASES = {"ave": "localization", "avvp": "parsing",
                 "localization": "localization", "parsing": "parsing"}


def task_from_alias(name: str) -> str:
    if name not in _TASK_ALIASES:
        raise ConfigError(f"unknown task: {name} (expected ave or avvp)")
    return _TASK_ALIASES[name]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_text(cfg: ExperimentConfig) -> str:
    m, p, t = cfg.model, cfg.model.pyramid, cfg.train
    pairs: list[tuple[str, str]] = [
        ("model.task", m.task),
        ("model.audio_dim", _fmt(m.audio_dim)),
        ("model.visual_dim", _fmt(m.visual_dim)),
        ("model.num_classes", _fmt(m.num_classes)),
        ("model.use_unit_attention", _fmt(m.use_unit_attention)),
        ("model.use_selective_fusion", _fmt(m.use_selective_fusion)),
        ("pyramid.num_units", _fmt(p.num_units)),
        ("pyramid.window_sizes", ",".join(str(d) for d in p.window_sizes)),
        ("pyramid.feature_dim", _fmt(p.feature_dim)),
        ("pyramid.num_heads", _fmt(p.num_heads)),
        ("pyramid.ffn_hidden", "" if p.ffn_hidden is None else _fmt(p.ffn_hidden)),
        ("pyramid.dropout", _fmt(p.dropout)),
        ("pyramid.last_only", _fmt(p.last_only)),
        ("pyramid.uniform_windows", _fmt(p.uniform_windows)),
        ("pyramid.disable_conv", _fmt(p.disable_conv)),
        ("pyramid.plain_conv", _fmt(p.plain_conv)),
        ("pyramid.share_cma", _fmt(p.share_cma)),
        ("train.supervision", t.supervision),
        ("train.learning_rate", _fmt(t.learning_rate)),
        ("train.decay_epoch", _fmt(t.decay_epoch)),
        ("train.decay_factor", _fmt(t.decay_factor)),
        ("train.epochs", _fmt(t.epochs)),
        ("train.batch_size", _fmt(t.batch_size)),
        ("train.label_smoothing", _fmt(t.label_smoothing)),
        ("train.seed", _fmt(t.seed)),
        ("train.relevance_threshold", _fmt(t.relevance_threshold)),
        ("metrics.threshold", _fmt(cfg.threshold)),
    ]
    if cfg.train_dir is not None:
        pairs.append(("data.train_dir", cfg.train_dir))
    if cfg.val_dir is not None:
        pairs.append(("data.val_dir", cfg.val_dir))
    if cfg.synthetic is not None:
        s = cfg.synthetic
        pairs += [
            ("synthetic.train_videos", _fmt(s.train_videos)),
            ("synthetic.val_videos", _fmt(s.val_videos)),
            ("synthetic.num_segments", _fmt(s.num_segments)),
            ("synthetic.event_lengths", ";".join(f"{lo}:{hi}:{w:g}" for lo, hi, w in s.event_lengths)),
            ("synthetic.noise_std", _fmt(s.noise_std)),
            ("synthetic.events_min", _fmt(s.events_min)),
            ("synthetic.events_max", _fmt(s.events_max)),
            ("synthetic.modality_weights", ",".join(f"{w:g}" for w in s.modality_weights)),
        ]
    return "\n".join(f"{k}={v}" for k, v in pairs) + "\n"


def _parse_bool(key: str, value: str) -> bool:
    if value not in ("true", "false"):
        raise ConfigError(f"{key}: expected true or false, got {value!r}")
    return value == "true"


def _parse_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from exc


def _parse_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from exc


def _parse_lengths(key: str, value: str) -> tuple[tuple[int, int, float], ...]:
    out = []
    for part in value.split(";"):
        bits = part.split(":")
        if len(bits) != 3:
            raise ConfigError(f"{key}: expected lo:hi:weight entries, got {part!r}")
        out.append((int(bits[0]), int(bits[1]), float(bits[2])))
    return tuple(out)


def parse_config(text: str) -> ExperimentConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        raw[key.strip()] = value.strip()

    known: set[str] = set()

    def take(key: str, default=None) -> str | None:
        known.add(key)
        return raw.get(key, default)

    task = take("model.task", "parsing")
    if task not in ("parsing", "localization"):
        raise ConfigError(f"model.task: unknown task {task!r}")
    pyramid = PyramidConfig(
        num_units=_parse_int("pyramid.num_units", take("pyramid.num_units", "4")),
        window_sizes=tuple(
            _parse_int("pyramid.window_sizes", x)
            for x in take("pyramid.window_sizes", "1,2,4,8").split(",")
        ),
        feature_dim=_parse_int("pyramid.feature_dim", take("pyramid.feature_dim", "32")),
        num_heads=_parse_int("pyramid.num_heads", take("pyramid.num_heads", "1")),
        ffn_hidden=(
            None
            if take("pyramid.ffn_hidden", "") == ""
            else _parse_int("pyramid.ffn_hidden", raw["pyramid.ffn_hidden"])
        ),
        dropout=_parse_float("pyramid.dropout", take("pyramid.dropout", "0.1")),
        last_only=_parse_bool("pyramid.last_only", take("pyramid.last_only", "false")),
        uniform_windows=_parse_bool(
            "pyramid.uniform_windows", take("pyramid.uniform_windows", "false")
        ),
        disable_conv=_parse_bool("pyramid.disable_conv", take("pyramid.disable_conv", "false")),
        plain_conv=_parse_bool("pyramid.plain_conv", take("pyramid.plain_conv", "false")),
        share_cma=_parse_bool("pyramid.share_cma", take("pyramid.share_cma", "true")),
    )
    model = ModelConfig(
        audio_dim=_parse_int("model.audio_dim", take("model.audio_dim", "16")),
        visual_dim=_parse_int("model.visual_dim", take("model.visual_dim", "16")),
        num_classes=_parse_int("model.num_classes", take("model.num_classes", "4")),
        task=task,
        pyramid=pyramid,
        use_unit_attention=_parse_bool(
            "model.use_unit_attention", take("model.use_unit_attention", "true")
        ),
        use_selective_fusion=_parse_bool(
            "model.use_selective_fusion", take("model.use_selective_fusion", "true")
        ),
    )
    defaults = TrainConfig.for_task(task)
    train = TrainConfig(
        task=task,
        supervision=take("train.supervision", defaults.supervision),
        learning_rate=_parse_float(
            "train.learning_rate", take("train.learning_rate", _fmt(defaults.learning_rate))
        ),
        decay_epoch=_parse_int("train.decay_epoch", take("train.decay_epoch", _fmt(defaults.decay_epoch))),
        decay_factor=_parse_float(
            "train.decay_factor", take("train.decay_factor", _fmt(defaults.decay_factor))
        ),
        epochs=_parse_int("train.epochs", take("train.epochs", _fmt(defaults.epochs))),
        batch_size=_parse_int("train.batch_size", take("train.batch_size", "16")),
        label_smoothing=_parse_float(
            "train.label_smoothing", take("train.label_smoothing", "0.1")
        ),
        seed=_parse_int("train.seed", take("train.seed", "0")),
        relevance_threshold=_parse_float(
            "train.relevance_threshold", take("train.relevance_threshold", "0.5")
        ),
    )
    synthetic = None
    if any(k.startswith("synthetic.") for k in raw):
        synthetic = SyntheticDataConfig(
            train_videos=_parse_int("synthetic.train_videos", take("synthetic.train_videos", "200")),
            val_videos=_parse_int("synthetic.val_videos", take("synthetic.val_videos", "50")),
            num_segments=_parse_int("synthetic.num_segments", take("synthetic.num_segments", "10")),
            event_lengths=_parse_lengths(
                "synthetic.event_lengths", take("synthetic.event_lengths", "1:3:0.5;4:10:0.5")
            ),
            noise_std=_parse_float("synthetic.noise_std", take("synthetic.noise_std", "1.0")),
            events_min=_parse_int("synthetic.events_min", take("synthetic.events_min", "1")),
            events_max=_parse_int("synthetic.events_max", take("synthetic.events_max", "2")),
            modality_weights=tuple(
                _parse_float("synthetic.modality_weights", w)
                for w in take("synthetic.modality_weights", "1,1,1").split(",")
            ),
        )
    cfg = ExperimentConfig(
        model=model,
        train=train,
        train_dir=take("data.train_dir"),
        val_dir=take("data.val_dir"),
        synthetic=synthetic,
        threshold=_parse_float("metrics.threshold", take("metrics.threshold", "0.5")),
    )
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing config file: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def with_overrides(
    cfg: ExperimentConfig,
    seed: int | None = None,
    task: str | None = None,
    mode: str | None = None,
) -> ExperimentConfig:
    """Apply command-line overrides; task switches also reset the schedule
    defaults for that task."""
    model, train = cfg.model, cfg.train
    if task is not None and task != model.task:
        model = replace(model, task=task)
        train = TrainConfig.for_task(task, seed=train.seed, batch_size=train.batch_size,
                                     label_smoothing=train.label_smoothing,
                                     relevance_threshold=train.relevance_threshold)
    if mode is not None:
        full = {"full": "full", "weak": "weak"}
        if mode not in full:
            raise ConfigError(f"unknown mode: {mode}")
        train = replace(train, supervision=full[mode])
    if seed is not None:
        train = replace(train, seed=seed)
    return replace(cfg, model=model, train=train)


def apply_variant(cfg: ExperimentConfig, variant: str) -> ExperimentConfig:
    """Named reduced variants reachable from the command line."""
    from .pyramid import variant_config

    key = variant.lower().removeprefix("mm-").replace("_", "-")
    if key in ("full", "pyramid"):
        return cfg
    if key == "no-ula":
        return replace(cfg, model=replace(cfg.model, use_unit_attention=False))
    if key == "no-sf":
        return replace(cfg, model=replace(cfg.model, use_selective_fusion=False))
    try:
        pyramid = variant_config(cfg.model.pyramid, key)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return replace(cfg, model=replace(cfg.model, pyramid=pyramid))


ABLATION_VARIANTS = ("last", "unpyramid", "no-conv", "no-residual", "no-ula", "no-sf", "no-share")


def _synthetic_spec(cfg: ExperimentConfig, num_videos: int, seed: int) -> SyntheticSpec:
    s = cfg.synthetic
    return SyntheticSpec(
        seed=seed,
        num_videos=num_videos,
        num_segments=s.num_segments,
        feature_dim=cfg.model.audio_dim,
        num_classes=cfg.model.num_classes,
        event_length_distribution=s.event_lengths,
        noise_std=s.noise_std,
        events_per_video=(s.events_min, s.events_max),
        task=cfg.model.task,
        modality_weights=s.modality_weights,
    )


def build_datasets(cfg: ExperimentConfig) -> tuple[list[VideoSample], list[VideoSample]]:
    """Materialize the train/val sets named by the config.

    A synthetic source draws one pool from a single spec (so both splits
    share the per-class feature directions) and slices off the validation
    videos; the spec seed derives from the experiment seed alone.
    """
    if cfg.train_dir is not None:
        train = load_dataset(cfg.train_dir)
        val = load_dataset(cfg.val_dir) if cfg.val_dir else []
        return train, val
    s = cfg.synthetic
    spec = _synthetic_spec(
        cfg, s.train_videos + s.val_videos, _derive_seed(cfg.train.seed, 10)
    )
    pool = generate_synthetic(spec)
    return pool[: s.train_videos], pool[s.train_videos :]


def _derive_seed(base: int, stream: int) -> int:
    return int(np.random.SeedSequence([base, stream]).generate_state(1)[0])
