"""Task heads, losses, and the optimization loop.

Parsing trains weakly: video-level targets only, matched against attentive
multiple-instance pooled predictions (softmax weights over time per class,
and over the two modalities per segment per class, jointly normalized so the
video probability stays inside the convex hull of its segment
probabilities). Localization trains fully (category + segment relevance) or
weakly (category only). Both use Adam with a single step decay of the
learning rate at a configured epoch. The loop is single threaded and fully
determined by the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data_io import LabelSet, VideoSample
from .model import (
    AveHeadParams,
    MMILParams,
    ModelConfig,
    ModelParams,
    forward_localization,
    forward_parsing,
    init_model,
    predict_localization,
    predict_parsing,
)

PROB_FLOOR = 1e-7


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; training aborted."""


@dataclass(frozen=True)
class TrainConfig:
    task: str = "parsing"  # "parsing" | "localization"
    supervision: str = "weak"  # "weak" | "full"
    learning_rate: float = 1e-4
    decay_epoch: int = 10
    decay_factor: float = 5.0
    epochs: int = 20
    batch_size: int = 16
    label_smoothing: float = 0.1
    seed: int = 0
    relevance_threshold: float = 0.5

    def __post_init__(self):
        if self.task not in ("parsing", "localization"):
            raise ValueError(f"unknown task: {self.task}")
        if self.supervision not in ("weak", "full"):
            raise ValueError(f"unknown supervision mode: {self.supervision}")
        if self.task == "parsing" and self.supervision != "weak":
            raise ValueError("parsing is trained weakly supervised only")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.label_smoothing < 0.5:
            raise ValueError("label smoothing must be in [0, 0.5)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    @staticmethod
    def for_task(task: str, **overrides) -> "TrainConfig":
        """Published schedules: localization decays x10 after epoch 50 from
        2e-5; parsing decays x5 after epoch 10 from 1e-4."""
        if task == "localization":
            base = dict(
                task=task, supervision="full", learning_rate=2e-5,
                decay_epoch=50, decay_factor=10.0, epochs=80,
            )
        elif task == "parsing":
            base = dict(
                task=task, supervision="weak", learning_rate=1e-4,
                decay_epoch=10, decay_factor=5.0, epochs=40,
            )
        else:
            raise ValueError(f"unknown task: {task}")
        base.update(overrides)
        return TrainConfig(**base)


def learning_rate_at(config: TrainConfig, epoch: int) -> float:
    """Step schedule: the base rate through ``decay_epoch`` epochs (0-based),
    divided by ``decay_factor`` from then on."""
    if epoch < config.decay_epoch:
        return config.learning_rate
    return config.learning_rate / config.decay_factor


# ---------------------------------------------------------------------------
# Heads
# ---------------------------------------------------------------------------


def ave_head(
    fused_audio: Tensor, fused_visual: Tensor, params: AveHeadParams
) -> tuple[Tensor, Tensor]:
    """Video category from temporal average pooling; per-segment relevance.

    Both run on the channel-concatenated modality features. Returns the
    (..., C) softmax category distribution and (..., N) sigmoid relevance.
    """
    z = ad.concat([fused_audio, fused_visual], axis=-1)
    pooled = ad.tmean(z, axis=-2)
    video_dist = ad.softmax(
        ad.matmul(pooled, params.classifier.w) + params.classifier.b, axis=-1
    )
    rel = ad.sigmoid(ad.matmul(z, params.relevance.w) + params.relevance.b)
    return video_dist, ad.reshape(rel, rel.shape[:-1])


@dataclass
class MMILOutput:
    video_audio: Tensor  # (..., C)
    video_visual: Tensor
    video_global: Tensor
    temporal_weights: Tensor  # (..., N, C), sums to 1 over N
    modality_weights: Tensor  # (..., N, 2, C), sums to 1 over the pair


def mmil_pool(
    p_audio: Tensor,
    p_visual: Tensor,
    fused_audio: Tensor,
    fused_visual: Tensor,
    params: MMILParams,
) -> MMILOutput:
    """Attentive multiple-instance pooling to video-level probabilities.

    Temporal weights softmax over segments per class (shared by both
    modalities); modality weights softmax over the two modalities per
    segment per class. The global probability sums w_time * w_mod * p, a
    convex combination of the segment probabilities.
    """
    joint = ad.concat([fused_audio, fused_visual], axis=-1)
    w_time = ad.softmax(ad.matmul(joint, params.w_time) + params.b_time, axis=-2)
    mod_logits = ad.stack_last_pairs(
        [
            ad.matmul(fused_audio, params.w_mod) + params.b_mod,
            ad.matmul(fused_visual, params.w_mod) + params.b_mod,
        ],
        axis=-2,
    )
    w_mod = ad.softmax(mod_logits, axis=-2)  # (..., N, 2, C)
    probs = ad.stack_last_pairs([p_audio, p_visual], axis=-2)
    video_audio = ad.tsum(w_time * p_audio, axis=-2)
    video_visual = ad.tsum(w_time * p_visual, axis=-2)
    *lead, n, c = w_time.shape
    w_time_e = ad.reshape(w_time, (*lead, n, 1, c))
    video_global = ad.tsum(ad.tsum(w_time_e * w_mod * probs, axis=-2), axis=-2)
    return MMILOutput(
        video_audio=video_audio,
        video_visual=video_visual,
        video_global=video_global,
        temporal_weights=w_time,
        modality_weights=w_mod,
    )


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def smooth_labels(y: np.ndarray, epsilon: float) -> np.ndarray:
    """1 -> 1 - eps, 0 -> eps."""
    if not 0.0 <= epsilon < 0.5:
        raise ValueError("epsilon must be in [0, 0.5)")
    y = np.asarray(y, dtype=np.float64)
    return y * (1.0 - epsilon) + (1.0 - y) * epsilon


def binary_cross_entropy(probs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean BCE with a probability floor inside the logs."""
    p = ad.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    t = Tensor(targets)
    one = Tensor(np.float64(1.0))
    loss = -(t * ad.tlog(p) + (one - t) * ad.tlog(one - p))
    return ad.tmean(loss)


def parsing_loss(pooled: MMILOutput, weak_targets: np.ndarray, epsilon: float) -> Tensor:
    """BCE of the smoothed video-level union labels against all three
    pooled streams (audio, visual, global), summed."""
    targets = smooth_labels(weak_targets, epsilon)
    return (
        binary_cross_entropy(pooled.video_audio, targets)
        + binary_cross_entropy(pooled.video_visual, targets)
        + binary_cross_entropy(pooled.video_global, targets)
    )


def localization_loss(
    video_dist: Tensor,
    relevance: Tensor,
    video_onehot: np.ndarray,
    relevance_gold: np.ndarray,
    mode: str,
) -> Tensor:
    """Cross-entropy on the video category; full supervision adds BCE on
    per-segment relevance. Weak mode never reads segment-level ground truth."""
    if mode not in ("weak", "full"):
        raise ValueError(f"unknown supervision mode: {mode}")
    p_true = ad.tsum(video_dist * Tensor(video_onehot), axis=-1)
    category = -ad.tmean(ad.tlog(ad.clip(p_true, PROB_FLOOR, 1.0)))
    if mode == "weak":
        return category
    return category + binary_cross_entropy(relevance, relevance_gold)


def relevance_targets(labels: LabelSet) -> np.ndarray:
    """Ground-truth relevance: segment is not background."""
    return (labels.segment_classes != labels.background_class).astype(np.float64)


def video_onehot(labels: LabelSet) -> np.ndarray:
    out = np.zeros(labels.num_classes, dtype=np.float64)
    out[labels.video_class] = 1.0
    return out


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adam with default moment coefficients."""

    def __init__(
        self,
        named_params: list[tuple[str, Tensor]],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.named_params = named_params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in named_params}
        self.v = {name: np.zeros_like(t.data) for name, t in named_params}

    def zero_grad(self) -> None:
        for _, t in self.named_params:
            t.grad = None

    def step(self, lr: float) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.step_count
        bias2 = 1.0 - b2**self.step_count
        for name, t in self.named_params:
            if t.grad is None:
                continue
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * t.grad
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * t.grad**2
            t.data -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    log_lines: list[str] = field(default_factory=list)
    final_loss: float = float("nan")

    @property
    def log_text(self) -> str:
        return "\n".join(self.log_lines) + "\n"


def _batches(order: np.ndarray, samples: list[VideoSample], batch_size: int):
    """Yield index batches grouped so every batch shares a segment count."""
    by_n: dict[int, list[int]] = {}
    for idx in order:
        by_n.setdefault(samples[idx].audio.num_segments, []).append(int(idx))
    for n in sorted(by_n):
        group = by_n[n]
        for i in range(0, len(group), batch_size):
            yield group[i : i + batch_size]


def _stack(samples: list[VideoSample], idx: list[int]) -> tuple[Tensor, Tensor]:
    audio = np.stack([samples[i].audio.values.astype(np.float64) for i in idx])
    visual = np.stack([samples[i].visual.values.astype(np.float64) for i in idx])
    return Tensor(audio), Tensor(visual)


def _batch_loss(
    params: ModelParams,
    model_config: ModelConfig,
    train_config: TrainConfig,
    samples: list[VideoSample],
    idx: list[int],
    rng: np.random.Generator,
) -> Tensor:
    audio, visual = _stack(samples, idx)
    if train_config.task == "parsing":
        fwd = forward_parsing(params, model_config, audio, visual, rng=rng, train_mode=True)
        pooled = mmil_pool(
            fwd.p_audio, fwd.p_visual, fwd.trunk.fused_audio, fwd.trunk.fused_visual,
            params.mmil,
        )
        targets = np.stack([samples[i].labels.video_union() for i in idx]).astype(np.float64)
        return parsing_loss(pooled, targets, train_config.label_smoothing)
    fwd = forward_localization(params, model_config, audio, visual, rng=rng, train_mode=True)
    onehot = np.stack([video_onehot(samples[i].labels) for i in idx])
    rel = np.stack([relevance_targets(samples[i].labels) for i in idx])
    return localization_loss(
        fwd.video_dist, fwd.relevance, onehot, rel, train_config.supervision
    )


def _validation_metrics(
    params: ModelParams,
    model_config: ModelConfig,
    train_config: TrainConfig,
    val: list[VideoSample],
) -> str:
    from .metrics import localization_accuracy, parsing_report

    if train_config.task == "parsing":
        preds = predict_parsing(params, model_config, val)
        report = parsing_report([(p, s.labels) for p, s in zip(preds, val)])
        return (
            f" val_segment_type_at_av={report.segment['type_at_av']:.6f}"
            f" val_event_type_at_av={report.event['type_at_av']:.6f}"
        )
    preds = predict_localization(
        params, model_config, val, train_config.relevance_threshold
    )
    acc = localization_accuracy([(p, s.labels) for p, s in zip(preds, val)])
    return f" val_accuracy={acc:.4f}"


def train(
    train_samples: list[VideoSample],
    model_config: ModelConfig,
    train_config: TrainConfig,
    val_samples: list[VideoSample] | None = None,
    params: ModelParams | None = None,
) -> TrainResult:
    """Optimize the model; deterministic given the config seed.

    Emits one structured log line per epoch (no wall-clock content, so two
    runs with one seed produce byte-identical logs). Raises
    TrainingDiverged as soon as a loss stops being finite.
    """
    if not train_samples:
        raise ValueError("training set is empty")
    if params is None:
        params = init_model(
            np.random.default_rng(np.random.SeedSequence([train_config.seed, 1])),
            model_config,
        )
    rng = np.random.default_rng(np.random.SeedSequence([train_config.seed, 2]))
    optimizer = Adam(params.tensors())
    log: list[str] = []
    last_loss = float("nan")
    for epoch in range(train_config.epochs):
        lr = learning_rate_at(train_config, epoch)
        order = rng.permutation(len(train_samples))
        total, seen = 0.0, 0
        for idx in _batches(order, train_samples, train_config.batch_size):
            loss = _batch_loss(params, model_config, train_config, train_samples, idx, rng)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch} (batch of {len(idx)})"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step(lr)
            total += value * len(idx)
            seen += len(idx)
        last_loss = total / seen
        line = f"epoch={epoch} lr={lr:.10g} loss={last_loss:.8f}"
        if val_samples:
            line += _validation_metrics(params, model_config, train_config, val_samples)
        log.append(line)
    return TrainResult(params=params, log_lines=log, final_loss=last_loss)
