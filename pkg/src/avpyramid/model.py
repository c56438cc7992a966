"""Full network assembly: projection, pyramid, fusion, task heads.

The trunk maps raw per-modality features to fused per-segment vectors. Two
heads sit on top and both are always parameterized, so a single checkpoint
serves either task: per-modality segment classifiers with attentive pooling
to video level for parsing, and a video classifier plus segment relevance
scorer for localization. Checkpoints store every parameter tensor as
float32 in the same little-endian layout as feature files, preceded by a
config snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data_io import AUDIO, VISUAL, PredictionRecord, VideoSample
from .fusion import (
    FusionParams,
    LinearParams,
    fuse_pyramid_levels,
    init_fusion_params,
    init_linear_params,
    modality_head,
)
from .pyramid import (
    PyramidConfig,
    PyramidUnitParams,
    init_pyramid_params,
    pyramid_forward,
)

CHECKPOINT_MAGIC = b"AVPC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    audio_dim: int
    visual_dim: int
    num_classes: int
    task: str  # "parsing" | "localization"
    pyramid: PyramidConfig
    use_unit_attention: bool = True
    use_selective_fusion: bool = True

    def __post_init__(self):
        if self.task not in ("parsing", "localization"):
            raise ValueError(f"unknown task: {self.task}")
        if self.audio_dim < 1 or self.visual_dim < 1 or self.num_classes < 1:
            raise ValueError("dims and class count must be >= 1")


@dataclass
class MMILParams:
    """Attentive pooling: temporal weights from the joint features,
    modality weights from each modality's own features."""

    w_time: Tensor  # (2D, C)
    b_time: Tensor  # (C,)
    w_mod: Tensor  # (D, C)
    b_mod: Tensor  # (C,)

    def tensors(self) -> list[tuple[str, Tensor]]:
        return [
            ("w_time", self.w_time),
            ("b_time", self.b_time),
            ("w_mod", self.w_mod),
            ("b_mod", self.b_mod),
        ]


@dataclass
class AveHeadParams:
    classifier: LinearParams  # (2D, C) video category
    relevance: LinearParams  # (2D, 1) per-segment eventness

    def tensors(self) -> list[tuple[str, Tensor]]:
        out = [(f"classifier.{k}", t) for k, t in self.classifier.tensors()]
        out += [(f"relevance.{k}", t) for k, t in self.relevance.tensors()]
        return out


@dataclass
class ModelParams:
    proj_audio: LinearParams
    proj_visual: LinearParams
    units: list[PyramidUnitParams]
    fusion: FusionParams
    mmil: MMILParams
    ave: AveHeadParams

    def tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        out += [(f"proj_audio.{k}", t) for k, t in self.proj_audio.tensors()]
        out += [(f"proj_visual.{k}", t) for k, t in self.proj_visual.tensors()]
        for i, unit in enumerate(self.units):
            out += [(f"unit{i}.{k}", t) for k, t in unit.tensors()]
        out += [(f"fusion.{k}", t) for k, t in self.fusion.tensors()]
        out += [(f"mmil.{k}", t) for k, t in self.mmil.tensors()]
        out += [(f"ave.{k}", t) for k, t in self.ave.tensors()]
        return out

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.tensors())


def init_model(rng: np.random.Generator, config: ModelConfig) -> ModelParams:
    d = config.pyramid.feature_dim
    c = config.num_classes
    from .attention import glorot

    return ModelParams(
        proj_audio=init_linear_params(rng, config.audio_dim, d),
        proj_visual=init_linear_params(rng, config.visual_dim, d),
        units=init_pyramid_params(rng, config.pyramid),
        fusion=init_fusion_params(rng, d, c),
        mmil=MMILParams(
            w_time=glorot(rng, 2 * d, c),
            b_time=Tensor(np.zeros(c), requires_grad=True),
            w_mod=glorot(rng, d, c),
            b_mod=Tensor(np.zeros(c), requires_grad=True),
        ),
        ave=AveHeadParams(
            classifier=init_linear_params(rng, 2 * d, c),
            relevance=init_linear_params(rng, 2 * d, 1),
        ),
    )


@dataclass
class TrunkOutput:
    fused_audio: Tensor  # (..., N, D)
    fused_visual: Tensor
    level_weights_audio: Tensor  # (..., N, L)
    level_weights_visual: Tensor


def forward_trunk(
    params: ModelParams,
    config: ModelConfig,
    audio: Tensor,
    visual: Tensor,
    rng: np.random.Generator | None = None,
    train_mode: bool = False,
) -> TrunkOutput:
    if audio.shape[-1] != config.audio_dim or visual.shape[-1] != config.visual_dim:
        raise ValueError(
            f"feature dims ({audio.shape[-1]}, {visual.shape[-1]}) do not match "
            f"configured ({config.audio_dim}, {config.visual_dim})"
        )
    x_a = ad.matmul(audio, params.proj_audio.w) + params.proj_audio.b
    x_v = ad.matmul(visual, params.proj_visual.w) + params.proj_visual.b
    feats = pyramid_forward(
        x_a, x_v, config.pyramid, params.units, rng=rng, train_mode=train_mode
    )
    fused = fuse_pyramid_levels(
        feats,
        params.fusion,
        use_unit_attention=config.use_unit_attention,
        use_selective_fusion=config.use_selective_fusion,
    )
    return TrunkOutput(
        fused_audio=fused["audio"],
        fused_visual=fused["visual"],
        level_weights_audio=fused["audio_level_weights"],
        level_weights_visual=fused["visual_level_weights"],
    )


@dataclass
class ParsingForward:
    p_audio: Tensor  # (..., N, C) sigmoid probabilities
    p_visual: Tensor
    trunk: TrunkOutput


@dataclass
class LocalizationForward:
    video_dist: Tensor  # (..., C) softmax over classes incl. background
    relevance: Tensor  # (..., N) sigmoid eventness
    p_audio: Tensor  # (..., N, C) per-modality softmax tracks
    p_visual: Tensor
    trunk: TrunkOutput


def forward_parsing(
    params: ModelParams,
    config: ModelConfig,
    audio: Tensor,
    visual: Tensor,
    rng: np.random.Generator | None = None,
    train_mode: bool = False,
) -> ParsingForward:
    trunk = forward_trunk(params, config, audio, visual, rng=rng, train_mode=train_mode)
    return ParsingForward(
        p_audio=modality_head(trunk.fused_audio, params.fusion.classifier_audio, "parsing"),
        p_visual=modality_head(trunk.fused_visual, params.fusion.classifier_visual, "parsing"),
        trunk=trunk,
    )


def forward_localization(
    params: ModelParams,
    config: ModelConfig,
    audio: Tensor,
    visual: Tensor,
    rng: np.random.Generator | None = None,
    train_mode: bool = False,
) -> LocalizationForward:
    trunk = forward_trunk(params, config, audio, visual, rng=rng, train_mode=train_mode)
    from .training import ave_head  # heads live with the training module

    video_dist, relevance = ave_head(trunk.fused_audio, trunk.fused_visual, params.ave)
    return LocalizationForward(
        video_dist=video_dist,
        relevance=relevance,
        p_audio=modality_head(trunk.fused_audio, params.fusion.classifier_audio, "localization"),
        p_visual=modality_head(trunk.fused_visual, params.fusion.classifier_visual, "localization"),
        trunk=trunk,
    )


# ---------------------------------------------------------------------------
# Inference on datasets
# ---------------------------------------------------------------------------


def _batch_features(samples: list[VideoSample]) -> tuple[Tensor, Tensor]:
    audio = np.stack([s.audio.values.astype(np.float64) for s in samples])
    visual = np.stack([s.visual.values.astype(np.float64) for s in samples])
    return Tensor(audio), Tensor(visual)


@dataclass
class SegmentPredictions:
    """Per-segment class probabilities on the three tracks, one video."""

    video_id: str
    audio: np.ndarray  # (N, C)
    visual: np.ndarray
    audio_visual: np.ndarray  # product of the uni-modal tracks

    def threshold(self, value: float) -> PredictionRecord:
        n, c = self.audio.shape
        return PredictionRecord(
            task="parsing",
            video_id=self.video_id,
            num_classes=c,
            num_segments=n,
            audio=(self.audio >= value).astype(np.int8),
            visual=(self.visual >= value).astype(np.int8),
            audio_visual=(self.audio_visual >= value).astype(np.int8),
        )


def predict_segment_probabilities(
    params: ModelParams, config: ModelConfig, samples: list[VideoSample]
) -> list[SegmentPredictions]:
    from .fusion import audio_visual_conjunction

    out = []
    for sample in samples:
        audio, visual = _batch_features([sample])
        fwd = forward_parsing(params, config, audio, visual)
        p_a = fwd.p_audio.data[0]
        p_v = fwd.p_visual.data[0]
        out.append(
            SegmentPredictions(
                video_id=sample.labels.video_id,
                audio=p_a,
                visual=p_v,
                audio_visual=audio_visual_conjunction(p_a, p_v),
            )
        )
    return out


def predict_parsing(
    params: ModelParams,
    config: ModelConfig,
    samples: list[VideoSample],
    threshold: float = 0.5,
) -> list[PredictionRecord]:
    """Threshold segment probabilities into binary prediction records.

    The audio-visual track thresholds the product of the uni-modal
    probabilities, so it is not simply the AND of the other two tracks.
    """
    return [
        probs.threshold(threshold)
        for probs in predict_segment_probabilities(params, config, samples)
    ]


def segment_decisions(
    video_dist: np.ndarray,
    relevance: np.ndarray,
    threshold: float,
    num_classes: int,
) -> np.ndarray:
    """Predicted category on segments at or above the relevance threshold,
    background (the last class index) elsewhere."""
    cls = int(np.argmax(video_dist))
    return np.where(relevance >= threshold, cls, num_classes - 1).astype(np.int64)


def predict_localization(
    params: ModelParams,
    config: ModelConfig,
    samples: list[VideoSample],
    relevance_threshold: float = 0.5,
) -> list[PredictionRecord]:
    out = []
    for sample in samples:
        audio, visual = _batch_features([sample])
        fwd = forward_localization(params, config, audio, visual)
        seg = segment_decisions(
            fwd.video_dist.data[0],
            fwd.relevance.data[0],
            relevance_threshold,
            config.num_classes,
        )
        out.append(
            PredictionRecord(
                task="localization",
                video_id=sample.labels.video_id,
                num_classes=config.num_classes,
                num_segments=sample.audio.num_segments,
                segment_classes=seg,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, params: ModelParams, config_text: str) -> None:
    """Versioned container: config snapshot plus every named float32 tensor."""
    chunks = [CHECKPOINT_MAGIC, np.array([CHECKPOINT_VERSION], dtype="<u4").tobytes()]
    cfg = config_text.encode("utf-8")
    chunks.append(np.array([len(cfg)], dtype="<u4").tobytes())
    chunks.append(cfg)
    named = params.tensors()
    chunks.append(np.array([len(named)], dtype="<u4").tobytes())
    for name, tensor in named:
        encoded = name.encode("utf-8")
        chunks.append(np.array([len(encoded)], dtype="<u4").tobytes())
        chunks.append(encoded)
        shape = tensor.data.shape
        chunks.append(np.array([len(shape), *shape], dtype="<u4").tobytes())
        chunks.append(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], str]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    pos = 4
    (version,) = np.frombuffer(raw[pos : pos + 4], dtype="<u4")
    pos += 4
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (cfg_len,) = np.frombuffer(raw[pos : pos + 4], dtype="<u4")
    pos += 4
    config_text = raw[pos : pos + int(cfg_len)].decode("utf-8")
    pos += int(cfg_len)
    (count,) = np.frombuffer(raw[pos : pos + 4], dtype="<u4")
    pos += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(int(count)):
        (name_len,) = np.frombuffer(raw[pos : pos + 4], dtype="<u4")
        pos += 4
        name = raw[pos : pos + int(name_len)].decode("utf-8")
        pos += int(name_len)
        (ndim,) = np.frombuffer(raw[pos : pos + 4], dtype="<u4")
        pos += 4
        shape = tuple(
            int(x) for x in np.frombuffer(raw[pos : pos + 4 * int(ndim)], dtype="<u4")
        )
        pos += 4 * int(ndim)
        n_bytes = 4 * int(np.prod(shape)) if shape else 4
        values = np.frombuffer(raw[pos : pos + n_bytes], dtype="<f4").reshape(shape)
        pos += n_bytes
        tensors[name] = values.astype(np.float64)
    return tensors, config_text


def restore_params(config: ModelConfig, tensors: dict[str, np.ndarray]) -> ModelParams:
    """Rebuild a parameter structure and fill it with checkpoint values."""
    params = init_model(np.random.default_rng(0), config)
    named = dict(params.tensors())
    if set(named) != set(tensors):
        missing = sorted(set(named) - set(tensors))
        extra = sorted(set(tensors) - set(named))
        raise ValueError(f"checkpoint mismatch: missing {missing}, extra {extra}")
    for name, tensor in named.items():
        if tensor.data.shape != tensors[name].shape:
            raise ValueError(
                f"checkpoint tensor {name} has shape {tensors[name].shape}, "
                f"expected {tensor.data.shape}"
            )
        tensor.data = tensors[name].copy()
    return params
