"""Feature and label containers, on-disk formats, and synthetic datasets.

Feature files are a 16-byte header (magic ``MMPF``, version, segment count,
feature dim, all little-endian u32 after the magic) followed by row-major
float32 values, with a ``key=value`` UTF-8 sidecar at ``<path>.meta`` naming
the video and modality. Label files are UTF-8 ``key=value`` records, one per
video, separated by blank lines; prediction files reuse the same syntax with
``kind=predictions``, which relaxes the requirement that the audio-visual
track equal the AND of the uni-modal tracks.

The synthetic generator plants class-specific additive directions into a
noise floor over exactly the labeled intervals, so window size genuinely
matters for short events and a linear probe can separate classes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"MMPF"
FORMAT_VERSION = 1
AUDIO = "audio"
VISUAL = "visual"
MODALITIES = (AUDIO, VISUAL)
EVENT_TRACKS = (AUDIO, VISUAL, "audio_visual")


class DataFormatError(ValueError):
    """A file does not conform to the expected binary or text layout."""


class LabelValidationError(ValueError):
    """Label content violates a structural invariant."""


class PackingError(ValueError):
    """Requested events cannot be placed into the available segments."""


# ---------------------------------------------------------------------------
# Core containers
# ---------------------------------------------------------------------------


@dataclass
class FeatureSequence:
    """Per-modality features for one video: N segments by D dims."""

    modality: str
    values: np.ndarray  # (N, D) float32
    video_id: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality: {self.modality}")
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError(f"features must be (N>=1, D>=1), got {self.values.shape}")
        if not np.isfinite(self.values).all():
            t = int(np.argwhere(~np.isfinite(self.values).all(axis=1))[0, 0])
            raise DataFormatError(
                f"non-finite feature values in segment {t} of {self.video_id}"
            )

    @property
    def num_segments(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class LabelSet:
    """Ground-truth labels for one video, either task.

    Localization uses 0-based class indices with the last index reserved for
    background; parsing uses binary per-class matrices with no background
    class. The audio-visual track is always the AND of the uni-modal tracks.
    """

    task: str  # "localization" | "parsing"
    video_id: str
    num_classes: int
    num_segments: int
    # localization
    video_class: int | None = None
    segment_classes: np.ndarray | None = None  # (N,) int
    # parsing
    video_audio: np.ndarray | None = None  # (C,) int8
    video_visual: np.ndarray | None = None  # (C,) int8
    audio: np.ndarray | None = None  # (N, C) int8
    visual: np.ndarray | None = None  # (N, C) int8

    def __post_init__(self):
        for name in ("segment_classes", "video_audio", "video_visual", "audio", "visual"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=np.int64 if name == "segment_classes" else np.int8))
        self.validate()

    @property
    def background_class(self) -> int:
        if self.task != "localization":
            raise ValueError("background class only exists for localization")
        return self.num_classes - 1

    @property
    def audio_visual(self) -> np.ndarray | None:
        """Derived AND of the two modality matrices."""
        if self.audio is None or self.visual is None:
            return None
        return (self.audio & self.visual).astype(np.int8)

    def video_union(self) -> np.ndarray:
        """Video-level presence over classes regardless of modality (weak target)."""
        if self.task == "parsing":
            return (self.video_audio | self.video_visual).astype(np.int8)
        onehot = np.zeros(self.num_classes, dtype=np.int8)
        onehot[self.video_class] = 1
        return onehot

    def validate(self) -> None:
        c, n = self.num_classes, self.num_segments
        if c < 1 or n < 1:
            raise LabelValidationError("num_classes and num_segments must be >= 1")
        if self.task == "localization":
            if self.video_class is None:
                raise LabelValidationError("localization labels need video_class")
            if not 0 <= self.video_class < c:
                raise LabelValidationError(f"video_class {self.video_class} outside [0, {c})")
            if self.segment_classes is not None:
                if self.segment_classes.shape != (n,):
                    raise LabelValidationError("segment_classes must have one entry per segment")
                if ((self.segment_classes < 0) | (self.segment_classes >= c)).any():
                    raise LabelValidationError("segment class index out of range")
                present = set(int(x) for x in self.segment_classes) - {self.background_class}
                if len(present) > 1:
                    raise LabelValidationError("more than one event class in one video")
                expect = present.pop() if present else self.background_class
                if expect != self.video_class:
                    raise LabelValidationError(
                        f"video_class {self.video_class} disagrees with segments ({expect})"
                    )
        elif self.task == "parsing":
            if self.video_audio is None or self.video_visual is None:
                raise LabelValidationError("parsing labels need per-modality video vectors")
            for name, v in (("video_audio", self.video_audio), ("video_visual", self.video_visual)):
                if v.shape != (c,):
                    raise LabelValidationError(f"{name} must have {c} entries")
                if ((v != 0) & (v != 1)).any():
                    raise LabelValidationError(f"{name} must be binary")
            for name, mat, vid in (
                ("audio", self.audio, self.video_audio),
                ("visual", self.visual, self.video_visual),
            ):
                if mat is None:
                    continue
                if mat.shape != (n, c):
                    raise LabelValidationError(f"{name} matrix must be ({n}, {c})")
                if ((mat != 0) & (mat != 1)).any():
                    raise LabelValidationError(f"{name} matrix must be binary")
                if not np.array_equal(mat.any(axis=0).astype(np.int8), vid):
                    raise LabelValidationError(
                        f"video-level {name} labels disagree with segment labels"
                    )
        else:
            raise LabelValidationError(f"unknown task: {self.task}")


@dataclass
class PredictionRecord:
    """Binary per-segment decisions in the same shape as labels.

    Unlike a LabelSet, a parsing prediction carries an explicit audio-visual
    track: thresholding the product of probabilities is not the AND of the
    thresholded tracks.
    """

    task: str
    video_id: str
    num_classes: int
    num_segments: int
    segment_classes: np.ndarray | None = None  # localization
    audio: np.ndarray | None = None  # (N, C) int8
    visual: np.ndarray | None = None
    audio_visual: np.ndarray | None = None

    def track(self, name: str) -> np.ndarray:
        out = getattr(self, name)
        if out is None:
            raise ValueError(f"prediction record has no {name} track")
        return out


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a seeded synthetic dataset with planted events."""

    seed: int
    num_videos: int
    num_segments: int
    feature_dim: int
    num_classes: int
    event_length_distribution: tuple[tuple[int, int, float], ...] = ((1, 3, 0.5), (4, 10, 0.5))
    noise_std: float = 1.0
    events_per_video: tuple[int, int] = (1, 2)
    task: str = "parsing"
    # relative frequency of audio-only, visual-only, audio-visual events
    modality_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.num_videos < 1 or self.num_segments < 1 or self.feature_dim < 1:
            raise ValueError("num_videos, num_segments, feature_dim must be >= 1")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not self.event_length_distribution:
            raise ValueError("event_length_distribution must not be empty")
        for lo, hi, w in self.event_length_distribution:
            if not 1 <= lo <= hi <= self.num_segments:
                raise ValueError(f"event length bucket ({lo}, {hi}) outside [1, {self.num_segments}]")
            if w < 0:
                raise ValueError("bucket weights must be >= 0")
        if sum(w for _, _, w in self.event_length_distribution) <= 0:
            raise ValueError("bucket weights must not all be zero")
        lo, hi = self.events_per_video
        if not 0 <= lo <= hi:
            raise ValueError("events_per_video must be a nondecreasing range")
        if self.task not in ("parsing", "localization"):
            raise ValueError(f"unknown task: {self.task}")
        if len(self.modality_weights) != 3 or any(w < 0 for w in self.modality_weights):
            raise ValueError("modality_weights must be three nonnegative numbers")
        if sum(self.modality_weights) <= 0:
            raise ValueError("modality_weights must not all be zero")
        if self.task == "localization":
            if self.events_per_video != (1, 1):
                raise ValueError("localization datasets carry exactly one event per video")
            if self.num_classes < 2:
                raise ValueError("localization needs at least one event class plus background")


@dataclass
class VideoSample:
    """One video: paired feature sequences plus its labels."""

    audio: FeatureSequence
    visual: FeatureSequence
    labels: LabelSet

    def __post_init__(self):
        if self.audio.num_segments != self.visual.num_segments:
            raise ValueError(
                f"paired sequences disagree on segment count for {self.labels.video_id}: "
                f"{self.audio.num_segments} vs {self.visual.num_segments}"
            )


# ---------------------------------------------------------------------------
# Feature file format
# ---------------------------------------------------------------------------


def save_feature_file(path: str | Path, seq: FeatureSequence) -> None:
    path = Path(path)
    n, d = seq.values.shape
    header = MAGIC + np.array([FORMAT_VERSION, n, d], dtype="<u4").tobytes()
    payload = np.ascontiguousarray(seq.values, dtype="<f4").tobytes()
    path.write_bytes(header + payload)
    sidecar = f"video_id={seq.video_id}\nmodality={seq.modality}\n"
    Path(str(path) + ".meta").write_text(sidecar, encoding="utf-8")


def load_feature_file(path: str | Path) -> FeatureSequence:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"missing feature file: {path}")
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise DataFormatError(f"bad header magic in {path}")
    version, n, d = np.frombuffer(raw[4:16], dtype="<u4")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"unsupported format version {version} in {path}")
    expected = 16 + 4 * int(n) * int(d)
    if len(raw) != expected:
        raise DataFormatError(
            f"payload size mismatch in {path}: header implies {expected} bytes, found {len(raw)}"
        )
    values = np.frombuffer(raw[16:], dtype="<f4").reshape(int(n), int(d))
    meta_path = Path(str(path) + ".meta")
    if not meta_path.exists():
        raise DataFormatError(f"missing sidecar: {meta_path}")
    meta = {}
    for line in meta_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    for key in ("video_id", "modality"):
        if key not in meta:
            raise DataFormatError(f"sidecar {meta_path} missing {key}")
    if not np.isfinite(values).all():
        bad = int(np.argwhere(~np.isfinite(values).all(axis=1))[0, 0])
        raise DataFormatError(f"non-finite values in segment {bad} of {path}")
    return FeatureSequence(modality=meta["modality"], values=values.copy(), video_id=meta["video_id"])


# ---------------------------------------------------------------------------
# Label / prediction text format
# ---------------------------------------------------------------------------


def _bits_to_str(bits: np.ndarray) -> str:
    return "".join("1" if b else "0" for b in bits)


def _matrix_to_str(mat: np.ndarray) -> str:
    return ",".join(_bits_to_str(row) for row in mat)


def _str_to_matrix(text: str, n: int, c: int, what: str) -> np.ndarray:
    rows = text.split(",")
    if len(rows) != n:
        raise DataFormatError(f"{what}: expected {n} rows, found {len(rows)}")
    out = np.zeros((n, c), dtype=np.int8)
    for i, row in enumerate(rows):
        if len(row) != c or set(row) - {"0", "1"}:
            raise DataFormatError(f"{what}: row {i} is not a {c}-bit string")
        out[i] = [int(ch) for ch in row]
    return out


def _encode_record(rec: LabelSet | PredictionRecord, kind: str) -> str:
    lines = [
        f"video={rec.video_id}",
        f"kind={kind}",
        f"task={rec.task}",
        f"num_classes={rec.num_classes}",
        f"num_segments={rec.num_segments}",
    ]
    if rec.task == "localization":
        if isinstance(rec, LabelSet):
            lines.append(f"video_class={rec.video_class}")
        if rec.segment_classes is not None:
            lines.append("segment_classes=" + ",".join(str(int(x)) for x in rec.segment_classes))
    else:
        if isinstance(rec, LabelSet):
            lines.append(f"video_audio={_bits_to_str(rec.video_audio)}")
            lines.append(f"video_visual={_bits_to_str(rec.video_visual)}")
        for name in EVENT_TRACKS:
            mat = getattr(rec, name)  # audio_visual is derived on a LabelSet
            if mat is not None:
                lines.append(f"{name}={_matrix_to_str(mat)}")
    return "\n".join(lines)


def encode_labels(labels: list[LabelSet]) -> str:
    return "\n\n".join(_encode_record(l, "labels") for l in labels) + "\n"


def encode_predictions(preds: list[PredictionRecord]) -> str:
    return "\n\n".join(_encode_record(p, "predictions") for p in preds) + "\n"


def _parse_records(text: str) -> list[dict[str, str]]:
    records, current = [], {}
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("#"):
            continue
        if not line:
            if current:
                records.append(current)
                current = {}
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataFormatError(f"malformed label line: {line!r}")
        current[key.strip()] = value.strip()
    if current:
        records.append(current)
    return records


def _record_header(rec: dict[str, str]) -> tuple[str, str, int, int]:
    for key in ("video", "task", "num_classes", "num_segments"):
        if key not in rec:
            raise DataFormatError(f"label record missing {key}")
    return (
        rec["video"],
        rec["task"],
        int(rec["num_classes"]),
        int(rec["num_segments"]),
    )


def decode_labels(text: str) -> list[LabelSet]:
    """Parse a label file; enforces every LabelSet invariant, in particular
    that a stored audio_visual track equals the AND of the uni-modal tracks."""
    out = []
    for rec in _parse_records(text):
        video_id, task, c, n = _record_header(rec)
        if rec.get("kind", "labels") != "labels":
            raise DataFormatError(f"record {video_id} is not a label record")
        if task == "localization":
            if "video_class" not in rec:
                raise DataFormatError(f"{video_id}: localization record missing video_class")
            seg = None
            if "segment_classes" in rec:
                seg = np.array([int(x) for x in rec["segment_classes"].split(",")])
                if seg.shape != (n,):
                    raise DataFormatError(f"{video_id}: expected {n} segment classes")
            labels = LabelSet(
                task=task,
                video_id=video_id,
                num_classes=c,
                num_segments=n,
                video_class=int(rec["video_class"]),
                segment_classes=seg,
            )
        elif task == "parsing":
            audio = _str_to_matrix(rec["audio"], n, c, f"{video_id}/audio") if "audio" in rec else None
            visual = _str_to_matrix(rec["visual"], n, c, f"{video_id}/visual") if "visual" in rec else None
            labels = LabelSet(
                task=task,
                video_id=video_id,
                num_classes=c,
                num_segments=n,
                video_audio=np.array([int(ch) for ch in rec["video_audio"]], dtype=np.int8),
                video_visual=np.array([int(ch) for ch in rec["video_visual"]], dtype=np.int8),
                audio=audio,
                visual=visual,
            )
            if "audio_visual" in rec:
                stored = _str_to_matrix(rec["audio_visual"], n, c, f"{video_id}/audio_visual")
                derived = labels.audio_visual
                if derived is None or not np.array_equal(stored, derived):
                    raise LabelValidationError(
                        f"{video_id}: audio_visual track differs from audio AND visual"
                    )
        else:
            raise DataFormatError(f"{video_id}: unknown task {task}")
        out.append(labels)
    return out


def decode_predictions(text: str) -> list[PredictionRecord]:
    """Parse a prediction file; the audio-visual track is taken as stored."""
    out = []
    for rec in _parse_records(text):
        video_id, task, c, n = _record_header(rec)
        if task == "localization":
            if "segment_classes" not in rec:
                raise DataFormatError(f"{video_id}: prediction record missing segment_classes")
            seg = np.array([int(x) for x in rec["segment_classes"].split(",")])
            if seg.shape != (n,):
                raise DataFormatError(f"{video_id}: expected {n} segment classes")
            out.append(
                PredictionRecord(
                    task=task, video_id=video_id, num_classes=c, num_segments=n,
                    segment_classes=seg,
                )
            )
        elif task == "parsing":
            tracks = {}
            for name in EVENT_TRACKS:
                if name not in rec:
                    raise DataFormatError(f"{video_id}: prediction record missing {name}")
                tracks[name] = _str_to_matrix(rec[name], n, c, f"{video_id}/{name}")
            out.append(
                PredictionRecord(
                    task=task, video_id=video_id, num_classes=c, num_segments=n,
                    audio=tracks["audio"], visual=tracks["visual"],
                    audio_visual=tracks["audio_visual"],
                )
            )
        else:
            raise DataFormatError(f"{video_id}: unknown task {task}")
    return out


def labels_to_prediction(labels: LabelSet) -> PredictionRecord:
    """View gold labels as a prediction record (oracle evaluation path)."""
    if labels.task == "localization":
        return PredictionRecord(
            task=labels.task, video_id=labels.video_id,
            num_classes=labels.num_classes, num_segments=labels.num_segments,
            segment_classes=labels.segment_classes.copy(),
        )
    return PredictionRecord(
        task=labels.task, video_id=labels.video_id,
        num_classes=labels.num_classes, num_segments=labels.num_segments,
        audio=labels.audio.copy(), visual=labels.visual.copy(),
        audio_visual=labels.audio_visual.copy(),
    )


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------


def sample_event_length(rng: np.random.Generator, spec: SyntheticSpec) -> int:
    """Draw one event length: weighted bucket, then uniform inside it."""
    weights = np.array([w for _, _, w in spec.event_length_distribution], dtype=float)
    weights /= weights.sum()
    bucket = rng.choice(len(weights), p=weights)
    lo, hi, _ = spec.event_length_distribution[bucket]
    return int(rng.integers(lo, hi + 1))


def class_directions(spec: SyntheticSpec) -> np.ndarray:
    """Fixed per-class unit directions, derived only from the spec seed."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 7]))
    dirs = rng.standard_normal((spec.num_classes, spec.feature_dim))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


_MAX_PLACEMENT_ATTEMPTS = 200


def _place_event(
    rng: np.random.Generator,
    spec: SyntheticSpec,
    occupancy: dict[str, np.ndarray],
) -> tuple[int, list[str], int, int]:
    """Choose class, target modalities and interval for one event.

    Rejects placements that would touch an existing same-class run in a
    target modality (overlap or adjacency would merge planted events).
    """
    n = spec.num_segments
    event_classes = spec.num_classes - (1 if spec.task == "localization" else 0)
    mod_p = np.array(spec.modality_weights, dtype=float)
    mod_p /= mod_p.sum()
    for _ in range(_MAX_PLACEMENT_ATTEMPTS):
        cls = int(rng.integers(0, event_classes))
        if spec.task == "localization":
            targets = [AUDIO, VISUAL]
        else:
            targets = [[AUDIO], [VISUAL], [AUDIO, VISUAL]][int(rng.choice(3, p=mod_p))]
        length = sample_event_length(rng, spec)
        start = int(rng.integers(0, n - length + 1))
        lo = max(0, start - 1)
        hi = min(n, start + length + 1)
        if any(occupancy[m][lo:hi, cls].any() for m in targets):
            continue
        for m in targets:
            occupancy[m][start : start + length, cls] = 1
        return cls, targets, start, start + length
    raise PackingError(
        f"events_per_video {spec.events_per_video} exceeds packable capacity for "
        f"{n} segments ({_MAX_PLACEMENT_ATTEMPTS} placement attempts failed)"
    )


def generate_synthetic(spec: SyntheticSpec) -> list[VideoSample]:
    """Deterministic synthetic dataset with planted events.

    Every event adds a class-specific unit direction (amplitude 1) to the
    target modality's rows over exactly its labeled interval; audio-visual
    events touch both modalities. Background rows contain only noise.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    directions = class_directions(spec)
    n, d, c = spec.num_segments, spec.feature_dim, spec.num_classes
    samples = []
    for i in range(spec.num_videos):
        video_id = f"vid{i:05d}"
        feats = {
            m: spec.noise_std * rng.standard_normal((n, d)) for m in MODALITIES
        }
        marks = {m: np.zeros((n, c), dtype=np.int8) for m in MODALITIES}
        lo, hi = spec.events_per_video
        k = int(rng.integers(lo, hi + 1))
        for _ in range(k):
            cls, targets, start, end = _place_event(rng, spec, marks)
            for m in targets:
                feats[m][start:end] += directions[cls]
        if spec.task == "localization":
            seg = np.full(n, c - 1, dtype=np.int64)
            video_class = c - 1
            audio_marks = marks[AUDIO]
            for cls in range(c - 1):
                pos = audio_marks[:, cls].astype(bool)
                if pos.any():
                    seg[pos] = cls
                    video_class = cls
            labels = LabelSet(
                task="localization", video_id=video_id, num_classes=c,
                num_segments=n, video_class=int(video_class), segment_classes=seg,
            )
        else:
            labels = LabelSet(
                task="parsing", video_id=video_id, num_classes=c, num_segments=n,
                video_audio=marks[AUDIO].any(axis=0).astype(np.int8),
                video_visual=marks[VISUAL].any(axis=0).astype(np.int8),
                audio=marks[AUDIO], visual=marks[VISUAL],
            )
        samples.append(
            VideoSample(
                audio=FeatureSequence(AUDIO, feats[AUDIO].astype(np.float32), video_id),
                visual=FeatureSequence(VISUAL, feats[VISUAL].astype(np.float32), video_id),
                labels=labels,
            )
        )
    return samples


# ---------------------------------------------------------------------------
# Dataset directory layout
# ---------------------------------------------------------------------------


def save_dataset(samples: list[VideoSample], directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for s in samples:
        save_feature_file(directory / f"{s.labels.video_id}_audio.feat", s.audio)
        save_feature_file(directory / f"{s.labels.video_id}_visual.feat", s.visual)
    (directory / "labels.txt").write_text(
        encode_labels([s.labels for s in samples]), encoding="utf-8"
    )


def load_dataset(directory: str | Path) -> list[VideoSample]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataFormatError(f"missing feature directory: {directory}")
    labels_path = directory / "labels.txt"
    if not labels_path.exists():
        raise DataFormatError(f"missing label file: {labels_path}")
    labels = decode_labels(labels_path.read_text(encoding="utf-8"))
    samples = []
    for lab in labels:
        audio = load_feature_file(directory / f"{lab.video_id}_audio.feat")
        visual = load_feature_file(directory / f"{lab.video_id}_visual.feat")
        if audio.num_segments != lab.num_segments:
            raise DataFormatError(
                f"{lab.video_id}: features have {audio.num_segments} segments, "
                f"labels have {lab.num_segments}"
            )
        samples.append(VideoSample(audio=audio, visual=visual, labels=lab))
    return samples
