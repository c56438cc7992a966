"""Evaluation metrics for both tasks.

Localization is scored by overall segment accuracy. Parsing is scored by
micro-averaged segment F1 and by event F1 per track (audio, visual,
audio-visual), where maximal runs of positive segments become events and a
prediction matches a gold event of the same class and track at temporal
IoU >= 0.5, one-to-one. Type@AV averages the three per-track F scores;
Event@AV pools the raw counts across tracks before computing one F.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_io import EVENT_TRACKS, LabelSet, PredictionRecord

IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class EventInterval:
    """Half-open run of positive segments for one class on one track."""

    cls: int
    start: int
    end: int
    modality: str

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad interval [{self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass
class MatchCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def f_score(self) -> float:
        if self.tp == 0 and self.fp == 0 and self.fn == 0:
            return 1.0  # nothing to detect, nothing detected
        return 2.0 * self.tp / (2.0 * self.tp + self.fp + self.fn)


def ave_accuracy(pred: np.ndarray, gold: np.ndarray) -> float:
    """Percentage of segments whose class matches; background counts too."""
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    if pred.shape != gold.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gold.shape}")
    return float((pred == gold).mean() * 100.0)


def extract_events(binary: np.ndarray, modality: str) -> list[EventInterval]:
    """Maximal runs of consecutive positives, per class, ordered (class, start)."""
    binary = np.asarray(binary)
    if binary.ndim != 2:
        raise ValueError("expected an (N, C) binary matrix")
    if ((binary != 0) & (binary != 1)).any():
        raise ValueError("expected binary input; threshold probabilities first")
    n, c = binary.shape
    events = []
    for cls in range(c):
        col = binary[:, cls]
        t = 0
        while t < n:
            if col[t]:
                start = t
                while t < n and col[t]:
                    t += 1
                events.append(EventInterval(cls, start, t, modality))
            else:
                t += 1
    return events


def events_to_matrix(events: list[EventInterval], n: int, c: int) -> np.ndarray:
    out = np.zeros((n, c), dtype=np.int8)
    for ev in events:
        out[ev.start : ev.end, ev.cls] = 1
    return out


def interval_iou(a: EventInterval, b: EventInterval) -> float:
    inter = max(0, min(a.end, b.end) - max(a.start, b.start))
    union = a.length + b.length - inter
    return inter / union


def match_events(
    preds: list[EventInterval],
    golds: list[EventInterval],
    iou_threshold: float = IOU_THRESHOLD,
) -> MatchCounts:
    """One-to-one greedy matching.

    Predictions are processed in ascending start order; each takes the
    still-unmatched gold event of the same class and track with the highest
    IoU at or above the threshold (ties broken by earlier gold start). The
    result is independent of input list order.
    """
    golds_sorted = sorted(golds, key=lambda e: (e.modality, e.cls, e.start, e.end))
    matched = [False] * len(golds_sorted)
    tp = 0
    for p in sorted(preds, key=lambda e: (e.start, e.end, e.modality, e.cls)):
        best = -1
        best_iou = 0.0
        for j, g in enumerate(golds_sorted):
            if matched[j] or g.cls != p.cls or g.modality != p.modality:
                continue
            iou = interval_iou(p, g)
            if iou >= iou_threshold and iou > best_iou:
                best, best_iou = j, iou
        if best >= 0:
            matched[best] = True
            tp += 1
    return MatchCounts(tp=tp, fp=len(preds) - tp, fn=len(golds) - tp)


def segment_counts(pred: np.ndarray, gold: np.ndarray) -> MatchCounts:
    pred = np.asarray(pred).astype(bool)
    gold = np.asarray(gold).astype(bool)
    if pred.shape != gold.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gold.shape}")
    return MatchCounts(
        tp=int((pred & gold).sum()),
        fp=int((pred & ~gold).sum()),
        fn=int((~pred & gold).sum()),
    )


def segment_f1(pred: np.ndarray, gold: np.ndarray) -> float:
    """Micro F1 over all (segment, class) decisions."""
    return segment_counts(pred, gold).f_score()


def event_f1(
    preds: list[EventInterval],
    golds: list[EventInterval],
    iou_threshold: float = IOU_THRESHOLD,
) -> float:
    return match_events(preds, golds, iou_threshold).f_score()


def aggregate_type_av(per_type_f: dict[str, float]) -> float:
    """Unweighted mean of the three per-track F scores."""
    missing = set(EVENT_TRACKS) - set(per_type_f)
    if missing:
        raise ValueError(f"missing per-type F values: {sorted(missing)}")
    return float(np.mean([per_type_f[t] for t in EVENT_TRACKS]))


def aggregate_event_av(per_type_counts: dict[str, MatchCounts]) -> float:
    """Pool raw counts across the three tracks, then compute one F."""
    missing = set(EVENT_TRACKS) - set(per_type_counts)
    if missing:
        raise ValueError(f"missing per-type counts: {sorted(missing)}")
    total = MatchCounts()
    for t in EVENT_TRACKS:
        total = total + per_type_counts[t]
    return total.f_score()


@dataclass
class FScoreReport:
    """Segment- and event-level F per track plus the two aggregates."""

    segment: dict[str, float]
    event: dict[str, float]

    KEYS = (*EVENT_TRACKS, "type_at_av", "event_at_av")

    def __post_init__(self):
        for level in (self.segment, self.event):
            for key in self.KEYS:
                if key not in level:
                    raise ValueError(f"report missing {key}")
                if not 0.0 <= level[key] <= 1.0:
                    raise ValueError(f"F value for {key} outside [0, 1]")

    def to_text(self) -> str:
        lines = []
        for level_name, level in (("segment", self.segment), ("event", self.event)):
            for key in self.KEYS:
                lines.append(f"{level_name}.{key}={level[key]:.6f}")
        return "\n".join(lines) + "\n"


def _gold_tracks(labels: LabelSet) -> dict[str, np.ndarray]:
    if labels.audio is None or labels.visual is None:
        raise ValueError(f"{labels.video_id}: parsing evaluation needs segment labels")
    return {
        "audio": labels.audio,
        "visual": labels.visual,
        "audio_visual": labels.audio_visual,
    }


def parsing_report(
    pairs: list[tuple[PredictionRecord, LabelSet]],
    iou_threshold: float = IOU_THRESHOLD,
) -> FScoreReport:
    """Micro-average over the whole collection, per track, both levels."""
    seg_counts = {t: MatchCounts() for t in EVENT_TRACKS}
    evt_counts = {t: MatchCounts() for t in EVENT_TRACKS}
    for pred, gold in pairs:
        if pred.video_id != gold.video_id:
            raise ValueError(f"prediction/gold mismatch: {pred.video_id} vs {gold.video_id}")
        gold_tracks = _gold_tracks(gold)
        for track in EVENT_TRACKS:
            p = pred.track(track)
            g = gold_tracks[track]
            seg_counts[track] = seg_counts[track] + segment_counts(p, g)
            evt_counts[track] = evt_counts[track] + match_events(
                extract_events(p, track), extract_events(g, track), iou_threshold
            )
    segment = {t: seg_counts[t].f_score() for t in EVENT_TRACKS}
    event = {t: evt_counts[t].f_score() for t in EVENT_TRACKS}
    segment["type_at_av"] = aggregate_type_av(segment)
    segment["event_at_av"] = aggregate_event_av(seg_counts)
    event["type_at_av"] = aggregate_type_av(event)
    event["event_at_av"] = aggregate_event_av(evt_counts)
    return FScoreReport(segment=segment, event=event)


def localization_accuracy(
    pairs: list[tuple[PredictionRecord, LabelSet]]
) -> float:
    """Overall accuracy pooled over every segment of every video."""
    match = 0
    total = 0
    for pred, gold in pairs:
        if gold.segment_classes is None:
            raise ValueError(f"{gold.video_id}: localization evaluation needs segment labels")
        p = np.asarray(pred.segment_classes)
        g = gold.segment_classes
        if p.shape != g.shape:
            raise ValueError(f"{gold.video_id}: length mismatch")
        match += int((p == g).sum())
        total += g.size
    return 100.0 * match / total
