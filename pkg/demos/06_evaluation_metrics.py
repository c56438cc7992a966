"""Evaluation metrics: segment F1, event matching at IoU 0.5, the aggregates.

Events are maximal runs of positive segments per class and track. A
predicted event counts only when it overlaps a same-class gold event at
IoU >= 0.5, matched one to one. Run: python demos/06_evaluation_metrics.py
"""

import numpy as np

from avpyramid import ave_accuracy, event_f1, extract_events, segment_f1
from avpyramid.metrics import EventInterval, MatchCounts, aggregate_event_av, aggregate_type_av, match_events

# Runs of positives become half-open intervals.
track = np.array([[0], [1], [1], [0], [1]])
events = extract_events(track, "audio")
print("events from [0,1,1,0,1]:", [(e.start, e.end) for e in events])

# IoU matching is strict at the half mark: predicting 2 of 5 gold segments
# gives IoU 0.4 and no match at all.
gold = [EventInterval(0, 0, 5, "audio")]
print("pred [0,2) vs gold [0,5): F =", event_f1([EventInterval(0, 0, 2, "audio")], gold))
print("pred [0,3) vs gold [0,5): F =", event_f1([EventInterval(0, 0, 3, "audio")], gold))

# One of two gold events found: precision 1, recall 1/2, F = 2/3.
two_gold = [EventInterval(0, 0, 4, "audio"), EventInterval(0, 6, 8, "audio")]
print("partial recall F:", round(event_f1([EventInterval(0, 0, 4, "audio")], two_gold), 4))

# Segment-level F is micro-averaged over every (segment, class) decision.
pred = np.array([[1, 0], [1, 1], [0, 0]])
gold_mat = np.array([[1, 0], [0, 1], [0, 1]])
print("segment F1:", round(segment_f1(pred, gold_mat), 4))

# The two aggregates: Type@AV averages the three per-track F scores;
# Event@AV pools raw counts first and computes one F.
per_type_f = {"audio": 0.6, "visual": 0.5, "audio_visual": 0.4}
print("Type@AV of (0.6, 0.5, 0.4):", aggregate_type_av(per_type_f))
counts = {
    "audio": MatchCounts(2, 1, 0),
    "visual": MatchCounts(0, 0, 1),
    "audio_visual": MatchCounts(0, 0, 0),
}
print("Event@AV of pooled (tp=2, fp=1, fn=1):", round(aggregate_event_av(counts), 4))

# Matching is order independent: shuffling inputs cannot change the counts.
rng = np.random.default_rng(0)
preds = [EventInterval(int(c), s, s + w, "audio") for c, s, w in rng.integers(1, 4, (5, 3))]
golds = [EventInterval(int(c), s, s + w, "audio") for c, s, w in rng.integers(1, 4, (5, 3))]
a = match_events(preds, golds)
b = match_events(preds[::-1], golds[::-1])
print("order independent:", (a.tp, a.fp, a.fn) == (b.tp, b.fp, b.fn))

# Localization is scored by plain segment accuracy, background included.
print("accuracy:", ave_accuracy(np.array([0, 0, 1, 1]), np.array([0, 0, 1, 2])), "%")
