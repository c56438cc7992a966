"""File formats, label invariants, and the synthetic generator."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avpyramid.data_io import (
    DataFormatError,
    FeatureSequence,
    LabelSet,
    LabelValidationError,
    PackingError,
    SyntheticSpec,
    decode_labels,
    decode_predictions,
    encode_labels,
    encode_predictions,
    generate_synthetic,
    labels_to_prediction,
    load_dataset,
    load_feature_file,
    sample_event_length,
    save_dataset,
    save_feature_file,
)


# -- feature files ----------------------------------------------------------


def test_feature_file_round_trip_shape(tmp_path):
    rng = np.random.default_rng(0)
    seq = FeatureSequence("audio", rng.standard_normal((10, 128)).astype(np.float32), "vid0")
    path = tmp_path / "vid0_audio.feat"
    save_feature_file(path, seq)
    loaded = load_feature_file(path)
    assert loaded.values.shape == (10, 128)
    assert loaded.modality == "audio"
    assert loaded.video_id == "vid0"


def test_feature_file_bitwise_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    values = rng.standard_normal((3, 4)).astype(np.float32)
    path = tmp_path / "x.feat"
    save_feature_file(path, FeatureSequence("visual", values, "v"))
    loaded = load_feature_file(path)
    assert loaded.values.tobytes() == values.tobytes()


def test_feature_file_missing(tmp_path):
    with pytest.raises(DataFormatError, match="missing"):
        load_feature_file(tmp_path / "nope.feat")


def test_feature_file_truncated_payload(tmp_path):
    rng = np.random.default_rng(2)
    path = tmp_path / "short.feat"
    save_feature_file(path, FeatureSequence("audio", rng.standard_normal((2, 3)).astype(np.float32), "v"))
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])  # drop one float
    with pytest.raises(DataFormatError, match="payload size mismatch"):
        load_feature_file(path)


def test_feature_file_bad_magic(tmp_path):
    path = tmp_path / "bad.feat"
    path.write_bytes(b"XXXX" + b"\x00" * 12)
    with pytest.raises(DataFormatError, match="magic"):
        load_feature_file(path)


def test_feature_file_non_finite_names_segment(tmp_path):
    values = np.ones((4, 2), dtype=np.float32)
    values[2, 1] = np.nan
    path = tmp_path / "nan.feat"
    header = b"MMPF" + np.array([1, 4, 2], dtype="<u4").tobytes()
    path.write_bytes(header + values.tobytes())
    (tmp_path / "nan.feat.meta").write_text("video_id=v\nmodality=audio\n")
    with pytest.raises(DataFormatError, match="segment 2"):
        load_feature_file(path)


def test_feature_sequence_rejects_empty():
    with pytest.raises(ValueError):
        FeatureSequence("audio", np.zeros((0, 4), dtype=np.float32), "v")


# -- label sets and their invariants ----------------------------------------


def _parsing_labels(video_id="v0") -> LabelSet:
    audio = np.array([[0, 1], [0, 1], [0, 0]], dtype=np.int8)
    visual = np.array([[1, 1], [0, 0], [0, 0]], dtype=np.int8)
    return LabelSet(
        task="parsing", video_id=video_id, num_classes=2, num_segments=3,
        video_audio=audio.any(axis=0).astype(np.int8),
        video_visual=visual.any(axis=0).astype(np.int8),
        audio=audio, visual=visual,
    )


def test_audio_visual_is_conjunction():
    lab = _parsing_labels()
    np.testing.assert_array_equal(lab.audio_visual, [[0, 1], [0, 0], [0, 0]])


def test_video_level_must_match_segments():
    audio = np.array([[0, 1], [0, 0]], dtype=np.int8)
    with pytest.raises(LabelValidationError):
        LabelSet(
            task="parsing", video_id="v", num_classes=2, num_segments=2,
            video_audio=np.array([0, 0], dtype=np.int8),
            video_visual=np.array([0, 0], dtype=np.int8),
            audio=audio, visual=np.zeros((2, 2), dtype=np.int8),
        )


def test_localization_single_event_class_enforced():
    with pytest.raises(LabelValidationError):
        LabelSet(
            task="localization", video_id="v", num_classes=4, num_segments=4,
            video_class=0, segment_classes=np.array([0, 1, 3, 3]),
        )
    lab = LabelSet(
        task="localization", video_id="v", num_classes=4, num_segments=4,
        video_class=1, segment_classes=np.array([3, 1, 1, 3]),
    )
    assert lab.background_class == 3
    np.testing.assert_array_equal(lab.video_union(), [0, 1, 0, 0])


def test_label_round_trip_localization_all_background():
    lab = LabelSet(
        task="localization", video_id="bg", num_classes=3, num_segments=5,
        video_class=2, segment_classes=np.full(5, 2),
    )
    back = decode_labels(encode_labels([lab]))[0]
    assert back.video_class == 2
    np.testing.assert_array_equal(back.segment_classes, lab.segment_classes)


def test_conjunction_semantics_survive_round_trip():
    audio = np.array([[1, 0]], dtype=np.int8)
    visual = np.array([[0, 0]], dtype=np.int8)
    lab = LabelSet(
        task="parsing", video_id="v", num_classes=2, num_segments=1,
        video_audio=np.array([1, 0], dtype=np.int8),
        video_visual=np.array([0, 0], dtype=np.int8),
        audio=audio, visual=visual,
    )
    back = decode_labels(encode_labels([lab]))[0]
    assert back.audio_visual[0, 0] == 0


def test_decode_rejects_inconsistent_av_track():
    lab = _parsing_labels()
    text = encode_labels([lab])
    broken = text.replace("audio_visual=01,00,00", "audio_visual=11,00,00")
    assert broken != text
    with pytest.raises(LabelValidationError, match="audio_visual"):
        decode_labels(broken)


def test_prediction_record_keeps_free_av_track():
    pred_text = "\n".join([
        "video=v", "kind=predictions", "task=parsing",
        "num_classes=2", "num_segments=2",
        "audio=11,00", "visual=11,00", "audio_visual=01,00",
    ])
    rec = decode_predictions(pred_text)[0]
    np.testing.assert_array_equal(rec.audio_visual, [[0, 1], [0, 0]])
    # The same content is rejected as ground-truth labels.
    with pytest.raises(DataFormatError):
        decode_labels(pred_text)


@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_label_round_trip_property(data):
    n = data.draw(st.integers(1, 6))
    c = data.draw(st.integers(1, 4))
    audio = np.array(
        data.draw(st.lists(st.lists(st.integers(0, 1), min_size=c, max_size=c), min_size=n, max_size=n)),
        dtype=np.int8,
    )
    visual = np.array(
        data.draw(st.lists(st.lists(st.integers(0, 1), min_size=c, max_size=c), min_size=n, max_size=n)),
        dtype=np.int8,
    )
    lab = LabelSet(
        task="parsing", video_id="v", num_classes=c, num_segments=n,
        video_audio=audio.any(axis=0).astype(np.int8),
        video_visual=visual.any(axis=0).astype(np.int8),
        audio=audio, visual=visual,
    )
    back = decode_labels(encode_labels([lab]))[0]
    np.testing.assert_array_equal(back.audio, audio)
    np.testing.assert_array_equal(back.visual, visual)
    np.testing.assert_array_equal(back.video_audio, lab.video_audio)
    np.testing.assert_array_equal(back.audio_visual, lab.audio_visual)


def test_labels_to_prediction_matches_gold():
    lab = _parsing_labels()
    rec = labels_to_prediction(lab)
    np.testing.assert_array_equal(rec.audio, lab.audio)
    np.testing.assert_array_equal(rec.audio_visual, lab.audio_visual)
    text = encode_predictions([rec])
    back = decode_predictions(text)[0]
    np.testing.assert_array_equal(back.visual, lab.visual)


# -- synthetic generation ----------------------------------------------------


def _spec(**kw) -> SyntheticSpec:
    defaults = dict(
        seed=11, num_videos=4, num_segments=10, feature_dim=8, num_classes=3,
        event_length_distribution=((1, 3, 0.5), (4, 8, 0.5)),
        noise_std=1.0, events_per_video=(1, 2), task="parsing",
    )
    defaults.update(kw)
    return SyntheticSpec(**defaults)


def test_generator_deterministic():
    a = generate_synthetic(_spec())
    b = generate_synthetic(_spec())
    for sa, sb in zip(a, b):
        assert sa.audio.values.tobytes() == sb.audio.values.tobytes()
        assert sa.visual.values.tobytes() == sb.visual.values.tobytes()
        np.testing.assert_array_equal(sa.labels.audio, sb.labels.audio)


def test_zero_noise_event_rows_differ_from_background():
    spec = _spec(num_videos=20, noise_std=0.0, events_per_video=(1, 1))
    for sample in generate_synthetic(spec):
        audio_pos = sample.labels.audio.any(axis=1)
        visual_pos = sample.labels.visual.any(axis=1)
        assert audio_pos.any() or visual_pos.any()
        for seq, pos in ((sample.audio, audio_pos), (sample.visual, visual_pos)):
            rows = np.abs(seq.values).sum(axis=1)
            np.testing.assert_allclose(rows[~pos], 0.0)
            assert (rows[pos] > 0.1).all()


def test_labels_exactly_consistent_with_planted_intervals():
    # Marked rows carry the class direction; unmarked rows are pure noise.
    spec = _spec(num_videos=10, noise_std=0.0, events_per_video=(2, 3), seed=5)
    from avpyramid.data_io import class_directions

    dirs = class_directions(spec)
    for sample in generate_synthetic(spec):
        expected = sample.labels.audio.astype(np.float64) @ dirs
        np.testing.assert_allclose(sample.audio.values, expected, atol=1e-6)


def test_video_level_is_or_of_segments():
    for sample in generate_synthetic(_spec(num_videos=30, seed=3)):
        lab = sample.labels
        np.testing.assert_array_equal(lab.video_audio, lab.audio.any(axis=0).astype(np.int8))
        np.testing.assert_array_equal(lab.video_visual, lab.visual.any(axis=0).astype(np.int8))


def test_length_histogram_matches_bucket_weights():
    spec = _spec(
        event_length_distribution=((1, 2, 0.5), (8, 10, 0.5)),
        num_segments=10,
    )
    rng = np.random.default_rng(123)
    lengths = np.array([sample_event_length(rng, spec) for _ in range(1000)])
    short = (lengths <= 2).mean()
    assert abs(short - 0.5) < 0.05
    assert set(np.unique(lengths)) <= {1, 2, 8, 9, 10}


def test_packing_error_when_capacity_exceeded():
    spec = _spec(
        num_segments=4, num_classes=1,
        event_length_distribution=((3, 4, 1.0),),
        events_per_video=(5, 5),
    )
    with pytest.raises(PackingError, match="packable capacity"):
        generate_synthetic(spec)


def test_localization_generation():
    spec = _spec(task="localization", events_per_video=(1, 1), num_classes=4, seed=9)
    for sample in generate_synthetic(spec):
        lab = sample.labels
        assert lab.task == "localization"
        assert lab.video_class != lab.background_class
        pos = lab.segment_classes != lab.background_class
        assert pos.any()
        # event written into both modalities
        assert np.abs(sample.audio.values[pos]).sum() > 0
        assert np.abs(sample.visual.values[pos]).sum() > 0


def test_spec_validation():
    with pytest.raises(ValueError):
        _spec(event_length_distribution=((0, 3, 1.0),))
    with pytest.raises(ValueError):
        _spec(event_length_distribution=((1, 20, 1.0),))
    with pytest.raises(ValueError):
        _spec(event_length_distribution=((1, 3, 0.0),))
    with pytest.raises(ValueError):
        _spec(task="localization", events_per_video=(1, 2))
    with pytest.raises(ValueError):
        _spec(noise_std=-1.0)


def test_dataset_directory_round_trip(tmp_path):
    samples = generate_synthetic(_spec(num_videos=3, seed=21))
    save_dataset(samples, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    assert len(loaded) == 3
    for a, b in zip(samples, loaded):
        assert a.audio.values.tobytes() == b.audio.values.tobytes()
        np.testing.assert_array_equal(a.labels.visual, b.labels.visual)
        assert a.labels.video_id == b.labels.video_id


def test_paired_sequences_must_share_segment_count():
    from avpyramid.data_io import VideoSample

    sample = generate_synthetic(_spec(num_videos=1))[0]
    short = FeatureSequence("visual", sample.visual.values[:-1], sample.labels.video_id)
    with pytest.raises(ValueError, match="segment count"):
        VideoSample(audio=sample.audio, visual=short, labels=sample.labels)


def test_load_dataset_missing_directory(tmp_path):
    with pytest.raises(DataFormatError, match="missing feature directory"):
        load_dataset(tmp_path / "absent")
