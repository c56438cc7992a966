"""Heads, losses, pooling, schedule, and the training loop contract."""

from __future__ import annotations

import numpy as np
import pytest

from avpyramid import autodiff as ad
from avpyramid.autodiff import Tensor
from avpyramid.data_io import LabelSet, SyntheticSpec, generate_synthetic
from avpyramid.model import (
    ModelConfig,
    init_model,
    segment_decisions,
)
from avpyramid.pyramid import PyramidConfig
from avpyramid.training import (
    Adam,
    MMILOutput,
    TrainConfig,
    TrainingDiverged,
    ave_head,
    binary_cross_entropy,
    learning_rate_at,
    localization_loss,
    mmil_pool,
    parsing_loss,
    smooth_labels,
    train,
)


def _np_softmax(x, axis):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def mmil_oracle(p_a, p_v, r_a, r_v, params):
    """Straight-line pooling for one video: (N, C) probs, (N, D) features."""
    joint = np.concatenate([r_a, r_v], axis=-1)
    w_time = _np_softmax(joint @ params.w_time.data + params.b_time.data, axis=0)
    la = r_a @ params.w_mod.data + params.b_mod.data
    lv = r_v @ params.w_mod.data + params.b_mod.data
    n, c = p_a.shape
    video_a = np.zeros(c)
    video_v = np.zeros(c)
    video_g = np.zeros(c)
    for cls in range(c):
        for t in range(n):
            wm = _np_softmax(np.array([la[t, cls], lv[t, cls]]), axis=0)
            video_a[cls] += w_time[t, cls] * p_a[t, cls]
            video_v[cls] += w_time[t, cls] * p_v[t, cls]
            video_g[cls] += w_time[t, cls] * (wm[0] * p_a[t, cls] + wm[1] * p_v[t, cls])
    return video_a, video_v, video_g


def _mmil_params(rng, d, c):
    from avpyramid.model import MMILParams
    from avpyramid.attention import glorot

    return MMILParams(
        w_time=glorot(rng, 2 * d, c),
        b_time=Tensor(rng.standard_normal(c), requires_grad=True),
        w_mod=glorot(rng, d, c),
        b_mod=Tensor(rng.standard_normal(c), requires_grad=True),
    )


def test_mmil_single_segment_uniform_modality_weights():
    rng = np.random.default_rng(0)
    params = _mmil_params(rng, 4, 3)
    params.w_mod.data[...] = 0.0
    params.b_mod.data[...] = 0.0
    p_a = Tensor(rng.random((1, 1, 3)))
    p_v = Tensor(rng.random((1, 1, 3)))
    r = Tensor(rng.standard_normal((1, 1, 4)))
    out = mmil_pool(p_a, p_v, r, r, params)
    np.testing.assert_allclose(
        out.video_global.data, 0.5 * (p_a.data[:, 0] + p_v.data[:, 0]), atol=1e-12
    )


def test_mmil_constant_probability_is_preserved():
    rng = np.random.default_rng(1)
    params = _mmil_params(rng, 4, 2)
    pi = 0.37
    p = Tensor(np.full((1, 5, 2), pi))
    r_a = Tensor(rng.standard_normal((1, 5, 4)))
    r_v = Tensor(rng.standard_normal((1, 5, 4)))
    out = mmil_pool(p, p, r_a, r_v, params)
    for stream in (out.video_audio, out.video_visual, out.video_global):
        np.testing.assert_allclose(stream.data, pi, atol=1e-12)


def test_mmil_matches_oracle():
    rng = np.random.default_rng(2)
    params = _mmil_params(rng, 3, 4)
    p_a = rng.random((1, 3, 4))
    p_v = rng.random((1, 3, 4))
    r_a = rng.standard_normal((1, 3, 3))
    r_v = rng.standard_normal((1, 3, 3))
    out = mmil_pool(Tensor(p_a), Tensor(p_v), Tensor(r_a), Tensor(r_v), params)
    va, vv, vg = mmil_oracle(p_a[0], p_v[0], r_a[0], r_v[0], params)
    np.testing.assert_allclose(out.video_audio.data[0], va, atol=1e-6)
    np.testing.assert_allclose(out.video_visual.data[0], vv, atol=1e-6)
    np.testing.assert_allclose(out.video_global.data[0], vg, atol=1e-6)


def test_mmil_convexity():
    rng = np.random.default_rng(3)
    params = _mmil_params(rng, 4, 3)
    p_a = rng.random((2, 6, 3))
    p_v = rng.random((2, 6, 3))
    out = mmil_pool(
        Tensor(p_a), Tensor(p_v),
        Tensor(rng.standard_normal((2, 6, 4))), Tensor(rng.standard_normal((2, 6, 4))),
        params,
    )
    lo = np.minimum(p_a, p_v).min(axis=1)
    hi = np.maximum(p_a, p_v).max(axis=1)
    assert (out.video_global.data >= lo - 1e-12).all()
    assert (out.video_global.data <= hi + 1e-12).all()
    w = out.temporal_weights.data
    np.testing.assert_allclose(w.sum(axis=-2), 1.0, atol=1e-12)
    np.testing.assert_allclose(out.modality_weights.data.sum(axis=-2), 1.0, atol=1e-12)


def test_smooth_labels():
    np.testing.assert_allclose(smooth_labels(np.array([1.0]), 0.1), [0.9])
    np.testing.assert_allclose(smooth_labels(np.array([0.0]), 0.1), [0.1])
    y = np.array([1, 0, 1, 0], dtype=float)
    np.testing.assert_array_equal(smooth_labels(y, 0.0), y)
    scores = np.array([0.9, 0.2, 0.5])
    assert np.argmax(smooth_labels(scores, 0.3)) == np.argmax(scores)
    with pytest.raises(ValueError):
        smooth_labels(y, 0.5)


def _pooled(values: np.ndarray) -> MMILOutput:
    t = Tensor(values)
    return MMILOutput(
        video_audio=t, video_visual=t, video_global=t,
        temporal_weights=Tensor(np.ones((1, 1))),
        modality_weights=Tensor(np.full((1, 2, 1), 0.5)),
    )


def test_parsing_loss_minimum_is_smoothed_entropy_floor():
    # Two classes, y = [1, 0], eps = 0.1: targets [0.9, 0.1]. The analytic
    # minimum of each BCE stream is the binary entropy of 0.9, so the total
    # floor is 3 * H(0.9) with H in nats averaged over the two classes.
    eps = 0.1
    y = np.array([[1.0, 0.0]])
    targets = smooth_labels(y, eps)
    h = -(0.9 * np.log(0.9) + 0.1 * np.log(0.1))
    floor = 3.0 * h  # mean over the two entries equals H(0.9) for each stream
    loss = parsing_loss(_pooled(targets), y, eps)
    np.testing.assert_allclose(loss.item(), floor, rtol=1e-12)
    for delta in (0.05, -0.05):
        bumped = parsing_loss(_pooled(targets + delta), y, eps)
        assert bumped.item() > loss.item()


def test_parsing_loss_zero_for_perfect_unsmoothed():
    y = np.array([[1.0, 0.0, 1.0]])
    loss = parsing_loss(_pooled(y), y, 0.0)
    assert loss.item() < 1e-6


def test_parsing_loss_nonnegative_random():
    rng = np.random.default_rng(4)
    for _ in range(20):
        y = rng.integers(0, 2, size=(2, 4)).astype(float)
        probs = rng.random((2, 4))
        assert parsing_loss(_pooled(probs), y, 0.1).item() >= 0.0


def test_bce_moving_toward_target_never_increases():
    rng = np.random.default_rng(5)
    for _ in range(50):
        t = rng.random()
        p = rng.random()
        closer = p + 0.5 * (t - p)
        far_loss = binary_cross_entropy(Tensor(np.array([p])), np.array([t])).item()
        near_loss = binary_cross_entropy(Tensor(np.array([closer])), np.array([t])).item()
        assert near_loss <= far_loss + 1e-12


def test_localization_loss_perfect_and_weak_blindness():
    onehot = np.array([[0.0, 1.0, 0.0]])
    dist = Tensor(onehot.copy())
    rel = Tensor(np.array([[1.0, 1.0, 0.0]]))
    rel_gold = np.array([[1.0, 1.0, 0.0]])
    full = localization_loss(dist, rel, onehot, rel_gold, "full")
    assert full.item() < 1e-5
    weak_a = localization_loss(dist, rel, onehot, rel_gold, "weak")
    weak_b = localization_loss(dist, rel, onehot, rel_gold[:, ::-1].copy(), "weak")
    assert weak_a.item() == weak_b.item()
    with pytest.raises(ValueError):
        localization_loss(dist, rel, onehot, rel_gold, "half")


def test_learning_rate_schedules_match_published_values():
    loc = TrainConfig.for_task("localization")
    assert learning_rate_at(loc, 49) == pytest.approx(2e-5)
    assert learning_rate_at(loc, 51) == pytest.approx(2e-6)
    par = TrainConfig.for_task("parsing")
    assert learning_rate_at(par, 9) == pytest.approx(1e-4)
    assert learning_rate_at(par, 11) == pytest.approx(2e-5)


def test_ave_head_shapes_and_rowsum():
    rng = np.random.default_rng(6)
    cfg = ModelConfig(
        audio_dim=5, visual_dim=5, num_classes=4, task="localization",
        pyramid=PyramidConfig(num_units=1, window_sizes=(1,), feature_dim=4, dropout=0.0),
    )
    params = init_model(rng, cfg)
    fused_a = Tensor(rng.standard_normal((2, 6, 4)))
    fused_v = Tensor(rng.standard_normal((2, 6, 4)))
    dist, rel = ave_head(fused_a, fused_v, params.ave)
    assert dist.shape == (2, 4)
    assert rel.shape == (2, 6)
    np.testing.assert_allclose(dist.data.sum(axis=-1), 1.0, atol=1e-12)
    assert ((rel.data > 0) & (rel.data < 1)).all()


def test_segment_decision_rule():
    dist = np.array([0.05, 0.1, 0.7, 0.15])  # class 2 wins, background = 3
    relevance = np.array([0, 0, 1, 1, 1, 1, 1, 1, 0, 0], dtype=float)
    seg = segment_decisions(dist, relevance, 0.5, 4)
    np.testing.assert_array_equal(seg, [3, 3, 2, 2, 2, 2, 2, 2, 3, 3])
    all_bg = segment_decisions(dist, np.full(10, 0.2), 0.5, 4)
    np.testing.assert_array_equal(all_bg, np.full(10, 3))


def test_adam_minimizes_quadratic():
    x = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    opt = Adam([("x", x)])
    for _ in range(400):
        loss = ad.tsum(ad.mul(x, x))
        opt.zero_grad()
        loss.backward()
        opt.step(0.05)
    assert np.abs(x.data).max() < 1e-2


def _tiny_dataset(task="parsing", n_videos=8, seed=0):
    return generate_synthetic(
        SyntheticSpec(
            seed=seed, num_videos=n_videos, num_segments=6, feature_dim=5,
            num_classes=3 if task == "parsing" else 4,
            event_length_distribution=((1, 2, 0.5), (3, 5, 0.5)),
            noise_std=0.3,
            events_per_video=(1, 1) if task == "localization" else (1, 2),
            task=task,
        )
    )


def _tiny_model_config(task="parsing"):
    return ModelConfig(
        audio_dim=5, visual_dim=5, num_classes=3 if task == "parsing" else 4,
        task=task,
        pyramid=PyramidConfig(num_units=2, window_sizes=(1, 2), feature_dim=6, dropout=0.1),
    )


def test_segment_probabilities_and_threshold_agree_with_predict():
    from avpyramid.model import predict_parsing, predict_segment_probabilities

    data = _tiny_dataset(n_videos=3)
    cfg = _tiny_model_config()
    params = init_model(np.random.default_rng(2), cfg)
    probs = predict_segment_probabilities(params, cfg, data)
    preds = predict_parsing(params, cfg, data, threshold=0.5)
    for pr, rec, sample in zip(probs, preds, data):
        assert pr.video_id == sample.labels.video_id
        for track in (pr.audio, pr.visual, pr.audio_visual):
            assert track.min() >= 0.0 and track.max() <= 1.0
        np.testing.assert_allclose(pr.audio_visual, pr.audio * pr.visual, atol=1e-12)
        np.testing.assert_array_equal(rec.audio, (pr.audio >= 0.5).astype(np.int8))
        np.testing.assert_array_equal(
            rec.audio_visual, (pr.audio_visual >= 0.5).astype(np.int8)
        )


def test_train_deterministic_same_seed():
    data = _tiny_dataset()
    cfg = TrainConfig(task="parsing", epochs=3, batch_size=4, seed=7)
    r1 = train(data, _tiny_model_config(), cfg, val_samples=data[:2])
    r2 = train(data, _tiny_model_config(), cfg, val_samples=data[:2])
    assert r1.log_lines == r2.log_lines
    for (n1, t1), (n2, t2) in zip(r1.params.tensors(), r2.params.tensors()):
        assert n1 == n2
        np.testing.assert_array_equal(t1.data, t2.data)


def test_train_log_format_and_schedule_recorded():
    data = _tiny_dataset()
    cfg = TrainConfig(
        task="parsing", epochs=4, batch_size=4, seed=1,
        learning_rate=1e-3, decay_epoch=2, decay_factor=5.0,
    )
    result = train(data, _tiny_model_config(), cfg)
    assert len(result.log_lines) == 4
    lrs = [float(line.split("lr=")[1].split()[0]) for line in result.log_lines]
    assert lrs == [1e-3, 1e-3, 2e-4, 2e-4]
    assert np.isfinite(result.final_loss)


def test_train_localization_runs_and_improves():
    data = _tiny_dataset(task="localization", n_videos=12, seed=3)
    cfg = TrainConfig(
        task="localization", supervision="full", epochs=8, batch_size=4,
        seed=2, learning_rate=3e-3, decay_epoch=100, decay_factor=10.0,
    )
    result = train(data, _tiny_model_config("localization"), cfg)
    first = float(result.log_lines[0].split("loss=")[1].split()[0])
    last = float(result.log_lines[-1].split("loss=")[1].split()[0])
    assert last < first


def test_train_divergence_aborts_with_diagnostic():
    data = _tiny_dataset()
    data[0].audio.values[0, 0] = np.nan  # poisoned after validation
    cfg = TrainConfig(task="parsing", epochs=1, batch_size=8, seed=0)
    with pytest.raises(TrainingDiverged, match="epoch 0"):
        train(data, _tiny_model_config(), cfg)


def test_every_parameter_receives_gradient_across_both_losses():
    data = _tiny_dataset()
    model_cfg = _tiny_model_config()
    params = init_model(np.random.default_rng(0), model_cfg)
    from avpyramid.model import forward_localization, forward_parsing
    from avpyramid.training import video_onehot

    audio = Tensor(np.stack([s.audio.values.astype(np.float64) for s in data]))
    visual = Tensor(np.stack([s.visual.values.astype(np.float64) for s in data]))
    fwd_p = forward_parsing(params, model_cfg, audio, visual)
    pooled = mmil_pool(
        fwd_p.p_audio, fwd_p.p_visual,
        fwd_p.trunk.fused_audio, fwd_p.trunk.fused_visual, params.mmil,
    )
    weak = np.stack([s.labels.video_union() for s in data]).astype(np.float64)
    fwd_l = forward_localization(params, model_cfg, audio, visual)
    onehot = np.zeros((len(data), model_cfg.num_classes))
    onehot[:, 0] = 1.0
    rel = np.zeros((len(data), data[0].audio.num_segments))
    total = parsing_loss(pooled, weak, 0.1) + localization_loss(
        fwd_l.video_dist, fwd_l.relevance, onehot, rel, "full"
    )
    total.backward()
    for name, t in params.tensors():
        assert t.grad is not None, name
        assert np.isfinite(t.grad).all(), name
