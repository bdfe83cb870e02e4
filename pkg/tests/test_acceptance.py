"""
EventAttn - Acceptance Experiments
植入信号的端到端实验与大规模性质检查；训练类实验标记为 slow（pytest -m slow）
"""

import itertools
from dataclasses import replace

import numpy as np
import pytest

from attention_eval import expected_uniform_ap, grid_bin, heatmap, shooter_eval
from core_math import finite_diff_check
from detection import detect_eval, label_window, sliding_detect, window_clips, window_count, window_starts
from features import SynthConfig, TimelineEvent, synth_dataset, synth_timeline
from metrics import RankedList, average_precision, classify_eval
from model import ModelConfig, ModelMode, ModelParams, attention, backward, clip_loss, encode_clip, forward, param_shapes
from tracker import hungarian, link_tracks
from training import TrainConfig, train

from conftest import ALL_MODES

PLANTED = SynthConfig(
    num_classes=5, num_frames=24, min_players=6, max_players=6, d_app=32, d_frame=16, levels=(4, 2, 1),
    signal_strength=1.0, noise_sigma=0.1, cue_leak=0.0, active_window=(4, 20), empty_frame_prob=0.0, seed=21,
)
PLANTED_MODEL = ModelConfig(hidden_dim=16, embed_dim=16, phi_hidden=16)
PLANTED_TRAIN = TrainConfig(batch_size=8, max_steps=800, eval_every=100, base_lr=0.005, progress=False)


def _brute_assignment(costs: np.ndarray) -> float:
    rows, cols = costs.shape
    if rows > cols:
        return _brute_assignment(costs.T)
    return min(sum(costs[r, c] for r, c in enumerate(perm)) for perm in itertools.permutations(range(cols), rows))


def _brute_ap(scores, positives) -> float:
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits, total = 0, 0.0
    for rank, i in enumerate(order, start=1):
        if positives[i]:
            hits += 1
            total += hits / rank
    return total / hits


def test_hungarian_is_optimal_on_random_matrices(rng):
    for _ in range(1000):
        shape = tuple(int(v) for v in rng.integers(1, 7, size=2))
        costs = rng.integers(0, 20, size=shape).astype(float)
        assert hungarian(costs).total_cost == _brute_assignment(costs)


def test_average_precision_matches_definition(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        scores = rng.integers(0, 8, size=n).astype(float)
        positives = rng.uniform(size=n) < 0.3
        positives[rng.integers(n)] = True
        assert average_precision(RankedList(scores, positives)) == pytest.approx(_brute_ap(scores, positives),
                                                                                 rel=1e-12)


def test_attention_invariants(rng):
    for _ in range(500):
        n, d, ctx, hidden = int(rng.integers(1, 8)), 4, 3, 5
        reprs = rng.normal(size=(n, d))
        phi = {"W1": rng.normal(size=(hidden, ctx + d)), "b1": rng.normal(size=hidden),
               "W2": rng.normal(size=(1, hidden)), "b2": rng.normal(size=1)}
        h_e = rng.normal(size=ctx)
        a, gamma = attention(None, reprs, h_e, phi, tau=1.0)
        assert gamma.sum() == pytest.approx(1.0, abs=1e-6)
        assert np.all(gamma >= 0)
        assert np.all(a >= reprs.min(axis=0) - 1e-9) and np.all(a <= reprs.max(axis=0) + 1e-9)
        _, sharp = attention(None, reprs, h_e, phi, tau=0.25)
        if np.sort(gamma)[-1] - (np.sort(gamma)[-2] if n > 1 else 0.0) > 1e-9:
            assert np.argmax(sharp) == np.argmax(gamma)


def test_detection_labels_match_interval_oracle(rng):
    for _ in range(50):
        duration = float(rng.uniform(8.0, 120.0))
        starts = np.sort(rng.uniform(0.0, duration - 4.0, size=int(rng.integers(1, 8))))
        events = [TimelineEvent(int(rng.integers(0, 4)), float(s), float(s) + 4.0) for s in starts]
        windows = window_starts(duration)
        assert len(windows) == window_count(duration) == int(np.floor((duration - 4.0) / 2.0)) + 1
        assert windows == [2.0 * j for j in range(len(windows))]
        for start in windows:
            expected = {e.label for e in events
                        if min(start + 4.0, e.end_time) - max(start, e.start_time) > 1.0}
            assert set(label_window(start, events)[0]) == expected


@pytest.mark.slow
@pytest.mark.parametrize("mode", ALL_MODES)
def test_gradients_on_twenty_clips(mode):
    synth = SynthConfig(num_classes=3, num_frames=3, min_players=2, max_players=2, d_app=3, d_frame=2,
                        levels=(1,), active_window=(0, 3), noise_sigma=0.3, empty_frame_prob=0.0, seed=31)
    cfg = ModelConfig(hidden_dim=3, embed_dim=3, phi_hidden=3, mode=mode).bind(synth.header())
    clips = synth_dataset(synth, num_clips=20)
    if mode == "attn-track":
        clips = [link_tracks(c)[1] for c in clips]
    rng = np.random.default_rng(32)
    for clip in clips:
        enc = encode_clip(clip, cfg)
        params = ModelParams(cfg, {n: rng.normal(scale=0.4, size=s) for n, s in param_shapes(cfg).items()})
        grads = backward(forward(enc, params), enc.label, params)

        def loss_fn(tensors):
            return clip_loss(forward(enc, ModelParams(cfg, tensors)), enc.label)

        names = [n for n in params.names if n != "phi.b2"]
        result = finite_diff_check(loss_fn, params.tensors, grads, epsilon=1e-4, names=names)
        assert result.max_rel_error < 1e-3, (clip.clip_id, result)


@pytest.fixture(scope="module")
def planted():
    train_set = synth_dataset(PLANTED, num_clips=500, seed=21, prefix="train")
    val_set = synth_dataset(PLANTED, num_clips=50, seed=22, prefix="val")
    test_set = synth_dataset(PLANTED, num_clips=100, seed=23, prefix="test")
    results = {}
    for mode in (ModelMode.FRAME_ONLY, ModelMode.AVG_PLAYER, ModelMode.ATTN_NO_TRACK):
        checkpoint = train(train_set, val_set, PLANTED_TRAIN, replace(PLANTED_MODEL, mode=mode).bind(PLANTED.header()))
        results[mode] = (checkpoint, classify_eval(checkpoint.params, test_set))
    return test_set, results


@pytest.mark.slow
def test_planted_key_player_recovery(planted):
    test_set, results = planted
    attn_ckpt, attn_report = results[ModelMode.ATTN_NO_TRACK]
    assert attn_report.map >= 0.95
    assert results[ModelMode.FRAME_ONLY][1].map <= 0.35

    traces = [forward(c, attn_ckpt.params) for c in test_set]
    shooter = shooter_eval(traces, test_set, PLANTED.num_classes)
    assert shooter.map >= 0.80
    assert shooter.extra["chance"]["map"] == pytest.approx(expected_uniform_ap(6))


@pytest.mark.slow
def test_ablation_ordering(planted):
    _, results = planted
    attn = results[ModelMode.ATTN_NO_TRACK][1].map
    avg = results[ModelMode.AVG_PLAYER][1].map
    frame = results[ModelMode.FRAME_ONLY][1].map
    assert attn >= avg
    assert avg >= frame


@pytest.mark.slow
def test_planted_location_heatmap():
    anchor = (0.25, 0.65)
    synth = SynthConfig(num_classes=2, num_frames=24, min_players=6, max_players=6, d_app=16, d_frame=8,
                        levels=(4, 2, 1), noise_sigma=0.1, active_window=(0, 24), empty_frame_prob=0.0,
                        key_anchor=anchor, seed=41)
    cfg = ModelConfig(hidden_dim=16, embed_dim=16, phi_hidden=16, mode="attn-no-track").bind(synth.header())
    checkpoint = train(synth_dataset(synth, num_clips=200, seed=41), synth_dataset(synth, num_clips=20, seed=42),
                       TrainConfig(batch_size=8, max_steps=600, eval_every=100, progress=False), cfg)
    test_set = synth_dataset(synth, num_clips=40, seed=43)
    traces = [forward(c, checkpoint.params) for c in test_set]
    hm = heatmap(traces, test_set, synth.num_classes, grid=10, phases=3)
    gx, gy = grid_bin(np.array(anchor), 10)
    for k in range(synth.num_classes):
        begin = hm.grids[k, 0]
        assert begin[max(gy - 1, 0):gy + 2, max(gx - 1, 0):gx + 2].sum() >= 0.8


@pytest.mark.slow
def test_detection_on_ten_minute_timeline():
    synth = SynthConfig(num_classes=3, num_frames=24, min_players=4, max_players=4, d_app=16, d_frame=8,
                        levels=(2, 1), noise_sigma=0.1, active_window=(4, 20), empty_frame_prob=0.0, seed=51)
    cfg = ModelConfig(hidden_dim=16, embed_dim=16, phi_hidden=16, mode="attn-no-track").bind(
        synth.header(), negative_class=True)
    train_windows = window_clips(synth_timeline(synth, 600.0, 60, seed=51, timeline_id="train"))
    val_windows = window_clips(synth_timeline(synth, 120.0, 12, seed=52, timeline_id="val"))
    checkpoint = train(train_windows, val_windows,
                       TrainConfig(batch_size=8, max_steps=800, eval_every=100, progress=False), cfg)
    test_timeline = synth_timeline(synth, 600.0, 60, seed=53, timeline_id="test")
    report = detect_eval(sliding_detect(test_timeline, checkpoint.params), synth.num_classes)
    assert report.extra["windows"] == 299
    assert report.map >= 0.7
