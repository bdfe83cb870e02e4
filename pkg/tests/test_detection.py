import numpy as np
import pytest

from config import NEGATIVE_LABEL
from detection import (
    DetectConfig, DetectionWindow, detect_eval, interval_overlap, label_window, sliding_detect,
    window_clip, window_clips, window_count, window_starts,
)
from errors import ConfigError, EmptyInputError, ValidationError
from features import Frame, Timeline, TimelineEvent, synth_timeline
from model import ModelParams


def _hand_timeline(duration_s=40.0, events=((0, 4.0), (1, 16.0), (2, 28.0)), fps=6.0) -> Timeline:
    frames = [Frame(index=t, frame_feature=np.full(2, t, dtype=np.float32)) for t in range(int(duration_s * fps))]
    return Timeline(frames=frames, events=[TimelineEvent(k, s, s + 4.0) for k, s in events], fps=fps,
                    timeline_id="hand")


def oracle_scorer(clip):
    scores = np.zeros(3)
    if clip.label != NEGATIVE_LABEL:
        scores[clip.label] = 1.0
    return scores


class TestWindows:
    def test_sixty_seconds(self):
        assert window_count(60.0) == 29
        assert window_count(60.0, stride=1.0) == 57

    def test_short(self):
        assert window_count(4.0) == 1
        assert window_count(3.9) == 0

    def test_starts(self):
        assert window_starts(10.0) == [0.0, 2.0, 4.0, 6.0]
        with pytest.raises(ValidationError):
            window_starts(10.0, stride=0.0)

    def test_overlap(self):
        assert interval_overlap(0, 4, 2, 6) == 2
        assert interval_overlap(0, 4, 4, 8) == 0
        assert interval_overlap(0, 4, 5, 9) == 0


class TestLabelWindow:
    EVENTS = [TimelineEvent(label=2, start_time=10.0, end_time=14.0)]

    def test_aligned_window_positive(self):
        positives, overlaps = label_window(10.0, self.EVENTS)
        assert positives == (2,)
        assert overlaps[2] == pytest.approx(4.0)

    def test_small_overlap_negative(self):
        positives, overlaps = label_window(13.5, self.EVENTS)
        assert positives == ()
        assert overlaps[2] == pytest.approx(0.5)

    def test_exactly_one_second_is_negative(self):
        assert label_window(13.0, self.EVENTS)[0] == ()
        assert label_window(12.9, self.EVENTS)[0] == (2,)

    def test_matches_brute_force(self, rng):
        events = [TimelineEvent(int(k), float(s), float(s) + 4.0)
                  for k, s in zip(rng.integers(0, 3, 6), np.sort(rng.uniform(0, 50, 6)))]
        for start in window_starts(60.0, stride=0.5):
            expected = set()
            for e in events:
                ov = min(start + 4.0, e.end_time) - max(start, e.start_time)
                if ov > 1.0 + 1e-9:
                    expected.add(e.label)
            assert set(label_window(start, events)[0]) == expected


class TestWindowClips:
    def test_window_on_event(self):
        clip = window_clip(_hand_timeline(), 16.0)
        assert clip.label == 1
        assert clip.num_frames == 24
        assert [f.index for f in clip.frames] == list(range(24))
        assert clip.frames[0].frame_feature[0] == 96.0
        assert clip.clip_id == "hand@16.0"

    def test_window_between_events(self):
        assert window_clip(_hand_timeline(), 10.0).label == NEGATIVE_LABEL

    def test_largest_overlap_wins(self):
        timeline = _hand_timeline(events=((0, 4.0), (1, 9.5)))
        # [6, 10]: 2 s of class 0, 0.5 s of class 1
        assert window_clip(timeline, 6.0).label == 0
        # [8, 12]: 0 s of class 0, 2.5 s of class 1
        assert window_clip(timeline, 8.0).label == 1

    def test_all_windows(self):
        clips = window_clips(_hand_timeline())
        assert len(clips) == window_count(40.0) == 19
        assert sum(1 for c in clips if c.is_negative) == 10


class TestSlidingDetect:
    def test_oracle_scorer_perfect(self):
        windows = sliding_detect(_hand_timeline(), oracle_scorer)
        assert len(windows) == 19
        assert [w.start_time for w in windows[:3]] == [0.0, 2.0, 4.0]
        report = detect_eval(windows, 3)
        assert report.map == pytest.approx(1.0)
        assert report.extra == {"windows": 19, "negative_windows": 10}

    def test_constant_scorer_is_chance(self):
        windows = sliding_detect(_hand_timeline(), lambda clip: np.zeros(3))
        report = detect_eval(windows, 3)
        assert report.map < 0.6

    def test_attn_track_model_tracks_each_window(self, tiny_synth, model_config):
        timeline = synth_timeline(tiny_synth, duration_s=12.0, n_events=2, seed=3)
        params = ModelParams.init(model_config("attn-track"), seed=0)
        windows = sliding_detect(timeline, params)
        assert len(windows) == 5
        assert all(w.scores.shape == (3,) for w in windows)

    def test_negative_class_scores_truncated(self):
        windows = sliding_detect(_hand_timeline(), lambda clip: np.append(oracle_scorer(clip), 5.0))
        assert detect_eval(windows, 3).map == pytest.approx(1.0)

    def test_short_timeline(self):
        with pytest.raises(ValidationError):
            sliding_detect(_hand_timeline(duration_s=3.0, events=()), oracle_scorer)

    def test_empty_windows(self):
        with pytest.raises(EmptyInputError):
            detect_eval([], 3)


def test_detection_window_negative():
    assert DetectionWindow(start_time=0.0).is_negative
    assert DetectionWindow(start_time=0.0, positive_classes=(1,)).end_time == 4.0


def test_detect_config_validation():
    with pytest.raises(ConfigError):
        DetectConfig(stride=0.0)
    with pytest.raises(ConfigError):
        DetectConfig(val_duration_s=2.0)
