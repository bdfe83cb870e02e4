import numpy as np
import pytest

from attention_eval import (
    EvalConfig, Homography, attention_records, expected_uniform_ap, grid_bin, heatmap, homography_dlt,
    key_player_index, phase_of, shooter_eval,
)
from errors import ConfigError, EmptyInputError, RankDeficiencyError, UndefinedAPError, ValidationError
from features import BoundingBox, Clip, Detection, Frame
from metrics import RankedList, average_precision
from model import ForwardTrace, ModelParams, forward

SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
FIVE = np.array([[0.1, 0.1], [0.9, 0.15], [0.85, 0.8], [0.2, 0.9], [0.5, 0.45]])


def fake_trace(gammas, num_classes=3) -> ForwardTrace:
    T = len(gammas)
    return ForwardTrace(frame_context=None, track_states=None, gammas=[np.asarray(g, dtype=float) for g in gammas],
                        attended=None, event_states=np.zeros((T, 1)), frame_scores=np.zeros((T, num_classes)),
                        clip_scores=np.zeros(num_classes))


def oracle_trace(clip: Clip) -> ForwardTrace:
    gammas = []
    for frame in clip.frames:
        g = np.zeros(len(frame.detections))
        key = key_player_index(frame)
        if key is not None:
            g[key] = 1.0
        elif len(g):
            g[:] = 1.0 / len(g)
        gammas.append(g)
    return fake_trace(gammas)


def _stationary_clip(label=0, num_frames=6, box=(0.4, 0.4, 0.5, 0.5)) -> Clip:
    frames = [Frame(index=t, frame_feature=np.zeros(2),
                    detections=[Detection(box=BoundingBox(*box), appearance=np.zeros(2))])
              for t in range(num_frames)]
    return Clip(frames=frames, label=label, clip_id=f"still-{label}")


class TestChance:
    def test_closed_form(self):
        assert expected_uniform_ap(1) == 1.0
        assert expected_uniform_ap(4) == pytest.approx(25 / 48)
        assert expected_uniform_ap(6) == pytest.approx(0.408, abs=1e-3)

    def test_monte_carlo(self, rng):
        positives = np.array([True, False, False, False])
        aps = [average_precision(RankedList(rng.uniform(size=4), positives)) for _ in range(4000)]
        assert np.mean(aps) == pytest.approx(expected_uniform_ap(4), abs=0.02)

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            expected_uniform_ap(0)


class TestShooterEval:
    def test_key_player_nearest_ball(self):
        frame = Frame(index=0, frame_feature=np.zeros(1), ball_position=(0.8, 0.8), detections=[
            Detection(box=BoundingBox(0.0, 0.0, 0.2, 0.2), appearance=np.zeros(1)),
            Detection(box=BoundingBox(0.7, 0.7, 0.9, 0.9), appearance=np.zeros(1)),
        ])
        assert key_player_index(frame) == 1
        frame.ball_position = None
        assert key_player_index(frame) is None

    def test_oracle_attention_is_perfect(self, tiny_clips):
        report = shooter_eval([oracle_trace(c) for c in tiny_clips], tiny_clips, 3)
        assert report.map == pytest.approx(1.0)
        assert report.extra["frames"] > 0
        assert 0.0 < report.extra["chance"]["map"] < 1.0

    def test_model_attention(self, tiny_clips, model_config):
        params = ModelParams.init(model_config("attn-no-track"), seed=0)
        report = shooter_eval([forward(c, params) for c in tiny_clips], tiny_clips, 3)
        assert 0.0 < report.map <= 1.0
        assert set(report.per_class) == set(report.extra["chance"]["per_class"])

    def test_non_attention_trace_rejected(self, tiny_clips):
        trace = fake_trace([[]] * tiny_clips[0].num_frames)
        trace.gammas = None
        with pytest.raises(ValidationError):
            shooter_eval([trace], tiny_clips[:1], 3)

    def test_count_mismatch(self, tiny_clips):
        with pytest.raises(ValidationError):
            shooter_eval([], tiny_clips[:1], 3)

    def test_no_annotated_frames(self):
        clip = _stationary_clip()
        with pytest.raises(UndefinedAPError):
            shooter_eval([fake_trace([[1.0]] * 6)], [clip], 3)

    def test_attention_records(self, tiny_clips):
        records = attention_records([oracle_trace(c) for c in tiny_clips[:2]], tiny_clips[:2])
        assert len(records) == sum(c.num_frames for c in tiny_clips[:2])
        assert records[0]["clip_id"] == tiny_clips[0].clip_id


class TestHomography:
    def test_identity_from_corners(self):
        H = homography_dlt(SQUARE, SQUARE)
        np.testing.assert_allclose(H.matrix, np.eye(3), atol=1e-9)

    def test_translation(self):
        H = homography_dlt(FIVE, FIVE + [0.1, 0.2])
        expected = np.array([[1.0, 0.0, 0.1], [0.0, 1.0, 0.2], [0.0, 0.0, 1.0]])
        np.testing.assert_allclose(H.matrix, expected, atol=1e-8)

    def test_recovers_projective_map(self):
        truth = Homography(np.array([[1.1, 0.05, 0.1], [0.02, 0.9, 0.2], [0.01, 0.03, 1.0]]))
        H = homography_dlt(FIVE, truth.project(FIVE))
        np.testing.assert_allclose(H.matrix, truth.matrix, atol=1e-6)
        assert H.rms < 1e-6

    def test_collinear_points(self):
        line = np.array([[0.0, 0.0], [0.25, 0.25], [0.5, 0.5], [1.0, 1.0]])
        with pytest.raises(RankDeficiencyError):
            homography_dlt(line, line)

    def test_coincident_points(self):
        with pytest.raises(RankDeficiencyError):
            homography_dlt(np.ones((4, 2)), SQUARE)

    def test_too_few_points(self):
        with pytest.raises(ValidationError):
            homography_dlt(SQUARE[:3], SQUARE[:3])

    def test_singular_matrix(self):
        with pytest.raises(RankDeficiencyError):
            Homography(np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))

    def test_normalized(self):
        assert Homography(np.eye(3) * 2.0).matrix[2, 2] == 1.0


class TestHeatmap:
    def test_bins(self):
        assert phase_of(0, 24) == 0
        assert phase_of(8, 24) == 1
        assert phase_of(23, 24) == 2
        assert grid_bin(np.array([1.0, 1.0]), 10) == (9, 9)
        assert grid_bin(np.array([-0.5, 0.34]), 10) == (0, 3)

    def test_stationary_player_single_bin_per_phase(self):
        clip = _stationary_clip()
        hm = heatmap([fake_trace([[1.0]] * 6)], [clip], 3)
        assert hm.grids.shape == (3, 3, 10, 10)
        for phase in range(3):
            assert hm.grids[0, phase, 5, 4] == 1.0
            assert np.count_nonzero(hm.grids[0, phase]) == 1
        assert hm.counts[0].tolist() == [2.0, 2.0, 2.0]
        assert not hm.grids[1:].any()
        assert len(hm.rows()) == 3 * 100

    def test_normalized_per_class_and_phase(self, tiny_clips):
        hm = heatmap([oracle_trace(c) for c in tiny_clips], tiny_clips, 3, grid=4)
        sums = hm.grids.sum(axis=(2, 3))
        np.testing.assert_allclose(sums[hm.counts > 0], 1.0)
        assert np.all(sums[hm.counts == 0] == 0.0)

    def test_homography_applied_and_clamped(self):
        clip = _stationary_clip()
        shift = Homography(np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
        hm = heatmap([fake_trace([[1.0]] * 6)], [clip], 3, homographies={clip.clip_id: shift})
        assert hm.clamped == 6
        assert hm.grids[0, 0, 5, 9] == 1.0

    def test_empty_frames_skipped(self):
        clip = _stationary_clip()
        clip.frames[0].detections = []
        hm = heatmap([fake_trace([[]] + [[1.0]] * 5)], [clip], 3)
        assert hm.counts[0].tolist() == [1.0, 2.0, 2.0]

    def test_invalid_grid(self):
        with pytest.raises(ConfigError):
            EvalConfig(grid=0)
        with pytest.raises(ValidationError):
            heatmap([], [], 3, grid=0)
