"""Scoring-path tests with a brute-force pair-counting AUC oracle."""

import numpy as np
import pytest
import torch

from convvrnn.dataio import SynthSpec, VideoRecord, synth_video
from convvrnn.errors import ContractError, DataError, MetricError
from convvrnn.model import ConvVRNN, ModelConfig
from convvrnn.objectives import LossConfig
from convvrnn.scoring import (
    evaluate,
    frame_losses,
    normalize_scores,
    read_report,
    read_score_csv,
    roc_auc,
    write_report,
    write_score_csv,
)


from oracles import brute_force_auc


# ---------------------------------------------------------------------------
# normalize_scores
# ---------------------------------------------------------------------------

class TestNormalizeScores:
    def test_affine_example(self):
        assert normalize_scores(np.array([2.0, 4.0, 6.0])).tolist() == [0.0, 0.5, 1.0]

    def test_constant_series_all_zeros(self):
        assert normalize_scores(np.array([5.0, 5.0, 5.0])).tolist() == [0.0, 0.0, 0.0]

    def test_order_preserving(self):
        rng = np.random.default_rng(0)
        losses = rng.uniform(0, 10, 50)
        scores = normalize_scores(losses)
        assert np.array_equal(np.argsort(losses), np.argsort(scores))

    def test_positive_affine_invariance(self):
        rng = np.random.default_rng(1)
        losses = rng.uniform(0, 5, 40)
        base = normalize_scores(losses)
        for a, b in [(2.0, 0.0), (0.5, 3.0), (17.0, -1.25)]:
            assert np.max(np.abs(normalize_scores(a * losses + b) - base)) < 1e-12

    def test_empty_series(self):
        with pytest.raises(ContractError):
            normalize_scores(np.array([]))

    def test_range_and_extremes(self):
        rng = np.random.default_rng(2)
        scores = normalize_scores(rng.uniform(1, 9, 30))
        assert scores.min() == 0.0 and scores.max() == 1.0


# ---------------------------------------------------------------------------
# roc_auc
# ---------------------------------------------------------------------------

class TestRocAuc:
    def test_perfect_separation(self):
        assert roc_auc([0.9, 0.1, 0.8], [1, 0, 1]) == 1.0

    def test_all_ties(self):
        assert roc_auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        for trial in range(100):
            n = int(rng.integers(2, 501))
            labels = rng.integers(0, 2, n)
            if labels.sum() in (0, n):
                labels[0], labels[-1] = 0, 1
            # quantized scores so ties actually occur
            scores = np.round(rng.uniform(0, 1, n), 2)
            assert abs(roc_auc(scores, labels)
                       - brute_force_auc(scores, labels)) <= 1e-12

    def test_polarity_flip(self):
        rng = np.random.default_rng(4)
        scores = np.round(rng.uniform(0, 1, 200), 2)
        labels = rng.integers(0, 2, 200)
        labels[0], labels[1] = 0, 1
        assert roc_auc(-scores, labels) == pytest.approx(
            1.0 - roc_auc(scores, labels), abs=1e-12
        )

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(5)
        scores = rng.uniform(0.01, 1, 100)
        labels = rng.integers(0, 2, 100)
        labels[0], labels[1] = 0, 1
        base = roc_auc(scores, labels)
        assert roc_auc(np.log(scores), labels) == pytest.approx(base, abs=1e-12)
        assert roc_auc(scores ** 3, labels) == pytest.approx(base, abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(MetricError):
            roc_auc([0.1, 0.2], [1, 1])

    def test_non_binary_labels_rejected(self):
        with pytest.raises(MetricError):
            roc_auc([0.1, 0.2], [0, 2])


# ---------------------------------------------------------------------------
# frame_losses / evaluate on a tiny model
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_model():
    cfg = ModelConfig(image_size=16, channels=1, horizon=4, z_dim=4,
                      feat_hw=4, feat_ch=8, hidden_ch=8, seed=11)
    return ConvVRNN(cfg)


@pytest.fixture(scope="module")
def tiny_loss_cfg():
    return LossConfig(msssim_scales=2, msssim_window=3)


def _labeled_video(seed, n=16, anomaly=()):
    rec = synth_video(SynthSpec(image_size=16, num_frames=n, sprite_size=4,
                                velocity=1, seed=seed))
    labels = np.zeros(n, dtype=np.int8)
    for i in anomaly:
        labels[i] = 1
    return VideoRecord(rec.video_id, rec.frames, labels)


class TestFrameLosses:
    def test_count_is_n_minus_horizon(self, tiny_model, tiny_loss_cfg):
        video = _labeled_video(0, n=16)
        losses = frame_losses(tiny_model, video, tiny_loss_cfg)
        assert len(losses) == 12

    def test_nonnegative(self, tiny_model, tiny_loss_cfg):
        losses = frame_losses(tiny_model, _labeled_video(1), tiny_loss_cfg)
        assert np.all(losses >= 0)

    def test_short_video_empty(self, tiny_model, tiny_loss_cfg):
        video = _labeled_video(2, n=4)
        assert len(frame_losses(tiny_model, video, tiny_loss_cfg)) == 0

    def test_deterministic(self, tiny_model, tiny_loss_cfg):
        video = _labeled_video(3)
        a = frame_losses(tiny_model, video, tiny_loss_cfg)
        b = frame_losses(tiny_model, video, tiny_loss_cfg)
        assert np.array_equal(a, b)

    def test_reset_per_window_differs_from_threaded(self, tiny_model, tiny_loss_cfg):
        video = _labeled_video(4, n=12)
        threaded = frame_losses(tiny_model, video, tiny_loss_cfg)
        reset = frame_losses(tiny_model, video, tiny_loss_cfg,
                             reset_per_window=True)
        assert threaded.shape == reset.shape
        # first window starts from the zero state either way
        assert threaded[0] == reset[0]
        assert not np.array_equal(threaded[1:], reset[1:])


class TestEvaluate:
    def test_counts_and_alignment(self, tiny_model, tiny_loss_cfg):
        videos = [_labeled_video(5, n=16, anomaly=[8, 9]),
                  _labeled_video(6, n=12, anomaly=[10])]
        report = evaluate(tiny_model, videos, tiny_loss_cfg)
        assert report.num_positive + report.num_negative == (16 - 4) + (12 - 4)
        assert report.num_positive == 3
        assert [len(s.losses) for s in report.per_video] == [12, 8]
        assert report.per_video[0].frame_indices[0] == 4

    def test_missing_labels(self, tiny_model, tiny_loss_cfg):
        rec = synth_video(SynthSpec(image_size=16, num_frames=12, sprite_size=4,
                                    seed=7))
        video = VideoRecord(rec.video_id, rec.frames, None)
        with pytest.raises(DataError):
            evaluate(tiny_model, [video], tiny_loss_cfg)

    def test_deterministic(self, tiny_model, tiny_loss_cfg):
        videos = [_labeled_video(8, anomaly=[6])]
        a = evaluate(tiny_model, videos, tiny_loss_cfg)
        b = evaluate(tiny_model, videos, tiny_loss_cfg)
        assert a.auc == b.auc

    def test_global_normalization_mode(self, tiny_model, tiny_loss_cfg):
        videos = [_labeled_video(9, anomaly=[6]), _labeled_video(10, anomaly=[7])]
        report = evaluate(tiny_model, videos, tiny_loss_cfg, global_normalize=True)
        pooled = np.concatenate([s.scores for s in report.per_video])
        assert pooled.min() == 0.0 and pooled.max() == 1.0

    def test_perfectly_separable_video_gives_auc_one(self, tiny_model,
                                                     tiny_loss_cfg):
        video = _labeled_video(11, n=16)
        losses = frame_losses(tiny_model, video, tiny_loss_cfg)
        labels = np.zeros(16, dtype=np.int8)
        worst = int(np.argmax(losses))
        labels[4 + worst] = 1  # label exactly the hardest frame anomalous
        report = evaluate(tiny_model,
                          [VideoRecord(video.video_id, video.frames, labels)],
                          tiny_loss_cfg)
        assert report.auc == 1.0


class TestSerialization:
    def test_csv_round_trip_and_report(self, tiny_model, tiny_loss_cfg, tmp_path):
        videos = [_labeled_video(12, anomaly=[6, 7])]
        report = evaluate(tiny_model, videos, tiny_loss_cfg)
        csv_path = tmp_path / "scores.csv"
        write_score_csv(report.per_video, csv_path)
        scores, labels = read_score_csv(csv_path)
        assert roc_auc(scores, labels) == report.auc
        header = csv_path.read_text().splitlines()[0]
        assert header == "video_id,frame_index,loss,score,label"

        report_path = tmp_path / "report.txt"
        write_report(report, report_path, config_hash="deadbeef")
        values = read_report(report_path)
        assert float(values["auc"]) == report.auc
        assert int(values["num_positive"]) == report.num_positive
        assert values["config_hash"] == "deadbeef"
