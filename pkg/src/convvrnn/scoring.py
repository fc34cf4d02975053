"""Per-frame anomaly scoring and frame-level ROC/AUC evaluation.

A trained model predicts each frame of a test video from its predecessors;
the prediction loss per frame is min-max normalized within the video into an
anomaly score S(t) in [0, 1] (high = anomalous), and scores from all videos
are pooled for a frame-level AUC against binary ground-truth labels. The
first ``horizon`` frames of each video have no prediction and are excluded.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .dataio import VideoRecord, frames_to_tensor
from .errors import ContractError, DataError, MetricError
from .objectives import LossConfig, prediction_loss


@dataclass
class ScoreSeries:
    """Losses, scores, and labels for one video's scored frames."""

    video_id: str
    frame_indices: np.ndarray
    losses: np.ndarray
    scores: np.ndarray
    labels: np.ndarray


@dataclass
class EvalReport:
    per_video: list[ScoreSeries]
    auc: float
    num_positive: int
    num_negative: int


def frame_losses(model, video: VideoRecord, loss_cfg: LossConfig,
                 reset_per_window: bool = False) -> np.ndarray:
    """Prediction loss for every target frame from horizon to N-1.

    The recurrent state threads continuously through the video unless
    ``reset_per_window`` asks for a fresh zero-state rollout per window.
    Returns an empty array for videos shorter than horizon+1 frames.
    """
    dtype = next(model.parameters()).dtype
    frames = frames_to_tensor(video.frames, dtype)
    horizon = model.cfg.horizon
    preds = model.predict_video(frames, reset_per_window=reset_per_window)
    losses = np.empty(len(preds), dtype=np.float64)
    with torch.no_grad():
        for i in range(len(preds)):
            losses[i] = prediction_loss(preds[i], frames[horizon + i],
                                        loss_cfg).item()
    return losses


def normalize_scores(losses: np.ndarray) -> np.ndarray:
    """Min-max normalization to [0, 1]; all zeros when losses are constant."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise ContractError("cannot normalize an empty loss series")
    lo, hi = losses.min(), losses.max()
    if hi == lo:
        return np.zeros_like(losses)
    return (losses - lo) / (hi - lo)


def roc_auc(scores, labels) -> float:
    """Frame-level AUC via the rank statistic (ties get half credit).

    Label 1 marks an anomaly; higher scores must indicate anomalies.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ContractError(
            f"scores and labels must be equal-length vectors, got "
            f"{scores.shape} and {labels.shape}"
        )
    if not np.all(np.isin(labels, (0, 1))):
        raise MetricError("labels must be binary 0/1")
    num_pos = int((labels == 1).sum())
    num_neg = int((labels == 0).sum())
    if num_pos == 0 or num_neg == 0:
        raise MetricError("AUC undefined: labels contain a single class")

    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average rank of the tie group
        i = j + 1
    u_stat = ranks[labels == 1].sum() - num_pos * (num_pos + 1) / 2.0
    return float(u_stat / (num_pos * num_neg))


def evaluate(model, test_videos: list[VideoRecord], loss_cfg: LossConfig,
             reset_per_window: bool = False,
             global_normalize: bool = False) -> EvalReport:
    """Score every labeled test video and pool frames for one AUC.

    Scores are normalized per video by default; ``global_normalize`` instead
    min-max normalizes over the whole test set (sensitivity analysis only).
    """
    horizon = model.cfg.horizon
    series: list[ScoreSeries] = []
    for video in test_videos:
        if video.labels is None:
            raise DataError(f"test video {video.video_id} has no labels")
        losses = frame_losses(model, video, loss_cfg,
                              reset_per_window=reset_per_window)
        indices = np.arange(horizon, horizon + len(losses))
        scores = (np.zeros(0) if losses.size == 0
                  else np.empty(0) if global_normalize else normalize_scores(losses))
        series.append(ScoreSeries(
            video_id=video.video_id,
            frame_indices=indices,
            losses=losses,
            scores=scores,
            labels=np.asarray(video.labels)[horizon:horizon + len(losses)],
        ))
    if global_normalize:
        pooled = np.concatenate([s.losses for s in series if s.losses.size])
        normalized = normalize_scores(pooled)
        offset = 0
        for s in series:
            s.scores = normalized[offset:offset + len(s.losses)]
            offset += len(s.losses)

    all_scores = np.concatenate([s.scores for s in series if s.scores.size])
    all_labels = np.concatenate([s.labels for s in series if s.labels.size])
    auc = roc_auc(all_scores, all_labels)
    return EvalReport(
        per_video=series,
        auc=auc,
        num_positive=int((all_labels == 1).sum()),
        num_negative=int((all_labels == 0).sum()),
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def write_score_csv(per_video: list[ScoreSeries], path) -> None:
    """CSV with one row per scored frame; losses carry 9 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "frame_index", "loss", "score", "label"])
        for s in per_video:
            for i in range(len(s.losses)):
                writer.writerow([
                    s.video_id,
                    int(s.frame_indices[i]),
                    f"{s.losses[i]:.9g}",
                    repr(float(s.scores[i])),
                    int(s.labels[i]),
                ])


def read_score_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Scores and labels back from a score CSV (for AUC self-checks)."""
    scores, labels = [], []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            scores.append(float(row["score"]))
            labels.append(int(row["label"]))
    return np.asarray(scores, dtype=np.float64), np.asarray(labels)


def write_report(report: EvalReport, path, config_hash: str = "") -> None:
    """Flat key=value report file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"auc={report.auc!r}",
        f"num_positive={report.num_positive}",
        f"num_negative={report.num_negative}",
        f"num_videos={len(report.per_video)}",
        f"config_hash={config_hash}",
    ]
    path.write_text("".join(line + "\n" for line in lines))


def read_report(path) -> dict[str, str]:
    values = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            values[key] = value
    return values
