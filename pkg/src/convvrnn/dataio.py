"""Dataset ingestion, sliding-window clip extraction, and synthetic videos.

Canonical on-disk layout (UCSD Ped1/Ped2 and CUHK Avenue convert into this
with a one-time script; the synthetic generator writes it directly):

    root/
      training/frames/<video_id>/000000.png ...
      testing/frames/<video_id>/000000.png ...
      testing/labels/<video_id>.txt          # one 0/1 per line, LF-terminated

Frames are PNG or JPEG with zero-padded six-digit names defining order.
In memory every video is a float32 array of shape (N, H, W, C) in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
from PIL import Image

from .errors import ConfigError, ContractError, DataError, ParseError

FRAME_SUFFIXES = (".png", ".jpg", ".jpeg")
TRAIN_SPLIT = "training"
TEST_SPLIT = "testing"
ANOMALY_KINDS = ("none", "intruder-sprite", "speed-change")


@dataclass
class VideoRecord:
    """One video: ordered frames plus optional per-frame binary labels."""

    video_id: str
    frames: np.ndarray  # (N, H, W, C) float32 in [0, 1]
    labels: np.ndarray | None = None  # (N,) int8, 1 = anomalous frame

    def __post_init__(self) -> None:
        if self.labels is not None and len(self.labels) != len(self.frames):
            raise DataError(
                f"video {self.video_id}: {len(self.labels)} labels for "
                f"{len(self.frames)} frames"
            )

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class ClipWindow:
    """T consecutive input frames and the ground-truth frame that follows."""

    inputs: np.ndarray  # (T, H, W, C)
    target: np.ndarray  # (H, W, C)
    video_id: str
    start_index: int


def frames_to_tensor(frames: np.ndarray, dtype: torch.dtype = torch.float32
                     ) -> torch.Tensor:
    """Channel-last numpy frames -> channel-first torch tensor."""
    arr = np.asarray(frames)
    if arr.ndim == 3:
        moved = arr.transpose(2, 0, 1)
    elif arr.ndim == 4:
        moved = arr.transpose(0, 3, 1, 2)
    else:
        raise ContractError(f"expected (H,W,C) or (N,H,W,C), got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(moved)).to(dtype)


def tensor_to_frames(tensor: torch.Tensor) -> np.ndarray:
    """Channel-first torch tensor -> channel-last float32 numpy frames."""
    arr = tensor.detach().cpu().numpy()
    if arr.ndim == 3:
        return np.ascontiguousarray(arr.transpose(1, 2, 0)).astype(np.float32)
    if arr.ndim == 4:
        return np.ascontiguousarray(arr.transpose(0, 2, 3, 1)).astype(np.float32)
    raise ContractError(f"expected (C,H,W) or (N,C,H,W), got shape {arr.shape}")


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def load_video(dir_path, image_size: int, channels: int = 3) -> VideoRecord:
    """Decode all frame images in a directory, in lexicographic order.

    Frames are converted to grayscale (channels=1) or RGB (channels=3),
    bilinearly resized to image_size x image_size, and scaled to [0, 1].
    """
    if channels not in (1, 3):
        raise ConfigError(f"channels must be 1 or 3, got {channels}")
    dir_path = Path(dir_path)
    files = sorted(
        p for p in dir_path.iterdir()
        if p.is_file() and p.suffix.lower() in FRAME_SUFFIXES
    ) if dir_path.is_dir() else []
    if not files:
        raise DataError(f"no frame images found in {dir_path}")
    frames = []
    for path in files:
        try:
            with Image.open(path) as img:
                img = img.convert("RGB" if channels == 3 else "L")
                img = img.resize((image_size, image_size), Image.BILINEAR)
                arr = np.asarray(img, dtype=np.float32) / 255.0
        except DataError:
            raise
        except Exception as exc:
            raise DataError(f"cannot decode frame file {path}: {exc}") from exc
        if channels == 1:
            arr = arr[..., None]
        frames.append(arr)
    return VideoRecord(video_id=dir_path.name, frames=np.stack(frames))


def load_labels(path) -> np.ndarray:
    """Parse a label file: one 0/1 per line; trailing newline tolerated."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read label file {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise ParseError(f"{path}: empty label file")
    values = []
    for lineno, line in enumerate(lines, start=1):
        token = line.strip()
        if token not in ("0", "1"):
            raise ParseError(f"{path}:{lineno}: expected 0 or 1, got {token!r}")
        values.append(int(token))
    return np.asarray(values, dtype=np.int8)


def load_split(root, split: str, image_size: int, channels: int = 3,
               with_labels: bool = False) -> list[VideoRecord]:
    """Load every video of one split of a canonical dataset directory."""
    frames_root = Path(root) / split / "frames"
    if not frames_root.is_dir():
        raise DataError(f"missing frames directory {frames_root}")
    videos = []
    for video_dir in sorted(p for p in frames_root.iterdir() if p.is_dir()):
        record = load_video(video_dir, image_size, channels)
        if with_labels:
            label_path = Path(root) / split / "labels" / f"{video_dir.name}.txt"
            if label_path.is_file():
                record = VideoRecord(record.video_id, record.frames,
                                     load_labels(label_path))
        videos.append(record)
    if not videos:
        raise DataError(f"no videos found under {frames_root}")
    return videos


# ---------------------------------------------------------------------------
# Sliding windows
# ---------------------------------------------------------------------------

def window_iter(video: VideoRecord, horizon: int,
                stride: int = 1) -> Iterator[ClipWindow]:
    """Yield clips whose targets are the frames at start+horizon.

    Start indices advance by ``stride``; a video shorter than horizon+1
    frames yields nothing.
    """
    if horizon < 1:
        raise ContractError(f"horizon must be >= 1, got {horizon}")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    n = len(video)
    for start in range(0, n - horizon, stride):
        yield ClipWindow(
            inputs=video.frames[start:start + horizon],
            target=video.frames[start + horizon],
            video_id=video.video_id,
            start_index=start,
        )


# ---------------------------------------------------------------------------
# Synthetic sprite videos
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """A deterministic moving-sprite video with an optional injected anomaly."""

    image_size: int = 64
    num_frames: int = 120
    sprite_size: int = 10
    velocity: int = 2
    anomaly_kind: str = "none"
    anomaly_span: tuple[int, int] = (0, 0)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sprite_size >= self.image_size:
            raise ConfigError(
                f"sprite_size {self.sprite_size} must be smaller than "
                f"image_size {self.image_size}"
            )
        if self.anomaly_kind not in ANOMALY_KINDS:
            raise ConfigError(f"anomaly_kind must be one of {ANOMALY_KINDS}")
        lo, hi = self.anomaly_span
        if not (0 <= lo <= hi <= self.num_frames):
            raise ConfigError(
                f"anomaly_span {self.anomaly_span} outside [0, {self.num_frames}]"
            )
        if self.num_frames < 1 or self.velocity < 0:
            raise ConfigError("num_frames must be >= 1 and velocity >= 0")


def _background(rng, size: int) -> np.ndarray:
    """Static low-frequency texture so blank predictions never pay off."""
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    img = np.zeros((size, size), dtype=np.float64)
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 2.0, size=2) / size
        phase = rng.uniform(0.0, 2.0 * np.pi)
        img += rng.uniform(0.5, 1.0) * np.sin(2.0 * np.pi * (fy * yy + fx * xx)
                                              + phase)
    img -= img.min()
    if img.max() > 0:
        img /= img.max()
    return (0.08 + 0.45 * img).astype(np.float32)


def _advance(pos: np.ndarray, vel: np.ndarray, limit: int, repeats: int) -> None:
    """In-place constant-velocity motion with reflection at [0, limit]."""
    for _ in range(repeats):
        pos += vel
        for axis in range(2):
            if pos[axis] < 0:
                pos[axis] = -pos[axis]
                vel[axis] = -vel[axis]
            elif pos[axis] > limit:
                pos[axis] = 2 * limit - pos[axis]
                vel[axis] = -vel[axis]


def _stamp_square(frame: np.ndarray, pos: np.ndarray, size: int) -> None:
    y, x = int(pos[0]), int(pos[1])
    frame[y:y + size, x:x + size, 0] = 1.0


def _stamp_cross(frame: np.ndarray, pos: np.ndarray, size: int) -> None:
    y, x = int(pos[0]), int(pos[1])
    arm = max(1, size // 3)
    mid = (size - arm) // 2
    frame[y + mid:y + mid + arm, x:x + size, 0] = 1.0
    frame[y:y + size, x + mid:x + mid + arm, 0] = 1.0


def synth_video(spec: SynthSpec) -> VideoRecord:
    """Render a white sprite bouncing over a static textured background.

    ``intruder-sprite`` adds a second, cross-shaped sprite during the anomaly
    span; ``speed-change`` triples the sprite's per-frame displacement there.
    Labels are 1 exactly on anomaly-span frames. Fully determined by the seed.
    """
    rng = np.random.default_rng(spec.seed)
    size, sprite = spec.image_size, spec.sprite_size
    background = _background(rng, size)
    limit = size - sprite
    pos = rng.integers(0, limit + 1, size=2).astype(np.int64)
    vel = spec.velocity * rng.choice([-1, 1], size=2).astype(np.int64)
    intruder_pos = intruder_vel = None
    if spec.anomaly_kind == "intruder-sprite":
        intruder_pos = rng.integers(0, limit + 1, size=2).astype(np.int64)
        intruder_vel = spec.velocity * rng.choice([-1, 1], size=2).astype(np.int64)

    lo, hi = spec.anomaly_span
    frames = np.empty((spec.num_frames, size, size, 1), dtype=np.float32)
    frames[:] = background[None, :, :, None]
    labels = np.zeros(spec.num_frames, dtype=np.int8)
    for t in range(spec.num_frames):
        in_span = lo <= t < hi
        _stamp_square(frames[t], pos, sprite)
        if spec.anomaly_kind == "intruder-sprite" and in_span:
            _stamp_cross(frames[t], intruder_pos, sprite)
            labels[t] = 1
            _advance(intruder_pos, intruder_vel, limit, 1)
        if spec.anomaly_kind == "speed-change" and in_span:
            labels[t] = 1
            _advance(pos, vel, limit, 3)
        else:
            _advance(pos, vel, limit, 1)
    return VideoRecord(video_id=f"synth-{spec.seed}", frames=frames, labels=labels)


# ---------------------------------------------------------------------------
# Writing the canonical layout
# ---------------------------------------------------------------------------

def write_video(record: VideoRecord, frames_dir, labels_path=None) -> None:
    """Write frames as zero-padded PNGs (and labels, when given)."""
    frames_dir = Path(frames_dir)
    frames_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(record.frames):
        data = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
        if data.shape[-1] == 1:
            img = Image.fromarray(data[..., 0], mode="L")
        else:
            img = Image.fromarray(data, mode="RGB")
        img.save(frames_dir / f"{i:06d}.png")
    if labels_path is not None:
        if record.labels is None:
            raise DataError(f"video {record.video_id} has no labels to write")
        Path(labels_path).parent.mkdir(parents=True, exist_ok=True)
        Path(labels_path).write_text(
            "".join(f"{int(v)}\n" for v in record.labels)
        )


def default_anomaly_span(num_frames: int) -> tuple[int, int]:
    return (num_frames * 5 // 12, num_frames * 2 // 3)


def make_synth_dataset(root, *, num_train: int = 8, num_test: int = 4,
                       image_size: int = 64, num_frames: int = 120,
                       sprite_size: int = 10, velocity: int = 2,
                       anomaly: str = "mix", seed: int = 0) -> dict[str, list[str]]:
    """Write a full synthetic dataset in the canonical layout.

    Training videos are anomaly-free; testing videos carry labeled anomalies
    (``mix`` alternates intruder-sprite and speed-change). Returns the video
    ids written per split.
    """
    if anomaly != "mix" and anomaly not in ANOMALY_KINDS:
        raise ConfigError(f"anomaly must be 'mix' or one of {ANOMALY_KINDS}")
    root = Path(root)
    base = seed * 10007
    written: dict[str, list[str]] = {TRAIN_SPLIT: [], TEST_SPLIT: []}

    for i in range(num_train):
        spec = SynthSpec(image_size=image_size, num_frames=num_frames,
                         sprite_size=sprite_size, velocity=velocity,
                         anomaly_kind="none", seed=base + i)
        video_id = f"train_{i:02d}"
        write_video(synth_video(spec), root / TRAIN_SPLIT / "frames" / video_id)
        written[TRAIN_SPLIT].append(video_id)

    span = default_anomaly_span(num_frames)
    kinds = ["intruder-sprite", "speed-change"] if anomaly == "mix" else [anomaly]
    for j in range(num_test):
        kind = kinds[j % len(kinds)]
        spec = SynthSpec(image_size=image_size, num_frames=num_frames,
                         sprite_size=sprite_size, velocity=velocity,
                         anomaly_kind=kind,
                         anomaly_span=span if kind != "none" else (0, 0),
                         seed=base + 500 + j)
        video_id = f"test_{j:02d}"
        write_video(
            synth_video(spec),
            root / TEST_SPLIT / "frames" / video_id,
            root / TEST_SPLIT / "labels" / f"{video_id}.txt",
        )
        written[TEST_SPLIT].append(video_id)
    return written
