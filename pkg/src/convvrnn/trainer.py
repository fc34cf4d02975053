"""Seeded optimization loop and the binary checkpoint format.

Training samples batches of sliding windows (shuffled by a seeded numpy
generator), rolls the model out in train-sample mode, and minimizes
beta * sum(KL_t) + prediction loss with Adam. Every source of randomness is
derived from the config seeds, so identical (config, data) pairs reproduce
identical parameter trajectories on the same platform.

Checkpoint file layout (all integers little-endian):

    magic "CVRNNCKP" | u32 format_version | u64 length + JSON state text
    then per-tensor records until EOF:
        u32 name length | name utf-8 | u8 rank | rank * u64 dims |
        u8 dtype tag (1 = float32, 2 = float64) | raw row-major values

The JSON state text echoes the full TrainConfig plus the step counter and
an opaque hex RNG snapshot.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataio import VideoRecord, frames_to_tensor, window_iter
from .errors import CheckpointError, ConfigError, DataError, TrainingError
from .model import ARCHITECTURES, MODE_TRAIN, ConvVAE, ModelConfig, build_model
from .objectives import LossConfig, prediction_loss_terms, total_objective

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CVRNNCKP"
CHECKPOINT_VERSION = 1
_DTYPE_TAGS = {"float32": 1, "float64": 2}
_TAG_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}

LOSS_LOG_HEADER = "step,total,kl,l1,msssim,gdl"


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 2e-4
    beta: float = 1.0
    grad_clip: float | None = 5.0
    seed: int = 0
    arch: str = "conv-vrnn"
    train_stride: int = 1
    per_step_prediction: bool = False
    checkpoint_every: int = 0  # 0 = final checkpoint only
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self) -> None:
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive or None, got {self.grad_clip}")
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        if self.train_stride < 1 or self.checkpoint_every < 0:
            raise ConfigError("train_stride must be >= 1 and checkpoint_every >= 0")


@dataclass
class Checkpoint:
    format_version: int
    config: TrainConfig
    params: dict[str, np.ndarray]
    step: int
    rng_state: bytes


# ---------------------------------------------------------------------------
# Config text round-trip
# ---------------------------------------------------------------------------

def config_to_json(cfg: TrainConfig) -> str:
    return json.dumps(dataclasses.asdict(cfg), sort_keys=True)


def config_from_dict(data: dict) -> TrainConfig:
    data = dict(data)
    data["loss"] = LossConfig(**data["loss"])
    data["model"] = ModelConfig(**data["model"])
    return TrainConfig(**data)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _snapshot_rng(noise_gen: torch.Generator, shuffle_rng) -> bytes:
    state = {
        "torch_hex": noise_gen.get_state().numpy().tobytes().hex(),
        "numpy": shuffle_rng.bit_generator.state,
    }
    return json.dumps(state, sort_keys=True).encode()


def checkpoint_from_model(model, cfg: TrainConfig, step: int,
                          rng_state: bytes = b"") -> Checkpoint:
    params = {name: p.detach().cpu().numpy().copy()
              for name, p in model.named_parameters()}
    return Checkpoint(format_version=CHECKPOINT_VERSION, config=cfg,
                      params=params, step=step, rng_state=rng_state)


def train(train_videos: list[VideoRecord], cfg: TrainConfig,
          out_dir=None) -> Checkpoint:
    """Train per config; returns the final checkpoint.

    When ``out_dir`` is given, writes ``loss_log.csv``, the final
    ``checkpoint.ckpt``, and (with checkpoint_every > 0) periodic
    ``checkpoints/step_NNNNNN.ckpt`` files there.
    """
    windows = [w for v in train_videos
               for w in window_iter(v, cfg.model.horizon, cfg.train_stride)]
    if not windows:
        raise DataError(
            "no training windows: every video is shorter than horizon+1 frames"
        )
    model = build_model(cfg.model, cfg.arch)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                                 betas=(0.9, 0.999), eps=1e-8)
    shuffle_rng = np.random.default_rng(cfg.seed)
    noise_gen = torch.Generator().manual_seed(cfg.seed)
    num_inputs = model.num_input_frames if isinstance(model, ConvVAE) else None

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    log_rows = [LOSS_LOG_HEADER]

    order = shuffle_rng.permutation(len(windows))
    cursor = 0
    log_every = max(1, cfg.steps // 10)
    for step_idx in range(1, cfg.steps + 1):
        batch_ids = []
        while len(batch_ids) < cfg.batch_size:
            if cursor == len(order):
                order = shuffle_rng.permutation(len(windows))
                cursor = 0
            batch_ids.append(order[cursor])
            cursor += 1
        inputs = torch.stack(
            [frames_to_tensor(windows[i].inputs) for i in batch_ids]
        )
        targets = torch.stack(
            [frames_to_tensor(windows[i].target) for i in batch_ids]
        )

        if num_inputs is None:
            res = model.rollout(inputs, mode=MODE_TRAIN, generator=noise_gen)
            kl_terms = [s.kl for s in res.steps]
            if cfg.per_step_prediction:
                preds = [s.prediction for s in res.steps]
                step_targets = [inputs[:, t] for t in range(1, inputs.shape[1])]
                step_targets.append(targets)
                per_step = [
                    sum(prediction_loss_terms(p, t, cfg.loss).values())
                    for p, t in zip(preds, step_targets)
                ]
                terms = {"per_step_mean": sum(per_step) / len(per_step)}
                pred_terms = prediction_loss_terms(res.prediction, targets, cfg.loss)
            else:
                pred_terms = prediction_loss_terms(res.prediction, targets, cfg.loss)
                terms = pred_terms
        else:
            pred, kl = model(inputs[:, -num_inputs:], MODE_TRAIN, noise_gen)
            kl_terms = [kl]
            pred_terms = prediction_loss_terms(pred, targets, cfg.loss)
            terms = pred_terms

        pred_loss = sum(terms.values())
        total = total_objective(kl_terms, pred_loss, cfg.beta)

        kl_value = float(sum(t.item() for t in kl_terms))
        named = {"kl": kl_value, "total": float(total.item()),
                 **{k: float(v.item()) for k, v in pred_terms.items()}}
        for name, value in named.items():
            if not math.isfinite(value):
                raise TrainingError(
                    f"non-finite loss term {name!r} ({value}) at step {step_idx}"
                )

        optimizer.zero_grad()
        total.backward()
        if cfg.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        optimizer.step()

        log_rows.append(
            f"{step_idx},{named['total']:.9g},{kl_value:.9g},"
            f"{named.get('l1', 0.0):.9g},{named.get('msssim', 0.0):.9g},"
            f"{named.get('gdl', 0.0):.9g}"
        )
        if step_idx % log_every == 0 or step_idx == 1:
            logger.info("step %d/%d total=%.5f kl=%.5f pred=%.5f",
                        step_idx, cfg.steps, named["total"], kl_value,
                        named["total"] - cfg.beta * kl_value)
        if (out_dir is not None and cfg.checkpoint_every
                and step_idx % cfg.checkpoint_every == 0
                and step_idx != cfg.steps):
            ckpt = checkpoint_from_model(
                model, cfg, step_idx, _snapshot_rng(noise_gen, shuffle_rng)
            )
            save_checkpoint(ckpt, out_dir / "checkpoints" / f"step_{step_idx:06d}.ckpt")

    final = checkpoint_from_model(model, cfg, cfg.steps,
                                  _snapshot_rng(noise_gen, shuffle_rng))
    if out_dir is not None:
        (out_dir / "loss_log.csv").write_text(
            "".join(row + "\n" for row in log_rows)
        )
        save_checkpoint(final, out_dir / "checkpoint.ckpt")
    return final


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------

def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state_text = json.dumps(
        {
            "config": dataclasses.asdict(ckpt.config),
            "step": ckpt.step,
            "rng_state_hex": ckpt.rng_state.hex(),
        },
        sort_keys=True,
    ).encode()
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", ckpt.format_version),
              struct.pack("<Q", len(state_text)), state_text]
    for name in sorted(ckpt.params):
        arr = ckpt.params[name]
        if arr.dtype.name not in _DTYPE_TAGS:
            raise CheckpointError(f"unsupported parameter dtype {arr.dtype}")
        tag = _DTYPE_TAGS[arr.dtype.name]
        encoded = name.encode()
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(struct.pack("<B", tag))
        chunks.append(np.ascontiguousarray(arr).astype(_TAG_DTYPES[tag]).tobytes())
    path.write_bytes(b"".join(chunks))


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.data)


def load_checkpoint(path) -> Checkpoint:
    """Parse and validate a checkpoint file.

    Validation covers the container format and the parameter set against a
    model rebuilt from the config echo; any mismatch raises CheckpointError.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    cur = _Cursor(data)
    if cur.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
    (version,) = cur.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {version} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    (state_len,) = cur.unpack("<Q")
    try:
        state = json.loads(cur.take(state_len).decode())
        cfg = config_from_dict(state["config"])
        step = int(state["step"])
        rng_state = bytes.fromhex(state["rng_state_hex"])
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint state block: {exc}") from exc

    params: dict[str, np.ndarray] = {}
    while not cur.exhausted:
        (name_len,) = cur.unpack("<I")
        name = cur.take(name_len).decode()
        (rank,) = cur.unpack("<B")
        dims = cur.unpack(f"<{rank}Q") if rank else ()
        (tag,) = cur.unpack("<B")
        if tag not in _TAG_DTYPES:
            raise CheckpointError(f"unknown dtype tag {tag} for tensor {name!r}")
        dtype = _TAG_DTYPES[tag]
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = cur.take(count * dtype.itemsize)
        params[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()

    ckpt = Checkpoint(format_version=version, config=cfg, params=params,
                      step=step, rng_state=rng_state)
    _validate_shapes(ckpt)
    return ckpt


def _validate_shapes(ckpt: Checkpoint) -> None:
    model = build_model(ckpt.config.model, ckpt.config.arch)
    expected = {name: tuple(p.shape) for name, p in model.named_parameters()}
    if set(expected) != set(ckpt.params):
        missing = sorted(set(expected) - set(ckpt.params))
        extra = sorted(set(ckpt.params) - set(expected))
        raise CheckpointError(
            f"parameter set mismatch against config echo: "
            f"missing {missing}, unexpected {extra}"
        )
    for name, shape in expected.items():
        if tuple(ckpt.params[name].shape) != shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {ckpt.params[name].shape}, "
                f"config echo implies {shape}"
            )


def restore_model(ckpt: Checkpoint):
    """Build the architecture from the config echo and load its parameters."""
    _validate_shapes(ckpt)
    model = build_model(ckpt.config.model, ckpt.config.arch)
    with torch.no_grad():
        for name, param in model.named_parameters():
            param.copy_(torch.from_numpy(ckpt.params[name]))
    return model
