"""Command-line entry point: synth, train, evaluate, and score.

Configuration precedence is defaults < config file (--config, flat key=value
lines mirroring flag names) < explicit command-line flags. Every command
writes a manifest.json with the fully resolved configuration and its hash
into the output directory before doing any long-running work.

Exit codes: 0 success, 1 runtime/data failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .dataio import (
    ANOMALY_KINDS,
    TEST_SPLIT,
    TRAIN_SPLIT,
    load_split,
    make_synth_dataset,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    MetricError,
    TrainingError,
)
from .model import ARCHITECTURES, ModelConfig
from .objectives import LossConfig
from .scoring import (
    ScoreSeries,
    evaluate,
    frame_losses,
    normalize_scores,
    write_report,
    write_score_csv,
)
from .trainer import TrainConfig, config_to_json, load_checkpoint, restore_model, train

logger = logging.getLogger(__name__)

# option name -> (type, default); option names mirror the CLI flag spellings
_COMMON = {
    "seed": (int, 0),
    "image-size": (int, 64),
    "channels": (int, 1),
}
_SYNTH_OPTIONS = {
    **_COMMON,
    "train-videos": (int, 8),
    "test-videos": (int, 4),
    "num-frames": (int, 120),
    "sprite-size": (int, 10),
    "velocity": (int, 2),
    "anomaly": (str, "mix"),
}
_TRAIN_OPTIONS = {
    **_COMMON,
    "steps": (int, 2000),
    "batch": (int, 8),
    "lr": (float, 2e-4),
    "beta": (float, 1.0),
    "grad-clip": (float, 5.0),  # 0 disables clipping
    "model": (str, "conv-vrnn"),
    "no-msssim": (bool, False),
    "no-gdl": (bool, False),
    "msssim-scales": (int, 3),
    "msssim-window": (int, 11),
    "T": (int, 4),
    "z-dim": (int, 20),
    "feat-hw": (int, 0),  # 0 derives image-size // 8
    "feat-ch": (int, 32),
    "hidden-ch": (int, 64),
    "train-stride": (int, 1),
    "checkpoint-every": (int, 0),
}
_EVAL_OPTIONS = {
    "seed": (int, 0),
    "reset-per-window": (bool, False),
    "global-norm": (bool, False),
}


def _parse_config_file(path: Path, options: dict) -> dict:
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or key not in options:
            raise ConfigError(f"{path}:{lineno}: unknown config entry {line!r}")
        kind = options[key][0]
        if kind is bool:
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"{path}:{lineno}: expected a boolean, got {raw!r}")
            values[key] = raw.lower() in ("true", "1", "yes")
        else:
            try:
                values[key] = kind(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return values


def _resolve(args: argparse.Namespace, options: dict) -> dict:
    """defaults < config file < explicit flags."""
    resolved = {key: default for key, (_, default) in options.items()}
    if getattr(args, "config", None):
        resolved.update(_parse_config_file(Path(args.config), options))
    for key in options:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            resolved[key] = value
    return resolved


def _add_options(parser: argparse.ArgumentParser, options: dict) -> None:
    for key, (kind, default) in options.items():
        flag = f"--{key}"
        if kind is bool:
            parser.add_argument(flag, action="store_true", default=None,
                                help=f"(default {default})")
        else:
            choices = None
            if key == "model":
                choices = list(ARCHITECTURES)
            elif key == "anomaly":
                choices = ["mix", *ANOMALY_KINDS]
            parser.add_argument(flag, type=kind, default=None, choices=choices,
                                help=f"(default {default})")


def _write_manifest(out_dir: Path, command: str, resolved: dict,
                    data_root=None) -> str:
    out_dir.mkdir(parents=True, exist_ok=True)
    config_text = json.dumps(resolved, sort_keys=True)
    config_hash = hashlib.sha256(config_text.encode()).hexdigest()
    manifest = {
        "command": command,
        "config": resolved,
        "data_root": str(data_root) if data_root else None,
        "out_dir": str(out_dir),
        "config_hash": config_hash,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return config_hash


def _model_config(resolved: dict) -> ModelConfig:
    feat_hw = resolved["feat-hw"] or max(1, resolved["image-size"] // 8)
    return ModelConfig(
        image_size=resolved["image-size"],
        channels=resolved["channels"],
        horizon=resolved["T"],
        z_dim=resolved["z-dim"],
        feat_hw=feat_hw,
        feat_ch=resolved["feat-ch"],
        hidden_ch=resolved["hidden-ch"],
        seed=resolved["seed"],
    )


def _loss_config(resolved: dict) -> LossConfig:
    return LossConfig(
        use_l1=True,
        use_msssim=not resolved["no-msssim"],
        use_gdl=not resolved["no-gdl"],
        msssim_scales=resolved["msssim-scales"],
        msssim_window=resolved["msssim-window"],
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _SYNTH_OPTIONS)
    out = Path(args.out)
    _write_manifest(out, "synth", resolved)
    written = make_synth_dataset(
        out,
        num_train=resolved["train-videos"],
        num_test=resolved["test-videos"],
        image_size=resolved["image-size"],
        num_frames=resolved["num-frames"],
        sprite_size=resolved["sprite-size"],
        velocity=resolved["velocity"],
        anomaly=resolved["anomaly"],
        seed=resolved["seed"],
    )
    print(f"wrote {len(written[TRAIN_SPLIT])} training and "
          f"{len(written[TEST_SPLIT])} testing videos under {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _TRAIN_OPTIONS)
    data_root = Path(args.data)
    out = Path(args.out)
    cfg = TrainConfig(
        steps=resolved["steps"],
        batch_size=resolved["batch"],
        learning_rate=resolved["lr"],
        beta=resolved["beta"],
        grad_clip=resolved["grad-clip"] or None,
        seed=resolved["seed"],
        arch=resolved["model"],
        train_stride=resolved["train-stride"],
        checkpoint_every=resolved["checkpoint-every"],
        loss=_loss_config(resolved),
        model=_model_config(resolved),
    )
    _write_manifest(out, "train", resolved, data_root)
    videos = load_split(data_root, TRAIN_SPLIT, cfg.model.image_size,
                        cfg.model.channels)
    logger.info("training %s on %d videos for %d steps",
                cfg.arch, len(videos), cfg.steps)
    train(videos, cfg, out)
    print(f"checkpoint: {out / 'checkpoint.ckpt'}")
    return 0


def _load_test_videos(data_root: Path, ckpt, with_labels: bool):
    model_cfg = ckpt.config.model
    return load_split(data_root, TEST_SPLIT, model_cfg.image_size,
                      model_cfg.channels, with_labels=with_labels)


def _label_runs(labels: np.ndarray):
    runs, start = [], None
    for i, v in enumerate(labels):
        if v == 1 and start is None:
            start = i
        elif v != 1 and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(labels)))
    return runs


def _write_plots(per_video, plots_dir: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plots_dir.mkdir(parents=True, exist_ok=True)
    for s in per_video:
        fig, ax = plt.subplots(figsize=(8, 3))
        ax.plot(s.frame_indices, s.scores, color="tab:blue", lw=1.5,
                label="anomaly score S(t)")
        for lo, hi in _label_runs(np.asarray(s.labels)):
            ax.axvspan(s.frame_indices[lo] - 0.5, s.frame_indices[hi - 1] + 0.5,
                       color="tab:red", alpha=0.2)
        ax.set_xlabel("frame index")
        ax.set_ylabel("S(t)")
        ax.set_ylim(-0.05, 1.05)
        ax.set_title(s.video_id)
        ax.legend(loc="upper left", fontsize=8)
        fig.tight_layout()
        fig.savefig(plots_dir / f"{s.video_id}.png", dpi=100)
        plt.close(fig)


def cmd_evaluate(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _EVAL_OPTIONS)
    data_root = Path(args.data)
    out = Path(args.out)
    _write_manifest(out, "evaluate", resolved, data_root)
    ckpt = load_checkpoint(args.ckpt)
    model = restore_model(ckpt)
    videos = _load_test_videos(data_root, ckpt, with_labels=True)
    report = evaluate(model, videos, ckpt.config.loss,
                      reset_per_window=resolved["reset-per-window"],
                      global_normalize=resolved["global-norm"])
    write_score_csv(report.per_video, out / "scores.csv")
    config_hash = hashlib.sha256(config_to_json(ckpt.config).encode()).hexdigest()
    write_report(report, out / "report.txt", config_hash=config_hash)
    _write_plots(report.per_video, out / "plots")
    print(f"AUC={report.auc:.6f}")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _EVAL_OPTIONS)
    data_root = Path(args.data)
    out = Path(args.out)
    _write_manifest(out, "score", resolved, data_root)
    ckpt = load_checkpoint(args.ckpt)
    model = restore_model(ckpt)
    videos = _load_test_videos(data_root, ckpt, with_labels=False)
    series = []
    horizon = ckpt.config.model.horizon
    for video in videos:
        losses = frame_losses(model, video, ckpt.config.loss,
                              reset_per_window=resolved["reset-per-window"])
        series.append(ScoreSeries(
            video_id=video.video_id,
            frame_indices=np.arange(horizon, horizon + len(losses)),
            losses=losses,
            scores=normalize_scores(losses) if losses.size else losses,
            labels=np.full(len(losses), -1, dtype=np.int8),  # -1 = unlabeled
        ))
    write_score_csv(series, out / "scores.csv")
    total = sum(len(s.losses) for s in series)
    print(f"scored {total} frames from {len(series)} videos")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convvrnn",
        description="Future-frame-prediction video anomaly detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="write a synthetic sprite dataset")
    p_synth.add_argument("--out", required=True, help="dataset root to create")
    p_synth.add_argument("--config", help="key=value config file")
    _add_options(p_synth, _SYNTH_OPTIONS)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train a model on a dataset")
    p_train.add_argument("--data", required=True, help="dataset root")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--config", help="key=value config file")
    _add_options(p_train, _TRAIN_OPTIONS)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate",
                            help="score a labeled test set and report AUC")
    p_eval.add_argument("--data", required=True, help="dataset root")
    p_eval.add_argument("--ckpt", required=True, help="checkpoint file")
    p_eval.add_argument("--out", required=True, help="output directory")
    p_eval.add_argument("--config", help="key=value config file")
    _add_options(p_eval, _EVAL_OPTIONS)
    p_eval.set_defaults(func=cmd_evaluate)

    p_score = sub.add_parser("score",
                             help="emit per-frame scores without labels")
    p_score.add_argument("--data", required=True, help="dataset root")
    p_score.add_argument("--ckpt", required=True, help="checkpoint file")
    p_score.add_argument("--out", required=True, help="output directory")
    p_score.add_argument("--config", help="key=value config file")
    _add_options(p_score, _EVAL_OPTIONS)
    p_score.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ContractError, DimensionError, DataError, MetricError,
            CheckpointError, TrainingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
