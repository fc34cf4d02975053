"""Training determinism, objective wiring, and checkpoint round-trips."""

import numpy as np
import pytest
import torch

from convvrnn.dataio import SynthSpec, VideoRecord, synth_video
from convvrnn.errors import CheckpointError, ConfigError, DataError
from convvrnn.model import ConvVRNN, ModelConfig
from convvrnn.objectives import LossConfig
from convvrnn.scoring import evaluate, frame_losses
from convvrnn.trainer import (
    Checkpoint,
    TrainConfig,
    checkpoint_from_model,
    config_from_dict,
    config_to_json,
    load_checkpoint,
    restore_model,
    save_checkpoint,
    train,
)

import json


SMALL_MODEL = ModelConfig(image_size=32, channels=1, horizon=4, z_dim=8,
                          feat_hw=4, feat_ch=8, hidden_ch=16, seed=5)
SMALL_LOSS = LossConfig(msssim_scales=2, msssim_window=3)


def small_train_cfg(**overrides):
    base = dict(steps=3, batch_size=2, learning_rate=1e-3, seed=9,
                loss=SMALL_LOSS, model=SMALL_MODEL)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def videos():
    return [synth_video(SynthSpec(image_size=32, num_frames=16, sprite_size=6,
                                  velocity=2, seed=s)) for s in (0, 1)]


class TestTrainConfig:
    def test_invalid_fields(self):
        with pytest.raises(ConfigError):
            small_train_cfg(steps=0)
        with pytest.raises(ConfigError):
            small_train_cfg(learning_rate=0.0)
        with pytest.raises(ConfigError):
            small_train_cfg(arch="resnet")
        with pytest.raises(ConfigError):
            small_train_cfg(grad_clip=-1.0)

    def test_json_round_trip(self):
        cfg = small_train_cfg(beta=0.5, grad_clip=None, arch="conv-vae-4")
        restored = config_from_dict(json.loads(config_to_json(cfg)))
        assert restored == cfg


class TestTrain:
    def test_empty_dataset(self):
        short = VideoRecord("v", np.zeros((3, 32, 32, 1), np.float32))
        with pytest.raises(DataError):
            train([short], small_train_cfg())

    def test_seeded_determinism_of_loss_trace(self, videos, tmp_path):
        cfg = small_train_cfg(steps=2)
        train(videos, cfg, tmp_path / "a")
        train(videos, cfg, tmp_path / "b")
        log_a = (tmp_path / "a" / "loss_log.csv").read_text()
        log_b = (tmp_path / "b" / "loss_log.csv").read_text()
        assert log_a == log_b
        header, first, second = log_a.splitlines()[:3]
        assert header == "step,total,kl,l1,msssim,gdl"
        assert first.startswith("1,") and second.startswith("2,")

    def test_loss_trace_finite(self, videos, tmp_path):
        train(videos, small_train_cfg(steps=3), tmp_path)
        rows = (tmp_path / "loss_log.csv").read_text().splitlines()[1:]
        values = [float(x) for row in rows for x in row.split(",")[1:]]
        assert all(np.isfinite(values))

    def test_beta_zero_excludes_kl_from_updates(self, videos):
        # with beta=0 and an L1-only loss the prior head gets no gradient,
        # so its parameters keep their init values
        cfg = small_train_cfg(
            steps=2,
            beta=0.0,
            loss=LossConfig(use_l1=True, use_msssim=False, use_gdl=False),
        )
        ckpt = train(videos, cfg)
        fresh = ConvVRNN(SMALL_MODEL)
        for name in ("prior.head_mean.weight", "prior.head_logvar.bias"):
            trained = ckpt.params[name]
            init = dict(fresh.named_parameters())[name].detach().numpy()
            assert np.array_equal(trained, init)

    def test_conv_vae_arch_trains(self, videos):
        ckpt = train(videos, small_train_cfg(arch="conv-vae-4"))
        assert any(name.startswith("enc_features") for name in ckpt.params)

    def test_conv_vae_1_trains(self, videos):
        ckpt = train(videos, small_train_cfg(arch="conv-vae-1"))
        assert ckpt.config.arch == "conv-vae-1"

    def test_per_step_prediction_flag(self, videos):
        ckpt = train(videos, small_train_cfg(per_step_prediction=True))
        assert ckpt.step == 3

    def test_periodic_checkpoints(self, videos, tmp_path):
        train(videos, small_train_cfg(steps=4, checkpoint_every=2), tmp_path)
        assert (tmp_path / "checkpoints" / "step_000002.ckpt").exists()
        assert (tmp_path / "checkpoint.ckpt").exists()


class TestCheckpointRoundTrip:
    def test_bitwise_round_trip(self, tmp_path):
        model = ConvVRNN(SMALL_MODEL)
        cfg = small_train_cfg()
        ckpt = checkpoint_from_model(model, cfg, step=7, rng_state=b"\x01\x02")
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert loaded.step == 7
        assert loaded.rng_state == b"\x01\x02"
        assert loaded.config == cfg
        assert set(loaded.params) == set(ckpt.params)
        for name in ckpt.params:
            assert np.array_equal(loaded.params[name], ckpt.params[name])
            assert loaded.params[name].dtype == ckpt.params[name].dtype

    def test_restore_preserves_evaluation_exactly(self, videos, tmp_path):
        cfg = small_train_cfg(steps=2)
        ckpt = train(videos, cfg)
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        model_a = restore_model(ckpt)
        model_b = restore_model(load_checkpoint(path))
        labeled = VideoRecord(
            videos[0].video_id, videos[0].frames,
            np.zeros(len(videos[0]), np.int8),
        )
        la = frame_losses(model_a, labeled, cfg.loss)
        lb = frame_losses(model_b, labeled, cfg.loss)
        assert np.array_equal(la, lb)

    def test_truncated_file(self, tmp_path):
        model = ConvVRNN(SMALL_MODEL)
        ckpt = checkpoint_from_model(model, small_train_cfg(), 1)
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        data = path.read_bytes()
        for cut in (4, 10, len(data) // 2, len(data) - 3):
            path.write_bytes(data[:cut])
            with pytest.raises(CheckpointError):
                load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_unknown_version(self, tmp_path):
        model = ConvVRNN(SMALL_MODEL)
        ckpt = checkpoint_from_model(model, small_train_cfg(), 1)
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        data = bytearray(path.read_bytes())
        data[8] = 99  # format_version field
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="format_version"):
            load_checkpoint(path)

    def test_shape_mismatch_against_config_echo(self, tmp_path):
        model = ConvVRNN(SMALL_MODEL)
        ckpt = checkpoint_from_model(model, small_train_cfg(), 1)
        ckpt.params["z_fc.weight"] = ckpt.params["z_fc.weight"][:, :-1]
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        with pytest.raises(CheckpointError, match="z_fc.weight"):
            load_checkpoint(path)

    def test_missing_tensor(self, tmp_path):
        model = ConvVRNN(SMALL_MODEL)
        ckpt = checkpoint_from_model(model, small_train_cfg(), 1)
        del ckpt.params["prior.head_mean.weight"]
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        with pytest.raises(CheckpointError, match="missing"):
            load_checkpoint(path)

    def test_full_run_determinism(self, videos):
        cfg = small_train_cfg(steps=2)
        a = train(videos, cfg)
        b = train(videos, cfg)
        for name in a.params:
            assert np.array_equal(a.params[name], b.params[name])
