"""Conv-VRNN future-frame predictor and the Conv-VAE ablation baseline.

The recurrent cell runs four stages per time step: a learned prior over the
latent from the previous hidden state, an encoder producing the posterior
from the current frame plus hidden state, a ConvLSTM recurrence over frame
features fused with the spatialized latent, and a deconvolutional decoder
that emits the next-frame prediction.

Frames are channel-first ``(B, C, H, W)`` tensors with values in ``[0, 1]``;
the recurrent state lives at feature resolution ``feat_hw`` x ``feat_hw``.
All sampling goes through explicitly passed ``torch.Generator`` objects, so
forward evaluation with frozen parameters is deterministic and reentrant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .dataio import ClipWindow, frames_to_tensor
from .errors import ConfigError, ContractError, DimensionError
from .objectives import LatentGaussian, kl_gauss

MODE_TRAIN = "train-sample"
MODE_EVAL = "eval-mean"
ARCHITECTURES = ("conv-vrnn", "conv-vae-1", "conv-vae-4")


@dataclass(frozen=True)
class ModelConfig:
    """Shape and seed configuration for both model variants.

    ``image_size`` must be ``feat_hw`` times a power of two; that factor is
    the depth of the strided conv/deconv stacks.
    """

    image_size: int = 128
    channels: int = 3
    horizon: int = 4
    z_dim: int = 20
    feat_hw: int = 16
    feat_ch: int = 32
    hidden_ch: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("image_size", "channels", "horizon", "z_dim",
                     "feat_hw", "feat_ch", "hidden_ch"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.image_size % self.feat_hw != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by feat_hw {self.feat_hw}"
            )
        factor = self.image_size // self.feat_hw
        if factor < 2 or factor & (factor - 1):
            raise ConfigError(
                f"downsampling factor image_size/feat_hw must be a power of two "
                f">= 2, got {factor}"
            )

    @property
    def num_stages(self) -> int:
        return (self.image_size // self.feat_hw).bit_length() - 1

    @property
    def feat_dim(self) -> int:
        return self.feat_hw * self.feat_hw * self.feat_ch


@dataclass
class RecurrentState:
    """ConvLSTM hidden/cell pair, each ``(B, hidden_ch, feat_hw, feat_hw)``."""

    hidden: torch.Tensor
    cell: torch.Tensor

    def __post_init__(self) -> None:
        if self.hidden.shape != self.cell.shape:
            raise DimensionError("hidden and cell must share a shape")


@dataclass
class StepOutput:
    """Everything one cell step produces."""

    prediction: torch.Tensor
    kl: torch.Tensor
    prior: LatentGaussian
    posterior: LatentGaussian
    z: torch.Tensor
    state: RecurrentState


@dataclass
class RolloutResult:
    prediction: torch.Tensor
    kl_sum: torch.Tensor
    steps: list[StepOutput]


def reparameterize(g: LatentGaussian, noise: torch.Tensor) -> torch.Tensor:
    """mean + exp(log_var / 2) * noise."""
    if noise.shape != g.mean.shape:
        raise DimensionError(
            f"noise shape {tuple(noise.shape)} != mean shape {tuple(g.mean.shape)}"
        )
    return g.mean + torch.exp(0.5 * g.log_var) * noise


def _check_mode(mode: str) -> None:
    if mode not in (MODE_TRAIN, MODE_EVAL):
        raise ContractError(f"mode must be {MODE_TRAIN!r} or {MODE_EVAL!r}, got {mode!r}")


def _downsample_stack(in_ch: int, out_ch: int, stages: int) -> nn.Sequential:
    """Strided 3x3 convs halving the spatial side at each stage."""
    layers: list[nn.Module] = []
    ch = in_ch
    for i in range(stages):
        nxt = out_ch if i == stages - 1 else (32 if i == 0 else 64)
        layers += [nn.Conv2d(ch, nxt, 3, stride=2, padding=1), nn.LeakyReLU(0.1)]
        ch = nxt
    return nn.Sequential(*layers)


def _upsample_stack(in_ch: int, out_ch: int, stages: int) -> nn.Sequential:
    """Strided 4x4 transposed convs doubling the side; sigmoid output."""
    layers: list[nn.Module] = []
    ch = in_ch
    for i in range(stages):
        last = i == stages - 1
        nxt = out_ch if last else (32 if i == stages - 2 else 64)
        layers.append(nn.ConvTranspose2d(ch, nxt, 4, stride=2, padding=1))
        layers.append(nn.Sigmoid() if last else nn.LeakyReLU(0.1))
        ch = nxt
    return nn.Sequential(*layers)


def _init_parameters(module: nn.Module, seed: int) -> None:
    """Fan-in-scaled uniform init for every conv/linear, from one generator."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, nn.Linear):
            fan_in = m.in_features
        elif isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
        else:
            continue
        bound = 1.0 / math.sqrt(fan_in)
        with torch.no_grad():
            m.weight.uniform_(-bound, bound, generator=gen)
            if m.bias is not None:
                m.bias.uniform_(-bound, bound, generator=gen)


class GaussianHead(nn.Module):
    """Two distinct fully connected heads mapping a feature map to (mean, log_var)."""

    def __init__(self, in_features: int, z_dim: int):
        super().__init__()
        self.head_mean = nn.Linear(in_features, z_dim)
        self.head_logvar = nn.Linear(in_features, z_dim)

    def forward(self, feat: torch.Tensor) -> LatentGaussian:
        flat = feat.flatten(1)
        return LatentGaussian(self.head_mean(flat), self.head_logvar(flat))


class ConvLSTMCell(nn.Module):
    """One ConvLSTM step: convolutional input/forget/output/candidate gates."""

    def __init__(self, in_ch: int, hidden_ch: int, kernel_size: int = 3):
        super().__init__()
        self.hidden_ch = hidden_ch
        self.gates = nn.Conv2d(in_ch + hidden_ch, 4 * hidden_ch, kernel_size,
                               padding=kernel_size // 2)

    def forward(self, x: torch.Tensor, state: RecurrentState) -> RecurrentState:
        combined = torch.cat([x, state.hidden], dim=1)
        i, f, o, g = torch.split(self.gates(combined), self.hidden_ch, dim=1)
        cell = torch.sigmoid(f) * state.cell + torch.sigmoid(i) * torch.tanh(g)
        hidden = torch.sigmoid(o) * torch.tanh(cell)
        return RecurrentState(hidden=hidden, cell=cell)


class EncoderNet(nn.Module):
    """Posterior over the latent from the current frame and previous hidden state.

    The frame is downsampled to feature resolution, concatenated with the
    hidden state along channels, fused by one conv, then mapped to Gaussian
    parameters by two fully connected heads.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.features = _downsample_stack(cfg.channels, cfg.feat_ch, cfg.num_stages)
        self.fuse = nn.Sequential(
            nn.Conv2d(cfg.feat_ch + cfg.hidden_ch, cfg.feat_ch, 3, padding=1),
            nn.LeakyReLU(0.1),
        )
        self.head_mean = nn.Linear(cfg.feat_dim, cfg.z_dim)
        self.head_logvar = nn.Linear(cfg.feat_dim, cfg.z_dim)

    def forward(self, x: torch.Tensor, hidden: torch.Tensor) -> LatentGaussian:
        feat = self.features(x)
        fused = self.fuse(torch.cat([feat, hidden], dim=1))
        flat = fused.flatten(1)
        return LatentGaussian(self.head_mean(flat), self.head_logvar(flat))


class ConvVRNN(nn.Module):
    """The recurrent variational future-frame predictor."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.phi_x = _downsample_stack(cfg.channels, cfg.feat_ch, cfg.num_stages)
        # Hidden-state feature extractor, shared by the prior and the decoder.
        self.phi_h = nn.Sequential(
            nn.Conv2d(cfg.hidden_ch, cfg.feat_ch, 3, padding=1),
            nn.LeakyReLU(0.1),
            nn.Conv2d(cfg.feat_ch, cfg.feat_ch, 3, padding=1),
            nn.LeakyReLU(0.1),
        )
        self.prior = GaussianHead(cfg.feat_dim, cfg.z_dim)
        self.enc = EncoderNet(cfg)
        self.z_fc = nn.Linear(cfg.z_dim, cfg.feat_dim)
        self.lstm = ConvLSTMCell(2 * cfg.feat_ch, cfg.hidden_ch)
        self.dec = _upsample_stack(2 * cfg.feat_ch, cfg.channels, cfg.num_stages)
        _init_parameters(self, cfg.seed)

    # -- shape guards -------------------------------------------------------

    def _param_dtype(self) -> torch.dtype:
        return self.z_fc.weight.dtype

    def _check_frame(self, x: torch.Tensor) -> None:
        cfg = self.cfg
        expected = (cfg.channels, cfg.image_size, cfg.image_size)
        if x.dim() != 4 or tuple(x.shape[1:]) != expected:
            raise DimensionError(
                f"frame must be (B,{expected[0]},{expected[1]},{expected[2]}), "
                f"got {tuple(x.shape)}"
            )

    def _check_state(self, state: RecurrentState, batch: int) -> None:
        cfg = self.cfg
        expected = (batch, cfg.hidden_ch, cfg.feat_hw, cfg.feat_hw)
        if tuple(state.hidden.shape) != expected:
            raise DimensionError(
                f"state must be {expected}, got {tuple(state.hidden.shape)}"
            )

    # -- cell stages --------------------------------------------------------

    def init_state(self, batch: int) -> RecurrentState:
        """All-zero hidden and cell tensors for a fresh sequence."""
        if batch < 1:
            raise ConfigError(f"batch must be >= 1, got {batch}")
        cfg = self.cfg
        shape = (batch, cfg.hidden_ch, cfg.feat_hw, cfg.feat_hw)
        zeros = torch.zeros(shape, dtype=self._param_dtype())
        return RecurrentState(hidden=zeros, cell=zeros.clone())

    def prior_net(self, state: RecurrentState) -> LatentGaussian:
        """Learned prior over the latent, from the previous hidden state."""
        self._check_state(state, state.hidden.shape[0])
        return self.prior(self.phi_h(state.hidden))

    def encoder(self, x_t: torch.Tensor, state: RecurrentState) -> LatentGaussian:
        """Posterior over the latent, from the current frame and hidden state."""
        self._check_frame(x_t)
        self._check_state(state, x_t.shape[0])
        return self.enc(x_t, state.hidden)

    def spatialize(self, z: torch.Tensor) -> torch.Tensor:
        """Fully connected map from the latent to a feature-resolution tensor."""
        cfg = self.cfg
        if z.dim() != 2 or z.shape[1] != cfg.z_dim:
            raise DimensionError(f"z must be (B,{cfg.z_dim}), got {tuple(z.shape)}")
        return self.z_fc(z).reshape(z.shape[0], cfg.feat_ch, cfg.feat_hw, cfg.feat_hw)

    def recurrence(self, x_t: torch.Tensor, z_r: torch.Tensor,
                   state: RecurrentState) -> RecurrentState:
        """One ConvLSTM step over frame features concatenated with z_r."""
        self._check_frame(x_t)
        feat = self.phi_x(x_t)
        return self.lstm(torch.cat([feat, z_r], dim=1), state)

    def decoder(self, z_r: torch.Tensor, state: RecurrentState) -> torch.Tensor:
        """Predicted next frame from z_r and hidden-state features; range [0,1]."""
        inp = torch.cat([z_r, self.phi_h(state.hidden)], dim=1)
        return self.dec(inp)

    # -- cell step and rollout ----------------------------------------------

    def step(self, x_t: torch.Tensor, state: RecurrentState,
             mode: str = MODE_EVAL,
             generator: torch.Generator | None = None) -> StepOutput:
        """Run prior, encoder, latent sampling, decoder, and recurrence once.

        ``train-sample`` draws the latent from the posterior via the given
        generator; ``eval-mean`` uses the posterior mean, which makes the
        step a deterministic function of its inputs.
        """
        _check_mode(mode)
        prior = self.prior_net(state)
        posterior = self.encoder(x_t, state)
        if mode == MODE_TRAIN:
            noise = torch.empty_like(posterior.mean).normal_(generator=generator)
        else:
            noise = torch.zeros_like(posterior.mean)
        z = reparameterize(posterior, noise)
        z_r = self.spatialize(z)
        prediction = self.decoder(z_r, state)
        new_state = self.recurrence(x_t, z_r, state)
        kl = kl_gauss(posterior, prior)
        return StepOutput(prediction=prediction, kl=kl, prior=prior,
                          posterior=posterior, z=z, state=new_state)

    def rollout(self, clip, state: RecurrentState | None = None,
                mode: str = MODE_EVAL,
                generator: torch.Generator | None = None) -> RolloutResult:
        """Step through the T input frames; the final step's output is the
        next-frame prediction and the KL terms are summed over all steps.

        ``clip`` is a ClipWindow or a ``(B, T, C, H, W)`` tensor.
        """
        if isinstance(clip, ClipWindow):
            frames = frames_to_tensor(clip.inputs, self._param_dtype()).unsqueeze(0)
        else:
            frames = clip
        if frames.dim() != 5:
            raise DimensionError(
                f"rollout input must be (B,T,C,H,W), got {tuple(frames.shape)}"
            )
        if frames.shape[1] != self.cfg.horizon:
            raise ContractError(
                f"clip has {frames.shape[1]} input frames, expected {self.cfg.horizon}"
            )
        if state is None:
            state = self.init_state(frames.shape[0])
        steps: list[StepOutput] = []
        for t in range(self.cfg.horizon):
            out = self.step(frames[:, t], state, mode=mode, generator=generator)
            state = out.state
            steps.append(out)
        kl_sum = torch.stack([s.kl for s in steps]).sum()
        return RolloutResult(prediction=steps[-1].prediction, kl_sum=kl_sum,
                             steps=steps)

    def predict_video(self, frames: torch.Tensor,
                      reset_per_window: bool = False) -> torch.Tensor:
        """Eval-mean predictions for every target index from horizon to N-1.

        ``frames`` is ``(N, C, H, W)`` for one video. By default the
        recurrent state threads continuously through the video; with
        ``reset_per_window`` each target is predicted by a fresh zero-state
        rollout over its T preceding frames.
        """
        horizon = self.cfg.horizon
        n = frames.shape[0]
        outs: list[torch.Tensor] = []
        with torch.no_grad():
            if reset_per_window:
                for start in range(n - horizon):
                    res = self.rollout(frames[start:start + horizon].unsqueeze(0))
                    outs.append(res.prediction[0])
            else:
                state = self.init_state(1)
                for i in range(n - 1):
                    out = self.step(frames[i:i + 1], state, mode=MODE_EVAL)
                    state = out.state
                    if i + 1 >= horizon:
                        outs.append(out.prediction[0])
        if not outs:
            return torch.empty((0, *frames.shape[1:]), dtype=frames.dtype)
        return torch.stack(outs)


class ConvVAE(nn.Module):
    """Non-recurrent ablation: encode the input frame(s) directly to a latent
    with a fixed standard-normal prior, then decode the next-frame prediction.
    """

    def __init__(self, cfg: ModelConfig, num_input_frames: int):
        super().__init__()
        if num_input_frames not in (1, cfg.horizon):
            raise ConfigError(
                f"num_input_frames must be 1 or {cfg.horizon}, got {num_input_frames}"
            )
        self.cfg = cfg
        self.num_input_frames = num_input_frames
        self.enc_features = _downsample_stack(
            cfg.channels * num_input_frames, cfg.feat_ch, cfg.num_stages
        )
        self.head_mean = nn.Linear(cfg.feat_dim, cfg.z_dim)
        self.head_logvar = nn.Linear(cfg.feat_dim, cfg.z_dim)
        self.z_fc = nn.Linear(cfg.z_dim, cfg.feat_dim)
        self.dec = _upsample_stack(cfg.feat_ch, cfg.channels, cfg.num_stages)
        _init_parameters(self, cfg.seed)

    def forward(self, frames: torch.Tensor, mode: str = MODE_EVAL,
                generator: torch.Generator | None = None
                ) -> tuple[torch.Tensor, torch.Tensor]:
        """Predict the frame following ``frames`` ``(B, k, C, H, W)``;
        returns (prediction, kl against the standard-normal prior)."""
        _check_mode(mode)
        if frames.dim() != 5:
            raise DimensionError(
                f"input must be (B,k,C,H,W), got {tuple(frames.shape)}"
            )
        if frames.shape[1] != self.num_input_frames:
            raise ContractError(
                f"model takes {self.num_input_frames} input frame(s), "
                f"got {frames.shape[1]}"
            )
        b = frames.shape[0]
        x = frames.reshape(b, -1, frames.shape[-2], frames.shape[-1])
        flat = self.enc_features(x).flatten(1)
        posterior = LatentGaussian(self.head_mean(flat), self.head_logvar(flat))
        if mode == MODE_TRAIN:
            noise = torch.empty_like(posterior.mean).normal_(generator=generator)
        else:
            noise = torch.zeros_like(posterior.mean)
        z = reparameterize(posterior, noise)
        cfg = self.cfg
        z_r = self.z_fc(z).reshape(b, cfg.feat_ch, cfg.feat_hw, cfg.feat_hw)
        prediction = self.dec(z_r)
        prior = LatentGaussian(torch.zeros_like(posterior.mean),
                               torch.zeros_like(posterior.log_var))
        return prediction, kl_gauss(posterior, prior)

    def predict_video(self, frames: torch.Tensor,
                      reset_per_window: bool = False) -> torch.Tensor:
        """Eval-mean predictions for targets horizon..N-1, matching the
        recurrent model's scored frame set. ``reset_per_window`` is accepted
        for interface parity; the stateless model ignores it."""
        horizon = self.cfg.horizon
        k = self.num_input_frames
        n = frames.shape[0]
        outs: list[torch.Tensor] = []
        with torch.no_grad():
            for target in range(horizon, n):
                window = frames[target - k:target].unsqueeze(0)
                pred, _ = self.forward(window, mode=MODE_EVAL)
                outs.append(pred[0])
        if not outs:
            return torch.empty((0, *frames.shape[1:]), dtype=frames.dtype)
        return torch.stack(outs)


def build_model(cfg: ModelConfig, arch: str = "conv-vrnn") -> nn.Module:
    """Instantiate one of the supported architectures by name."""
    if arch == "conv-vrnn":
        return ConvVRNN(cfg)
    if arch == "conv-vae-1":
        return ConvVAE(cfg, 1)
    if arch == "conv-vae-4":
        return ConvVAE(cfg, cfg.horizon)
    raise ConfigError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
