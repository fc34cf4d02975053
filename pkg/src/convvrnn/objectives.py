"""Loss terms for frame prediction and the latent-space KL regularizer.

All image losses accept ``(C, H, W)`` or ``(B, C, H, W)`` tensors with pixel
values in ``[0, 1]`` and reduce to a scalar by averaging over every element,
so their magnitudes are comparable across resolutions and batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError, DimensionError

# Exponent weights of the standard five-scale MS-SSIM profile. When fewer
# scales are configured the leading entries are renormalized to sum to 1.
_MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

# SSIM stabilization constants for unit dynamic range.
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LatentGaussian:
    """Diagonal Gaussian over the latent, as (mean, log-variance) vectors.

    Both tensors share a shape whose last dimension is the latent size;
    leading dimensions, when present, are batch dimensions.
    """

    mean: torch.Tensor
    log_var: torch.Tensor

    def __post_init__(self) -> None:
        if self.mean.shape != self.log_var.shape:
            raise DimensionError(
                f"mean shape {tuple(self.mean.shape)} != "
                f"log_var shape {tuple(self.log_var.shape)}"
            )

    @property
    def std(self) -> torch.Tensor:
        return torch.exp(0.5 * self.log_var)


@dataclass(frozen=True)
class LossConfig:
    """Which prediction-loss terms are active and their knobs."""

    use_l1: bool = True
    use_msssim: bool = True
    use_gdl: bool = True
    msssim_scales: int = 3
    msssim_window: int = 11
    gdl_alpha: float = 1.0

    def __post_init__(self) -> None:
        if not (self.use_l1 or self.use_msssim or self.use_gdl):
            raise ConfigError("at least one prediction-loss term must be enabled")
        if self.msssim_scales < 1:
            raise ConfigError(f"msssim_scales must be >= 1, got {self.msssim_scales}")
        if self.msssim_window < 1 or self.msssim_window % 2 == 0:
            raise ConfigError(
                f"msssim_window must be a positive odd integer, got {self.msssim_window}"
            )
        if self.gdl_alpha <= 0:
            raise ConfigError(f"gdl_alpha must be positive, got {self.gdl_alpha}")


def _as_batched(x: torch.Tensor, name: str) -> torch.Tensor:
    if x.dim() == 3:
        return x.unsqueeze(0)
    if x.dim() == 4:
        return x
    raise DimensionError(f"{name} must be (C,H,W) or (B,C,H,W), got {tuple(x.shape)}")


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    a = _as_batched(a, "a")
    b = _as_batched(b, "b")
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a, b


def l1_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute pixel difference."""
    a, b = _check_pair(a, b)
    return (a - b).abs().mean()


def gdl_loss(a: torch.Tensor, b: torch.Tensor, alpha: float = 1.0) -> torch.Tensor:
    """Gradient difference loss.

    Penalizes mismatch between the absolute forward differences of the two
    images along each spatial axis:

        mean | |di a| - |di b| |^alpha  +  mean | |dj a| - |dj b| |^alpha

    where ``di`` / ``dj`` are horizontal / vertical neighbour differences and
    each mean runs over that axis's valid positions. Invariant to adding a
    constant to either image.
    """
    a, b = _check_pair(a, b)
    di_a = (a[..., :, 1:] - a[..., :, :-1]).abs()
    di_b = (b[..., :, 1:] - b[..., :, :-1]).abs()
    dj_a = (a[..., 1:, :] - a[..., :-1, :]).abs()
    dj_b = (b[..., 1:, :] - b[..., :-1, :]).abs()
    term_i = (di_a - di_b).abs() ** alpha
    term_j = (dj_a - dj_b).abs() ** alpha
    return term_i.mean() + term_j.mean()


def _gaussian_window(size: int, sigma: float, dtype: torch.dtype,
                     device: torch.device) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def _ssim_maps(a: torch.Tensor, b: torch.Tensor,
               window: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-pixel luminance and contrast-structure maps (valid padding)."""
    channels = a.shape[1]
    kernel = window.expand(channels, 1, *window.shape)
    mu_a = F.conv2d(a, kernel, groups=channels)
    mu_b = F.conv2d(b, kernel, groups=channels)
    var_a = F.conv2d(a * a, kernel, groups=channels) - mu_a * mu_a
    var_b = F.conv2d(b * b, kernel, groups=channels) - mu_b * mu_b
    cov = F.conv2d(a * b, kernel, groups=channels) - mu_a * mu_b
    lum = (2.0 * mu_a * mu_b + _SSIM_C1) / (mu_a * mu_a + mu_b * mu_b + _SSIM_C1)
    cs = (2.0 * cov + _SSIM_C2) / (var_a + var_b + _SSIM_C2)
    return lum, cs


def msssim_weights(scales: int) -> torch.Tensor:
    w = torch.tensor(_MSSSIM_WEIGHTS[:scales], dtype=torch.float64)
    return w / w.sum()


def msssim_loss(a: torch.Tensor, b: torch.Tensor,
                cfg: LossConfig | None = None) -> torch.Tensor:
    """1 - MS-SSIM(a, b).

    Per-scale SSIM statistics use a Gaussian window (sigma 1.5, valid
    padding); scales are linked by 2x average-pool downsampling and combined
    as an exponent-weighted product. Contrast-structure means are clamped at
    zero before exponentiation so the product stays real; the loss therefore
    lands in [0, 1] (within the declared [0, 2] envelope).
    """
    cfg = cfg or LossConfig()
    a, b = _check_pair(a, b)
    size = min(a.shape[-2], a.shape[-1])
    if (size >> (cfg.msssim_scales - 1)) < cfg.msssim_window:
        raise ConfigError(
            f"image side {size} supports no {cfg.msssim_scales}-scale MS-SSIM "
            f"with window {cfg.msssim_window}"
        )
    window = _gaussian_window(cfg.msssim_window, 1.5, a.dtype, a.device)
    weights = msssim_weights(cfg.msssim_scales).to(dtype=a.dtype, device=a.device)

    values = []
    for scale in range(cfg.msssim_scales):
        lum, cs = _ssim_maps(a, b, window)
        if scale == cfg.msssim_scales - 1:
            values.append((lum * cs).mean())
        else:
            values.append(cs.mean())
            a = F.avg_pool2d(a, kernel_size=2)
            b = F.avg_pool2d(b, kernel_size=2)
    stacked = torch.stack(values).clamp_min(0.0)
    msssim = torch.prod(stacked ** weights)
    return 1.0 - msssim


def kl_gauss(q: LatentGaussian, p: LatentGaussian) -> torch.Tensor:
    """Closed-form KL(q || p) between diagonal Gaussians.

    Summed over the latent dimension and averaged over any leading batch
    dimensions; zero exactly when q and p coincide.
    """
    if q.mean.shape != p.mean.shape:
        raise DimensionError(
            f"latent dimension mismatch: {tuple(q.mean.shape)} vs {tuple(p.mean.shape)}"
        )
    var_q = torch.exp(q.log_var)
    var_p = torch.exp(p.log_var)
    per_dim = 0.5 * (
        p.log_var - q.log_var + (var_q + (q.mean - p.mean) ** 2) / var_p - 1.0
    )
    kl = per_dim.sum(dim=-1)
    if kl.dim() > 0:
        kl = kl.mean()
    # Guard against sub-epsilon negative rounding residue.
    return kl.clamp_min(0.0)


def prediction_loss_terms(pred: torch.Tensor, target: torch.Tensor,
                          cfg: LossConfig) -> dict[str, torch.Tensor]:
    """The enabled loss terms, individually, keyed by name."""
    terms: dict[str, torch.Tensor] = {}
    if cfg.use_l1:
        terms["l1"] = l1_loss(pred, target)
    if cfg.use_msssim:
        terms["msssim"] = msssim_loss(pred, target, cfg)
    if cfg.use_gdl:
        terms["gdl"] = gdl_loss(pred, target, cfg.gdl_alpha)
    return terms


def prediction_loss(pred: torch.Tensor, target: torch.Tensor,
                    cfg: LossConfig) -> torch.Tensor:
    """Unweighted sum of the enabled terms."""
    terms = prediction_loss_terms(pred, target, cfg)
    if not terms:
        raise ConfigError("no prediction-loss terms enabled")
    total = None
    for value in terms.values():
        total = value if total is None else total + value
    return total


def total_objective(kl_terms, pred_loss, beta: float = 1.0):
    """Training objective: beta * sum(kl_terms) + pred_loss (minimized)."""
    kl_sum = sum(kl_terms) if len(kl_terms) else 0.0
    return beta * kl_sum + pred_loss
