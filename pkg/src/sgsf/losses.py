"""Reconstruction (MSE + SSIM) and focal segmentation losses.

All functions take BCHW tensors (or arrays, converted) and return 0-d tensors
so they can be back-propagated.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from .errors import ShapeError, ValidationError

FOCAL_EPS = 1e-7
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _as_bchw(x) -> Tensor:
    t = torch.as_tensor(x)
    if not t.is_floating_point():
        t = t.double()
    while t.dim() < 4:
        t = t.unsqueeze(0)
    return t


def _check_pair(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def l2_loss(target, recon) -> Tensor:
    target, recon = _as_bchw(target), _as_bchw(recon)
    _check_pair(target, recon)
    return torch.mean((target - recon) ** 2)


def gaussian_window(k: int, sigma: float = SSIM_SIGMA, dtype=torch.float64) -> Tensor:
    r = torch.arange(k, dtype=dtype) - (k - 1) / 2
    g = torch.exp(-(r ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def ssim_map(x: Tensor, y: Tensor, k: int = 11) -> Tensor:
    """Per-pixel SSIM with a k x k Gaussian window and reflect padding."""
    if k < 1 or k % 2 == 0:
        raise ValidationError(f"SSIM window must be odd, got {k}")
    x, y = _as_bchw(x), _as_bchw(y)
    _check_pair(x, y)
    if k > x.shape[-1] or k > x.shape[-2]:
        raise ValidationError(f"SSIM window {k} larger than image {tuple(x.shape[-2:])}")
    C = x.shape[1]
    win = gaussian_window(k, dtype=x.dtype).expand(C, 1, k, k)
    p = k // 2

    def filt(t: Tensor) -> Tensor:
        if p:
            t = F.pad(t, (p, p, p, p), mode="reflect")
        return F.conv2d(t, win, groups=C)

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return num / den


def ssim_loss(target, recon, k: int = 11) -> Tensor:
    return torch.mean(1.0 - ssim_map(target, recon, k))


def self_loss(target, recon, k: int = 11) -> Tensor:
    return l2_loss(target, recon) + ssim_loss(target, recon, k)


def focal_loss(O, y, tau: float = 2.0) -> Tensor:
    """Mean focal loss of per-pixel probabilities ``O`` against binary ``y``."""
    if tau < 0:
        raise ValidationError(f"tau must be >= 0, got {tau}")
    O, y = _as_bchw(O), _as_bchw(y).to(_as_bchw(O).dtype)
    _check_pair(O, y)
    p = O.clamp(FOCAL_EPS, 1 - FOCAL_EPS)
    pos = -((1 - p) ** tau) * torch.log(p)
    neg = -(p ** tau) * torch.log(1 - p)
    return torch.mean(torch.where(y > 0.5, pos, neg))


@dataclass
class LossValue:
    total: float
    components: dict


def total_loss(self_component, focal_component, lam: float = 1.0):
    """``lam * self + focal``; returns the same type as the inputs."""
    return lam * self_component + focal_component


def loss_value(l2, ssim, focal, lam: float) -> LossValue:
    l2, ssim, focal = float(l2), float(ssim), float(focal)
    return LossValue(lam * (l2 + ssim) + focal, {"l2": l2, "ssim": ssim, "focal": focal})
