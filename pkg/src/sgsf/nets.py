"""Self-supervised reconstruction network and guidance-fused segmentation network.

Both networks use ``depth`` stride-2 encoder stages. Level ``i`` (1-based)
has ``base * 2**(i-1)`` channels at ``N / 2**i`` resolution, so with the
deepest level ``h x w x c`` level ``i`` is ``2**(depth-i) h x 2**(depth-i) w
x c / 2**(depth-i)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ShapeError, ValidationError


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 3
    base_channels: int = 16
    depth: int = 4

    def __post_init__(self):
        if self.base_channels < 4:
            raise ValidationError("base_channels must be >= 4")
        if self.depth < 2:
            raise ValidationError("depth must be >= 2")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** (level - 1)

    def to_dict(self) -> dict:
        return asdict(self)


def conv3(cin: int, cout: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1)


def conv_norm_act(cin: int, cout: int, stride: int = 1) -> list[nn.Module]:
    # GroupNorm is batch independent, so train and eval outputs agree
    return [conv3(cin, cout, stride), nn.GroupNorm(math.gcd(8, cout), cout), nn.SiLU()]


class Down(nn.Sequential):
    def __init__(self, cin: int, cout: int):
        super().__init__(*conv_norm_act(cin, cout, 2), *conv_norm_act(cout, cout))


class Block(nn.Sequential):
    def __init__(self, cin: int, cout: int):
        super().__init__(*conv_norm_act(cin, cout), *conv_norm_act(cout, cout))


class Up(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.body = nn.Sequential(*conv_norm_act(cin, cout))

    def forward(self, x: Tensor) -> Tensor:
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return self.body(x)


def check_input(x: Tensor, depth: int) -> None:
    if x.dim() != 4:
        raise ShapeError(f"expected a (B, C, H, W) tensor, got {tuple(x.shape)}")
    step = 2 ** depth
    if x.shape[2] % step or x.shape[3] % step:
        raise ShapeError(f"spatial size {tuple(x.shape[2:])} must be divisible by {step}")


class SelfNet(nn.Module):
    """Reconstruction autoencoder; its decoder pyramid is the guidance."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        D = cfg.depth
        ch = [cfg.in_channels] + [cfg.channels(i) for i in range(1, D + 1)]
        self.enc = nn.ModuleList(Down(ch[i], ch[i + 1]) for i in range(D))
        self.bottleneck = Block(ch[D], ch[D])
        self.up = nn.ModuleList(
            nn.Sequential(Up(ch[i + 1], ch[i]), Block(ch[i], ch[i])) for i in range(D - 1, 0, -1)
        )
        self.head_up = Up(ch[1], ch[1])
        self.head = nn.Conv2d(ch[1], cfg.in_channels, 1)

    def encode(self, x: Tensor) -> list[Tensor]:
        check_input(x, self.cfg.depth)
        feats = []
        for stage in self.enc:
            x = stage(x)
            feats.append(x)
        return feats

    def forward(self, x: Tensor) -> tuple[Tensor, list[Tensor], list[Tensor]]:
        C_E = self.encode(x)
        d = self.bottleneck(C_E[-1])
        dec = [d]
        for stage in self.up:
            d = stage(d)
            dec.append(d)
        C_D = dec[::-1]
        recon = torch.sigmoid(self.head(self.head_up(d)))
        return recon, C_E, C_D


def fuse(guide: Tensor, feat: Tensor) -> Tensor:
    """Channel concatenation of guidance and segmentation features."""
    if guide.shape != feat.shape:
        raise ShapeError(f"cannot fuse {tuple(guide.shape)} with {tuple(feat.shape)}")
    return torch.cat([guide, feat], dim=1)


class SegNet(nn.Module):
    """Encoder-decoder segmenter fusing the guidance pyramid at every scale."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        D = cfg.depth
        ch = [cfg.in_channels] + [cfg.channels(i) for i in range(1, D + 1)]
        self.enc = nn.ModuleList(Down(ch[i], ch[i + 1]) for i in range(D))
        self.reduce = nn.ModuleList(
            nn.Sequential(*conv_norm_act(2 * ch[i], ch[i])) for i in range(1, D + 1)
        )
        self.bottleneck = Block(ch[D], ch[D])
        self.up = nn.ModuleList(Up(ch[i + 1], ch[i]) for i in range(D - 1, 0, -1))
        self.merge = nn.ModuleList(Block(2 * ch[i], ch[i]) for i in range(D - 1, 0, -1))
        self.head_up = Up(ch[1], ch[1])
        self.head = nn.Conv2d(ch[1], 1, 1)

    def forward(self, x: Tensor, guidance: list[Tensor]) -> tuple[Tensor, list[Tensor], list[Tensor]]:
        check_input(x, self.cfg.depth)
        if len(guidance) != self.cfg.depth:
            raise ShapeError(f"guidance pyramid has {len(guidance)} levels, need {self.cfg.depth}")
        A_E, fused = [], []
        h = x
        for stage, reduce, g in zip(self.enc, self.reduce, guidance):
            a = stage(h)
            A_E.append(a)
            h = reduce(fuse(g, a))
            fused.append(h)
        d = self.bottleneck(fused[-1])
        dec = [d]
        for up, merge, skip in zip(self.up, self.merge, reversed(fused[:-1])):
            d = merge(torch.cat([up(d), skip], dim=1))
            dec.append(d)
        O = torch.sigmoid(self.head(self.head_up(d)))
        return O, A_E, dec[::-1]


def init_weights(net: nn.Module, rng: np.random.Generator) -> None:
    """Kaiming-uniform conv weights (variance 2 / fan_in), zero biases."""
    with torch.no_grad():
        for mod in net.modules():
            if isinstance(mod, nn.Conv2d):
                w = mod.weight
                fan_in = w.shape[1] * w.shape[2] * w.shape[3]
                bound = np.sqrt(6.0 / fan_in)
                vals = rng.uniform(-bound, bound, size=tuple(w.shape))
                w.copy_(torch.from_numpy(vals).to(w.dtype))
                if mod.bias is not None:
                    mod.bias.zero_()


def pyramid_shapes(N: int, cfg: NetConfig) -> list[tuple[int, int, int]]:
    """Expected (H, W, C) per level from the deepest (h, w, c)."""
    D = cfg.depth
    h = w = N // 2 ** D
    c = cfg.channels(D)
    return [(2 ** (D - i) * h, 2 ** (D - i) * w, c // 2 ** (D - i)) for i in range(1, D + 1)]


def to_tensor(img: np.ndarray, dtype=torch.float32) -> Tensor:
    """HWC image or BHWC batch -> BCHW tensor."""
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)
