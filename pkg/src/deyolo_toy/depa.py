"""Pixel-weight fusion of a visible/infrared feature pair into one map.

Both streams are projected to one channel and multiplied into a joint
spatial logit map, whose spatial softmax sharpens each modality's own pixel
weights. Weights are applied crosswise and the two results are summed.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .nd import conv2d, same_shape, softmax_spatial


@dataclass(frozen=True)
class DepaConfig:
    k1: int = 3
    k2: int = 3

    def __post_init__(self):
        for name, k in (("k1", self.k1), ("k2", self.k2)):
            if k < 1 or k % 2 == 0:
                raise ValueError(f"{name} must be a positive odd kernel size, got {k}")


class DepaMix(nn.Module):
    """W_Mix1 = conv1x1(f_v1) * conv1x1(f_ir1), each projection c -> 1."""

    def __init__(self, channels: int):
        super().__init__()
        self.proj_v = nn.Conv2d(channels, 1, 1, bias=False)
        self.proj_ir = nn.Conv2d(channels, 1, 1, bias=False)

    def forward(self, f_v1, f_ir1):
        same_shape(f_v1, f_ir1, "depa_mix")
        return conv2d(f_v1, self.proj_v.weight) * conv2d(f_ir1, self.proj_ir.weight)


class PixelWeights(nn.Module):
    """Two size-preserving convs (k1, k2; c -> 1) concatenated to b x 2 x h x w,
    compressed to b x 1 x h x w by a learned 1x1 conv."""

    def __init__(self, channels: int, cfg: DepaConfig = DepaConfig()):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, 1, cfg.k1, padding=cfg.k1 // 2, bias=False)
        self.conv2 = nn.Conv2d(channels, 1, cfg.k2, padding=cfg.k2 // 2, bias=False)
        self.compress = nn.Conv2d(2, 1, 1, bias=False)

    def forward(self, f):
        t = torch.cat([
            conv2d(f, self.conv1.weight, padding=self.conv1.padding[0]),
            conv2d(f, self.conv2.weight, padding=self.conv2.padding[0]),
        ], dim=1)
        return conv2d(t, self.compress.weight)


class DEPA(nn.Module):
    def __init__(self, channels: int, cfg: DepaConfig = DepaConfig()):
        super().__init__()
        self.cfg = cfg
        self.mix = DepaMix(channels)
        self.pw_v = PixelWeights(channels, cfg)
        self.pw_ir = PixelWeights(channels, cfg)

    def weights(self, f_v1, f_ir1):
        """(W_enV1, W_enIR1, softmaxed W_Mix1)."""
        s = softmax_spatial(self.mix(f_v1, f_ir1))
        return self.pw_v(f_v1) * s, self.pw_ir(f_ir1) * s, s

    def streams(self, f_v1, f_ir1):
        """The cross-enhanced pair (F_V, F_IR) before the final sum."""
        w_en_v, w_en_ir, _ = self.weights(f_v1, f_ir1)
        return f_v1 * w_en_ir, f_ir1 * w_en_v

    def forward(self, f_v1, f_ir1):
        f_v, f_ir = self.streams(f_v1, f_ir1)
        return f_ir + f_v

    def swapped(self) -> "DEPA":
        """Copy with visible/infrared parameters exchanged."""
        c = self.mix.proj_v.in_channels
        other = DEPA(c, self.cfg).to(self.mix.proj_v.weight.dtype)
        other.mix.proj_v.load_state_dict(self.mix.proj_ir.state_dict())
        other.mix.proj_ir.load_state_dict(self.mix.proj_v.state_dict())
        other.pw_v.load_state_dict(self.pw_ir.state_dict())
        other.pw_ir.load_state_dict(self.pw_v.state_dict())
        return other
