"""Bi-direction decoupled focus: a 2x downsampling block that keeps every
input pixel.

The four stride-2 phases of the input are split into two diagonal groups,
``{(even, even), (odd, odd)}`` and ``{(even, odd), (odd, even)}``. Each group
holds pixels that are diagonal neighbours in the original grid and two pixels
apart within a slice, so one k x k conv per group sees both near and far
context along its diagonal direction.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .nd import ShapeError, conv2d


@dataclass(frozen=True)
class FocusConfig:
    in_channels: int
    out_channels: int
    kernel_size: int = 3

    def __post_init__(self):
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")


def _check_even(x):
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ShapeError(f"focus needs even spatial dims, got {h}x{w}")


def decouple_slices(x):
    """Return ``(g1, g2)``, each b x 2c x h/2 x w/2.

    g1 = concat(x[even, even], x[odd, odd]); g2 = concat(x[even, odd], x[odd, even]).
    """
    _check_even(x)
    s00 = x[:, :, 0::2, 0::2]
    s01 = x[:, :, 0::2, 1::2]
    s10 = x[:, :, 1::2, 0::2]
    s11 = x[:, :, 1::2, 1::2]
    return torch.cat([s00, s11], dim=1), torch.cat([s01, s10], dim=1)


class BiDirFocus(nn.Module):
    def __init__(self, cfg: FocusConfig):
        super().__init__()
        c, k = cfg.in_channels, cfg.kernel_size
        self.cfg = cfg
        self.group1 = nn.Conv2d(2 * c, c, k, padding=k // 2, bias=False)
        self.group2 = nn.Conv2d(2 * c, c, k, padding=k // 2, bias=False)
        self.depthwise = nn.Conv2d(3 * c, 3 * c, k, padding=k // 2, groups=3 * c, bias=False)
        self.pointwise = nn.Conv2d(3 * c, cfg.out_channels, 1, bias=False)

    def forward(self, x):
        g1, g2 = decouple_slices(x)
        p = self.cfg.kernel_size // 2
        y = torch.cat([
            conv2d(g1, self.group1.weight, padding=p),
            conv2d(g2, self.group2.weight, padding=p),
            F.avg_pool2d(x, 2),
        ], dim=1)
        y = conv2d(y, self.depthwise.weight, padding=p, groups=self.depthwise.groups)
        return conv2d(y, self.pointwise.weight)
