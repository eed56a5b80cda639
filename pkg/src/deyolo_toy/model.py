"""Toy dual-stream detector: per-modality backbones, per-scale fusion and a
dense anchor-free head over three pyramid levels (strides 8, 16, 32)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .deca import DECA, DecaConfig
from .depa import DEPA, DepaConfig
from .focus import BiDirFocus, FocusConfig
from .nd import ShapeError, init_uniform_, same_shape

STRIDES = (8, 16, 32)
MODALITIES = ("visible", "infrared", "cross")


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 3
    width: int = 16
    image_size: int = 128
    use_deca: bool = True
    use_depa: bool = True
    use_focus: bool = True
    modality: str = "cross"
    deca: DecaConfig = DecaConfig()
    depa: DepaConfig = DepaConfig()

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.image_size % 32:
            raise ValueError(f"image_size must be divisible by 32, got {self.image_size}")

    @property
    def channels(self) -> tuple[int, int, int]:
        return (self.width, 2 * self.width, 4 * self.width)


class Pyramid(NamedTuple):
    p3: torch.Tensor
    p4: torch.Tensor
    p5: torch.Tensor


class ScalePreds(NamedTuple):
    obj: torch.Tensor   # b x 1 x h x w logits
    cls: torch.Tensor   # b x K x h x w logits
    box: torch.Tensor   # b x 4 x h x w (l, t, r, b) in stride units, >= 0
    stride: int


def _groups(c: int) -> int:
    return math.gcd(c, 4)


class ConvBlock(nn.Module):
    def __init__(self, c_in, c_out, k=3, stride=1):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, k, stride, k // 2, bias=False)
        self.norm = nn.GroupNorm(_groups(c_out), c_out)

    def forward(self, x):
        return F.silu(self.norm(self.conv(x)))


class FocusBlock(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.focus = BiDirFocus(FocusConfig(c_in, c_out))
        self.norm = nn.GroupNorm(_groups(c_out), c_out)

    def forward(self, x):
        return F.silu(self.norm(self.focus(x)))


class Backbone(nn.Module):
    """stem (s2) -> focus or plain s2 conv -> three s2 stages emitting P3/P4/P5."""

    def __init__(self, width: int = 16, use_focus: bool = True):
        super().__init__()
        w = width
        self.stem = ConvBlock(3, w // 2, 3, 2)
        self.down = FocusBlock(w // 2, w) if use_focus else ConvBlock(w // 2, w, 3, 2)
        self.stage3 = nn.Sequential(ConvBlock(w, w, 3, 2), ConvBlock(w, w))
        self.stage4 = nn.Sequential(ConvBlock(w, 2 * w, 3, 2), ConvBlock(2 * w, 2 * w))
        self.stage5 = nn.Sequential(ConvBlock(2 * w, 4 * w, 3, 2), ConvBlock(4 * w, 4 * w))

    def forward(self, image) -> Pyramid:
        h, w = image.shape[2:]
        if h % 32 or w % 32:
            raise ShapeError(f"image dims must be divisible by 32, got {h}x{w}")
        x = self.down(self.stem(image))
        p3 = self.stage3(x)
        p4 = self.stage4(p3)
        p5 = self.stage5(p4)
        return Pyramid(p3, p4, p5)


class FusionStage(nn.Module):
    """One scale: optional DECA, then DEPA or plain addition."""

    def __init__(self, channels: int, size: int, use_deca: bool, use_depa: bool,
                 deca_cfg: DecaConfig, depa_cfg: DepaConfig):
        super().__init__()
        # the stride chain may not be deeper than the map allows
        layers = min(deca_cfg.cmwe_layers, size.bit_length() - 1)
        self.deca = DECA(channels, deca_cfg, layers) if use_deca else None
        self.depa = DEPA(channels, depa_cfg) if use_depa else None

    def forward(self, f_v, f_ir):
        same_shape(f_v, f_ir, "fusion")
        if self.deca is not None:
            f_v, f_ir = self.deca(f_v, f_ir)
        if self.depa is not None:
            return self.depa(f_v, f_ir)
        return f_v + f_ir


class Fusion(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        sizes = [cfg.image_size // s for s in STRIDES]
        self.stages = nn.ModuleList(
            FusionStage(c, n, cfg.use_deca, cfg.use_depa, cfg.deca, cfg.depa)
            for c, n in zip(cfg.channels, sizes))

    def forward(self, pyr_v: Pyramid, pyr_ir: Pyramid) -> Pyramid:
        return Pyramid(*(stage(a, b) for stage, a, b in zip(self.stages, pyr_v, pyr_ir)))


class HeadLevel(nn.Module):
    """Normalize the (possibly very small-magnitude) fused map, two conv blocks,
    then 1x1 predictors for objectness, classes and box distances."""

    def __init__(self, c_in: int, width: int, num_classes: int):
        super().__init__()
        self.num_classes = num_classes
        self.norm = nn.GroupNorm(_groups(c_in), c_in, eps=1e-12)
        self.tower = nn.Sequential(ConvBlock(c_in, width), ConvBlock(width, width))
        self.pred = nn.Conv2d(width, 1 + num_classes + 4, 1)

    def forward(self, x):
        out = self.pred(self.tower(self.norm(x)))
        k = self.num_classes
        return out[:, :1], out[:, 1:1 + k], F.softplus(out[:, 1 + k:])


class Head(nn.Module):
    def __init__(self, channels, width: int, num_classes: int):
        super().__init__()
        self.levels = nn.ModuleList(HeadLevel(c, width, num_classes) for c in channels)

    def forward(self, fused: Pyramid) -> list[ScalePreds]:
        return [ScalePreds(*level(x), stride)
                for level, x, stride in zip(self.levels, fused, STRIDES)]


class ToyDetector(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.backbone_v = Backbone(cfg.width, cfg.use_focus) if cfg.modality != "infrared" else None
        self.backbone_ir = Backbone(cfg.width, cfg.use_focus) if cfg.modality != "visible" else None
        self.fusion = Fusion(cfg) if cfg.modality == "cross" else None
        self.head = Head(cfg.channels, 2 * cfg.width, cfg.num_classes)
        init_uniform_(self, seed)
        with torch.no_grad():
            for level in self.head.levels:
                level.pred.bias[0] = -math.log(99.0)  # objectness prior 0.01

    def pyramids(self, visible, infrared) -> Pyramid:
        if self.cfg.modality == "visible":
            return self.backbone_v(visible)
        if self.cfg.modality == "infrared":
            return self.backbone_ir(infrared)
        same_shape(visible, infrared, "image pair")
        return self.fusion(self.backbone_v(visible), self.backbone_ir(infrared))

    def forward(self, visible, infrared) -> list[ScalePreds]:
        return self.head(self.pyramids(visible, infrared))
