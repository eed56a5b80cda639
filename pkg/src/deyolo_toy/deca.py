"""Channel-weight fusion of a visible/infrared feature pair.

A mixed map of both modalities is squeezed to per-channel logits; each
modality's own SE-style channel gate is sharpened by the softmax of those
logits, and the resulting weights are applied crosswise (the infrared-derived
weights rescale the visible stream and vice versa).
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .nd import ShapeError, conv2d, global_avg_pool, same_shape, softmax_channel

CMWE_KINDS = ("standard", "depthwise")


@dataclass(frozen=True)
class DecaConfig:
    cmwe_layers: int = 3
    cmwe_kind: str = "depthwise"
    se_reduction: int = 16

    def __post_init__(self):
        if self.cmwe_layers not in (2, 3):
            raise ValueError(f"cmwe_layers must be 2 or 3, got {self.cmwe_layers}")
        if self.cmwe_kind not in CMWE_KINDS:
            raise ValueError(f"cmwe_kind must be one of {CMWE_KINDS}, got {self.cmwe_kind!r}")
        if self.se_reduction < 1:
            raise ValueError(f"se_reduction must be positive, got {self.se_reduction}")


class MixChannels(nn.Module):
    """concat(f_v, f_ir) along channels, then a bias-free 1x1 conv 2c -> c."""

    def __init__(self, channels: int, bias: bool = False):
        super().__init__()
        self.proj = nn.Conv2d(2 * channels, channels, 1, bias=bias)

    def forward(self, f_v, f_ir):
        same_shape(f_v, f_ir, "mix_channels")
        x = torch.cat([f_v, f_ir], dim=1)
        return conv2d(x, self.proj.weight, self.proj.bias)


class CMWE(nn.Module):
    """Cross-modality weight extraction: a chain of 3x3 stride-2 convs
    (ReLU between them) that squeezes the mixed map spatially, then a global
    average pool over whatever spatial extent is left. Output is b x c x 1 x 1
    logits."""

    def __init__(self, channels: int, layers: int = 3, kind: str = "depthwise"):
        super().__init__()
        if kind not in CMWE_KINDS:
            raise ValueError(f"unknown CMWE kind {kind!r}")
        self.layers = layers
        self.kind = kind
        groups = channels if kind == "depthwise" else 1
        self.convs = nn.ModuleList(
            nn.Conv2d(channels, channels, 3, stride=2, padding=1, groups=groups, bias=False)
            for _ in range(layers))

    @property
    def min_size(self) -> int:
        return 2 ** self.layers

    def forward(self, f_mix):
        h, w = f_mix.shape[2:]
        if min(h, w) < self.min_size:
            raise ShapeError(
                f"CMWE with {self.layers} stride-2 layers needs h, w >= {self.min_size}, "
                f"got {h}x{w}")
        x = f_mix
        for i, conv in enumerate(self.convs):
            x = conv2d(x, conv.weight, None, stride=2, padding=1, groups=conv.groups)
            if i < self.layers - 1:
                x = torch.relu(x)
        return global_avg_pool(x)


class CWE(nn.Module):
    """SE channel gate: GAP -> linear c->c/r -> ReLU -> linear c/r->c -> sigmoid."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        if channels % reduction:
            raise ValueError(f"channels ({channels}) not divisible by se_reduction ({reduction})")
        hidden = channels // reduction
        self.fc1 = nn.Linear(channels, hidden, bias=False)
        self.fc2 = nn.Linear(hidden, channels, bias=False)

    def forward(self, f):
        b, c = f.shape[:2]
        z = global_avg_pool(f).reshape(b, c)
        z = self.fc2(torch.relu(self.fc1(z)))
        return torch.sigmoid(z).reshape(b, c, 1, 1)


class DECA(nn.Module):
    """Returns ``(f_v1, f_ir1)`` with the input shapes.

    ``cmwe_layers`` may be passed to override the config depth, for feature
    maps too small for the configured stride chain.
    """

    def __init__(self, channels: int, cfg: DecaConfig = DecaConfig(), cmwe_layers: int | None = None):
        super().__init__()
        self.cfg = cfg
        self.mix = MixChannels(channels)
        self.cmwe = CMWE(channels, cfg.cmwe_layers if cmwe_layers is None else cmwe_layers,
                         cfg.cmwe_kind)
        self.cwe_v = CWE(channels, cfg.se_reduction)
        self.cwe_ir = CWE(channels, cfg.se_reduction)

    def weights(self, f_v0, f_ir0):
        """(W_enV0, W_enIR0): each modality's gate times softmax of the mixed logits."""
        same_shape(f_v0, f_ir0, "deca")
        w_mix = softmax_channel(self.cmwe(self.mix(f_v0, f_ir0)))
        return self.cwe_v(f_v0) * w_mix, self.cwe_ir(f_ir0) * w_mix

    def forward(self, f_v0, f_ir0):
        w_en_v, w_en_ir = self.weights(f_v0, f_ir0)
        f_ir1 = f_ir0 * w_en_v
        f_v1 = f_v0 * w_en_ir
        return f_v1, f_ir1

    def swapped(self) -> "DECA":
        """Copy with visible/infrared parameters exchanged.

        The mixing conv's input halves are swapped too, so that
        ``swapped()(f_ir, f_v)`` is ``self(f_v, f_ir)`` with outputs reversed.
        """
        other = DECA(self.mix.proj.out_channels, self.cfg, self.cmwe.layers).to(
            self.mix.proj.weight.dtype)
        other.load_state_dict(self.state_dict())
        c = self.mix.proj.out_channels
        with torch.no_grad():
            w = self.mix.proj.weight
            other.mix.proj.weight.copy_(torch.cat([w[:, c:], w[:, :c]], dim=1))
        other.cwe_v.load_state_dict(self.cwe_ir.state_dict())
        other.cwe_ir.load_state_dict(self.cwe_v.state_dict())
        return other

