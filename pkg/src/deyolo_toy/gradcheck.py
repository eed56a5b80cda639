"""Census of every differentiable op, checked against central differences."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import torch

from . import nd
from .deca import CMWE, CWE, DECA, DecaConfig, MixChannels
from .depa import DEPA, DepaConfig, DepaMix, PixelWeights
from .detect import assign_targets, detection_loss
from .focus import BiDirFocus, FocusConfig, decouple_slices
from .model import HeadLevel, ModelConfig, ScalePreds, ToyDetector
from .nd import DifferentiableOp, init_uniform_

TOLERANCE = 1e-4
EPS = 1e-5
B, C, H = 2, 4, 6


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    seconds: float
    coords: int | None = None

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _rand(gen, *shape):
    return torch.randn(*shape, generator=gen, dtype=torch.float64)


def _module(m, seed):
    return init_uniform_(m, seed).double()


def census(seed: int = 0) -> list[tuple[DifferentiableOp, list[torch.Tensor], int | None]]:
    """(op, inputs, coordinate budget) triples; budget None means every coordinate."""
    g = nd.seeded_generator(seed)
    x = _rand(g, B, C, H, H)
    y = _rand(g, B, C, H, H)
    deca_cfg = DecaConfig(cmwe_layers=2, cmwe_kind="depthwise", se_reduction=2)
    ops: list[tuple[DifferentiableOp, list, int | None]] = []

    def add(name, fn: Callable, inputs, module=None, coords=None):
        ops.append((DifferentiableOp(name, fn, module), inputs, coords))

    add("conv2d", lambda a, k: nd.conv2d(a, k, padding=1), [x, _rand(g, 8, C, 3, 3)])
    add("conv2d_stride2", lambda a, k: nd.conv2d(a, k, stride=2, padding=1), [x, _rand(g, 8, C, 3, 3)])
    add("conv2d_depthwise", lambda a, k: nd.conv2d(a, k, padding=1, groups=C), [x, _rand(g, C, 1, 3, 3)])
    add("softmax_channel", nd.softmax_channel, [_rand(g, B, C, 1, 1)])
    add("softmax_spatial", nd.softmax_spatial, [_rand(g, B, 1, H, H)])
    add("global_avg_pool", nd.global_avg_pool, [x])
    add("pointwise_multiply", lambda a, b: a * b, [x, y])

    m = _module(MixChannels(C), seed)
    add("mix_channels", m, [x, y], m)
    for kind in ("standard", "depthwise"):
        m = _module(CMWE(C, 2, kind), seed)
        add(f"cmwe_{kind}", m, [x], m)
    m = _module(CWE(C, 1), seed)
    # per-channel offsets keep the squeezed means away from the ReLU dead zone
    add("cwe", m, [x + 3 * _rand(g, B, C, 1, 1)], m)
    m = _module(DECA(C, deca_cfg), seed)
    add("deca", m, [x, y], m)

    m = _module(DepaMix(C), seed)
    add("depa_mix", m, [x, y], m)
    m = _module(PixelWeights(C, DepaConfig()), seed)
    add("pixel_weights", m, [x], m)
    m = _module(DEPA(C, DepaConfig()), seed)
    add("depa", m, [x, y], m)

    add("decouple_slices", decouple_slices, [x])
    m = _module(BiDirFocus(FocusConfig(C, 8)), seed)
    add("bidir_focus", m, [x], m)

    m = _module(HeadLevel(C, 8, 3), seed)
    add("head_level", m, [x], m)

    targets = assign_targets([[(0, (0.1, 0.2, 0.6, 0.7))], [(2, (0.5, 0.5, 0.8, 0.9))]],
                             96, 3, strides=(16, 32, 48), dtype=torch.float64)

    def loss_fn(*t):
        preds = [ScalePreds(t[3 * i], t[3 * i + 1], torch.nn.functional.softplus(t[3 * i + 2]), s)
                 for i, s in enumerate((16, 32, 48))]
        return detection_loss(preds, targets, 96).total

    loss_inputs = []
    for grid in (6, 3, 2):
        loss_inputs += [_rand(g, B, 1, grid, grid), _rand(g, B, 3, grid, grid),
                        _rand(g, B, 4, grid, grid)]
    add("detection_loss", loss_fn, loss_inputs)

    cfg = ModelConfig(width=8, image_size=64, deca=DecaConfig(se_reduction=4))
    net = ToyDetector(cfg, seed=seed).double()
    images = [torch.rand(1, 3, 64, 64, generator=g, dtype=torch.float64) for _ in range(2)]
    net_targets = assign_targets([[(1, (0.2, 0.2, 0.5, 0.6))]], 64, 3, dtype=torch.float64)
    add("toynet_loss", lambda v, i: detection_loss(net(v, i), net_targets, 64).total,
        images, net, coords=8)
    return ops


def run(seed: int = 0, corrupt: bool = False) -> list[CheckResult]:
    results = []
    for op, inputs, coords in census(seed):
        if corrupt:
            op.vjp_scale = 1.01
        t0 = time.perf_counter()
        err = nd.vjp_check(op, inputs, eps=EPS, seed=seed, coords=coords)
        results.append(CheckResult(op.name, err, time.perf_counter() - t0, coords))
    return results


def format_report(results: list[CheckResult]) -> str:
    lines = [f"{'op':<20} {'max rel err':>12}  status"]
    for r in results:
        note = f" ({r.coords} coords)" if r.coords else ""
        lines.append(f"{r.name:<20} {r.max_rel_error:>12.3e}  "
                     f"{'ok' if r.passed else 'FAIL'}{note}")
    n_bad = sum(not r.passed for r in results)
    lines.append(f"{len(results)} ops checked, {n_bad} failed (tolerance {TOLERANCE:g}, eps {EPS:g})")
    return "\n".join(lines)
