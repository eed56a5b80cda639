"""Fast structural invariant checks behind ``deyolo-toy selftest``."""
from __future__ import annotations

import random
from typing import Callable

import torch

from . import nd, oracle
from .deca import DECA, DecaConfig
from .depa import DEPA
from .focus import decouple_slices
from .metrics import Detection, GtBox, lamr, mean_ap
from .model import ModelConfig, ToyDetector

CHECKS: list[tuple[str, Callable[[], float | bool]]] = []


def check(name):
    def deco(fn):
        CHECKS.append((name, fn))
        return fn
    return deco


def _rand(g, *shape):
    return torch.randn(*shape, generator=g, dtype=torch.float64)


@check("softmax normalization and shift invariance")
def _softmax():
    g = nd.seeded_generator(1)
    w = _rand(g, 3, 5, 1, 1)
    s = _rand(g, 3, 1, 6, 6)
    a, b = nd.softmax_channel(w), nd.softmax_spatial(s)
    ok = (a.sum(1) - 1).abs().max() < 1e-6 and (b.sum((2, 3)) - 1).abs().max() < 1e-6
    ok &= (nd.softmax_channel(w + 5) - a).abs().max() < 1e-6
    return bool(ok and (nd.softmax_spatial(s + 5) - b).abs().max() < 1e-6)


@check("focus partition exactness")
def _partition():
    x = torch.arange(2 * 3 * 8 * 8, dtype=torch.float64).reshape(2, 3, 8, 8)
    g1, g2 = decouple_slices(x)
    vals = torch.cat([g1.flatten(), g2.flatten()]).sort().values
    return torch.equal(vals, x.flatten().sort().values)


@check("DECA/DEPA swap symmetry and zero absorption")
def _swap():
    g = nd.seeded_generator(2)
    v, ir = _rand(g, 2, 8, 8, 8), _rand(g, 2, 8, 8, 8)
    deca = nd.init_uniform_(DECA(8, DecaConfig(se_reduction=2)), 3).double()
    depa = nd.init_uniform_(DEPA(8), 4).double()
    a_v, a_ir = deca(v, ir)
    b_v, b_ir = deca.swapped()(ir, v)
    ok = (a_v - b_ir).abs().max() < 1e-6 and (a_ir - b_v).abs().max() < 1e-6
    ok &= (depa(v, ir) - depa.swapped()(ir, v)).abs().max() < 1e-6
    z_v, _ = deca(torch.zeros_like(v), ir)
    return bool(ok and torch.count_nonzero(z_v) == 0)


@check("visible-only model ignores infrared input")
def _nan_guard():
    net = ToyDetector(ModelConfig(width=8, image_size=64, modality="visible"))
    v = torch.rand(1, 3, 64, 64, generator=nd.seeded_generator(5))
    a = net(v, torch.full_like(v, float("nan")))
    b = net(v, torch.rand_like(v))
    return all(torch.isfinite(x).all() and torch.equal(x, y)
               for pa, pb in zip(a, b) for x, y in zip(pa[:3], pb[:3]))


def random_instance(rng: random.Random, n_images=5, max_boxes=4, n_classes=3):
    def rbox():
        x1, y1 = rng.uniform(0, 0.7), rng.uniform(0, 0.7)
        return (x1, y1, x1 + rng.uniform(0.05, 0.3), y1 + rng.uniform(0.05, 0.3))

    def jitter(b):
        d = [rng.uniform(-0.04, 0.04) for _ in range(4)]
        x1, y1 = b[0] + d[0], b[1] + d[1]
        return (x1, y1, max(b[2] + d[2], x1 + 0.01), max(b[3] + d[3], y1 + 0.01))

    gts, dets = [], []
    for img in range(rng.randint(1, n_images)):
        boxes = [(rng.randrange(n_classes), rbox()) for _ in range(rng.randint(0, max_boxes))]
        gts += [GtBox(img, c, b) for c, b in boxes]
        for c, b in boxes:
            if rng.random() < 0.8:
                dets.append(Detection(img, c if rng.random() < 0.85 else rng.randrange(n_classes),
                                      jitter(b), round(rng.random(), 2)))
        for _ in range(rng.randint(0, 2)):
            dets.append(Detection(img, rng.randrange(n_classes), rbox(), round(rng.random(), 2)))
    return dets, gts


@check("metrics agree with brute-force oracle (50 instances)")
def _oracle():
    rng = random.Random(7)
    for _ in range(50):
        dets, gts = random_instance(rng)
        n_img = len({g.image_id for g in gts} | {d.image_id for d in dets}) or 1
        if abs(mean_ap(dets, gts, 0.5) - oracle.map_oracle(dets, gts, 0.5)) > 1e-9:
            return False
        if abs(lamr(dets, gts, n_img) - oracle.lamr_oracle(dets, gts, n_img)) > 1e-9:
            return False
    return True


def run() -> list[tuple[str, bool]]:
    return [(name, bool(fn())) for name, fn in CHECKS]
