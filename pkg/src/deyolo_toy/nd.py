"""Tensor substrate: primitive ops, the forward/VJP op contract and the
finite-difference checker used to verify every backward pass.

Tensors are ``torch.Tensor`` in NCHW layout. Verification runs in float64,
training in float32.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

Tensor = torch.Tensor


class ShapeError(ValueError):
    pass


class NonDeterministicOpError(RuntimeError):
    pass


def _check_rank4(x: Tensor, name: str) -> None:
    if x.dim() != 4:
        raise ShapeError(f"{name} must be rank-4 (b, c, h, w), got shape {tuple(x.shape)}")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Zero-padded 2-D cross-correlation. ``groups == in_channels`` is depth-wise."""
    _check_rank4(x, "input")
    _check_rank4(kernel, "kernel")
    if stride < 1 or padding < 0 or groups < 1:
        raise ValueError(f"invalid stride={stride} padding={padding} groups={groups}")
    c_in = x.shape[1]
    c_out, c_per_group = kernel.shape[:2]
    if c_in % groups or c_out % groups or c_per_group * groups != c_in:
        raise ShapeError(
            f"input shape {tuple(x.shape)} incompatible with kernel shape "
            f"{tuple(kernel.shape)} at groups={groups}")
    k_h, k_w = kernel.shape[2:]
    if x.shape[2] + 2 * padding < k_h or x.shape[3] + 2 * padding < k_w:
        raise ShapeError(
            f"input shape {tuple(x.shape)} smaller than kernel shape {tuple(kernel.shape)} "
            f"with padding {padding}")
    return F.conv2d(x, kernel, bias, stride=stride, padding=padding, groups=groups)


def conv_out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def softmax_channel(w: Tensor) -> Tensor:
    """Softmax over the channel axis of a b x c x 1 x 1 weight tensor."""
    _check_rank4(w, "channel weights")
    if w.shape[2:] != (1, 1):
        raise ShapeError(f"channel weights must be b x c x 1 x 1, got {tuple(w.shape)}")
    shifted = w - w.amax(dim=1, keepdim=True)
    e = shifted.exp()
    return e / e.sum(dim=1, keepdim=True)


def softmax_spatial(w: Tensor) -> Tensor:
    """Softmax over all h*w positions of a b x 1 x h x w weight map."""
    _check_rank4(w, "spatial weights")
    if w.shape[1] != 1:
        raise ShapeError(f"spatial weights must be b x 1 x h x w, got {tuple(w.shape)}")
    b, _, h, wd = w.shape
    flat = w.reshape(b, h * wd)
    flat = flat - flat.amax(dim=1, keepdim=True)
    e = flat.exp()
    return (e / e.sum(dim=1, keepdim=True)).reshape(b, 1, h, wd)


def global_avg_pool(f: Tensor) -> Tensor:
    _check_rank4(f, "feature map")
    if f.shape[2] < 1 or f.shape[3] < 1:
        raise ShapeError(f"empty spatial dims in {tuple(f.shape)}")
    return f.mean(dim=(2, 3), keepdim=True)


def same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes differ, {tuple(a.shape)} vs {tuple(b.shape)}")


# --------------------------------------------------------------------------
# parameters and randomness

class ParamStore:
    """Named parameters in insertion order with same-shaped gradient buffers."""

    def __init__(self, params: Iterable[tuple[str, Tensor]] = ()):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self._grads: OrderedDict[str, Tensor] = OrderedDict()
        for name, p in params:
            self.add(name, p)

    @classmethod
    def from_module(cls, module: nn.Module) -> "ParamStore":
        return cls((n, p) for n, p in module.named_parameters())

    def add(self, name: str, p: Tensor) -> None:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._params[name] = p
        self._grads[name] = torch.zeros_like(p)

    def names(self) -> list[str]:
        return list(self._params)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def grad(self, name: str) -> Tensor:
        return self._grads[name]

    def accumulate(self, name: str, g: Tensor) -> None:
        if g.shape != self._params[name].shape:
            raise ShapeError(f"gradient for {name!r} has shape {tuple(g.shape)}, "
                             f"parameter has {tuple(self._params[name].shape)}")
        self._grads[name] += g

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g.zero_()


def seeded_generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)
    return g


def numpy_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent numpy stream for ``(seed, *stream)``, e.g. one per sample index."""
    return np.random.default_rng([int(seed), *map(int, stream)])


@torch.no_grad()
def init_uniform_(module: nn.Module, seed: int) -> nn.Module:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every conv/linear weight and bias."""
    gen = seeded_generator(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            w = m.weight
            fan_in = w[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            w.copy_(torch.rand(w.shape, generator=gen, dtype=torch.float64).mul(2).sub(1).mul(bound))
            if m.bias is not None:
                m.bias.copy_(torch.rand(m.bias.shape, generator=gen,
                                        dtype=torch.float64).mul(2).sub(1).mul(bound))
    return module


# --------------------------------------------------------------------------
# differentiable op contract

@dataclass
class DifferentiableOp:
    """A forward function of tensor inputs (and optionally a parameter-holding
    module) together with its vector-Jacobian product.

    ``forward(*inputs)`` returns a tensor or a tuple of tensors. ``vjp`` returns
    cotangents for every input and a name -> gradient mapping for parameters.
    ``vjp_scale`` exists only so the checker can be shown to catch a wrong VJP.
    """
    name: str
    forward: Callable[..., Tensor | tuple[Tensor, ...]]
    module: nn.Module | None = None
    vjp_scale: float = 1.0
    params: ParamStore = field(init=False)

    def __post_init__(self):
        self.params = ParamStore.from_module(self.module) if self.module is not None else ParamStore()

    def __call__(self, *inputs: Tensor):
        return self.forward(*inputs)

    def vjp(self, inputs: Sequence[Tensor], cotangents: Sequence[Tensor]
            ) -> tuple[list[Tensor], dict[str, Tensor]]:
        leaves = [x.detach().clone().requires_grad_(x.is_floating_point()) for x in inputs]
        with torch.enable_grad():
            out = _as_tuple(self.forward(*leaves))
            if len(out) != len(cotangents):
                raise ShapeError(f"{self.name}: {len(out)} outputs but {len(cotangents)} cotangents")
            scalar = sum((o * u).sum() for o, u in zip(out, cotangents))
            names = self.params.names()
            targets = [x for x in leaves if x.requires_grad] + [self.params[n] for n in names]
            grads = torch.autograd.grad(scalar, targets, allow_unused=True)
        grads = [torch.zeros_like(t) if g is None else g * self.vjp_scale
                 for t, g in zip(targets, grads)]
        n_in = sum(1 for x in leaves if x.requires_grad)
        input_grads, param_grads = grads[:n_in], grads[n_in:]
        return input_grads, dict(zip(names, param_grads))


def _as_tuple(out) -> tuple[Tensor, ...]:
    return tuple(out) if isinstance(out, (tuple, list)) else (out,)


def pointwise_multiply_op() -> DifferentiableOp:
    return DifferentiableOp("pointwise_multiply", lambda a, b: a * b)


def vjp_check(op: DifferentiableOp, inputs: Sequence[Tensor], eps: float = 1e-5,
              seed: int = 0, coords: int | None = None) -> float:
    """Max relative error between ``op.vjp`` and central differences.

    The error at one coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
    The scalar probed is sum(u * op(x)) for a fixed random cotangent u. With
    ``coords`` set, only that many coordinates (chosen by ``seed``) are probed.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-6, 1e-4], got {eps}")
    inputs = [x.detach().clone() for x in inputs]
    for x in inputs:
        if x.is_floating_point() and x.dtype != torch.float64:
            raise TypeError(f"{op.name}: vjp_check needs float64 inputs, got {x.dtype}")
    gen = seeded_generator(seed)

    with torch.no_grad():
        out_a = _as_tuple(op(*inputs))
        out_b = _as_tuple(op(*inputs))
    if any(not torch.equal(a, b) for a, b in zip(out_a, out_b)):
        raise NonDeterministicOpError(f"{op.name}: forward is not deterministic")
    cot = [torch.randn(o.shape, generator=gen, dtype=torch.float64) for o in out_a]

    in_grads, p_grads = op.vjp(inputs, cot)

    def probe() -> float:
        with torch.no_grad():
            return float(sum((o * u).sum() for o, u in zip(_as_tuple(op(*inputs)), cot)))

    slots: list[tuple[Tensor, Tensor]] = []
    float_inputs = [x for x in inputs if x.is_floating_point()]
    slots += list(zip(float_inputs, in_grads))
    slots += [(op.params[n], p_grads[n]) for n in op.params.names()]

    all_coords = [(i, j) for i, (t, _) in enumerate(slots) for j in range(t.numel())]
    if coords is not None and coords < len(all_coords):
        pick = torch.randperm(len(all_coords), generator=gen)[:coords].tolist()
        all_coords = [all_coords[k] for k in sorted(pick)]

    worst = 0.0
    for i, j in all_coords:
        t, g = slots[i]
        flat = t.data.view(-1)
        orig = flat[j].item()
        flat[j] = orig + eps
        plus = probe()
        flat[j] = orig - eps
        minus = probe()
        flat[j] = orig
        numeric = (plus - minus) / (2 * eps)
        analytic = g.reshape(-1)[j].item()
        err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
        worst = max(worst, err)
    return worst
