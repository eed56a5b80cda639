import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deyolo_toy import nd
from deyolo_toy.nd import DifferentiableOp, ParamStore, ShapeError, vjp_check


def rand(*shape, seed=0):
    return torch.randn(*shape, generator=nd.seeded_generator(seed), dtype=torch.float64)


class TestConv2d:
    def test_pointwise_kernel(self):
        out = nd.conv2d(torch.ones(1, 1, 3, 3), torch.full((1, 1, 1, 1), 2.0))
        assert out.shape == (1, 1, 3, 3)
        assert torch.all(out == 2.0)

    def test_output_shape_formula(self):
        out = nd.conv2d(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 3, 3), stride=2, padding=1)
        assert out.shape == (1, 1, 2, 2)
        assert nd.conv_out_size(4, 3, 2, 1) == 2

    def test_channel_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(1, 3, 5, 5\).*\(2, 4, 3, 3\)"):
            nd.conv2d(torch.zeros(1, 3, 5, 5), torch.zeros(2, 4, 3, 3))

    def test_identity_depthwise_reproduces_input(self):
        x = rand(2, 4, 5, 5)
        k = torch.ones(4, 1, 1, 1, dtype=torch.float64)
        assert torch.equal(nd.conv2d(x, k, groups=4), x)

    def test_vjp_against_finite_differences(self):
        op = DifferentiableOp("conv", lambda a, k: nd.conv2d(a, k, padding=1))
        err = vjp_check(op, [rand(2, 4, 6, 6), rand(8, 4, 3, 3, seed=1)], eps=1e-5)
        assert err < 1e-4


class TestSoftmax:
    def test_uniform_channel(self):
        out = nd.softmax_channel(torch.zeros(1, 4, 1, 1))
        assert torch.allclose(out, torch.full_like(out, 0.25))

    def test_two_channel_closed_form(self):
        w = torch.tensor([0.0, math.log(3.0)], dtype=torch.float64).reshape(1, 2, 1, 1)
        out = nd.softmax_channel(w).flatten()
        assert out.tolist() == pytest.approx([0.25, 0.75], abs=1e-12)

    def test_uniform_spatial(self):
        out = nd.softmax_spatial(torch.zeros(1, 1, 2, 2))
        assert torch.allclose(out, torch.full_like(out, 0.25))

    def test_shape_checks(self):
        with pytest.raises(ShapeError):
            nd.softmax_channel(torch.zeros(1, 4, 2, 2))
        with pytest.raises(ShapeError):
            nd.softmax_spatial(torch.zeros(1, 2, 2, 2))

    @settings(max_examples=50, deadline=None)
    @given(arrays("float64", (2, 5, 1, 1), elements=st.floats(-50, 50)),
           st.floats(-100, 100))
    def test_channel_normalized_and_shift_invariant(self, w, shift):
        w = torch.from_numpy(w)
        out = nd.softmax_channel(w)
        assert torch.all(out > 0)
        assert (out.sum(dim=1) - 1).abs().max() < 1e-6
        assert (nd.softmax_channel(w + shift) - out).abs().max() < 1e-6

    @settings(max_examples=50, deadline=None)
    @given(arrays("float64", (2, 1, 3, 4), elements=st.floats(-50, 50)),
           st.floats(-100, 100))
    def test_spatial_normalized_and_shift_invariant(self, w, shift):
        w = torch.from_numpy(w)
        out = nd.softmax_spatial(w)
        assert (out.sum(dim=(2, 3)) - 1).abs().max() < 1e-6
        assert (nd.softmax_spatial(w + shift) - out).abs().max() < 1e-6

    def test_shift_by_five_is_identical(self):
        w = rand(3, 6, 1, 1)
        assert (nd.softmax_channel(w + 5.0) - nd.softmax_channel(w)).abs().max() < 1e-6


class TestGlobalAvgPool:
    def test_constant(self):
        assert torch.all(nd.global_avg_pool(torch.full((2, 3, 4, 4), 7.0)) == 7.0)

    def test_mean(self):
        x = torch.tensor([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)
        assert nd.global_avg_pool(x).item() == 2.5

    def test_vjp(self):
        op = DifferentiableOp("gap", nd.global_avg_pool)
        assert vjp_check(op, [rand(2, 4, 6, 6)]) < 1e-4


class TestVjpCheck:
    def test_pointwise_multiply_is_tight(self):
        err = vjp_check(nd.pointwise_multiply_op(), [rand(2, 3, 4, 4), rand(2, 3, 4, 4, seed=1)])
        assert err < 1e-8

    def test_detects_scaled_vjp(self):
        op = nd.pointwise_multiply_op()
        op.vjp_scale = 1.01
        assert vjp_check(op, [rand(2, 3, 4, 4), rand(2, 3, 4, 4, seed=1)]) > 1e-3

    def test_rejects_nondeterministic_forward(self):
        calls = iter(range(1000))
        op = DifferentiableOp("noisy", lambda x: x * next(calls))
        with pytest.raises(nd.NonDeterministicOpError):
            vjp_check(op, [rand(1, 1, 2, 2)])

    def test_rejects_single_precision_and_bad_eps(self):
        op = nd.pointwise_multiply_op()
        with pytest.raises(TypeError):
            vjp_check(op, [torch.ones(1, 1, 2, 2), torch.ones(1, 1, 2, 2)])
        with pytest.raises(ValueError):
            vjp_check(op, [rand(1, 1, 2, 2), rand(1, 1, 2, 2)], eps=1e-2)

    def test_parameter_gradients_are_checked(self):
        m = nd.init_uniform_(torch.nn.Conv2d(2, 3, 3, padding=1), 0).double()
        op = DifferentiableOp("conv_module", m, m)
        assert op.params.names() == ["weight", "bias"]
        assert vjp_check(op, [rand(1, 2, 5, 5)]) < 1e-4


def test_param_store():
    store = ParamStore([("a", torch.zeros(2, 3)), ("b", torch.zeros(4))])
    assert store.names() == ["a", "b"]
    store.accumulate("a", torch.ones(2, 3))
    store.accumulate("a", torch.ones(2, 3))
    assert torch.all(store.grad("a") == 2)
    with pytest.raises(ShapeError):
        store.accumulate("b", torch.ones(3))
    with pytest.raises(KeyError):
        store.add("a", torch.zeros(1))
    store.zero_grad()
    assert torch.all(store.grad("a") == 0)


def test_seeded_init_is_reproducible_and_bounded():
    a = nd.init_uniform_(torch.nn.Conv2d(4, 8, 3), 11)
    b = nd.init_uniform_(torch.nn.Conv2d(4, 8, 3), 11)
    assert torch.equal(a.weight, b.weight)
    assert a.weight.abs().max() <= 1 / math.sqrt(4 * 9)


def test_ops_are_deterministic():
    x, k = rand(2, 4, 6, 6), rand(8, 4, 3, 3, seed=3)
    assert torch.equal(nd.conv2d(x, k, padding=1), nd.conv2d(x, k, padding=1))
