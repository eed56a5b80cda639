import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from deyolo_toy import nd
from deyolo_toy.focus import BiDirFocus, FocusConfig, decouple_slices
from deyolo_toy.nd import DifferentiableOp, ShapeError, vjp_check


def rand(*shape, seed=0):
    return torch.randn(*shape, generator=nd.seeded_generator(seed), dtype=torch.float64)


def make(c_in=3, c_out=8, seed=0):
    return nd.init_uniform_(BiDirFocus(FocusConfig(c_in, c_out)), seed).double()


def test_slices_of_a_4x4_ramp():
    x = torch.arange(16.0).reshape(1, 1, 4, 4)
    g1, g2 = decouple_slices(x)
    assert g1[0, 0].tolist() == [[0, 2], [8, 10]]
    assert g1[0, 1].tolist() == [[5, 7], [13, 15]]
    assert g2[0, 0].tolist() == [[1, 3], [9, 11]]
    assert g2[0, 1].tolist() == [[4, 6], [12, 14]]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 6), st.integers(1, 6))
def test_slices_partition_the_input(b, c, h2, w2):
    x = torch.randperm(b * c * 4 * h2 * w2).reshape(b, c, 2 * h2, 2 * w2)
    g1, g2 = decouple_slices(x)
    assert g1.shape == g2.shape == (b, 2 * c, h2, w2)
    both = torch.cat([g1.flatten(), g2.flatten()]).sort().values
    assert torch.equal(both, x.flatten().sort().values)


def test_output_shape():
    assert make()(rand(2, 3, 128, 128)).shape == (2, 8, 64, 64)


def test_zero_input():
    assert torch.count_nonzero(make()(torch.zeros(1, 3, 16, 16, dtype=torch.float64))) == 0


def test_constant_input_is_constant_in_the_interior():
    y = make()(torch.full((1, 3, 16, 16), 0.7, dtype=torch.float64))
    core = y[..., 2:-2, 2:-2]
    assert (core - core[..., :1, :1]).abs().max() < 1e-12


def test_translation_by_two_pixels_shifts_output_by_one():
    m = make()
    x = rand(1, 3, 32, 32)
    shifted = torch.roll(x, shifts=(2, 2), dims=(2, 3))
    a, b = m(x), m(shifted)
    # borders see the zero padding differently, so compare the interior only
    assert (torch.roll(a, (1, 1), (2, 3))[..., 4:-4, 4:-4] - b[..., 4:-4, 4:-4]).abs().max() < 1e-12


def test_odd_dims_rejected():
    with pytest.raises(ShapeError, match="even"):
        make()(torch.zeros(1, 3, 15, 16, dtype=torch.float64))


def test_even_kernel_rejected():
    with pytest.raises(ValueError):
        FocusConfig(3, 8, kernel_size=2)


def test_vjp():
    m = make(c_in=2, c_out=4)
    assert vjp_check(DifferentiableOp("focus", m, m), [rand(2, 2, 6, 6)]) < 1e-4
    assert vjp_check(DifferentiableOp("slices", lambda x: torch.cat(decouple_slices(x), 1)),
                     [rand(2, 2, 6, 6)]) < 1e-4
