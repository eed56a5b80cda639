import pytest
import torch

from deyolo_toy import nd
from deyolo_toy.deca import DecaConfig
from deyolo_toy.model import STRIDES, Backbone, HeadLevel, ModelConfig, ToyDetector
from deyolo_toy.nd import DifferentiableOp, ShapeError, vjp_check


def images(b=2, size=128, seed=0):
    g = nd.seeded_generator(seed)
    return torch.rand(b, 3, size, size, generator=g), torch.rand(b, 3, size, size, generator=g)


class TestBackbone:
    def test_pyramid_shapes(self):
        pyr = nd.init_uniform_(Backbone(16), 0)(images()[0])
        assert pyr.p3.shape == (2, 16, 16, 16)
        assert pyr.p4.shape == (2, 32, 8, 8)
        assert pyr.p5.shape == (2, 64, 4, 4)

    @pytest.mark.parametrize("h,w", [(64, 96), (96, 160)])
    def test_any_multiple_of_32(self, h, w):
        pyr = Backbone(8, use_focus=False)(torch.zeros(1, 3, h, w))
        for x, s in zip(pyr, STRIDES):
            assert x.shape[2:] == (h // s, w // s)

    def test_same_seed_same_pyramids(self):
        x = images()[0]
        a = nd.init_uniform_(Backbone(16), 3)(x)
        b = nd.init_uniform_(Backbone(16), 3)(x)
        assert all(torch.equal(p, q) for p, q in zip(a, b))

    def test_indivisible_dims(self):
        with pytest.raises(ShapeError, match="divisible by 32"):
            Backbone(16)(torch.zeros(1, 3, 100, 128))

    def test_gradient_reaches_stem(self):
        net = ToyDetector(ModelConfig())
        v, ir = images()
        sum(p.obj.sum() + p.cls.sum() + p.box.sum() for p in net(v, ir)).backward()
        assert net.backbone_v.stem.conv.weight.grad.norm() > 0
        assert net.backbone_ir.stem.conv.weight.grad.norm() > 0


class TestFusion:
    def test_additive_baseline(self):
        cfg = ModelConfig(use_deca=False, use_depa=False, use_focus=False)
        net = ToyDetector(cfg)
        v, ir = images()
        fused = net.pyramids(v, ir)
        pv, pir = net.backbone_v(v), net.backbone_ir(ir)
        assert all(torch.equal(f, a + b) for f, a, b in zip(fused, pv, pir))

    @pytest.mark.parametrize("deca,depa", [(True, False), (False, True), (True, True)])
    def test_cross_mode_preserves_shapes(self, deca, depa):
        net = ToyDetector(ModelConfig(use_deca=deca, use_depa=depa))
        v, ir = images()
        for f, p in zip(net.pyramids(v, ir), net.backbone_v(v)):
            assert f.shape == p.shape

    def test_ablation_flags_build_the_expected_blocks(self):
        for deca, depa in [(False, False), (True, False), (False, True), (True, True)]:
            net = ToyDetector(ModelConfig(use_deca=deca, use_depa=depa))
            for stage in net.fusion.stages:
                assert (stage.deca is not None, stage.depa is not None) == (deca, depa)

    def test_shape_mismatch(self):
        net = ToyDetector(ModelConfig())
        with pytest.raises(ShapeError):
            net(torch.zeros(1, 3, 128, 128), torch.zeros(1, 3, 64, 64))

    def test_coarse_level_clamps_stride_chain(self):
        net = ToyDetector(ModelConfig(deca=DecaConfig(cmwe_layers=3)))
        assert [s.deca.cmwe.layers for s in net.fusion.stages] == [3, 3, 2]


class TestSingleModality:
    @pytest.mark.parametrize("modality", ["visible", "infrared"])
    def test_other_stream_is_never_read(self, modality):
        net = ToyDetector(ModelConfig(modality=modality))
        v, ir = images()
        nan = torch.full_like(v, float("nan"))
        a = net(v, nan) if modality == "visible" else net(nan, ir)
        b = net(v, ir)
        for pa, pb in zip(a, b):
            for x, y in zip(pa[:3], pb[:3]):
                assert torch.isfinite(x).all()
                assert torch.equal(x, y)

    def test_only_one_backbone_built(self):
        net = ToyDetector(ModelConfig(modality="visible"))
        assert net.backbone_ir is None and net.fusion is None


class TestHead:
    def test_prediction_shapes(self):
        preds = ToyDetector(ModelConfig(num_classes=3))(*images())
        for p, s in zip(preds, STRIDES):
            g = 128 // s
            assert p.stride == s
            assert p.obj.shape == (2, 1, g, g)
            assert p.cls.shape == (2, 3, g, g)
            assert p.box.shape == (2, 4, g, g)
            assert torch.all(p.box >= 0)

    def test_zero_input_gives_finite_logits(self):
        z = torch.zeros(1, 3, 128, 128)
        for p in ToyDetector(ModelConfig())(z, z):
            assert all(torch.isfinite(t).all() for t in p[:3])

    def test_vjp_in_isolation(self):
        level = nd.init_uniform_(HeadLevel(4, 4, 3), 0).double()
        g = nd.seeded_generator(1)
        x = torch.randn(2, 4, 6, 6, generator=g, dtype=torch.float64)
        op = DifferentiableOp("head", lambda t: torch.cat(level(t), 1), level)
        assert vjp_check(op, [x]) < 1e-4


def test_objectness_prior():
    preds = ToyDetector(ModelConfig())(*images())
    assert abs(torch.sigmoid(preds[0].obj).mean().item() - 0.01) < 0.01
