import numpy as np
import pytest
import torch

from cdcsr.losses import LossConfig, total_loss
from cdcsr.model import (
    BottleneckBlock,
    CdcNetwork,
    ComponentAttentiveBlock,
    Hourglass,
    ModelConfig,
    ResidualInceptionBlock,
    init_model,
    load_checkpoint,
    save_checkpoint,
)


def expected_param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count from the layer synopsis."""
    c = cfg.base_channels
    mid = c // 2
    rb = (c * mid + mid) + (9 * mid * mid + mid) + (mid * c + c)
    hourglass = (3 * cfg.hg_depth + 1) * rb + (c * c + c)
    rib = (
        (c * mid + mid)  # b1
        + (c * mid + mid) + (9 * mid * mid + mid)  # b2
        + (c * mid + mid) + 2 * (9 * mid * mid + mid)  # b3
        + (3 * mid * c + c)  # projection
    )
    stem = 3 * c * 9 + c
    s2 = cfg.scale * cfg.scale
    cab = (c * 3 * s2 * 9 + 3 * s2) + (c * s2 * 9 + s2)
    return (
        stem
        + cfg.hg_modules * hourglass
        + (cfg.hg_modules - 1) * 2 * rib
        + 3 * cab
    )


def zero_(module: torch.nn.Module) -> None:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


class TestModelConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [{"scale": 1}, {"scale": 5}, {"base_channels": 2}, {"hg_modules": 4}, {"hg_modules": 0}, {"hg_depth": 0}],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            ModelConfig(**kwargs)

    def test_tiny_preset(self):
        cfg = ModelConfig.tiny(2)
        assert cfg.base_channels == 16 and cfg.hg_modules == 3 and cfg.scale == 2


class TestInitModel:
    def test_deterministic(self):
        cfg = ModelConfig.tiny(2)
        a = init_model(cfg, seed=7)
        b = init_model(cfg, seed=7)
        for (na, pa), (nb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert na == nb
            assert torch.equal(pa, pb)

    def test_seed_changes_weights(self):
        cfg = ModelConfig.tiny(2)
        a = init_model(cfg, seed=7)
        b = init_model(cfg, seed=8)
        diff = any(not torch.equal(pa, pb) for pa, pb in zip(a.parameters(), b.parameters()))
        assert diff

    def test_biases_zero_weights_bounded(self):
        model = init_model(ModelConfig.tiny(2), seed=1)
        for name, p in model.named_parameters():
            if p.dim() == 1:
                assert torch.all(p.detach() == 0)
            else:
                bound = 1.0 / np.sqrt(p[0].numel())
                assert float(p.detach().abs().max()) <= bound

    def test_param_count_matches_closed_form(self):
        cfg = ModelConfig.tiny(2)
        model = init_model(cfg, seed=0)
        total = sum(p.numel() for p in model.parameters())
        assert total == expected_param_count(cfg)

    def test_param_count_paper_preset(self):
        cfg = ModelConfig(scale=4)
        model = CdcNetwork(cfg)
        assert sum(p.numel() for p in model.parameters()) == expected_param_count(cfg)


class TestHourglass:
    def test_shape_contract(self):
        hg = Hourglass(16, 4)
        x = torch.randn(1, 16, 48, 48)
        assert hg(x).shape == x.shape

    def test_rejects_indivisible(self):
        hg = Hourglass(8, 3)
        with pytest.raises(ValueError):
            hg(torch.randn(1, 8, 12, 16))

    def test_zero_params_zero_output(self):
        hg = Hourglass(8, 2)
        zero_(hg)
        x = torch.randn(2, 8, 16, 16)
        assert torch.all(hg(x) == 0)

    def test_depth1_identity_blocks_hand_case(self):
        # zero the bottlenecks (-> identity residuals), set the closing 1x1
        # conv to identity: output must equal x + nearest_up(maxpool(x)),
        # computed here with plain numpy
        c = 4
        hg = Hourglass(c, 1).double()
        zero_(hg)
        with torch.no_grad():
            for i in range(c):
                hg.post.weight[i, i, 0, 0] = 1.0
        rng = np.random.default_rng(40)
        x = rng.random((1, c, 4, 4))
        pooled = x.reshape(1, c, 2, 2, 2, 2).max(axis=5).max(axis=3)
        up = pooled.repeat(2, axis=2).repeat(2, axis=3)
        expected = x + up
        with torch.no_grad():
            got = hg(torch.from_numpy(x)).numpy()
        np.testing.assert_allclose(got, expected, atol=1e-12)


class TestResidualInceptionBlock:
    def test_zero_params_identity(self):
        rib = ResidualInceptionBlock(8)
        zero_(rib)
        x = torch.randn(1, 8, 6, 6)
        assert torch.equal(rib(x), x)

    def test_shape_contract(self):
        rib = ResidualInceptionBlock(16)
        x = torch.randn(2, 16, 48, 48)
        assert rib(x).shape == x.shape

    def test_single_pixel_hand_case(self):
        # on a 1x1 spatial input only the center taps of the 3x3 convs
        # contribute; replicate the arithmetic with numpy matrices
        c, mid = 4, 2
        rib = ResidualInceptionBlock(c).double()
        rng = np.random.default_rng(41)
        mats = {name: rng.normal(scale=0.5, size=p.shape) for name, p in rib.named_parameters() if p.dim() == 4}
        with torch.no_grad():
            for name, p in rib.named_parameters():
                if p.dim() == 4:
                    p.copy_(torch.from_numpy(mats[name]))
                else:
                    p.zero_()
        x = rng.random((c,))

        def mat(name, kernel_center=False):
            m = mats[name]
            return m[:, :, 1, 1] if kernel_center else m[:, :, 0, 0]

        relu = lambda v: np.maximum(v, 0.0)
        y1 = relu(mat("b1.weight") @ x)
        y2 = relu(mat("b2b.weight", True) @ relu(mat("b2a.weight") @ x))
        y3 = relu(mat("b3c.weight", True) @ relu(mat("b3b.weight", True) @ relu(mat("b3a.weight") @ x)))
        expected = x + mat("proj.weight") @ np.concatenate([y1, y2, y3])
        with torch.no_grad():
            got = rib(torch.from_numpy(x.reshape(1, c, 1, 1))).numpy().ravel()
        np.testing.assert_allclose(got, expected, atol=1e-12)


class TestComponentAttentiveBlock:
    def test_shapes_scale2(self):
        cab = ComponentAttentiveBlock(16, 2)
        inter, logit = cab(torch.randn(1, 16, 48, 48))
        assert inter.shape == (1, 3, 96, 96)
        assert logit.shape == (1, 1, 96, 96)

    def test_zero_heads_zero_outputs(self):
        cab = ComponentAttentiveBlock(8, 3)
        zero_(cab)
        inter, logit = cab(torch.randn(1, 8, 8, 8))
        assert torch.all(inter == 0) and torch.all(logit == 0)

    def test_scale1_keeps_resolution(self):
        cab = ComponentAttentiveBlock(8, 1)
        inter, logit = cab(torch.randn(1, 8, 8, 8))
        assert inter.shape == (1, 3, 8, 8) and logit.shape == (1, 1, 8, 8)


class TestCdcForward:
    @pytest.mark.parametrize("scale", [2, 3, 4])
    def test_shape_contract(self, scale):
        model = init_model(ModelConfig.tiny(scale), seed=0)
        out = model(torch.rand(1, 3, 48, 48))
        assert out.final_sr.shape == (1, 3, 48 * scale, 48 * scale)
        assert all(t.shape == (1, 3, 48 * scale, 48 * scale) for t in out.inter_srs)
        assert out.attn_masks.shape == (1, 3, 48 * scale, 48 * scale)

    def test_rejects_indivisible_input(self):
        model = init_model(ModelConfig.tiny(2), seed=0)
        with pytest.raises(ValueError):
            model(torch.rand(1, 3, 20, 48))

    def test_rejects_non_rgb(self):
        model = init_model(ModelConfig.tiny(2), seed=0)
        with pytest.raises(ValueError):
            model(torch.rand(1, 1, 48, 48))

    def test_masks_partition_of_unity(self):
        model = init_model(ModelConfig.tiny(2), seed=1)
        out = model(torch.rand(2, 3, 16, 16))
        total = out.attn_masks.sum(dim=1)
        assert float((total - 1.0).abs().max()) < 1e-6
        assert float(out.attn_masks.min()) >= 0.0
        assert float(out.attn_masks.max()) <= 1.0

    def test_final_is_attentive_merge(self):
        model = init_model(ModelConfig.tiny(3), seed=2)
        out = model(torch.rand(1, 3, 16, 16))
        merged = sum(out.attn_masks[:, e : e + 1] * out.inter_srs[e] for e in range(3))
        assert float((merged - out.final_sr).abs().max()) < 1e-6

    def test_forward_deterministic(self):
        model = init_model(ModelConfig.tiny(2), seed=3)
        x = torch.rand(1, 3, 16, 16)
        a = model(x)
        b = model(x)
        assert torch.equal(a.final_sr, b.final_sr)
        assert torch.equal(a.attn_masks, b.attn_masks)

    def test_softmax_argmax_shift_invariant(self):
        logits = torch.randn(1, 3, 8, 8)
        a = torch.softmax(logits, dim=1)
        b = torch.softmax(logits + 3.7, dim=1)
        assert torch.equal(a.argmax(dim=1), b.argmax(dim=1))
        np.testing.assert_allclose(a.numpy(), b.numpy(), atol=1e-6)

    def test_gradient_reaches_every_parameter_group(self):
        torch.manual_seed(4)
        model = init_model(ModelConfig.tiny(2), seed=4)
        x = torch.rand(2, 3, 16, 16)
        hr = torch.rand(2, 3, 32, 32)
        masks = tuple(torch.rand(2, 32, 32).round() for _ in range(3))
        out = model(x)
        bd = total_loss(out.final_sr, out.inter_srs, hr, masks, LossConfig())
        bd.total.backward()
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                continue  # zero-init biases in dead-relu spots can stay zero
            assert p.grad is not None and float(p.grad.abs().max()) > 0, name

    def test_zeroed_cab_leaves_trunk_and_other_branches(self):
        model = init_model(ModelConfig.tiny(2), seed=5)
        x = torch.rand(1, 3, 16, 16)
        before = model(x)
        zero_(model.cabs[1])
        after = model(x)
        for e in range(3):
            assert torch.equal(before.trunk_feats[e], after.trunk_feats[e])
        assert torch.equal(before.inter_srs[0], after.inter_srs[0])
        assert torch.equal(before.inter_srs[2], after.inter_srs[2])
        assert not torch.equal(before.inter_srs[1], after.inter_srs[1])
        assert not torch.equal(before.attn_masks, after.attn_masks)
        assert torch.all(after.inter_srs[1] == 0)


class TestCheckpoint:
    def test_roundtrip_bytes_identical(self, tmp_path):
        model = init_model(ModelConfig.tiny(2), seed=6)
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(model, p1)
        loaded = load_checkpoint(p1)
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_roundtrip_preserves_outputs(self, tmp_path):
        model = init_model(ModelConfig.tiny(2), seed=7)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.cfg == model.cfg
        x = torch.rand(1, 3, 16, 16)
        assert torch.equal(model(x).final_sr, loaded(x).final_sr)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError):
            load_checkpoint(path)
