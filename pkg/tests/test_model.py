import numpy as np
import pytest
import torch

from cflnet.contrastive import combined_loss, partition_and_pool, supcon_loss, downsample_mask_majority
from cflnet.model import ASPP, CFLNet, ModelConfig, load_checkpoint, save_checkpoint
from cflnet.oracles import central_difference, relative_error


def test_stage4_maps_fuse_to_4096_channels():
    cfg = ModelConfig()
    assert cfg.encoder_channels == 2048 and cfg.encoder_stride == 32
    net = CFLNet(cfg).eval()
    x = torch.rand(1, 3, 256, 256)
    with torch.no_grad():
        fused = net.encode_two_stream(x, x)
    assert fused.shape == (1, 4096, 8, 8)


def test_stream_swap_permutes_channels(tiny_model):
    tiny_model.eval()
    a, b = torch.rand(1, 3, 32, 32), torch.rand(1, 3, 32, 32)
    # tie the two encoders so only the concatenation order differs
    tiny_model.noise_encoder.load_state_dict(tiny_model.rgb_encoder.state_dict())
    with torch.no_grad():
        ab = tiny_model.encode_two_stream(a, b)
        ba = tiny_model.encode_two_stream(b, a)
    c = ab.shape[1] // 2
    torch.testing.assert_close(ab[:, :c], ba[:, c:])
    torch.testing.assert_close(torch.sort(ab.flatten()).values, torch.sort(ba.flatten()).values)


def test_stream_size_mismatch(tiny_model):
    with pytest.raises(ValueError):
        tiny_model.encode_two_stream(torch.rand(1, 3, 32, 32), torch.rand(1, 3, 32, 16))


def test_aspp_branch_arithmetic():
    aspp = ASPP(64, 16, (6, 12, 18)).eval()
    assert aspp.project[0].in_channels == 5 * 16
    with torch.no_grad():
        out = aspp(torch.randn(2, 64, 8, 8))
    assert out.shape == (2, 16, 8, 8)


@pytest.mark.parametrize("hw", [(1, 1), (3, 7), (8, 8), (25, 4)])
def test_aspp_preserves_size(hw):
    aspp = ASPP(8, 4).eval()
    with torch.no_grad():
        assert aspp(torch.randn(1, 8, *hw)).shape[-2:] == hw


def test_aspp_constant_input_constant_output():
    aspp = ASPP(8, 4).eval()
    with torch.no_grad():
        out = aspp(torch.full((1, 8, 8, 8), 0.7))
    assert torch.allclose(out, out[..., :1, :1].expand_as(out), atol=1e-6)


def test_forward_shapes_full_model():
    net = CFLNet().train()
    x = torch.rand(1, 3, 256, 256) * 255
    with torch.no_grad():
        out = net(x)
    assert out.logits.shape == (1, 2, 256, 256)
    assert out.projection.shape == (1, 256, 256, 256)
    emb = partition_and_pool(out.projection, 64)
    assert emb.shape == (1, 4096, 256)
    assert torch.all((emb.norm(dim=-1) - 1).abs() < 1e-5)
    net.eval()
    with torch.no_grad():
        out = net(x)
    assert out.projection is None and out.logits.shape == (1, 2, 256, 256)


def test_batched_forward(tiny_model):
    out = tiny_model(torch.rand(3, 3, 32, 32) * 255)
    assert out.logits.shape == (3, 2, 32, 32) and out.projection.shape == (3, 8, 32, 32)


def test_eval_mode_skips_projection_head(tiny_model):
    calls = []
    tiny_model.proj_head.register_forward_hook(lambda *a: calls.append(1))
    tiny_model.eval()
    with torch.no_grad():
        tiny_model(torch.rand(1, 3, 32, 32))
    assert calls == []


def test_wrong_input_size(tiny_model):
    with pytest.raises(ValueError):
        tiny_model(torch.rand(1, 3, 64, 64))


def test_softmax_sums_to_one_and_deterministic(tiny_model):
    tiny_model.eval()
    x = torch.rand(2, 3, 32, 32) * 255
    with torch.no_grad():
        a, b = tiny_model(x).logits, tiny_model(x).logits
    assert torch.equal(a, b)
    torch.testing.assert_close(a.softmax(1).sum(1), torch.ones(2, 32, 32))


def test_zero_final_projection_weights_give_zero_map(tiny_model):
    last = tiny_model.proj_head.net[-1]
    with torch.no_grad():
        last.weight.zero_()
        last.bias.zero_()
        assert torch.all(tiny_model(torch.rand(1, 3, 32, 32)).projection == 0)


def test_contrastive_gradient_reaches_both_encoders(tiny_model):
    x = torch.rand(2, 3, 32, 32) * 255
    mask = torch.zeros(2, 32, 32, dtype=torch.long)
    mask[:, 8:24, 4:20] = 1
    emb = partition_and_pool(tiny_model(x).projection, 8)
    labels = downsample_mask_majority(mask, 8)
    sum(supcon_loss(e, y) for e, y in zip(emb, labels)).backward()
    for enc in (tiny_model.rgb_encoder, tiny_model.noise_encoder):
        assert enc[0][0].weight.grad.abs().sum() > 0
    assert all(p.grad is None or p.grad.abs().sum() == 0 for p in tiny_model.seg_head.parameters())


def test_total_loss_gradients_match_finite_differences(tiny_model):
    model = tiny_model.double().train()
    x = torch.rand(2, 3, 32, 32, dtype=torch.float64) * 255
    mask = torch.zeros(2, 32, 32, dtype=torch.long)
    mask[:, 8:24, 4:20] = 1

    def loss():
        return combined_loss(model(x), mask, k=8, tau=0.1).total

    loss().backward()
    params = list(model.parameters())
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = params[rng.integers(len(params))]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        with torch.no_grad():
            fd = central_difference(loss, p.data, idx, step=1e-5)
        assert relative_error(p.grad[idx].item(), fd) < 1e-4


def test_checkpoint_roundtrip(tiny_model, tmp_path):
    tiny_model.eval()
    x = torch.rand(1, 3, 32, 32) * 255
    with torch.no_grad():
        ref = tiny_model(x).logits
    save_checkpoint(tmp_path / "m.pt", tiny_model)
    loaded, payload = load_checkpoint(tmp_path / "m.pt")
    assert payload["format"] == "cflnet-checkpoint/1"
    assert loaded.config == tiny_model.config
    with torch.no_grad():
        assert torch.equal(loaded(x).logits, ref)


def test_checkpoint_rejects_foreign_file(tmp_path):
    torch.save({"weights": 1}, tmp_path / "x.pt")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.pt")


def test_stride4_heads():
    cfg = ModelConfig(input_size=64, embed_dim=8, aspp_channels=8, encoder="resnet18",
                      encoder_stages=2, head_stride=4)
    out = CFLNet(cfg)(torch.rand(1, 3, 64, 64) * 255)
    assert out.logits.shape == (1, 2, 64, 64) and out.projection.shape == (1, 8, 16, 16)
    lb = combined_loss(out, torch.zeros(1, 64, 64, dtype=torch.long), k=16)
    assert torch.isfinite(lb.total)
