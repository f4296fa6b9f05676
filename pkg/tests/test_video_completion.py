import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from bvinet.errors import ConfigError, DimensionError
from bvinet.video_completion import (
    FusionWeights,
    VCNet,
    VCNetConfig,
    WaveletSparseAttention,
    WSTBlock,
    degenerate_rows,
    dsa,
    fuse_attention,
    ssa,
    token_validity,
    vcnet_forward,
    wst_block,
)
from bvinet.wavelet import dwt2d_nchw, idwt2d_nchw

from fdcheck import check_gradients

D = torch.float64


def seeded(cls, *args, seed=0):
    torch.manual_seed(seed)
    return cls(*args).double()


def rand(rng, *shape, scale=1.0):
    return torch.from_numpy(rng.normal(size=shape) * scale)


# ---------------------------------------------------------------- attention primitives


def test_dsa_identical_tokens():
    q = torch.ones(2, 4, dtype=D)
    a = dsa(q, q, 0.0, torch.ones(2, dtype=torch.bool))
    assert torch.equal(a, torch.full((2, 2), 0.5, dtype=D))


def test_dsa_invalid_key_hand_case():
    q = torch.tensor([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]], dtype=D)
    valid = torch.tensor([True, True, False])
    a = dsa(q, q, 0.0, valid)
    logits = (q @ q.T / math.sqrt(2)).numpy()
    for i in range(3):
        e = np.exp(logits[i, :2])
        np.testing.assert_allclose(a[i, :2].numpy(), e / e.sum(), atol=1e-12)
    assert torch.count_nonzero(a[:, 2]) == 0


def test_ssa_negative_similarities_give_uniform_rows():
    q = torch.tensor([[1.0, 0.0], [2.0, 1.0], [0.5, 0.5]], dtype=D)
    k = -torch.tensor([[1.0, 1.0], [3.0, 0.5], [1.0, 2.0], [0.2, 0.1]], dtype=D)
    a = ssa(q, k, 0.0, torch.ones(4, dtype=torch.bool))
    assert torch.allclose(a, torch.full((3, 4), 0.25, dtype=D), atol=1e-15)


def test_ssa_equals_dsa_on_positive_similarities(rng):
    q = torch.from_numpy(rng.uniform(0.1, 1, size=(2, 6, 4)))
    k = torch.from_numpy(rng.uniform(0.1, 1, size=(2, 6, 4)))
    bias = rand(rng, 2, 6, 6)
    valid = torch.from_numpy(rng.uniform(size=6) > 0.3)
    assert torch.equal(ssa(q, k, bias, valid), dsa(q, k, bias, valid))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 12), w=st.floats(0, 1))
def test_rows_stochastic_over_valid_keys(seed, n, w):
    g = np.random.default_rng(seed)
    q, k = (torch.from_numpy(g.normal(size=(3, n, 4)) * 3) for _ in range(2))
    bias = torch.from_numpy(g.normal(size=(3, n, n)))
    valid = torch.from_numpy(g.uniform(size=n) > 0.4)
    valid[g.integers(n)] = True
    a_d, a_s = dsa(q, k, bias, valid), ssa(q, k, bias, valid)
    fused = fuse_attention(a_d, a_s, torch.tensor([w, 1 - w], dtype=D))
    for a in (a_d, a_s, fused):
        assert (a >= 0).all()
        assert (a.sum(-1) - 1).abs().max() < 1e-5
        assert torch.count_nonzero(a[..., ~valid]) == 0


def test_fuse_one_zero_is_dsa_bitwise(rng):
    a = torch.softmax(rand(rng, 5, 5), -1)
    b = torch.softmax(rand(rng, 5, 5), -1)
    assert torch.equal(fuse_attention(a, b, torch.tensor([1.0, 0.0], dtype=D)), a)


def test_fuse_half_half_equal_inputs(rng):
    a = torch.softmax(rand(rng, 4, 4), -1)
    out = fuse_attention(a, a.clone(), torch.tensor([0.5, 0.5], dtype=D))
    assert torch.allclose(out, a, atol=1e-15)


def test_fuse_shape_mismatch():
    with pytest.raises(DimensionError):
        fuse_attention(torch.zeros(2, 2), torch.zeros(2, 3), (0.5, 0.5))


def test_degenerate_row_signal():
    a = dsa(torch.ones(3, 2, dtype=D), torch.ones(3, 2, dtype=D), 0.0, torch.zeros(3, dtype=torch.bool))
    assert torch.count_nonzero(a) == 0
    assert degenerate_rows(a).all()


def test_fusion_weights():
    w = FusionWeights("both")
    with torch.no_grad():
        w.logits.copy_(torch.tensor([0.3, -1.2]))
    out = w()
    assert out.sum().item() == pytest.approx(1.0, abs=1e-7) and (out >= 0).all()
    assert FusionWeights("dsa")().tolist() == [1.0, 0.0]
    assert FusionWeights("ssa")().tolist() == [0.0, 1.0]


def test_config_validation():
    with pytest.raises(ConfigError):
        VCNetConfig(base_channels=3, heads=5)
    with pytest.raises(ConfigError):
        VCNetConfig(attention="sparse")


# ---------------------------------------------------------------- wavelet sparse attention


def small_cfg(**kw):
    return VCNetConfig(base_channels=4, heads=2, max_frames=4, bias_extent=4, **kw)


def randomized(module, rng):
    # zero-initialised bias and fusion logits would hide indexing mistakes
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, WaveletSparseAttention):
                m.bias.normal_(0, 0.3)
                m.omega.logits.normal_(0, 1)
    return module


def test_wsa_corrupted_key_influence(rng):
    wsa = randomized(seeded(WaveletSparseAttention, small_cfg()), rng)
    q, k, v = (rand(rng, 2, 16, 4, 6) for _ in range(3))
    valid = torch.from_numpy(rng.uniform(size=(2, 2, 3)) > 0.4)
    valid[0, 0, 0] = True
    valid[1, 1, 2] = False
    base = wsa(q, k, v, valid)
    # corrupted token (1, 1, 2) covers pixels rows 2-3, cols 4-5 of frame 1
    v2, k2 = v.clone(), k.clone()
    v2[1, :, 2:4, 4:6] += torch.from_numpy(rng.normal(size=(16, 2, 2)) * 5)
    k2[1, :, 2:4, 4:6] += torch.from_numpy(rng.normal(size=(16, 2, 2)) * 5)
    assert (wsa(q, k2, v2, valid) - base).abs().max() < 1e-6


def test_wsa_all_corrupted_passes_through(rng):
    wsa = seeded(WaveletSparseAttention, small_cfg())
    q, k, v = (rand(rng, 2, 16, 4, 4) for _ in range(3))
    out = wsa(q, k, v, torch.zeros(2, 2, 2, dtype=torch.bool))
    assert torch.allclose(out, v, atol=1e-12)


def test_wsa_attention_zero_at_invalid_columns(rng):
    wsa = randomized(seeded(WaveletSparseAttention, small_cfg()), rng)
    q, k = rand(rng, 3, 16, 4, 4), rand(rng, 3, 16, 4, 4)
    valid = torch.from_numpy(rng.uniform(size=(3, 4, 4)) > 0.5)
    valid[0, 0, 0] = True
    a = wsa.attention(q, k, valid)
    assert torch.count_nonzero(a[..., ~valid.reshape(-1)]) == 0
    assert (a.sum(-1) - 1).abs().max() < 1e-5


def reference_block(block, f):
    """Pre-norm low-band dense-attention transformer block, written out directly."""
    t, h, w, c = f.shape
    heads = block.attn.cfg.heads
    d = c // heads
    y = torch.nn.functional.layer_norm(f, (c,), block.norm1.weight, block.norm1.bias, block.norm1.eps)
    qkv = y @ block.qkv.weight.T + block.qkv.bias
    q, k, v = (qkv[..., i * c:(i + 1) * c].permute(0, 3, 1, 2) for i in range(3))
    qb, kb, vb = dwt2d_nchw(q), dwt2d_nchw(k), dwt2d_nchw(v)
    hh, ww = h // 2, w // 2
    n = t * hh * ww
    coords = [(a, b, e) for a in range(t) for b in range(hh) for e in range(ww)]
    cfg = block.attn.cfg
    side = 2 * cfg.bias_extent - 1
    bands_out = [torch.zeros_like(b) for b in vb]
    for head in range(heads):
        sl = slice(head * d, (head + 1) * d)
        ql = torch.stack([qb.ll[a, sl, b, e] for a, b, e in coords])
        kl = torch.stack([kb.ll[a, sl, b, e] for a, b, e in coords])
        bias = torch.empty(n, n, dtype=f.dtype)
        for i, (ta, ia, ja) in enumerate(coords):
            for j, (tb, ib, jb) in enumerate(coords):
                dt = min(max(tb - ta, 1 - cfg.max_frames), cfg.max_frames - 1) + cfg.max_frames - 1
                di = min(max(ib - ia, 1 - cfg.bias_extent), cfg.bias_extent - 1) + cfg.bias_extent - 1
                dj = min(max(jb - ja, 1 - cfg.bias_extent), cfg.bias_extent - 1) + cfg.bias_extent - 1
                bias[i, j] = block.attn.bias[head, (dt * side + di) * side + dj]
        attn = torch.softmax(ql @ kl.T / math.sqrt(d) + bias, -1)
        for band, out in zip(vb, bands_out):
            vals = torch.stack([band[a, sl, b, e] for a, b, e in coords])
            res = attn @ vals
            for i, (a, b, e) in enumerate(coords):
                out[a, sl, b, e] = res[i]
    completed = idwt2d_nchw(*bands_out).permute(0, 2, 3, 1)
    f = f + completed @ block.proj.weight.T + block.proj.bias
    return f + block.ffn(block.norm2(f))


def test_block_reduces_to_plain_transformer(rng):
    block = randomized(seeded(WSTBlock, small_cfg(attention="dsa")), rng)
    f = rand(rng, 2, 4, 6, 16)
    valid = torch.ones(2, 2, 3, dtype=torch.bool)
    assert torch.allclose(block(f, valid), reference_block(block, f), atol=1e-10)


def test_block_output_shape(rng):
    cfg = VCNetConfig(base_channels=4, heads=2)
    block = seeded(WSTBlock, cfg)
    f = rand(rng, 4, 16, 16, 16)
    mask = torch.from_numpy((rng.uniform(size=(4, 16, 16, 1)) > 0.7).astype(np.float64))
    assert wst_block(f, mask, block).shape == (4, 16, 16, 16)


def test_block_corrupted_token_influence(rng):
    block = randomized(seeded(WSTBlock, small_cfg()), rng)
    f = rand(rng, 2, 8, 8, 16)
    valid = torch.ones(2, 4, 4, dtype=torch.bool)
    valid[0, 1, 2] = False
    valid[1, 3, 0] = False
    base = block(f, valid)
    f2 = f.clone()
    f2[0, 2:4, 4:6] += rand(rng, 2, 2, 16, scale=4)
    diff = (block(f2, valid) - base).abs()
    diff[0, 2:4, 4:6] = 0  # the perturbed token's own output may change
    assert diff.max() < 1e-6


def test_block_rejects_misaligned_mask(rng):
    block = seeded(WSTBlock, small_cfg())
    with pytest.raises(DimensionError):
        block(rand(rng, 2, 8, 8, 16), torch.ones(2, 3, 4, dtype=torch.bool))


def test_block_gradients(rng):
    block = randomized(seeded(WSTBlock, small_cfg()), rng)
    f = rand(rng, 2, 4, 4, 16).requires_grad_()
    target = rand(rng, 2, 4, 4, 16)
    valid = torch.tensor([[[True, False], [True, True]], [[False, True], [True, True]]])

    def loss():
        return (block(f, valid) - target).abs().mean()

    worst = check_gradients(loss, [("input", f)] + list(block.named_parameters()))
    assert max(worst.values()) < 1e-3, worst


def test_token_validity_pooling():
    m = torch.zeros(1, 16, 16, 1, dtype=D)
    m[0, :8, :8] = 1.0
    m[0, 8:, :8] = 0.4
    m[0, :4, 8:] = 1.0  # exactly half of the block: invalid
    v = token_validity(m, 8)
    assert v.tolist() == [[[False, False], [True, True]]]


# ---------------------------------------------------------------- VCNet


def test_zero_mask_is_identity(rng):
    net = seeded(VCNet, VCNetConfig())
    x = torch.from_numpy(rng.uniform(size=(8, 48, 48, 3)))
    out = vcnet_forward(net, x, torch.zeros(8, 48, 48, 1, dtype=D))
    assert torch.equal(out, x)


def test_valid_pixels_kept_and_range(rng):
    net = seeded(VCNet, VCNetConfig())
    x = torch.from_numpy(rng.uniform(size=(3, 24, 32, 3)))
    m = torch.from_numpy((rng.uniform(size=(3, 24, 32, 1)) > 0.6).astype(np.float64))
    out = net(x, m)
    keep = (m[..., 0] == 0)
    assert torch.equal(out[keep], x[keep])
    assert out.min() >= 0 and out.max() <= 1


def test_output_clamped_for_out_of_range_input(rng):
    net = seeded(VCNet, VCNetConfig())
    x = torch.from_numpy(rng.uniform(-0.5, 1.5, size=(2, 16, 16, 3)))
    m = torch.full((2, 16, 16, 1), 0.5, dtype=D)
    out = net(x, m)
    assert out.min() >= 0 and out.max() <= 1


def test_vcnet_shape_errors():
    net = seeded(VCNet, VCNetConfig())
    with pytest.raises(DimensionError):
        net(torch.zeros(2, 16, 16, 3, dtype=D), torch.zeros(2, 16, 8, 1, dtype=D))
    with pytest.raises(DimensionError):
        net(torch.zeros(2, 12, 16, 3, dtype=D), torch.zeros(2, 12, 16, 1, dtype=D))
