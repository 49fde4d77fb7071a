import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from m2h import autodiff as ad
from m2h.autodiff import Tensor
from m2h.config import TASKS, ModelConfig
from m2h.encoder import Encoder, MEViTBlock, PatchEmbed, TokenSet
from m2h.errors import ConfigError, DimensionError
from m2h.ggfm import GGFM, Head, StreamFuse, ggfm_fuse_unique
from m2h.model import M2H
from m2h.reassembly import MSF, MSTR, UniqueProjection, check_pyramid


def tiny_cfg(**kw):
    base = dict(patch=4, emb_dim=16, encoder_blocks=2, encoder_heads=2, image_size=16, channels=8,
                window=2, wmca_heads=2, num_classes=3, head_stem=4)
    base.update(kw)
    return ModelConfig(**base)


def image(rng, b=1, h=16, w=16):
    return Tensor(rng.normal(size=(b, 3, h, w)))


@pytest.mark.parametrize("size,tokens", [(224, 196), (64, 16)])
def test_token_count_law(f64, rng, size, tokens):
    cfg = ModelConfig(emb_dim=16, encoder_heads=2, image_size=size)
    ts = PatchEmbed(cfg, rng)(image(rng, h=size, w=size))
    assert ts.num_tokens == tokens
    assert ts.tokens.shape == (1, tokens, 16)


def test_image_not_divisible_by_patch(f64, rng):
    cfg = ModelConfig(emb_dim=16, encoder_heads=2)
    with pytest.raises(ConfigError):
        PatchEmbed(cfg, rng)(image(rng, h=100, w=100))
    with pytest.raises(ConfigError):
        ModelConfig.toy().check_image(100, 100)


def test_tap_index_out_of_range():
    with pytest.raises(ConfigError):
        ModelConfig(encoder_blocks=4, taps=(1, 2, 3, 5))
    with pytest.raises(ConfigError):
        ModelConfig(encoder_blocks=4, taps=(1, 3, 2, 4))


def test_block_zero_weights_identity(f64, rng):
    block = MEViTBlock(16, 2, 4, rng)
    block.attn.zero_()
    block.ffn.zero_()
    ts = TokenSet(Tensor(rng.normal(size=(2, 9, 16))), (3, 3))
    np.testing.assert_array_equal(block(ts).tokens.data, ts.tokens.data)


@settings(max_examples=10, deadline=None)
@given(b=st.integers(1, 3), gh=st.integers(1, 4), gw=st.integers(1, 4))
def test_block_preserves_shape(b, gh, gw):
    rng = np.random.default_rng(b * 16 + gh * 4 + gw)
    block = MEViTBlock(8, 2, 4, rng)
    ts = TokenSet(Tensor(rng.normal(size=(b, gh * gw, 8)).astype(np.float32)), (gh, gw))
    assert block(ts).tokens.shape == (b, gh * gw, 8)


def test_encoder_final_is_last_tap(f64, rng):
    cfg = tiny_cfg(encoder_blocks=4, taps=(1, 2, 3, 4))
    taps, final = Encoder(cfg, rng)(image(rng))
    assert len(taps) == 4
    np.testing.assert_array_equal(final.tokens.data, taps[-1].tokens.data)


def test_encoder_zero_blocks_give_patch_embedding(f64, rng):
    cfg = tiny_cfg(encoder_blocks=4, taps=(1, 2, 3, 4))
    enc = Encoder(cfg, rng)
    for block in enc.blocks:
        block.zero_()
    x = image(rng)
    emb = enc.embed(x).tokens.data
    taps, _ = enc(x)
    for ts in taps:
        np.testing.assert_array_equal(ts.tokens.data, emb)


def test_encoder_batch_permutation_equivariant(f64, rng):
    enc = Encoder(tiny_cfg(), rng)
    x = image(rng, b=3)
    perm = [2, 0, 1]
    _, a = enc(x)
    _, b = enc(Tensor(x.data[perm]))
    np.testing.assert_allclose(b.tokens.data, a.tokens.data[perm], atol=1e-12)


def test_gradient_reaches_patch_embedding(f64, rng):
    enc = Encoder(tiny_cfg(), rng)
    _, final = enc(image(rng))
    ad.sum(final.tokens * final.tokens).backward()
    assert np.abs(enc.embed.proj.weight.grad).max() > 0


def test_mstr_pyramid_scales(f64, rng):
    cfg = ModelConfig.toy()
    enc, mstr = Encoder(cfg, rng), MSTR(cfg, rng)
    pyramid = mstr(enc(image(rng, h=64, w=64))[0])
    assert [p.shape[2] for p in pyramid] == [16, 8, 4, 2]
    assert all(p.shape[:2] == (1, cfg.channels) for p in pyramid)
    check_pyramid(pyramid)


def test_mstr_zero_tokens_zero_pyramid(f64, rng):
    cfg = tiny_cfg()
    mstr = MSTR(cfg, rng)
    for p in mstr.parameters():
        if p.data.ndim == 1:
            p.data[...] = 0
    ts = TokenSet(Tensor(np.zeros((1, 16, cfg.emb_dim))), (4, 4))
    for level in mstr([ts] * 4):
        np.testing.assert_array_equal(level.data, 0.0)


def test_mstr_rejects_wrong_level_count(f64, rng):
    cfg = tiny_cfg()
    ts = TokenSet(Tensor(np.zeros((1, 16, cfg.emb_dim))), (4, 4))
    with pytest.raises(DimensionError):
        MSTR(cfg, rng)([ts] * 3)


def test_check_pyramid_rejects_bad_scale(f64):
    maps = [Tensor(np.zeros((1, 2, s, s))) for s in (8, 4, 3, 1)]
    with pytest.raises(DimensionError):
        check_pyramid(maps)


@pytest.mark.parametrize("depthwise", [False, True])
def test_msf_identity_on_constant_pyramid(f64, rng, depthwise):
    cfg = tiny_cfg(depthwise=depthwise)
    msf = MSF(cfg, rng).set_identity()
    msf.activate = False
    pyramid = [Tensor(np.full((2, cfg.channels, s, s), 0.5)) for s in (8, 4, 2, 1)]
    out = msf(pyramid)
    assert out.shape == (2, cfg.channels, 8, 8)
    # each level adds its constant once: 4 levels of 0.5
    np.testing.assert_allclose(out.data, 2.0, atol=1e-12)


def test_msf_batch_permutation_equivariant(f64, rng):
    cfg = tiny_cfg()
    msf = MSF(cfg, rng)
    pyramid = [Tensor(rng.normal(size=(3, cfg.channels, s, s))) for s in (8, 4, 2, 1)]
    perm = [1, 2, 0]
    a = msf(pyramid).data
    b = msf([Tensor(p.data[perm]) for p in pyramid]).data
    np.testing.assert_allclose(b, a[perm], atol=1e-12)


def test_unique_projection_distinct_and_zero(f64, rng):
    cfg = tiny_cfg()
    up = UniqueProjection(cfg, rng)
    ts = TokenSet(Tensor(rng.normal(size=(1, 16, cfg.emb_dim))), (4, 4))
    out = up(ts)
    assert set(out) == set(TASKS)
    shapes = {v.shape for v in out.values()}
    assert shapes == {(1, cfg.channels, 16, 16)}
    assert not np.allclose(out["depth"].data, out["edges"].data)
    for p in up.parameters():
        if p.data.ndim == 1:
            p.data[...] = 0
    zero = up(TokenSet(Tensor(np.zeros((1, 16, cfg.emb_dim))), (4, 4)))
    for v in zero.values():
        np.testing.assert_array_equal(v.data, 0.0)


def test_ggfm_gate_overrides(f64, rng):
    ggfm = GGFM(8, 4, rng)
    f = Tensor(rng.normal(size=(2, 8, 3, 3)))
    np.testing.assert_array_equal(ggfm(f, gate_override=0.0).data, f.data)
    np.testing.assert_array_equal(ggfm(f, gate_override=1.0).data, 2 * f.data)


def test_ggfm_scalar_example(f64, rng):
    ggfm = GGFM(4, 4, rng)
    f = np.zeros((1, 4, 2, 2))
    f[0, 1] = 3.0
    out = ggfm(Tensor(f), gate_override=np.array([[0.0, 0.5, 0.0, 0.0]])).data
    np.testing.assert_allclose(out[0, 1], 4.5)


def test_ggfm_scaling_law(f64, rng):
    ggfm = GGFM(8, 4, rng)
    f = Tensor(rng.normal(size=(2, 8, 4, 4)))
    out = ggfm(f).data
    g = ggfm.last_gate
    assert np.all((g > 0) & (g < 1))
    np.testing.assert_allclose(out, (1 + g)[:, :, None, None] * f.data, rtol=1e-13)


def test_ggfm_fuse_unique(f64, rng):
    f = Tensor(rng.normal(size=(1, 4, 2, 2)))
    np.testing.assert_array_equal(ggfm_fuse_unique(f, Tensor(np.zeros_like(f.data))).data, f.data)
    u = Tensor(rng.normal(size=f.shape))
    np.testing.assert_array_equal(ggfm_fuse_unique(Tensor(np.zeros_like(f.data)), u).data, u.data)
    with pytest.raises(DimensionError):
        ggfm_fuse_unique(f, Tensor(np.zeros((1, 4, 3, 3))))


def test_stream_fuse_selectors_and_gradients(f64, rng):
    fuse = StreamFuse(4, rng)
    local = Tensor(rng.normal(size=(1, 4, 3, 3)), requires_grad=True)
    glob = Tensor(rng.normal(size=(1, 4, 3, 3)), requires_grad=True)
    np.testing.assert_allclose(fuse.set_selector("local")(local, glob).data, local.data, atol=1e-15)
    np.testing.assert_allclose(fuse.set_selector("global")(local, glob).data, glob.data, atol=1e-15)
    fresh = StreamFuse(4, rng)
    ad.sum(fresh(local, glob)).backward()
    assert np.abs(local.grad).max() > 0 and np.abs(glob.grad).max() > 0


@pytest.mark.parametrize("stem", [0, 4])
def test_heads_output_invariants(f64, rng, stem):
    cfg = tiny_cfg(head_stem=stem, max_depth=5.0)
    f = Tensor(rng.normal(size=(2, cfg.channels, 4, 4)) * 5)
    s = Tensor(rng.normal(size=(2, stem, 16, 16))) if stem else None
    outs = {t: Head(t, cfg, rng)(f, (16, 16), s).data for t in TASKS}
    assert outs["semantics"].shape == (2, 3, 16, 16)
    assert outs["edges"].shape == (2, 1, 16, 16)
    depth = outs["depth"]
    assert depth.shape == (2, 1, 16, 16)
    assert np.all(depth > 0) and np.all(depth <= 5.0)
    np.testing.assert_allclose(np.linalg.norm(outs["normals"], axis=1), 1.0, atol=1e-5)


def test_head_requires_stem_when_configured(f64, rng):
    head = Head("edges", tiny_cfg(head_stem=4), rng)
    with pytest.raises(DimensionError):
        head(Tensor(np.zeros((1, 8, 4, 4))), (16, 16))


def test_full_model_toy_forward():
    model = M2H(ModelConfig.toy(), seed=0)
    x = np.random.default_rng(0).uniform(size=(1, 3, 64, 64)).astype(np.float32)
    a = model(x)
    b = model(x)
    assert a.seg.shape == (1, 4, 64, 64)
    assert a.depth.shape == (1, 1, 64, 64)
    assert a.normals.shape == (1, 3, 64, 64)
    assert a.edges.shape == (1, 1, 64, 64)
    for k, v in a.numpy().items():
        np.testing.assert_array_equal(v, b.numpy()[k])
    assert np.all(a.depth.data > 0) and np.all(a.depth.data <= 10.0)
    np.testing.assert_allclose(np.linalg.norm(a.normals.data, axis=1), 1.0, atol=1e-5)


def test_full_model_rejects_bad_size():
    model = M2H(ModelConfig.toy(), seed=0)
    with pytest.raises(ConfigError):
        model(np.zeros((1, 3, 48, 48), dtype=np.float32))


@pytest.mark.parametrize("kw", [dict(use_wmca=False), dict(use_ggfm=False), dict(head_stem=0)])
def test_ablations_forward_and_backward(f64, rng, kw):
    model = M2H(tiny_cfg(**kw), seed=1)
    preds = model(image(rng, h=16, w=16))
    total = ad.sum(preds.seg) + ad.sum(preds.depth) + ad.sum(preds.normals) + ad.sum(preds.edges)
    total.backward()
    grads = [p.grad for p in model.parameters() if p.grad is not None]
    assert all(np.all(np.isfinite(g)) for g in grads)
    assert np.abs(model.encoder.embed.proj.weight.grad).max() > 0
