import math

import numpy as np
import pytest

from cascadenet import autodiff as ad
from cascadenet import encoder as enc
from cascadenet.params import Bind


def make_layer(dim=8, heads=2, kernel=3, left=3, right=0, attn=True, causal=True,
               expansion=2):
    return enc.ConformerLayerConfig(
        model_dim=dim, num_heads=heads, ffn_expansion=expansion, conv_kernel=kernel,
        left_context=left, right_context=right, has_self_attention=attn,
        causal_conv=causal)


def layer_params(cfg, seed=0, prefix="L"):
    params = {}
    rng = np.random.default_rng(seed)
    enc.init_conformer_layer(params, prefix, cfg, rng)
    return params


def test_local_attention_mask_examples():
    t = 5
    lower = enc.local_attention_mask(t, None, 0)
    np.testing.assert_array_equal(lower, np.tril(np.ones((t, t), dtype=bool)))
    m = enc.local_attention_mask(4, 1, 0)
    for i in range(4):
        np.testing.assert_array_equal(np.nonzero(m[i])[0], [j for j in (i - 1, i) if 0 <= j < 4])
    m = enc.local_attention_mask(4, 0, 1)
    for i in range(4):
        np.testing.assert_array_equal(np.nonzero(m[i])[0], [j for j in (i, i + 1) if 0 <= j < 4])


def test_conformer_layer_preserves_shape():
    cfg = make_layer()
    params = layer_params(cfg)
    x = np.random.default_rng(1).standard_normal((11, cfg.model_dim))
    out = enc.conformer_layer_forward(ad.constant(x), cfg, Bind(params).sub("L"))
    assert out.shape == (11, cfg.model_dim)


def test_conformer_layer_dim_mismatch_errors():
    cfg = make_layer(dim=8)
    params = layer_params(cfg)
    with pytest.raises(enc.ConfigError, match="dim"):
        enc.conformer_layer_forward(ad.constant(np.zeros((4, 5))), cfg,
                                    Bind(params).sub("L"))


def test_causal_layer_ignores_future_frames_bitwise():
    cfg = make_layer(dim=8, left=3, kernel=3, causal=True)
    params = layer_params(cfg, seed=3)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((10, 8))
    base = enc.conformer_layer_forward(ad.constant(x), cfg, Bind(params).sub("L")).data
    for t in [0, 3, 7]:
        x2 = x.copy()
        x2[t + 1:] += rng.standard_normal(x2[t + 1:].shape)
        out = enc.conformer_layer_forward(ad.constant(x2), cfg, Bind(params).sub("L")).data
        np.testing.assert_array_equal(out[:t + 1], base[:t + 1])


def test_right_context_boundary_is_exact():
    # kernel 1 so attention is the only cross-frame path: lookahead == 5
    cfg = make_layer(dim=8, left=2, right=5, kernel=1, causal=False)
    params = layer_params(cfg, seed=5)
    rng = np.random.default_rng(6)
    x = rng.standard_normal((14, 8))
    base = enc.conformer_layer_forward(ad.constant(x), cfg, Bind(params).sub("L")).data
    t = 4
    hit = x.copy()
    hit[t + 5] += 1.0
    out = enc.conformer_layer_forward(ad.constant(hit), cfg, Bind(params).sub("L")).data
    assert not np.array_equal(out[t], base[t])
    miss = x.copy()
    miss[t + 6] += 1.0
    out = enc.conformer_layer_forward(ad.constant(miss), cfg, Bind(params).sub("L")).data
    np.testing.assert_array_equal(out[t], base[t])


def test_windowed_attention_matches_dense_reference():
    cfg = make_layer(dim=8, heads=2, left=2, right=1, kernel=3, causal=False)
    params = layer_params(cfg, seed=7)
    rng = np.random.default_rng(8)
    x = rng.standard_normal((9, 8))
    got = enc._attention_block(ad.constant(x), cfg, Bind(params).sub("L")).data

    # dense-mask brute force
    def ln(v, g, b):
        mu = v.mean(-1, keepdims=True)
        var = ((v - mu) ** 2).mean(-1, keepdims=True)
        return (v - mu) / np.sqrt(var + 1e-6) * g + b

    h = ln(x, params["L.attn.ln.g"], params["L.attn.ln.b"])
    q = h @ params["L.attn.q.w"] + params["L.attn.q.b"]
    k = h @ params["L.attn.k.w"]
    v = h @ params["L.attn.v.w"] + params["L.attn.v.b"]
    mask = enc.local_attention_mask(9, cfg.left_context, cfg.right_context)
    dh = 8 // 2
    ctx = np.zeros((9, 8))
    for hd in range(2):
        sl = slice(hd * dh, (hd + 1) * dh)
        scores = q[:, sl] @ k[:, sl].T / math.sqrt(dh)
        scores = np.where(mask, scores, -np.inf)
        e = np.exp(scores - scores.max(-1, keepdims=True))
        p = e / e.sum(-1, keepdims=True)
        ctx[:, sl] = p @ v[:, sl]
    want = ctx @ params["L.attn.o.w"] + params["L.attn.o.b"]
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_downsample_stacking_examples():
    rng = np.random.default_rng(0)
    h = rng.standard_normal((4, 3))
    out = ad.stack_pairs(ad.constant(h)).data
    assert out.shape == (2, 6)
    np.testing.assert_array_equal(out[0], np.concatenate([h[0], h[1]]))
    h3 = rng.standard_normal((3, 3))
    out3 = ad.stack_pairs(ad.constant(h3)).data
    assert out3.shape == (2, 6)
    np.testing.assert_array_equal(out3[1], np.concatenate([h3[2], h3[2]]))
    const = np.ones((6, 3))
    np.testing.assert_array_equal(ad.stack_pairs(ad.constant(const)).data, np.ones((3, 6)))


def test_downsample_avgpool_examples():
    h = np.array([[0.0], [2.0], [4.0], [6.0]])
    np.testing.assert_array_equal(ad.avgpool_pairs(ad.constant(h)).data, [[1.0], [5.0]])
    const = np.full((5, 4), 2.5)
    np.testing.assert_array_equal(ad.avgpool_pairs(ad.constant(const)).data,
                                  np.full((3, 4), 2.5))
    one = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(ad.avgpool_pairs(ad.constant(one)).data, one)


@pytest.mark.parametrize("t", range(1, 10))
def test_funnel_attention_output_length(t):
    cfg = make_layer(dim=6, heads=1, left=4, right=0)
    params = layer_params(cfg, seed=9)
    h = np.random.default_rng(t).standard_normal((t, 6))
    out = enc.funnel_attention(ad.constant(h), cfg, Bind(params).sub("L"))
    assert out.shape == ((t + 1) // 2, 6)


def test_funnel_attention_constant_input_is_constant():
    cfg = make_layer(dim=6, heads=2, left=3, right=0)
    params = layer_params(cfg, seed=10)
    h = np.tile(np.random.default_rng(11).standard_normal(6), (8, 1))
    out = enc.funnel_attention(ad.constant(h), cfg, Bind(params).sub("L")).data
    for row in out[1:]:
        np.testing.assert_allclose(row, out[0], rtol=1e-12, atol=1e-14)


def test_funnel_attention_matches_hand_computed_single_query():
    cfg = make_layer(dim=4, heads=1, left=4, right=1)
    params = layer_params(cfg, seed=12)
    h = np.random.default_rng(13).standard_normal((2, 4))
    got = enc.funnel_attention(ad.constant(h), cfg, Bind(params).sub("L")).data

    q = (h[0] + h[1]) / 2 @ params["L.attn.q.w"] + params["L.attn.q.b"]
    k = h @ params["L.attn.k.w"]
    v = h @ params["L.attn.v.w"] + params["L.attn.v.b"]
    scores = k @ q / math.sqrt(4)
    e = np.exp(scores - scores.max())
    p = e / e.sum()
    ctx = p @ v
    want = ctx @ params["L.attn.o.w"] + params["L.attn.o.b"]
    np.testing.assert_allclose(got[0], want, rtol=1e-12, atol=1e-12)


def test_funnel_requires_attention():
    cfg = make_layer(dim=6, attn=False)
    params = layer_params(cfg, seed=14)
    with pytest.raises(enc.ConfigError, match="attention"):
        enc.funnel_attention(ad.constant(np.zeros((4, 6))), cfg, Bind(params).sub("L"))


def small_encoder(method="funnel", dims=(8, 8, 16), n_causal=3, pos=1, right=0):
    layers = []
    for i, d in enumerate(dims):
        causal = i < n_causal
        layers.append(make_layer(dim=d, heads=2, left=3, kernel=3,
                                 right=0 if causal else right,
                                 attn=(i != 0), causal=causal))
    cfg = enc.EncoderConfig(layers=layers, n_causal=n_causal,
                            downsample_method=method, downsample_position=pos,
                            input_dim=dims[0])
    cfg.validate()
    params = {}
    enc.init_encoder(params, "enc", cfg, np.random.default_rng(20))
    return cfg, params


def test_encoder_forward_upto_zero_is_identity():
    cfg, params = small_encoder()
    x = np.random.default_rng(21).standard_normal((7, 8))
    out, _ = enc.encoder_forward(ad.constant(x), cfg, Bind(params).sub("enc"), upto=0)
    np.testing.assert_array_equal(out.data, x)


def test_encoder_forward_composition():
    cfg, params = small_encoder()
    x = np.random.default_rng(22).standard_normal((9, 8))
    full, _ = enc.encoder_forward(ad.constant(x), cfg, Bind(params).sub("enc"))
    half, _ = enc.encoder_forward(ad.constant(x), cfg, Bind(params).sub("enc"), upto=2)
    # feed the intermediate through the remaining layer
    rest = ad.constant(half.data)
    layer = cfg.layers[2]
    lp = Bind(params).sub("enc").sub("layer2")
    rest = enc.linear_bias(rest, Bind(params).sub("enc").sub("layer2"), "proj")
    rest = enc.conformer_layer_forward(rest, layer, lp)
    np.testing.assert_array_equal(rest.data, full.data)


def test_encoder_downsample_halves_length_exactly_once():
    cfg, params = small_encoder(method="avgpool", pos=1)
    x = np.random.default_rng(23).standard_normal((10, 8))
    p = Bind(params).sub("enc")
    before, _ = enc.encoder_forward(ad.constant(x), cfg, p, upto=1)
    assert before.shape[0] == 10
    after, _ = enc.encoder_forward(ad.constant(x), cfg, p, upto=2)
    assert after.shape[0] == 5
    assert cfg.out_frames(10, 1) == 10 and cfg.out_frames(10, 2) == 5


@pytest.mark.parametrize("method", ["stacking", "avgpool", "funnel"])
def test_downsample_methods_lengths_and_determinism(method):
    cfg, params = small_encoder(method=method)
    p = Bind(params).sub("enc")
    for t in range(1, 65, 7):
        x = np.random.default_rng(t).standard_normal((t, 8))
        a, _ = enc.encoder_forward(ad.constant(x), cfg, p)
        b, _ = enc.encoder_forward(ad.constant(x), cfg, p)
        assert a.shape[0] == (t + 1) // 2
        np.testing.assert_array_equal(a.data, b.data)


def test_encoder_causal_prefix_streaming_safe():
    # causality must hold through the funnel layer as well
    cfg, params = small_encoder(method="funnel", dims=(8, 8, 8), pos=1)
    p = Bind(params).sub("enc")
    rng = np.random.default_rng(24)
    x = rng.standard_normal((12, 8))
    base, _ = enc.encoder_forward(ad.constant(x), cfg, p)
    x2 = x.copy()
    x2[8:] += rng.standard_normal((4, 8))
    out, _ = enc.encoder_forward(ad.constant(x2), cfg, p)
    # frames 0..7 feed pooled outputs 0..3; all are unaffected by frames 8+
    np.testing.assert_array_equal(out.data[:4], base.data[:4])


def test_receptive_field_bound():
    # 2 causal attention layers, left=2, kernel=2: reach <= L*(l + c - 1) = 6
    layers = [make_layer(dim=6, heads=1, left=2, kernel=2) for _ in range(2)]
    cfg = enc.EncoderConfig(layers=layers, n_causal=2, downsample_method="none",
                            input_dim=6)
    cfg.validate()
    params = {}
    enc.init_encoder(params, "enc", cfg, np.random.default_rng(25))
    p = Bind(params).sub("enc")
    x = np.random.default_rng(26).standard_normal((20, 6))
    base, _ = enc.encoder_forward(ad.constant(x), cfg, p)
    t = 15
    far = x.copy()
    far[: t - 8] += 1.0  # slack of 2 beyond the bound
    out, _ = enc.encoder_forward(ad.constant(far), cfg, p)
    np.testing.assert_array_equal(out.data[t], base.data[t])


def test_full_conformer_layer_gradient_matches_finite_differences():
    cfg = make_layer(dim=4, heads=2, left=2, kernel=2, expansion=2)
    params = layer_params(cfg, seed=30)
    x = np.random.default_rng(31).standard_normal((5, 4))
    weights = np.random.default_rng(32).standard_normal((5, 4))

    def run(p):
        tape = ad.Tape()
        bind = Bind(p, tape).sub("L")
        out = enc.conformer_layer_forward(tape.leaf(x, "x"), cfg, bind)
        return tape, ad.reduce_sum(ad.mul(out, ad.constant(weights)))

    tape, loss = run(params)
    grads = ad.grad(tape, loss)
    grads.pop("x")

    def f(p):
        _, l = run(p)
        return l.item()

    err = ad.finite_diff_check(f, params, grads, eps=1e-6)
    assert err < 1e-5, f"conformer layer FD error {err:.2e}"


def test_config_validation_errors():
    with pytest.raises(enc.ConfigError, match="divisible"):
        make_layer(dim=7, heads=2).validate()
    bad = enc.EncoderConfig(layers=[make_layer(dim=8, right=1)], n_causal=1,
                            downsample_method="funnel", downsample_position=0,
                            input_dim=8)
    with pytest.raises(enc.ConfigError, match="right context"):
        bad.validate()
    nofunnel = enc.EncoderConfig(layers=[make_layer(dim=8, attn=False)], n_causal=1,
                                 downsample_method="funnel", downsample_position=0,
                                 input_dim=8)
    with pytest.raises(enc.ConfigError, match="funnel"):
        nofunnel.validate()
