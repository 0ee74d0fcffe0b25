"""Conformer-style causal/non-causal encoder stacks with local attention,
three interchangeable frame-rate reduction methods, and per-layer receptive
field accounting.

Attention is computed over per-query key/value windows rather than dense
T x T score matrices: window reductions have a fixed length and order, which
is what lets the streaming executor (see streaming.py) reproduce the batch
forward pass bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .params import (Bind, glorot_uniform, init_layer_norm, init_linear,
                     layer_norm_p, linear_bias)


class ConfigError(ValueError):
    pass


# "none" skips frame-rate reduction entirely; production presets always
# reduce once, but pure single-stack configurations need the escape hatch
DOWNSAMPLE_METHODS = ("stacking", "avgpool", "funnel", "none")


@dataclass
class ConformerLayerConfig:
    model_dim: int
    num_heads: int = 2
    ffn_expansion: int = 4
    conv_kernel: int = 3
    left_context: int = 4
    right_context: int = 0
    has_self_attention: bool = True
    causal_conv: bool = True

    def validate(self, name: str = "layer") -> None:
        if self.model_dim < 1:
            raise ConfigError(f"{name}: model_dim must be positive")
        if self.has_self_attention and self.model_dim % self.num_heads != 0:
            raise ConfigError(f"{name}: model_dim {self.model_dim} not divisible by "
                              f"{self.num_heads} heads")
        if self.left_context < 0 or self.right_context < 0:
            raise ConfigError(f"{name}: negative attention context")
        if self.conv_kernel < 1:
            raise ConfigError(f"{name}: conv_kernel must be >= 1")

    @property
    def conv_pads(self) -> tuple[int, int]:
        c = self.conv_kernel
        if self.causal_conv:
            return c - 1, 0
        return -(-(c - 1) // 2), (c - 1) // 2

    @property
    def lookahead(self) -> int:
        """Frames of future input (at this layer's rate) needed per output."""
        ahead = self.right_context if self.has_self_attention else 0
        return ahead + self.conv_pads[1]


@dataclass
class EncoderConfig:
    layers: list[ConformerLayerConfig]
    n_causal: int
    downsample_method: str = "funnel"
    downsample_position: int = 0
    input_dim: int = 0  # feature dim entering layer 0

    def validate(self) -> None:
        if not 0 <= self.n_causal <= len(self.layers):
            raise ConfigError(f"n_causal {self.n_causal} out of range")
        if self.downsample_method not in DOWNSAMPLE_METHODS:
            raise ConfigError(f"unknown downsample method {self.downsample_method!r}")
        if self.downsamples:
            if not 0 <= self.downsample_position <= self.n_causal:
                raise ConfigError(
                    f"downsample position {self.downsample_position} outside causal stack "
                    f"(0..{self.n_causal})")
            if self.downsample_position >= len(self.layers):
                raise ConfigError("downsample position beyond last layer")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be set")
        for i, layer in enumerate(self.layers):
            layer.validate(f"layer{i}")
            if i < self.n_causal:
                if layer.right_context != 0:
                    raise ConfigError(f"layer{i}: causal layer with right context")
                if not layer.causal_conv:
                    raise ConfigError(f"layer{i}: causal layer with non-causal conv")
        if self.downsample_method == "funnel" and \
                not self.layers[self.downsample_position].has_self_attention:
            raise ConfigError("funnel downsampling requires self-attention at the "
                              f"downsample layer {self.downsample_position}")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def downsamples(self) -> bool:
        return self.downsample_method != "none"

    def dim_entering(self, i: int) -> int:
        return self.input_dim if i == 0 else self.layers[i - 1].model_dim

    def tap_index(self, n: int, m: int) -> int:
        return n if m == 0 else self.n_causal + m

    def tap_dim(self, n: int, m: int) -> int:
        """Feature dim of the activation after n causal + m non-causal layers."""
        idx = self.tap_index(n, m)
        return self.input_dim if idx == 0 else self.layers[idx - 1].model_dim

    def out_frames(self, t: int, n: int, m: int = 0) -> int:
        """Frame count after the first n causal (+ m non-causal) layers."""
        idx = self.tap_index(n, m)
        if self.downsamples and idx > self.downsample_position:
            return -(-t // 2)
        return t

    def streaming_available(self, s: int, upto: int | None = None) -> int:
        """Output frames finalized after feeding s input frames (no flush).

        Walks the stack applying each layer's lookahead at its own frame
        rate; pair-pooling finalizes floor(a/2) frames, a funnel query waits
        for its right context (at least the pooled pair) before emitting.
        """
        a = s
        for i, layer in enumerate(self.layers[:upto if upto is not None else self.n_layers]):
            if self.downsamples and i == self.downsample_position:
                if self.downsample_method == "funnel":
                    wait = max(1, layer.right_context)
                    a = max(0, (a - wait + 1) // 2)
                    a = max(0, a - layer.conv_pads[1])
                    continue
                a = a // 2
            a = max(0, a - layer.lookahead)
        return a

    def total_lookahead(self) -> int:
        """Summed per-layer lookahead; for single-rate stacks this is the
        exact emission delay in input frames."""
        return sum(layer.lookahead for layer in self.layers)


def local_attention_mask(t: int, left: int | None, right: int = 0) -> np.ndarray:
    """(T, T) boolean mask: position i may attend j iff i-left <= j <= i+right."""
    if t < 1:
        raise ConfigError("mask needs T >= 1")
    if left is None:
        left = t
    idx = np.arange(t)
    rel = idx[None, :] - idx[:, None]
    return (rel >= -left) & (rel <= right)


_WINDOW_MASKS: dict[tuple, np.ndarray] = {}


def window_mask(t: int, left: int, right: int, stride: int = 1) -> np.ndarray:
    """Boolean validity mask (n, left+1+right): slot j of query i is valid iff
    position i*stride - left + j lies in [0, T)."""
    key = (t, left, right, stride)
    m = _WINDOW_MASKS.get(key)
    if m is None:
        n = -(-t // stride)
        pos = np.arange(n)[:, None] * stride + (np.arange(left + 1 + right)[None, :] - left)
        m = (pos >= 0) & (pos < t)
        _WINDOW_MASKS[key] = m
    return m


# ---------------------------------------------------------------------------
# parameter initialization

def init_conformer_layer(params: dict, prefix: str, cfg: ConformerLayerConfig,
                         rng: np.random.Generator, dtype=np.float64) -> None:
    d, e, c = cfg.model_dim, cfg.ffn_expansion, cfg.conv_kernel
    for ffn in ("ffn1", "ffn2"):
        init_layer_norm(params, f"{prefix}.{ffn}.ln", d, dtype)
        init_linear(params, f"{prefix}.{ffn}.fc1", rng, d, e * d, dtype)
        init_linear(params, f"{prefix}.{ffn}.fc2", rng, e * d, d, dtype)
    if cfg.has_self_attention:
        init_layer_norm(params, f"{prefix}.attn.ln", d, dtype)
        for proj in ("q", "v", "o"):
            init_linear(params, f"{prefix}.attn.{proj}", rng, d, d, dtype)
        # no key bias: softmax cancels a per-row uniform score shift, so a
        # key bias would be a structurally dead parameter
        params[f"{prefix}.attn.k.w"] = glorot_uniform(rng, d, d, (d, d), dtype)
    init_layer_norm(params, f"{prefix}.conv.ln", d, dtype)
    init_linear(params, f"{prefix}.conv.pw1", rng, d, 2 * d, dtype)
    params[f"{prefix}.conv.dw"] = glorot_uniform(rng, c, c, (c, d), dtype)
    init_layer_norm(params, f"{prefix}.conv.ln2", d, dtype)
    init_linear(params, f"{prefix}.conv.pw2", rng, d, d, dtype)
    init_layer_norm(params, f"{prefix}.out_ln", d, dtype)


def init_encoder(params: dict, prefix: str, cfg: EncoderConfig,
                 rng: np.random.Generator, dtype=np.float64) -> None:
    prev = cfg.input_dim
    for i, layer in enumerate(cfg.layers):
        d = layer.model_dim
        if cfg.downsamples and i == cfg.downsample_position \
                and cfg.downsample_method == "stacking":
            init_linear(params, f"{prefix}.ds_proj", rng, 2 * prev, d, dtype)
        elif prev != d:
            init_linear(params, f"{prefix}.layer{i}.proj", rng, prev, d, dtype)
        init_conformer_layer(params, f"{prefix}.layer{i}", layer, rng, dtype)
        prev = d


# ---------------------------------------------------------------------------
# forward blocks

def _ffn_block(x, p: Bind, name: str):
    h = layer_norm_p(x, p, f"{name}.ln")
    h = ad.swish(linear_bias(h, p, f"{name}.fc1"))
    return linear_bias(h, p, f"{name}.fc2")


def _split_heads_windows(t, num_heads: int, dh: int, axis: int):
    return [ad.narrow(t, axis, h * dh, (h + 1) * dh) for h in range(num_heads)]


def _multihead_windowed(q, kwin, vwin, mask: np.ndarray, num_heads: int):
    """q: (n, D); kwin/vwin: (n, w, D); mask: (n, w) boolean validity."""
    d = q.shape[-1]
    dh = d // num_heads
    inv = 1.0 / math.sqrt(dh)
    heads = []
    for qh, kh, vh in zip(_split_heads_windows(q, num_heads, dh, 1),
                          _split_heads_windows(kwin, num_heads, dh, 2),
                          _split_heads_windows(vwin, num_heads, dh, 2)):
        scores = ad.scale(ad.attention_scores(qh, kh), inv)
        heads.append(ad.attention_apply(ad.masked_softmax(scores, mask), vh))
    return ad.concat(heads, axis=1) if num_heads > 1 else heads[0]


def _attention_block(x, cfg: ConformerLayerConfig, p: Bind):
    """Standard local self-attention sublayer (pre-norm, no pooling)."""
    t = x.shape[0]
    h = layer_norm_p(x, p, "attn.ln")
    q = linear_bias(h, p, "attn.q")
    k = ad.linear(h, p["attn.k.w"])
    v = linear_bias(h, p, "attn.v")
    kwin = ad.gather_windows(k, cfg.left_context, cfg.right_context)
    vwin = ad.gather_windows(v, cfg.left_context, cfg.right_context)
    mask = window_mask(t, cfg.left_context, cfg.right_context)
    ctx = _multihead_windowed(q, kwin, vwin, mask, cfg.num_heads)
    return linear_bias(ctx, p, "attn.o")


def funnel_attention(h, cfg: ConformerLayerConfig, p: Bind):
    """Frame-rate-halving self-attention: queries come from the pair-pooled
    sequence, keys/values from the full-rate sequence.

    Query t' inherits the attention window of key position 2t' (its left
    frame), which keeps the layer causal when right_context is 0.  Output
    length is ceil(T/2).
    """
    if not cfg.has_self_attention:
        raise ConfigError("funnel attention requires a self-attention layer")
    t = h.shape[0]
    q = linear_bias(ad.avgpool_pairs(h), p, "attn.q")
    k = ad.linear(h, p["attn.k.w"])
    v = linear_bias(h, p, "attn.v")
    kwin = ad.gather_strided_windows(k, cfg.left_context, cfg.right_context, 2)
    vwin = ad.gather_strided_windows(v, cfg.left_context, cfg.right_context, 2)
    mask = window_mask(t, cfg.left_context, cfg.right_context, stride=2)
    ctx = _multihead_windowed(q, kwin, vwin, mask, cfg.num_heads)
    return linear_bias(ctx, p, "attn.o")


def _conv_block(x, cfg: ConformerLayerConfig, p: Bind):
    d = cfg.model_dim
    h = layer_norm_p(x, p, "conv.ln")
    h = linear_bias(h, p, "conv.pw1")
    gate = ad.sigmoid(ad.narrow(h, 1, d, 2 * d))
    h = ad.mul(ad.narrow(h, 1, 0, d), gate)
    pl, pr = cfg.conv_pads
    h = ad.depthwise_conv1d(h, p["conv.dw"], pl, pr)
    h = ad.swish(layer_norm_p(h, p, "conv.ln2"))
    return linear_bias(h, p, "conv.pw2")


def conformer_layer_forward(x, cfg: ConformerLayerConfig, p: Bind,
                            funnel: bool = False):
    """One conformer block: half-step FFN, optional local self-attention
    (pooling queries when ``funnel``), gated depthwise conv, half-step FFN,
    final layer norm.  Shape-preserving except funnel halves the frame count.
    """
    if x.shape[-1] != cfg.model_dim:
        raise ConfigError(f"layer expects dim {cfg.model_dim}, got {x.shape[-1]}")
    x = ad.add(x, ad.scale(_ffn_block(x, p, "ffn1"), 0.5))
    if funnel:
        att = funnel_attention(layer_norm_p(x, p, "attn.ln"), cfg, p)
        x = ad.add(ad.avgpool_pairs(x), att)
    elif cfg.has_self_attention:
        x = ad.add(x, _attention_block(x, cfg, p))
    x = ad.add(x, _conv_block(x, cfg, p))
    x = ad.add(x, ad.scale(_ffn_block(x, p, "ffn2"), 0.5))
    return layer_norm_p(x, p, "out_ln")


def downsample_stacking(h, p: Bind):
    """Concatenate consecutive frame pairs and project back down; the widened
    projection is what makes this variant parameter-heavy."""
    return linear_bias(ad.stack_pairs(h), p, "ds_proj")


def downsample_avgpool(h):
    return ad.avgpool_pairs(h)


def encoder_forward(x, cfg: EncoderConfig, p: Bind, upto: int | None = None,
                    taps: list[int] | None = None):
    """Run layers 0..upto-1 (downsampling where configured).

    ``taps`` requests intermediate activations by global layer index; returns
    (final, {index: activation}).  upto=0 returns the input unchanged.
    """
    if upto is None:
        upto = cfg.n_layers
    if upto > cfg.n_layers:
        raise ConfigError(f"upto {upto} exceeds {cfg.n_layers} layers")
    tapset = set(taps or ())
    tapped = {}
    if 0 in tapset:
        tapped[0] = x
    for i in range(upto):
        layer = cfg.layers[i]
        lp = p.sub(f"layer{i}")
        funnel = False
        if cfg.downsamples and i == cfg.downsample_position:
            if cfg.downsample_method == "stacking":
                x = downsample_stacking(x, p)
            elif cfg.downsample_method == "avgpool":
                x = downsample_avgpool(x)
                if x.shape[-1] != layer.model_dim:
                    x = linear_bias(x, lp, "proj")
            else:
                funnel = True
                if x.shape[-1] != layer.model_dim:
                    x = linear_bias(x, lp, "proj")
        elif x.shape[-1] != layer.model_dim:
            x = linear_bias(x, lp, "proj")
        x = conformer_layer_forward(x, layer, lp, funnel=funnel)
        if i + 1 in tapset:
            tapped[i + 1] = x
    return x, tapped
