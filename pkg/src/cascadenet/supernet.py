"""The jointly trained super-net: one encoder parameter set, K sub-model cut
points, separate (or shared) decoders, extraction, parameter accounting, and
the canonical config text embedded in model files.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .encoder import ConformerLayerConfig, ConfigError, EncoderConfig, encoder_forward
from .encoder import init_encoder
from .modelfile import (QuantizedTensor, load_model, quantize_params,
                        quantized_size_report, save_model)
from .params import Bind
from .transducer import DecoderConfig, init_decoder, init_joint

WEIGHT_TOL = 1e-9


@dataclass
class SubModelSpec:
    n_causal: int
    n_noncausal: int
    decoder: DecoderConfig


@dataclass
class SuperNetConfig:
    encoder: EncoderConfig
    submodels: list[SubModelSpec]
    loss_weights: list[float]
    decoder_sharing: bool = False

    def validate(self) -> None:
        self.encoder.validate()
        if not self.submodels:
            raise ConfigError("need at least one sub-model")
        if len(self.loss_weights) != len(self.submodels):
            raise ConfigError("one loss weight per sub-model required")
        problems = []
        n_total = self.encoder.n_causal
        m_total = self.encoder.n_layers - n_total
        for k, sm in enumerate(self.submodels):
            if not 0 <= sm.n_causal <= n_total:
                problems.append(f"submodel {k}: n={sm.n_causal} outside 0..{n_total}")
            if not 0 <= sm.n_noncausal <= m_total:
                problems.append(f"submodel {k}: m={sm.n_noncausal} outside 0..{m_total}")
            if sm.n_noncausal > 0 and sm.n_causal != n_total:
                problems.append(
                    f"submodel {k}: non-causal layers require the full causal stack "
                    f"(n={sm.n_causal} != {n_total})")
            sm.decoder.validate()
        if any(w < 0 for w in self.loss_weights):
            problems.append("loss weights must be non-negative")
        if abs(sum(self.loss_weights) - 1.0) > WEIGHT_TOL:
            problems.append(f"loss weights sum to {sum(self.loss_weights)}, expected 1")
        if self.decoder_sharing:
            first = self.submodels[0].decoder
            for k, sm in enumerate(self.submodels[1:], 1):
                if sm.decoder != first:
                    problems.append(f"submodel {k}: shared decoder requires identical "
                                    "decoder configs")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def n_submodels(self) -> int:
        return len(self.submodels)

    def tap_dim(self, k: int) -> int:
        sm = self.submodels[k]
        return self.encoder.tap_dim(sm.n_causal, sm.n_noncausal)

    def decoder_ref(self, k: int) -> tuple[str, str, DecoderConfig]:
        """(param prefix, joint enc-projection key, decoder config) for path k.

        A shared decoder keeps one parameter set; only the encoder-side joint
        projection is instantiated per distinct tap width.
        """
        if self.decoder_sharing:
            return "dec.shared", f"joint.enc_d{self.tap_dim(k)}.w", self.submodels[0].decoder
        return f"dec{k}", "joint.enc.w", self.submodels[k].decoder


# ---------------------------------------------------------------------------
# build / forward

def build_supernet(cfg: SuperNetConfig, seed: int, dtype=np.float64) -> dict[str, np.ndarray]:
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5EED)))
    params: dict[str, np.ndarray] = {}
    init_encoder(params, "enc", cfg.encoder, rng, dtype)
    if cfg.decoder_sharing:
        init_decoder(params, "dec.shared", cfg.submodels[0].decoder,
                     cfg.tap_dim(0), rng, dtype)
        del params["dec.shared.joint.enc.w"]
        for dim in sorted({cfg.tap_dim(k) for k in range(cfg.n_submodels)}):
            init_joint_enc_only(params, "dec.shared", cfg.submodels[0].decoder,
                                dim, rng, dtype, f"joint.enc_d{dim}.w")
    else:
        for k, sm in enumerate(cfg.submodels):
            init_decoder(params, f"dec{k}", sm.decoder, cfg.tap_dim(k), rng, dtype)
    return params


def init_joint_enc_only(params: dict, prefix: str, dcfg: DecoderConfig, enc_dim: int,
                        rng, dtype, enc_key: str) -> None:
    from .params import glorot_uniform
    j = dcfg.joint_dim
    params[f"{prefix}.{enc_key}"] = glorot_uniform(rng, enc_dim, j, (enc_dim, j), dtype)


def encoder_taps(x, cfg: SuperNetConfig, p: Bind, ks: list[int] | None = None):
    """Encoder activations for the requested sub-models, sharing the common
    prefix computation (every path reads the same stacks)."""
    if ks is None:
        ks = list(range(cfg.n_submodels))
    indices = {cfg.encoder.tap_index(cfg.submodels[k].n_causal,
                                     cfg.submodels[k].n_noncausal) for k in ks}
    upto = max(indices) if indices else 0
    _, tapped = encoder_forward(x, cfg.encoder, p.sub("enc"), upto=upto,
                                taps=sorted(indices))
    return {k: tapped[cfg.encoder.tap_index(cfg.submodels[k].n_causal,
                                            cfg.submodels[k].n_noncausal)]
            for k in ks}


def submodel_forward(params: dict, cfg: SuperNetConfig, k: int, x,
                     tape: ad.Tape | None = None):
    """Encoder output of sub-model k plus its decoder reference.

    Returns (activation tensor, (prefix, enc_key, decoder config)).
    """
    if not 0 <= k < cfg.n_submodels:
        raise ConfigError(f"no sub-model {k}")
    p = Bind(params, tape)
    taps = encoder_taps(x if isinstance(x, ad.Tensor) else ad.Tensor(np.asarray(x)),
                        cfg, p, [k])
    return taps[k], cfg.decoder_ref(k)


# ---------------------------------------------------------------------------
# extraction

def extract_submodel(params: dict, cfg: SuperNetConfig, k: int) -> tuple[dict, "SuperNetConfig"]:
    """Standalone (params, config) for sub-model k.

    Copies exactly the tensors the path touches; running the extracted model
    reproduces the super-net path bit for bit.
    """
    if not 0 <= k < cfg.n_submodels:
        raise ConfigError(f"no sub-model {k}")
    sm = cfg.submodels[k]
    enc = cfg.encoder
    idx = enc.tap_index(sm.n_causal, sm.n_noncausal)
    crossed = enc.downsamples and enc.downsample_position < idx
    sub_enc = EncoderConfig(
        layers=[ConformerLayerConfig(**vars(l)) for l in enc.layers[:idx]],
        n_causal=sm.n_causal,
        downsample_method=enc.downsample_method if crossed else "none",
        downsample_position=enc.downsample_position if crossed else 0,
        input_dim=enc.input_dim)
    sub_cfg = SuperNetConfig(
        encoder=sub_enc,
        submodels=[SubModelSpec(sm.n_causal, sm.n_noncausal,
                                DecoderConfig(**vars(sm.decoder)))],
        loss_weights=[1.0],
        decoder_sharing=False)
    sub_cfg.validate()

    out: dict[str, np.ndarray] = {}
    keep_layers = {f"layer{i}." for i in range(idx)}
    for name, value in params.items():
        if name.startswith("enc."):
            rest = name[4:]
            if rest.startswith("ds_proj."):
                if crossed and enc.downsample_method == "stacking":
                    out[name] = value
                continue
            if any(rest.startswith(pref) for pref in keep_layers):
                out[name] = value
    src_prefix, src_enc_key, _ = cfg.decoder_ref(k)
    for name, value in params.items():
        if not name.startswith(src_prefix + "."):
            continue
        rest = name[len(src_prefix) + 1:]
        if cfg.decoder_sharing:
            if rest.startswith("joint.enc_d"):
                if rest == src_enc_key:
                    rest = "joint.enc.w"
                else:
                    continue
        out[f"dec0.{rest}"] = value
    return out, sub_cfg


# ---------------------------------------------------------------------------
# parameter counting (closed form, independent of build_supernet)

def count_conformer_layer(layer: ConformerLayerConfig) -> int:
    d, e, c = layer.model_dim, layer.ffn_expansion, layer.conv_kernel
    ffn = 2 * d + (d * e * d + e * d) + (e * d * d + d)
    total = 2 * ffn
    if layer.has_self_attention:
        total += 2 * d + 3 * (d * d + d) + d * d  # ln, q/v/o with bias, k without
    total += 2 * d + (d * 2 * d + 2 * d) + c * d + 2 * d + (d * d + d)  # conv block
    total += 2 * d  # final ln
    return total


def count_encoder_layer_entry(cfg: EncoderConfig, i: int) -> int:
    """Layer i plus whatever projection guards its input."""
    layer = cfg.layers[i]
    prev = cfg.dim_entering(i)
    total = count_conformer_layer(layer)
    if cfg.downsamples and i == cfg.downsample_position \
            and cfg.downsample_method == "stacking":
        total += 2 * prev * layer.model_dim + layer.model_dim
    elif prev != layer.model_dim:
        total += prev * layer.model_dim + layer.model_dim
    return total


def count_decoder(dcfg: DecoderConfig, enc_dim: int, with_enc_proj: bool = True) -> int:
    v1, e, c, j = dcfg.vocab + 1, dcfg.embed_dim, dcfg.label_context, dcfg.joint_dim
    total = v1 * e + (c * e * e + e) + (e * j) + j + (j * v1 + v1)
    if with_enc_proj:
        total += enc_dim * j
    return total


def count_params(cfg: SuperNetConfig) -> dict:
    """Closed-form parameter accounting.

    Segments split the encoder at sub-model cut points; the sharing ratio
    compares the unified super-net against standalone copies of each
    sub-model (the cost of training and shipping them separately).
    """
    cfg.validate()
    enc = cfg.encoder
    cuts = sorted({enc.tap_index(sm.n_causal, sm.n_noncausal)
                   for sm in cfg.submodels} | {enc.n_layers})
    cuts = [c for c in cuts if c > 0]
    segments = []
    start = 0
    for end in cuts:
        segments.append({
            "layers": f"{start}..{end - 1}" if end > start else "(empty)",
            "params": sum(count_encoder_layer_entry(enc, i) for i in range(start, end)),
        })
        start = end
    encoder_total = sum(count_encoder_layer_entry(enc, i) for i in range(enc.n_layers))

    decoders = []
    if cfg.decoder_sharing:
        dims = sorted({cfg.tap_dim(k) for k in range(cfg.n_submodels)})
        dcfg = cfg.submodels[0].decoder
        shared = count_decoder(dcfg, 0, with_enc_proj=False) + \
            sum(d * dcfg.joint_dim for d in dims)
        decoders.append({"name": "dec.shared", "params": shared})
        decoders_total = shared
    else:
        decoders_total = 0
        for k, sm in enumerate(cfg.submodels):
            n = count_decoder(sm.decoder, cfg.tap_dim(k))
            decoders.append({"name": f"dec{k}", "params": n})
            decoders_total += n

    per_submodel = []
    standalone_sum = 0
    for k, sm in enumerate(cfg.submodels):
        idx = enc.tap_index(sm.n_causal, sm.n_noncausal)
        enc_k = sum(count_encoder_layer_entry(enc, i) for i in range(idx))
        dec_k = count_decoder(cfg.decoder_ref(k)[2], cfg.tap_dim(k))
        per_submodel.append({"k": k, "encoder": enc_k, "decoder": dec_k,
                             "total": enc_k + dec_k})
        standalone_sum += enc_k + dec_k

    unified = encoder_total + decoders_total
    ratio = sharing_reduction(unified, standalone_sum)
    return {
        "encoder_segments": segments,
        "encoder_total": encoder_total,
        "decoders": decoders,
        "decoders_total": decoders_total,
        "per_submodel": per_submodel,
        "unified_total": unified,
        "standalone_sum": standalone_sum,
        "sharing_reduction": ratio,
    }


def sharing_reduction(unified: float, standalone_sum: float) -> float:
    return 1.0 - unified / standalone_sum if standalone_sum else 0.0


def sharing_reduction_from_components(encoder_segments, decoder_sizes) -> float:
    """Reduction ratio from published component sizes: sub-model k uses
    encoder segments 0..k plus its own decoder."""
    if len(encoder_segments) != len(decoder_sizes):
        raise ValueError("need one decoder size per encoder segment")
    unified = sum(encoder_segments) + sum(decoder_sizes)
    standalone = sum(sum(encoder_segments[:k + 1]) + decoder_sizes[k]
                     for k in range(len(decoder_sizes)))
    return sharing_reduction(unified, standalone)


# ---------------------------------------------------------------------------
# canonical config text (embedded verbatim in model files)

def config_to_text(cfg: SuperNetConfig) -> str:
    out = io.StringIO()
    enc = cfg.encoder
    w = lambda k, v: out.write(f"{k} = {json.dumps(v)}\n")
    w("format", 1)
    w("encoder.n_causal", enc.n_causal)
    w("encoder.input_dim", enc.input_dim)
    w("encoder.downsample_method", enc.downsample_method)
    w("encoder.downsample_position", enc.downsample_position)
    for i, layer in enumerate(enc.layers):
        w(f"encoder.layer{i}", [layer.model_dim, layer.num_heads, layer.ffn_expansion,
                                layer.conv_kernel, layer.left_context,
                                layer.right_context, int(layer.has_self_attention),
                                int(layer.causal_conv)])
    w("loss_weights", cfg.loss_weights)
    w("decoder_sharing", int(cfg.decoder_sharing))
    for k, sm in enumerate(cfg.submodels):
        d = sm.decoder
        w(f"submodel{k}", [sm.n_causal, sm.n_noncausal, d.vocab, d.embed_dim,
                           d.label_context, d.joint_dim])
    return out.getvalue()


def config_from_text(text: str) -> SuperNetConfig:
    kv: dict[str, object] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" = ")
        kv[key] = json.loads(value)
    layers = []
    i = 0
    while f"encoder.layer{i}" in kv:
        (dim, heads, ffn, kern, left, right, attn, causal) = kv[f"encoder.layer{i}"]
        layers.append(ConformerLayerConfig(
            model_dim=dim, num_heads=heads, ffn_expansion=ffn, conv_kernel=kern,
            left_context=left, right_context=right, has_self_attention=bool(attn),
            causal_conv=bool(causal)))
        i += 1
    enc = EncoderConfig(layers=layers, n_causal=kv["encoder.n_causal"],
                        downsample_method=kv["encoder.downsample_method"],
                        downsample_position=kv["encoder.downsample_position"],
                        input_dim=kv["encoder.input_dim"])
    submodels = []
    k = 0
    while f"submodel{k}" in kv:
        (n, m, vocab, embed, ctx, joint) = kv[f"submodel{k}"]
        submodels.append(SubModelSpec(n, m, DecoderConfig(
            vocab=vocab, embed_dim=embed, label_context=ctx, joint_dim=joint)))
        k += 1
    cfg = SuperNetConfig(encoder=enc, submodels=submodels,
                         loss_weights=list(kv["loss_weights"]),
                         decoder_sharing=bool(kv["decoder_sharing"]))
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# persistence and quantization entry points

def save_supernet(path, params: dict, cfg: SuperNetConfig) -> None:
    save_model(path, params, config_to_text(cfg))


def load_supernet(path) -> tuple[dict, SuperNetConfig]:
    params, text = load_model(path)
    return params, config_from_text(text)


def quantize_int8(params: dict, cfg: SuperNetConfig):
    """Per-tensor symmetric int8 quantization plus a size accounting report."""
    qparams = quantize_params(params)
    report = quantized_size_report(qparams, config_to_text(cfg))
    report["tensor_count"] = len(qparams)
    return qparams, report
