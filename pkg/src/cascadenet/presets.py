"""Named super-net configurations.

The paper-* presets mirror the published architectures (their parameter
counts are reported for size accounting, never trained here); the desk-*
presets are tiny analogs with the same topology that train in minutes on one
CPU core.
"""

from __future__ import annotations

from .encoder import ConformerLayerConfig, EncoderConfig
from .supernet import SubModelSpec, SuperNetConfig
from .transducer import DecoderConfig

# frontend: 4-frame stacking of 128-dim features + 16-dim domain one-hot
PAPER_INPUT_DIM = 4 * 128 + 16
# desk corpus: 16-dim features, same stacking and domain append
DESK_INPUT_DIM = 4 * 16 + 16

PAPER_VOCAB = 4096
DESK_VOCAB = 8


def _causal(dim, attn=True, heads=8, left=23, kernel=8):
    return ConformerLayerConfig(model_dim=dim, num_heads=heads, ffn_expansion=4,
                                conv_kernel=kernel, left_context=left,
                                right_context=0, has_self_attention=attn,
                                causal_conv=True)


def _noncausal(dim, heads=8, left=23, right=5, kernel=15):
    return ConformerLayerConfig(model_dim=dim, num_heads=heads, ffn_expansion=4,
                                conv_kernel=kernel, left_context=left,
                                right_context=right, has_self_attention=True,
                                causal_conv=False)


def _paper_decoder():
    return DecoderConfig(vocab=PAPER_VOCAB, embed_dim=320, label_context=2,
                         joint_dim=384)


def paper_large_medium(downsample: str = "funnel",
                       decoder_sharing: bool = False,
                       weights=(0.9, 0.1)) -> SuperNetConfig:
    """Seven 512-dim causal layers (first three without self-attention) plus
    six 640-dim non-causal layers; medium taps the causal stack, large adds
    the non-causal stack."""
    layers = [_causal(512, attn=(i >= 3)) for i in range(7)]
    layers += [_noncausal(640) for _ in range(6)]
    enc = EncoderConfig(layers=layers, n_causal=7, downsample_method=downsample,
                        downsample_position=3, input_dim=PAPER_INPUT_DIM)
    return SuperNetConfig(
        encoder=enc,
        submodels=[SubModelSpec(7, 0, _paper_decoder()),
                   SubModelSpec(7, 6, _paper_decoder())],
        loss_weights=list(weights),
        decoder_sharing=decoder_sharing)


def paper_triple(downsample: str = "funnel") -> SuperNetConfig:
    """Six 256-dim + six 512-dim causal layers and six 640-dim non-causal
    layers; small/medium/large tap at 6, 12 and 12+6 layers."""
    layers = [_causal(256, attn=(i >= 3)) for i in range(6)]
    layers += [_causal(512) for _ in range(6)]
    layers += [_noncausal(640) for _ in range(6)]
    enc = EncoderConfig(layers=layers, n_causal=12, downsample_method=downsample,
                        downsample_position=3, input_dim=PAPER_INPUT_DIM)
    return SuperNetConfig(
        encoder=enc,
        submodels=[SubModelSpec(6, 0, _paper_decoder()),
                   SubModelSpec(12, 0, _paper_decoder()),
                   SubModelSpec(12, 6, _paper_decoder())],
        loss_weights=[0.80, 0.15, 0.05])


def _desk_causal(dim, attn=True):
    return ConformerLayerConfig(model_dim=dim, num_heads=2, ffn_expansion=2,
                                conv_kernel=3, left_context=4, right_context=0,
                                has_self_attention=attn, causal_conv=True)


def _desk_noncausal(dim, right=2):
    return ConformerLayerConfig(model_dim=dim, num_heads=2, ffn_expansion=2,
                                conv_kernel=3, left_context=4, right_context=right,
                                has_self_attention=True, causal_conv=False)


def _desk_decoder():
    return DecoderConfig(vocab=DESK_VOCAB, embed_dim=16, label_context=2,
                         joint_dim=32)


def desk_triple(downsample: str = "funnel", weights=(0.80, 0.15, 0.05),
                decoder_sharing: bool = False) -> SuperNetConfig:
    """2+2 causal layers (16 then 32 wide) and 2 non-causal 48-wide layers;
    cut points after 2 and 4 causal layers."""
    layers = [_desk_causal(16, attn=False), _desk_causal(16),
              _desk_causal(32), _desk_causal(32),
              _desk_noncausal(48), _desk_noncausal(48)]
    enc = EncoderConfig(layers=layers, n_causal=4, downsample_method=downsample,
                        downsample_position=1, input_dim=DESK_INPUT_DIM)
    return SuperNetConfig(
        encoder=enc,
        submodels=[SubModelSpec(2, 0, _desk_decoder()),
                   SubModelSpec(4, 0, _desk_decoder()),
                   SubModelSpec(4, 2, _desk_decoder())],
        loss_weights=list(weights),
        decoder_sharing=decoder_sharing)


def desk_large_medium(downsample: str = "funnel", weights=(0.9, 0.1),
                      decoder_sharing: bool = False) -> SuperNetConfig:
    """3 causal + 2 non-causal layers, all 32-wide (equal tap widths so a
    shared decoder shares every tensor)."""
    layers = [_desk_causal(32, attn=False), _desk_causal(32), _desk_causal(32),
              _desk_noncausal(32), _desk_noncausal(32)]
    enc = EncoderConfig(layers=layers, n_causal=3, downsample_method=downsample,
                        downsample_position=1, input_dim=DESK_INPUT_DIM)
    return SuperNetConfig(
        encoder=enc,
        submodels=[SubModelSpec(3, 0, _desk_decoder()),
                   SubModelSpec(3, 2, _desk_decoder())],
        loss_weights=list(weights),
        decoder_sharing=decoder_sharing)


PRESETS = {
    "paper-large-medium": paper_large_medium,
    "paper-triple": paper_triple,
    "desk-triple": desk_triple,
    "desk-large-medium": desk_large_medium,
}


def get_preset(name: str, **overrides) -> SuperNetConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    cfg = PRESETS[name](**overrides)
    cfg.validate()
    return cfg
