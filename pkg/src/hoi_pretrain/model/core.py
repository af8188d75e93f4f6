"""The two-decoder DETR-style network used during pre-training."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch
from torch import nn

from ..config import ModelConfig
from .layers import MLP, PatchEmbedder, TransformerDecoder, TransformerEncoder, sine_position_encoding


class ShapeError(ValueError):
    """Input or query dimensions disagree with the model."""


class EmptyRPQError(ValueError):
    """The interaction decoder was handed zero person queries."""


class WrongStateError(ValueError):
    """A head was applied to embeddings from the other decoder."""


@dataclass
class EncoderOutput:
    features: torch.Tensor
    positional_encoding: torch.Tensor
    token_mask: torch.Tensor
    grid: tuple = (0, 0)

    @property
    def num_tokens(self) -> int:
        return self.features.shape[0]


@dataclass
class DecoderState:
    queries: torch.Tensor
    initial_embeddings: torch.Tensor
    output_embeddings: torch.Tensor
    per_layer_attention: torch.Tensor
    origin: str
    intermediate: List[torch.Tensor] = field(default_factory=list)
    dn_embeddings: Optional[torch.Tensor] = None
    dn_intermediate: List[torch.Tensor] = field(default_factory=list)


@dataclass
class Predictions:
    boxes: Optional[torch.Tensor] = None
    object_logits: Optional[torch.Tensor] = None
    verb_logits: Optional[torch.Tensor] = None


# parameter-name prefix -> component tag used by checkpoints and transfer
COMPONENT_PREFIXES = (
    ("backbone.", "backbone"),
    ("encoder.", "encoder"),
    ("detection_decoder.", "detection_decoder"),
    ("interaction_decoder.", "interaction_decoder"),
    ("heads.", "heads"),
    ("dn.", "dn"),
)


def component_of(name: str) -> str:
    for prefix, tag in COMPONENT_PREFIXES:
        if name.startswith(prefix):
            return tag
    raise KeyError(f"parameter {name!r} has no component tag")


class DetectionDecoder(TransformerDecoder):
    """Decoder that also owns the learnable object queries."""

    def __init__(self, config: ModelConfig):
        super().__init__(config.embed_dim, config.num_heads, config.ffn_hidden_dim,
                         config.num_decoder_layers)
        self.query_embed = nn.Parameter(torch.empty(config.num_queries, config.embed_dim))


class DenoisingEncoder(nn.Module):
    """Encodes noised ground-truth boxes and labels into auxiliary queries."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.box_encoder = MLP(4, config.embed_dim, config.embed_dim, 2)
        self.label_embed = nn.Embedding(config.num_object_classes + 1, config.embed_dim)


class HOIPretrainModel(nn.Module):

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config.check()
        d = config.embed_dim
        self.backbone = PatchEmbedder(config.in_channels, d, config.patch_size)
        self.encoder = TransformerEncoder(d, config.num_heads, config.ffn_hidden_dim,
                                          config.num_encoder_layers)
        self.detection_decoder = DetectionDecoder(config)
        self.interaction_decoder = TransformerDecoder(d, config.num_heads, config.ffn_hidden_dim,
                                                      config.num_decoder_layers)
        self.heads = nn.ModuleDict({
            "box": MLP(d, d, 4, 3),
            "object": nn.Linear(d, config.num_object_classes + 1),
            "verb": MLP(d, d, config.num_verb_classes, 2),
            "caption": nn.Linear(d, config.proj_dim),
        })
        self.dn = DenoisingEncoder(config)
        self.reset_parameters()

    def reset_parameters(self):
        std = self.config.init_std
        for module in self.modules():
            if isinstance(module, (nn.Linear, nn.Conv2d)):
                nn.init.trunc_normal_(module.weight, std=std, a=-2 * std, b=2 * std)
                nn.init.zeros_(module.bias)
            elif isinstance(module, nn.LayerNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
            elif isinstance(module, nn.Embedding):
                nn.init.trunc_normal_(module.weight, std=std, a=-2 * std, b=2 * std)
        nn.init.normal_(self.detection_decoder.query_embed, std=self.config.query_init_std)

    @property
    def dtype(self) -> torch.dtype:
        return self.detection_decoder.query_embed.dtype

    def component_tags(self):
        return {name: component_of(name) for name, _ in self.named_parameters()}

    # -- encoder -----------------------------------------------------------

    def embed_and_encode(self, image) -> EncoderOutput:
        """Embed an ``[H, W, C]`` image into tokens and run the encoder."""
        image = torch.as_tensor(np.asarray(image) if not torch.is_tensor(image) else image)
        if image.dim() != 3:
            raise ShapeError(f"expected an [H, W, C] image, got shape {tuple(image.shape)}")
        height, width, channels = image.shape
        if channels != self.config.in_channels:
            raise ShapeError(f"image has {channels} channels, embedder expects {self.config.in_channels}")
        p = self.config.patch_size
        if height < p or width < p:
            raise ShapeError(f"image {height}x{width} is smaller than patch size {p}")
        tokens, h, w = self.backbone(image.to(self.dtype).permute(2, 0, 1))
        pos = sine_position_encoding(h, w, self.config.embed_dim, dtype=self.dtype)
        mask = torch.ones(h * w, dtype=torch.bool)
        return EncoderOutput(self.encode_tokens(tokens, pos, mask), pos, mask, (h, w))

    def encode_tokens(self, tokens, pos, mask=None):
        return self.encoder(tokens, pos, mask)

    # -- decoders ----------------------------------------------------------

    def _check_queries(self, queries: torch.Tensor):
        if queries.dim() != 2 or queries.shape[1] != self.config.embed_dim:
            raise ShapeError(
                f"queries must be [n, {self.config.embed_dim}], got {tuple(queries.shape)}")

    def detection_decode(self, enc: EncoderOutput, queries=None, o_0=None, dn_group=None) -> DecoderState:
        if queries is None:
            queries = self.detection_decoder.query_embed
        self._check_queries(queries)
        if o_0 is None:
            o_0 = torch.zeros_like(queries)
        n = queries.shape[0]
        if dn_group is None:
            out, attn, inter = self.detection_decoder(o_0, queries, enc.features, enc.positional_encoding,
                                                      key_mask=enc.token_mask)
            return DecoderState(queries, o_0, out, attn, "detection", inter)
        n_dn = dn_group.encoded_queries.shape[0]
        query_pos = torch.cat([dn_group.encoded_queries, queries])
        tgt = torch.cat([dn_group.content, o_0])
        self_mask = dn_attention_mask(n_dn, n)
        out, attn, inter = self.detection_decoder(tgt, query_pos, enc.features, enc.positional_encoding,
                                                  key_mask=enc.token_mask, self_mask=self_mask)
        return DecoderState(queries, o_0, out[n_dn:], attn[:, :, n_dn:], "detection",
                            [x[n_dn:] for x in inter], dn_embeddings=out[:n_dn],
                            dn_intermediate=[x[:n_dn] for x in inter])

    def interaction_decode(self, enc: EncoderOutput, rpq: torch.Tensor, o_0=None) -> DecoderState:
        if rpq.shape[0] == 0:
            raise EmptyRPQError("interaction decoder needs at least one person query")
        self._check_queries(rpq)
        if o_0 is None:
            o_0 = torch.zeros_like(rpq)
        out, attn, inter = self.interaction_decoder(o_0, rpq, enc.features, enc.positional_encoding,
                                                    key_mask=enc.token_mask)
        return DecoderState(rpq, o_0, out, attn, "interaction", inter)

    # -- heads -------------------------------------------------------------

    def detection_heads(self, embeddings: torch.Tensor) -> Predictions:
        return Predictions(boxes=self.heads["box"](embeddings).sigmoid(),
                           object_logits=self.heads["object"](embeddings))

    def predict_heads(self, state: DecoderState, which: str) -> Predictions:
        if which == "detection":
            if state.origin != "detection":
                raise WrongStateError("detection heads need detection-decoder embeddings")
            return self.detection_heads(state.output_embeddings)
        if which == "verb":
            if state.origin != "interaction":
                raise WrongStateError("the verb head needs interaction-decoder embeddings")
            return Predictions(verb_logits=self.heads["verb"](state.output_embeddings))
        raise ValueError(f"unknown head {which!r}")

    def caption_embeddings(self, state: DecoderState) -> torch.Tensor:
        if state.origin != "interaction":
            raise WrongStateError("caption projection needs interaction-decoder embeddings")
        return self.heads["caption"](state.output_embeddings)


def dn_attention_mask(n_dn: int, n_learnable: int) -> torch.Tensor:
    """Boolean [n, n] self-attention mask; True where attention is allowed.

    The denoising group and the learnable queries are blocked from each other
    in both directions.
    """
    n = n_dn + n_learnable
    allowed = torch.zeros(n, n, dtype=torch.bool)
    allowed[:n_dn, :n_dn] = True
    allowed[n_dn:, n_dn:] = True
    return allowed
