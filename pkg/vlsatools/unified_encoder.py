"""
Joint transformer over the concatenated video/text/audio sequence.

Pre-norm timm ViT blocks with learned Q/K/V/O projections; each head scales
its logits by sqrt(D / n_heads). Attention is full across modalities.
"""
from functools import partial

import torch
import torch.nn as nn
from timm.models.vision_transformer import Block

from vlsatools.config import EncoderConfig, modality_set
from vlsatools.patch_embed import SEGMENT_ORDER, PatchSequence, SequenceLayout


def vit_block(dim: int, n_heads: int, mlp_ratio: float = 4.0) -> Block:
    if dim % n_heads:
        raise ValueError(f"{n_heads} heads do not divide dim {dim}")
    return Block(
        dim,
        n_heads,
        mlp_ratio=mlp_ratio,
        qkv_bias=True,
        norm_layer=partial(nn.LayerNorm, eps=1e-6),
    )


def attention_probs(attn: nn.Module, x: torch.Tensor) -> torch.Tensor:
    """
    B x heads x L x L softmax weights of a timm ``Attention`` for the
    (already normalized) input ``x``.
    """
    B, L, D = x.shape
    n_heads = attn.num_heads
    qkv = attn.qkv(x).reshape(B, L, 3, n_heads, D // n_heads).permute(2, 0, 3, 1, 4)
    q, k = attn.q_norm(qkv[0]), attn.k_norm(qkv[1])
    return ((q @ k.transpose(-2, -1)) * attn.scale).softmax(dim=-1)


class UnifiedEncoder(nn.Module):
    """
    Stack of pre-norm blocks plus a final LayerNorm.
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.blocks = nn.ModuleList(
            [
                vit_block(config.dim, config.n_heads, config.mlp_ratio)
                for _ in range(config.n_layers)
            ]
        )
        self.norm = nn.LayerNorm(config.dim, eps=1e-6)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)

    def attention_weights(self, x: torch.Tensor, layer: int, head: int) -> torch.Tensor:
        """
        B x L x L attention probabilities of ``head`` in block ``layer`` for
        input ``x`` (B x L x D).
        """
        if not 0 <= layer < len(self.blocks):
            raise IndexError(f"layer {layer} out of range [0, {len(self.blocks)})")
        if not 0 <= head < self.config.n_heads:
            raise IndexError(f"head {head} out of range [0, {self.config.n_heads})")
        for blk in self.blocks[:layer]:
            x = blk(x)
        blk = self.blocks[layer]
        return attention_probs(blk.attn, blk.norm1(x))[:, head]


def encoder_groups(joint: str) -> list:
    """
    Split the modalities into encoder groups: the joint set (if it has two
    or more members) shares one encoder, every other modality gets its own.
    """
    members = modality_set(joint)
    if len(members) < 2:
        members = frozenset()
    groups = []
    if members:
        groups.append(tuple(m for m in SEGMENT_ORDER if m in members))
    groups.extend((m,) for m in SEGMENT_ORDER if m not in members)
    return groups


class ModalityEncoder(nn.Module):
    """
    One UnifiedEncoder per encoder group. With the default joint set ``avt``
    this is a single encoder over the whole sequence.
    """

    def __init__(
        self, config: EncoderConfig, layout: SequenceLayout, joint: str = "avt"
    ):
        super().__init__()
        self.config = config
        self.layout = layout
        self.groups = encoder_groups(joint)
        self.encoders = nn.ModuleDict(
            {"".join(m[0] for m in g): UnifiedEncoder(config) for g in self.groups}
        )

    def encoder_for(self, modality: str) -> UnifiedEncoder:
        for g in self.groups:
            if modality in g:
                return self.encoders["".join(m[0] for m in g)]
        raise KeyError(modality)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if len(self.groups) == 1:
            return self.encoders[next(iter(self.encoders))](x)
        segments = self.layout.segments
        out = [None] * len(SEGMENT_ORDER)
        for g in self.groups:
            key = "".join(m[0] for m in g)
            parts = [x[:, slice(*segments[m])] for m in g]
            encoded = self.encoders[key](torch.cat(parts, dim=1))
            offset = 0
            for m in g:
                n = self.layout.size(m)
                out[SEGMENT_ORDER.index(m)] = encoded[:, offset : offset + n]
                offset += n
        return torch.cat(out, dim=1)


def encode(seq: PatchSequence, encoder) -> torch.Tensor:
    """
    Run the encoder over a PatchSequence; same shape out as in (L x D or
    B x L x D).
    """
    dim = encoder.config.dim
    if seq.dim != dim:
        raise ValueError(f"sequence dim {seq.dim} does not match encoder dim {dim}")
    x = seq.embeddings
    if x.dim() == 2:
        return encoder(x[None])[0]
    return encoder(x)


def attention_weights(
    j: int, x: torch.Tensor, encoder: UnifiedEncoder, layer: int, head: int
):
    """
    Attention row of token ``j`` (probabilities over L) for an L x D input.
    """
    if x.dim() == 2:
        x = x[None]
    L = x.shape[1]
    if not 0 <= j < L:
        raise IndexError(f"token {j} out of range [0, {L})")
    return encoder.attention_weights(x, layer, head)[0, j]
