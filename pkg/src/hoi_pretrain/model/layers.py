"""Transformer building blocks that keep their attention weights around."""
import math
from typing import List, Optional, Tuple

import torch
import torch.nn.functional as F
from torch import nn


def sine_position_encoding(height: int, width: int, dim: int,
                           temperature: float = 10000.0,
                           dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Fixed 2D sine encoding, one row per token in row-major order.

    Coordinates are normalized to (0, 2*pi]; each axis gets ``dim // 2``
    channels with interleaved sin/cos, y channels first.
    """
    feats = dim // 2
    scale = 2 * math.pi
    y = (torch.arange(height, dtype=torch.float64) + 1) / height * scale
    x = (torch.arange(width, dtype=torch.float64) + 1) / width * scale
    dim_t = torch.arange(feats, dtype=torch.float64)
    dim_t = temperature ** (2 * torch.div(dim_t, 2, rounding_mode="floor") / feats)
    pos_y = y[:, None] / dim_t
    pos_x = x[:, None] / dim_t
    pos_y = torch.stack([pos_y[:, 0::2].sin(), pos_y[:, 1::2].cos()], dim=2).flatten(1)
    pos_x = torch.stack([pos_x[:, 0::2].sin(), pos_x[:, 1::2].cos()], dim=2).flatten(1)
    grid_y = pos_y[:, None, :].expand(height, width, feats)
    grid_x = pos_x[None, :, :].expand(height, width, feats)
    return torch.cat([grid_y, grid_x], dim=-1).reshape(height * width, dim).to(dtype)


class PatchEmbedder(nn.Module):
    """Two strided convolutions standing in for a CNN backbone."""

    def __init__(self, in_channels: int, embed_dim: int, patch_size: int):
        super().__init__()
        self.in_channels = in_channels
        self.patch_size = patch_size
        hidden = max(embed_dim // 2, 1)
        self.conv1 = nn.Conv2d(in_channels, hidden, kernel_size=2, stride=2)
        self.conv2 = nn.Conv2d(hidden, embed_dim, kernel_size=patch_size // 2, stride=patch_size // 2)

    def forward(self, image: torch.Tensor) -> Tuple[torch.Tensor, int, int]:
        # image: [C, H, W] -> tokens [h*w, D]
        x = self.conv2(F.relu(self.conv1(image[None])))[0]
        d, h, w = x.shape
        return x.flatten(1).transpose(0, 1), h, w


class MultiHeadAttention(nn.Module):

    def __init__(self, embed_dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = embed_dim // num_heads
        self.q_proj = nn.Linear(embed_dim, embed_dim)
        self.k_proj = nn.Linear(embed_dim, embed_dim)
        self.v_proj = nn.Linear(embed_dim, embed_dim)
        self.out_proj = nn.Linear(embed_dim, embed_dim)

    def forward(self, query, key, value, key_mask: Optional[torch.Tensor] = None,
                attn_mask: Optional[torch.Tensor] = None):
        """Returns the attended values [Tq, D] and weights [heads, Tq, Tk].

        ``key_mask`` is a boolean [Tk] marking valid keys; ``attn_mask`` a
        boolean [Tq, Tk] marking allowed query/key pairs.
        """
        tq, tk = query.shape[0], key.shape[0]
        h, hd = self.num_heads, self.head_dim
        q = self.q_proj(query).view(tq, h, hd).transpose(0, 1)
        k = self.k_proj(key).view(tk, h, hd).transpose(0, 1)
        v = self.v_proj(value).view(tk, h, hd).transpose(0, 1)
        scores = q @ k.transpose(1, 2) / math.sqrt(hd)
        allowed = None
        if key_mask is not None:
            allowed = key_mask[None, :].expand(tq, tk)
        if attn_mask is not None:
            allowed = attn_mask if allowed is None else allowed & attn_mask
        if allowed is not None:
            scores = scores.masked_fill(~allowed[None], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        if allowed is not None:
            # rows with nothing to attend to would be NaN
            weights = torch.nan_to_num(weights, nan=0.0)
        out = (weights @ v).transpose(0, 1).reshape(tq, h * hd)
        return self.out_proj(out), weights


class FeedForward(nn.Module):

    def __init__(self, embed_dim: int, hidden_dim: int):
        super().__init__()
        self.linear1 = nn.Linear(embed_dim, hidden_dim)
        self.linear2 = nn.Linear(hidden_dim, embed_dim)

    def forward(self, x):
        return self.linear2(F.relu(self.linear1(x)))


class EncoderLayer(nn.Module):

    def __init__(self, embed_dim: int, num_heads: int, hidden_dim: int):
        super().__init__()
        self.self_attn = MultiHeadAttention(embed_dim, num_heads)
        self.ffn = FeedForward(embed_dim, hidden_dim)
        self.norm1 = nn.LayerNorm(embed_dim)
        self.norm2 = nn.LayerNorm(embed_dim)

    def forward(self, src, pos, key_mask=None):
        qk = src + pos
        attended, _ = self.self_attn(qk, qk, src, key_mask=key_mask)
        src = self.norm1(src + attended)
        return self.norm2(src + self.ffn(src))


class TransformerEncoder(nn.Module):

    def __init__(self, embed_dim: int, num_heads: int, hidden_dim: int, num_layers: int):
        super().__init__()
        self.layers = nn.ModuleList(
            [EncoderLayer(embed_dim, num_heads, hidden_dim) for _ in range(num_layers)])

    def forward(self, src, pos, key_mask=None):
        for layer in self.layers:
            src = layer(src, pos, key_mask)
        return src


class DecoderLayer(nn.Module):

    def __init__(self, embed_dim: int, num_heads: int, hidden_dim: int):
        super().__init__()
        self.self_attn = MultiHeadAttention(embed_dim, num_heads)
        self.cross_attn = MultiHeadAttention(embed_dim, num_heads)
        self.ffn = FeedForward(embed_dim, hidden_dim)
        self.norm1 = nn.LayerNorm(embed_dim)
        self.norm2 = nn.LayerNorm(embed_dim)
        self.norm3 = nn.LayerNorm(embed_dim)

    def forward(self, tgt, query_pos, memory, pos, key_mask=None, self_mask=None):
        qk = tgt + query_pos
        attended, _ = self.self_attn(qk, qk, tgt, attn_mask=self_mask)
        tgt = self.norm1(tgt + attended)
        attended, weights = self.cross_attn(tgt + query_pos, memory + pos, memory, key_mask=key_mask)
        tgt = self.norm2(tgt + attended)
        tgt = self.norm3(tgt + self.ffn(tgt))
        return tgt, weights


class TransformerDecoder(nn.Module):
    """Stack of decoder layers plus a final norm; collects cross-attention."""

    def __init__(self, embed_dim: int, num_heads: int, hidden_dim: int, num_layers: int):
        super().__init__()
        self.layers = nn.ModuleList(
            [DecoderLayer(embed_dim, num_heads, hidden_dim) for _ in range(num_layers)])
        self.norm = nn.LayerNorm(embed_dim)

    def forward(self, tgt, query_pos, memory, pos, key_mask=None, self_mask=None):
        attention: List[torch.Tensor] = []
        intermediate: List[torch.Tensor] = []
        for layer in self.layers:
            tgt, weights = layer(tgt, query_pos, memory, pos, key_mask, self_mask)
            attention.append(weights)
            intermediate.append(self.norm(tgt))
        return intermediate[-1], torch.stack(attention), intermediate


class MLP(nn.Module):

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, num_layers: int):
        super().__init__()
        dims = [in_dim] + [hidden_dim] * (num_layers - 1)
        self.layers = nn.ModuleList(
            nn.Linear(a, b) for a, b in zip(dims, dims[1:] + [out_dim]))

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x
