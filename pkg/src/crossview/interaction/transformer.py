from __future__ import annotations

import math
from typing import List, Optional, Tuple

import torch
from torch import Tensor, nn

from ..encoder import ShapeError


def sine_position_embedding(
    height: int,
    width: int,
    channels: int,
    temperature: float = 10000.0,
    dtype: torch.dtype = torch.float32,
    device: Optional[torch.device] = None,
) -> Tensor:
    """Fixed 2D sine/cosine embedding (H*W, C): first half encodes y, second half x."""
    if channels % 4:
        raise ShapeError(f"sine embedding needs channels divisible by 4, got {channels}")
    feats = channels // 2
    scale = 2.0 * math.pi
    y = (torch.arange(height, dtype=torch.float64) + 0.5) / height * scale
    x = (torch.arange(width, dtype=torch.float64) + 0.5) / width * scale
    dim_t = temperature ** (2 * (torch.arange(feats, dtype=torch.float64) // 2) / feats)
    pos_y = y[:, None] / dim_t  # (H, F)
    pos_x = x[:, None] / dim_t  # (W, F)
    pos_y = torch.stack((pos_y[:, 0::2].sin(), pos_y[:, 1::2].cos()), dim=2).flatten(1)
    pos_x = torch.stack((pos_x[:, 0::2].sin(), pos_x[:, 1::2].cos()), dim=2).flatten(1)
    grid = torch.cat(
        (pos_y[:, None, :].expand(height, width, feats), pos_x[None, :, :].expand(height, width, feats)),
        dim=2,
    )
    return grid.reshape(height * width, channels).to(dtype=dtype, device=device)


def _ffn(channels: int, ffn_dim: int, dropout: float) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(channels, ffn_dim),
        nn.ReLU(),
        nn.Dropout(dropout),
        nn.Linear(ffn_dim, channels),
    )


class EncoderBlock(nn.Module):
    """Pre-norm self-attention block."""

    def __init__(self, channels: int, heads: int, ffn_dim: int, dropout: float = 0.0) -> None:
        super().__init__()
        self.norm1 = nn.LayerNorm(channels)
        self.attn = nn.MultiheadAttention(channels, heads, dropout=dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(channels)
        self.ffn = _ffn(channels, ffn_dim, dropout)

    def attention_weights(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        return self.attn(h, h, h, need_weights=True, average_attn_weights=True)[1]

    def forward(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.ffn(self.norm2(x))


class SequenceEncoder(nn.Module):
    """Flattens a (B, C, H, W) map, adds sine positions and runs `num_blocks` blocks."""

    def __init__(self, channels: int, num_blocks: int, heads: int, ffn_dim: int, dropout: float = 0.0) -> None:
        super().__init__()
        self.blocks = nn.ModuleList(EncoderBlock(channels, heads, ffn_dim, dropout) for _ in range(num_blocks))
        self.norm = nn.LayerNorm(channels)

    @staticmethod
    def flatten(feature: Tensor) -> Tensor:
        return feature.flatten(2).transpose(1, 2)

    def encode_sequence(self, sequence: Tensor) -> Tensor:
        for block in self.blocks:
            sequence = block(sequence)
        return self.norm(sequence)

    def forward(self, feature: Tensor) -> Tensor:
        _, channels, height, width = feature.shape
        pos = sine_position_embedding(height, width, channels, dtype=feature.dtype, device=feature.device)
        return self.encode_sequence(self.flatten(feature) + pos)


class DecoderBlock(nn.Module):
    """Depth cross-attention, query self-attention, content cross-attention, FFN."""

    def __init__(self, channels: int, heads: int, ffn_dim: int, dropout: float = 0.0) -> None:
        super().__init__()
        self.norm_depth = nn.LayerNorm(channels)
        self.depth_attn = nn.MultiheadAttention(channels, heads, dropout=dropout, batch_first=True)
        self.norm_self = nn.LayerNorm(channels)
        self.self_attn = nn.MultiheadAttention(channels, heads, dropout=dropout, batch_first=True)
        self.norm_content = nn.LayerNorm(channels)
        self.content_attn = nn.MultiheadAttention(channels, heads, dropout=dropout, batch_first=True)
        self.norm_ffn = nn.LayerNorm(channels)
        self.ffn = _ffn(channels, ffn_dim, dropout)

    def forward(
        self,
        queries: Tensor,
        depth_memory: Tensor,
        depth_pos: Tensor,
        content_memory: Tensor,
        content_pos: Tensor,
    ) -> Tensor:
        h = self.norm_depth(queries)
        queries = queries + self.depth_attn(h, depth_memory + depth_pos, depth_memory, need_weights=False)[0]
        h = self.norm_self(queries)
        queries = queries + self.self_attn(h, h, h, need_weights=False)[0]
        h = self.norm_content(queries)
        queries = queries + self.content_attn(h, content_memory + content_pos, content_memory, need_weights=False)[0]
        return queries + self.ffn(self.norm_ffn(queries))


class DepthAwareDecoder(nn.Module):
    """Refines object queries against depth and content embeddings.

    Depth keys carry a learnable positional encoding looked up by the argmax
    bin of the foreground depth map; content keys carry sine positions.
    Queries get no positional term, so the decoder is equivariant to query order.
    """

    def __init__(
        self,
        channels: int,
        num_blocks: int,
        heads: int,
        ffn_dim: int,
        depth_bins: int,
        dropout: float = 0.0,
    ) -> None:
        super().__init__()
        self.depth_pos = nn.Embedding(depth_bins + 1, channels)
        self.blocks = nn.ModuleList(DecoderBlock(channels, heads, ffn_dim, dropout) for _ in range(num_blocks))
        self.norm = nn.LayerNorm(channels)

    def depth_positions(self, depth_logits: Tensor) -> Tensor:
        """(B, D+1, h, w) logits to (B, h*w, C) depth positional encodings."""
        return self.depth_pos(depth_logits.argmax(dim=1).flatten(1))

    def forward(
        self,
        queries: Tensor,
        content: Tensor,
        depth: Tensor,
        depth_logits: Tensor,
        size: Tuple[int, int],
    ) -> Tuple[Tensor, List[Tensor]]:
        """Returns the final queries (B, N, C) and the normed output of every block."""
        if queries.shape[-1] != content.shape[-1] or depth.shape[-1] != content.shape[-1]:
            raise ShapeError(f"channel mismatch: queries {tuple(queries.shape)}, memory {tuple(content.shape)}")
        height, width = size
        content_pos = sine_position_embedding(
            height, width, content.shape[-1], dtype=content.dtype, device=content.device
        )
        depth_pos = self.depth_positions(depth_logits).to(depth.dtype)
        intermediate = []
        for block in self.blocks:
            queries = block(queries, depth, depth_pos, content, content_pos)
            intermediate.append(self.norm(queries))
        return intermediate[-1], intermediate
