from __future__ import annotations

import math
from dataclasses import dataclass
from logging import getLogger
from typing import List, Tuple

import numpy as np
import torch
from torch import Tensor, nn

from ..const import NUM_QUERIES, SCORE_THRESHOLD
from ..core import (
    Box2D,
    Box3D,
    CameraModel,
    Detection,
    NonPositiveDepthError,
    OddChannelError,
    unproject_center,
)
from ..encoder import FeatureEncoder
from .heads import HeadOutputs, PredictionHeads
from .transformer import DepthAwareDecoder, SequenceEncoder

logger = getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 64
    num_queries: int = NUM_QUERIES
    heads: int = 4
    ffn_dim: int = 128
    depth_bins: int = 64
    num_classes: int = 1
    content_blocks: int = 3
    depth_blocks: int = 1
    decoder_blocks: int = 3
    heads_use_full_query: bool = False
    dropout: float = 0.0
    aux_loss: bool = False
    supervise_background: bool = True

    def __post_init__(self) -> None:
        if self.channels % 2:
            raise OddChannelError(f"channels must be even, got {self.channels}")
        if self.channels % 4 or self.channels % self.heads:
            raise ValueError(f"channels ({self.channels}) must be divisible by 4 and by heads ({self.heads})")
        if min(self.num_queries, self.depth_bins, self.num_classes) < 1:
            raise ValueError("num_queries, depth_bins and num_classes must be positive")
        if min(self.content_blocks, self.depth_blocks, self.decoder_blocks) < 1:
            raise ValueError("every transformer stack needs at least one block")


@dataclass
class BranchOutput:
    heads: HeadOutputs
    queries: Tensor  # decoded queries (B, N, C)
    depth_logits: Tensor  # (B, D+1, H/16, W/16)
    aux: Tuple[HeadOutputs, ...] = ()


class Detector(nn.Module):
    """One domain branch: encoder, content/depth transformers, decoder and heads."""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        c = config.channels
        self.encoder = FeatureEncoder(c, config.depth_bins)
        self.content_encoder = SequenceEncoder(c, config.content_blocks, config.heads, config.ffn_dim, config.dropout)
        self.depth_encoder = SequenceEncoder(c, config.depth_blocks, config.heads, config.ffn_dim, config.dropout)
        self.decoder = DepthAwareDecoder(
            c, config.decoder_blocks, config.heads, config.ffn_dim, config.depth_bins, config.dropout
        )
        self.query_embed = nn.Embedding(config.num_queries, c)
        self.heads = PredictionHeads(c, config.num_classes, config.heads_use_full_query)

    def encode_content(self, content: Tensor) -> Tensor:
        return self.content_encoder(content)

    def encode_depth(self, depth: Tensor) -> Tensor:
        return self.depth_encoder(depth)

    def decode(self, queries: Tensor, content: Tensor, depth: Tensor, depth_logits: Tensor) -> List[Tensor]:
        size = (depth_logits.shape[-2], depth_logits.shape[-1])
        return self.decoder(queries, content, depth, depth_logits, size)[1]

    def forward(self, image: Tensor) -> BranchOutput:
        content, depth, depth_logits = self.encoder(image)
        content_emb = self.encode_content(content)
        depth_emb = self.encode_depth(depth)
        queries = self.query_embed.weight.unsqueeze(0).expand(image.shape[0], -1, -1)
        states = self.decode(queries, content_emb, depth_emb, depth_logits)
        aux = tuple(self.heads(state) for state in states[:-1]) if self.config.aux_loss else ()
        return BranchOutput(heads=self.heads(states[-1]), queries=states[-1], depth_logits=depth_logits, aux=aux)


def decode_predictions(
    pred: HeadOutputs, cam: CameraModel, score_threshold: float = SCORE_THRESHOLD
) -> List[Detection]:
    """Metric detections of one frame's queries whose foreground score passes the threshold; no NMS."""
    scores = pred.scores().detach().cpu().double()
    keep = torch.nonzero(scores >= score_threshold).flatten().tolist()
    box2d = pred.box2d.detach().cpu().double()
    center = pred.center.detach().cpu().double()
    dims = pred.dims.detach().cpu().double()
    orientation = pred.orientation.detach().cpu().double()
    depth = pred.depth.detach().cpu().double()

    detections = []
    for q in keep:
        try:
            position = unproject_center((float(center[q, 0]), float(center[q, 1])), float(depth[q]), cam)
        except NonPositiveDepthError:
            logger.debug("dropping query %d: center ray points backward", q)
            continue
        cx, cy, w, h = (float(v) for v in box2d[q])
        detections.append(
            Detection(
                box3d=Box3D(
                    center=position,
                    dims=tuple(float(v) for v in dims[q]),  # type: ignore[arg-type]
                    yaw=math.atan2(float(orientation[q, 0]), float(orientation[q, 1])),
                ),
                box2d=Box2D(cx=cx, cy=cy, w=max(w, 1e-6), h=max(h, 1e-6)),
                score=min(1.0, max(0.0, float(scores[q]))),
            )
        )
    return detections


def image_tensor(image: np.ndarray, dtype: torch.dtype = torch.float32) -> Tensor:
    """(H, W, 3) array in [0, 1] to a (3, H, W) tensor."""
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).to(dtype)
