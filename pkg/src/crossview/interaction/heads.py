from __future__ import annotations

from dataclasses import dataclass, fields

import torch
from torch import Tensor, nn

from ..const import CAR_MEAN_DIMS, DEPTH_MAX, DEPTH_MIN
from ..core import OddChannelError

# raw log-scale offsets beyond this are clamped before the exponential decode
DIM_LOG_LIMIT = 5.0


@dataclass
class HeadOutputs:
    """Per-query predictions, leading dims (B, N) or (N,) for a single frame."""

    logits: Tensor  # K_cls + 1, last channel is no-object
    box2d: Tensor  # normalized (cx, cy, w, h)
    center: Tensor  # normalized projected 3D center (u, v)
    dims: Tensor  # (h, w, l) meters
    orientation: Tensor  # (sin yaw, cos yaw)
    depth: Tensor  # meters

    @property
    def num_queries(self) -> int:
        return int(self.logits.shape[-2])

    def frame(self, index: int) -> "HeadOutputs":
        return HeadOutputs(**{f.name: getattr(self, f.name)[index] for f in fields(self)})

    def scores(self) -> Tensor:
        """Max foreground class probability per query."""
        return self.logits.softmax(-1)[..., :-1].max(-1).values


def _mlp(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(c_in, c_in), nn.ReLU(), nn.Linear(c_in, c_out))


class PredictionHeads(nn.Module):
    """Class head on the semantic half of each query, regression heads on the geometry half."""

    def __init__(self, channels: int, num_classes: int = 1, use_full_query: bool = False) -> None:
        super().__init__()
        if channels % 2:
            raise OddChannelError(f"query channels must be even, got {channels}")
        self.channels = channels
        self.use_full_query = use_full_query
        half = channels if use_full_query else channels // 2
        self.cls = nn.Linear(half, num_classes + 1)
        self.box2d = _mlp(half, 4)
        self.center = _mlp(half, 2)
        self.dims = _mlp(half, 3)
        self.orientation = _mlp(half, 2)
        self.depth = _mlp(half, 1)
        self.register_buffer("mean_dims", torch.tensor(CAR_MEAN_DIMS), persistent=False)

    def split(self, queries: Tensor) -> tuple[Tensor, Tensor]:
        if self.use_full_query:
            return queries, queries
        half = self.channels // 2
        return queries[..., :half], queries[..., half:]

    def forward(self, queries: Tensor) -> HeadOutputs:
        if queries.shape[-1] != self.channels:
            raise OddChannelError(f"expected {self.channels} query channels, got {queries.shape[-1]}")
        semantic, geometry = self.split(queries)
        raw_dims = self.dims(geometry).clamp(-DIM_LOG_LIMIT, DIM_LOG_LIMIT)
        return HeadOutputs(
            logits=self.cls(semantic),
            box2d=self.box2d(geometry).sigmoid(),
            center=self.center(geometry).sigmoid(),
            dims=self.mean_dims.to(raw_dims.dtype) * raw_dims.exp(),
            orientation=self.orientation(geometry),
            depth=DEPTH_MIN + (DEPTH_MAX - DEPTH_MIN) * self.depth(geometry).squeeze(-1).sigmoid(),
        )
