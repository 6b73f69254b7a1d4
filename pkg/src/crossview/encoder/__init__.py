"""Feature encoder: three-scale backbone, content/depth features and the foreground depth map."""
from __future__ import annotations

from dataclasses import dataclass
from logging import getLogger
from typing import Tuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from ..const import BACKGROUND_DEPTH, DEPTH_MAX, DEPTH_MIN, FOCAL_GAMMA
from ..core import CrossViewError
from ..utils import softmax_focal_loss

logger = getLogger(__name__)

__all__ = [
    "Backbone",
    "FeatureEncoder",
    "FeatureMaps",
    "LidBins",
    "ShapeError",
    "depth_map_loss",
    "depth_targets",
]


class ShapeError(CrossViewError):
    pass


@dataclass
class FeatureMaps:
    """Backbone outputs at strides 8, 16 and 32, each (B, C, H/s, W/s)."""

    f8: Tensor
    f16: Tensor
    f32: Tensor

    def __post_init__(self) -> None:
        channels = {self.f8.shape[1], self.f16.shape[1], self.f32.shape[1]}
        if len(channels) != 1:
            raise ShapeError(f"channel count differs across scales: {sorted(channels)}")


class LidBins:
    """Linear-increasing depth discretization: bin widths grow linearly with depth."""

    def __init__(self, num_bins: int = 64, depth_min: float = DEPTH_MIN, depth_max: float = DEPTH_MAX) -> None:
        self.num_bins = num_bins
        self.depth_min = depth_min
        self.depth_max = depth_max
        self.bin_size = 2.0 * (depth_max - depth_min) / (num_bins * (1 + num_bins))

    @property
    def background(self) -> int:
        return self.num_bins

    def edges(self) -> Tensor:
        i = torch.arange(self.num_bins + 1, dtype=torch.float64)
        return self.depth_min + self.bin_size * i * (i + 1) / 2

    def centers(self) -> Tensor:
        edges = self.edges()
        return (edges[1:] + edges[:-1]) / 2

    def bin_index(self, depth: Tensor) -> Tensor:
        """Bin of each depth; values outside [min, max] are not meaningful here."""
        depth = depth.to(torch.float64)
        index = -0.5 + 0.5 * torch.sqrt(1 + 8 * (depth - self.depth_min) / self.bin_size)
        return index.floor().clamp(0, self.num_bins - 1).long()


def _conv(c_in: int, c_out: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(c_in, c_out, kernel_size=3, stride=stride, padding=1)


def _zero_biases(module: nn.Module) -> None:
    for layer in module.modules():
        if isinstance(layer, nn.Conv2d) and layer.bias is not None:
            nn.init.zeros_(layer.bias)


class Backbone(nn.Module):
    """Four stage plain CNN emitting the last three stages projected to `channels`."""

    STAGES = (16, 32, 64, 64)

    def __init__(self, channels: int = 64) -> None:
        super().__init__()
        s1, s2, s3, s4 = self.STAGES
        self.stage1 = nn.Sequential(_conv(3, s1, 2), nn.ReLU(), _conv(s1, s1, 2), nn.ReLU())  # 1/4
        self.stage2 = nn.Sequential(_conv(s1, s2, 2), nn.ReLU())  # 1/8
        self.stage3 = nn.Sequential(_conv(s2, s3, 2), nn.ReLU())  # 1/16
        self.stage4 = nn.Sequential(_conv(s3, s4, 2), nn.ReLU())  # 1/32
        self.proj8 = nn.Conv2d(s2, channels, 1)
        self.proj16 = nn.Conv2d(s3, channels, 1)
        self.proj32 = nn.Conv2d(s4, channels, 1)
        _zero_biases(self)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, image: Tensor) -> FeatureMaps:
        height, width = image.shape[-2:]
        if height % 32 or width % 32:
            raise ShapeError(f"image size {width}x{height} is not divisible by 32")
        x4 = self.stage1(image)
        x8 = self.stage2(x4)
        x16 = self.stage3(x8)
        x32 = self.stage4(x16)
        return FeatureMaps(self.proj8(x8), self.proj16(x16), self.proj32(x32))


class FeatureEncoder(nn.Module):
    def __init__(self, channels: int = 64, depth_bins: int = 64) -> None:
        super().__init__()
        self.bins = LidBins(depth_bins)
        self.backbone = Backbone(channels)
        self.downsample = _conv(channels, channels, 2)
        self.depth_conv1 = _conv(channels, channels)
        self.depth_conv2 = _conv(channels, channels)
        self.depth_head = _conv(channels, depth_bins + 1)
        _zero_biases(self)

    def unify_scales(self, fm: FeatureMaps) -> Tensor:
        """Content feature: mean of the 1/16 map, upsampled 1/32 and strided-conv 1/8."""
        up = F.interpolate(fm.f32, scale_factor=2.0, mode="nearest")
        down = self.downsample(fm.f8)
        if not (up.shape == down.shape == fm.f16.shape):
            raise ShapeError(f"cannot unify scales {tuple(down.shape)}, {tuple(fm.f16.shape)}, {tuple(up.shape)}")
        return (down + fm.f16 + up) / 3.0

    def depth_feature(self, content: Tensor) -> Tensor:
        return self.depth_conv2(F.relu(self.depth_conv1(content)))

    def depth_map_head(self, depth_feature: Tensor) -> Tensor:
        """Logits (B, D+1, H/16, W/16); channel D is background."""
        return self.depth_head(depth_feature)

    def forward(self, image: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        content = self.unify_scales(self.backbone(image))
        depth = self.depth_feature(content)
        return content, depth, self.depth_map_head(depth)


def depth_targets(depth_gt: Tensor, bins: LidBins) -> Tuple[Tensor, Tensor, Tensor]:
    """Returns (target class, foreground mask, in-range mask) for a depth_gt map."""
    foreground = depth_gt != BACKGROUND_DEPTH
    in_range = (depth_gt >= bins.depth_min) & (depth_gt <= bins.depth_max)
    target = torch.where(foreground, bins.bin_index(depth_gt), torch.full_like(depth_gt, bins.background).long())
    return target, foreground, in_range


def depth_map_loss(
    logits: Tensor,
    depth_gt: Tensor,
    bins: LidBins,
    gamma: float = FOCAL_GAMMA,
    supervise_background: bool = True,
) -> Tensor:
    """Multiclass focal loss over depth bins averaged over supervised cells.

    Foreground cells outside [depth_min, depth_max] are masked out; background
    cells target the background channel unless `supervise_background` is off.
    """
    if logits.dim() != 4 or depth_gt.shape != (logits.shape[0], *logits.shape[2:]):
        raise ShapeError(f"depth map {tuple(logits.shape)} does not match ground truth {tuple(depth_gt.shape)}")
    if logits.shape[1] != bins.num_bins + 1:
        raise ShapeError(f"expected {bins.num_bins + 1} depth channels, got {logits.shape[1]}")
    target, foreground, in_range = depth_targets(depth_gt, bins)
    valid = (foreground & in_range) | (~foreground if supervise_background else torch.zeros_like(foreground))
    if not valid.any():
        return logits.sum() * 0.0
    return softmax_focal_loss(logits, target, gamma)[valid].mean()
