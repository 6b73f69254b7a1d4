from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Dict, Optional, Sequence

import torch
from torch import Tensor

from ..const import FOCAL_GAMMA, LOSS_WEIGHTS
from ..utils import softmax_focal_loss
from .heads import HeadOutputs
from .matcher import MatchResult, Targets, giou_matrix


@dataclass
class PairLoss:
    """Loss components summed over the matched pairs of one frame.

    `l_noobj` is the classification loss of the unmatched queries toward the
    no-object class and shares the class weight.
    """

    l_cls: Tensor
    l_3d: Tensor
    l_edge: Tensor
    l_giou: Tensor
    l_dim: Tensor
    l_ori: Tensor
    l_depth: Tensor
    l_noobj: Tensor
    count: int

    def total(self, weights: Sequence[float] = LOSS_WEIGHTS) -> Tensor:
        w_cls, w_3d, w_edge, w_giou, w_dim, w_ori, w_depth = weights
        return (
            w_cls * (self.l_cls + self.l_noobj)
            + w_3d * self.l_3d
            + w_edge * self.l_edge
            + w_giou * self.l_giou
            + w_dim * self.l_dim
            + w_ori * self.l_ori
            + w_depth * self.l_depth
        )

    def as_floats(self) -> Dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    def __add__(self, other: "PairLoss") -> "PairLoss":
        return PairLoss(
            **{
                f.name: getattr(self, f.name) + getattr(other, f.name)
                for f in fields(self)
            }
        )


def pair_loss(
    pred: HeadOutputs,
    gt: Targets,
    match: MatchResult,
    gamma: float = FOCAL_GAMMA,
) -> PairLoss:
    """Losses of one frame: matched queries regress their object, the rest predict no-object."""
    logits = pred.logits
    no_object = logits.shape[-1] - 1
    query_idx = torch.as_tensor(match.assignment, dtype=torch.long, device=logits.device)
    target_cls = torch.full((logits.shape[0],), no_object, dtype=torch.long, device=logits.device)
    target_cls[query_idx] = gt.labels
    focal = softmax_focal_loss(logits, target_cls, gamma, dim=-1)
    matched = torch.zeros(logits.shape[0], dtype=torch.bool, device=logits.device)
    matched[query_idx] = True
    zero = logits.sum() * 0.0

    if gt.count == 0:
        return PairLoss(zero, zero, zero, zero, zero, zero, zero, focal.sum(), 0)

    giou = torch.diagonal(giou_matrix(pred.box2d[query_idx], gt.box2d))
    return PairLoss(
        l_cls=focal[matched].sum(),
        l_3d=(pred.center[query_idx] - gt.center).abs().sum(),
        l_edge=(pred.box2d[query_idx] - gt.box2d).abs().sum(),
        l_giou=(1.0 - giou).sum(),
        l_dim=(pred.dims[query_idx] - gt.dims).abs().sum(),
        l_ori=(pred.orientation[query_idx] - gt.orientation).abs().sum(),
        l_depth=(pred.depth[query_idx] - gt.depth).abs().sum(),
        l_noobj=focal[~matched].sum(),
        count=gt.count,
    )


def empty_pair_loss(like: Optional[Tensor] = None) -> PairLoss:
    zero = torch.zeros(()) if like is None else like.sum() * 0.0
    return PairLoss(zero, zero, zero, zero, zero, zero, zero, zero, 0)
