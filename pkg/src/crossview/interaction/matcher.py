"""Bipartite matching between object queries and ground-truth labels."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from torch import Tensor
from torchvision.ops import box_convert, generalized_box_iou

from ..const import FOCAL_ALPHA, FOCAL_GAMMA, LOSS_WEIGHTS
from ..core import CameraModel, CrossViewError, Label, project_center
from .heads import HeadOutputs


class EmptyGTError(CrossViewError):
    pass


class InfeasibleError(CrossViewError):
    pass


@dataclass
class Targets:
    """Ground truth of one frame in the layout of HeadOutputs, leading dim K."""

    labels: Tensor
    box2d: Tensor
    center: Tensor
    dims: Tensor
    orientation: Tensor
    depth: Tensor

    @property
    def count(self) -> int:
        return int(self.labels.shape[0])

    @classmethod
    def from_labels(
        cls, labels: Sequence[Label], cam: CameraModel, dtype: torch.dtype = torch.float32
    ) -> "Targets":
        boxes = [label.box3d for label in labels]
        return cls(
            labels=torch.zeros(len(boxes), dtype=torch.long),
            box2d=torch.tensor([label.box2d.as_tuple() for label in labels], dtype=dtype).reshape(-1, 4),
            center=torch.tensor([project_center(box, cam) for box in boxes], dtype=dtype).reshape(-1, 2),
            dims=torch.tensor([box.dims for box in boxes], dtype=dtype).reshape(-1, 3),
            orientation=torch.tensor(
                [(math.sin(box.yaw), math.cos(box.yaw)) for box in boxes], dtype=dtype
            ).reshape(-1, 2),
            depth=torch.tensor([box.depth for box in boxes], dtype=dtype),
        )

    def to(self, device: torch.device) -> "Targets":
        return Targets(
            self.labels.to(device),
            self.box2d.to(device),
            self.center.to(device),
            self.dims.to(device),
            self.orientation.to(device),
            self.depth.to(device),
        )


@dataclass
class CostTerms:
    """Unweighted (N, K) matching cost components."""

    cls: Tensor
    center: Tensor
    edge: Tensor
    giou: Tensor

    def total(self, weights: Sequence[float] = LOSS_WEIGHTS) -> Tensor:
        w_cls, w_center, w_edge, w_giou = weights[:4]
        return w_cls * self.cls + w_center * self.center + w_edge * self.edge + w_giou * self.giou


def focal_class_cost(
    logits: Tensor, labels: Tensor, alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA
) -> Tensor:
    prob = logits.softmax(-1)[:, labels]
    neg = (1 - alpha) * prob**gamma * -(1 - prob + 1e-8).log()
    pos = alpha * (1 - prob) ** gamma * -(prob + 1e-8).log()
    return pos - neg


def giou_matrix(boxes_a: Tensor, boxes_b: Tensor) -> Tensor:
    return generalized_box_iou(box_convert(boxes_a, "cxcywh", "xyxy"), box_convert(boxes_b, "cxcywh", "xyxy"))


def cost_terms(pred: HeadOutputs, gt: Targets) -> CostTerms:
    if gt.count == 0:
        raise EmptyGTError("matching cost needs at least one ground-truth object")
    return CostTerms(
        cls=focal_class_cost(pred.logits, gt.labels),
        center=torch.cdist(pred.center, gt.center, p=1),
        edge=torch.cdist(pred.box2d, gt.box2d, p=1),
        giou=1.0 - giou_matrix(pred.box2d, gt.box2d),
    )


def matching_cost(pred: HeadOutputs, gt: Targets, weights: Sequence[float] = LOSS_WEIGHTS) -> Tensor:
    """(N, K) cost: weighted class, projected center, 2D box edge and GIoU terms."""
    return cost_terms(pred, gt).total(weights)


@dataclass(frozen=True)
class MatchResult:
    assignment: np.ndarray  # (K,) query index per ground-truth object
    cost_matrix: np.ndarray  # (N, K)

    @property
    def score_matrix(self) -> np.ndarray:
        return -self.cost_matrix

    @property
    def num_queries(self) -> int:
        return int(self.cost_matrix.shape[0])

    @property
    def total_cost(self) -> float:
        return float(self.cost_matrix[self.assignment, np.arange(len(self.assignment))].sum())

    def unmatched(self) -> np.ndarray:
        mask = np.ones(self.num_queries, dtype=bool)
        mask[self.assignment] = False
        return np.flatnonzero(mask)

    def pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.assignment, np.arange(len(self.assignment))


def hungarian(cost_matrix: np.ndarray | Tensor) -> MatchResult:
    """Minimal total cost injective assignment; ties go to the lowest query index."""
    if isinstance(cost_matrix, Tensor):
        cost_matrix = cost_matrix.detach().cpu().double().numpy()
    cost = np.asarray(cost_matrix, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2D, got shape {cost.shape}")
    n_queries, n_gt = cost.shape
    if n_queries < n_gt:
        raise InfeasibleError(f"cannot assign {n_gt} objects to {n_queries} queries")
    if n_gt == 0:
        return MatchResult(assignment=np.zeros(0, dtype=np.int64), cost_matrix=cost)
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    eps = 1e-9 * max(float(np.abs(cost).max()), 1e-12)
    perturbed = cost + eps * np.arange(n_queries, dtype=np.float64)[:, None]
    rows, cols = linear_sum_assignment(perturbed)
    assignment = np.empty(n_gt, dtype=np.int64)
    assignment[cols] = rows
    return MatchResult(assignment=assignment, cost_matrix=cost)
