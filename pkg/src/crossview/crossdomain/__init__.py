"""Cross-domain query enhancement: sampled positive/negative queries and their contrastive loss."""
from __future__ import annotations

from dataclasses import dataclass
from enum import unique
from logging import getLogger
from typing import Sequence, Tuple

import numpy as np
import torch
from torch import Tensor

from ..core import CrossViewError, DisplayEnum, Domain, OddChannelError
from ..interaction.matcher import MatchResult

logger = getLogger(__name__)

__all__ = [
    "ClNormalization",
    "DomainSamples",
    "SampleSets",
    "SemanticGeometrySplit",
    "TooFewQueriesError",
    "ZeroVectorError",
    "build_sample_sets",
    "contrastive_loss",
    "decouple",
    "sample_queries",
    "similarity",
    "similarity_labels",
    "similarity_matrix",
]

NORM_EPS = 1e-12


class TooFewQueriesError(CrossViewError):
    pass


class ZeroVectorError(CrossViewError):
    pass


@unique
class ClNormalization(DisplayEnum):
    Off = "none", "sum"
    PerAnchor = "k", "1/K"
    PerPair = "k2", "1/K^2"


@dataclass
class DomainSamples:
    domain: Domain
    positives: Tensor  # (K_d, C)
    negatives: Tensor  # (K_d, C)
    positive_index: np.ndarray
    negative_index: np.ndarray

    @property
    def count(self) -> int:
        return int(self.positives.shape[0])


@dataclass
class SampleSets:
    positives: Tensor  # (K, C)
    negatives: Tensor  # (K, C)
    domains: Tuple[Domain, ...]  # per positive row, negatives follow the same order

    def __post_init__(self) -> None:
        if self.positives.shape != self.negatives.shape:
            raise ValueError(
                f"positive and negative sets differ: {tuple(self.positives.shape)} vs {tuple(self.negatives.shape)}"
            )

    @property
    def count(self) -> int:
        return int(self.positives.shape[0])


@dataclass
class SemanticGeometrySplit:
    semantic: Tensor
    geometry: Tensor

    def reconstruct(self) -> Tensor:
        return torch.cat((self.semantic, self.geometry), dim=-1)


def sample_queries(queries: Tensor, match: MatchResult, domain: Domain = Domain.Roadside) -> DomainSamples:
    """Positives are the assigned query per object; negatives the unassigned queries scoring lowest against every object."""
    n_queries, n_gt = queries.shape[0], len(match.assignment)
    if n_queries < 2 * n_gt:
        raise TooFewQueriesError(f"{n_queries} queries cannot hold {n_gt} positives and {n_gt} negatives")
    positive_index = np.asarray(match.assignment, dtype=np.int64)
    free = match.unmatched()
    if n_gt:
        best = match.score_matrix.max(axis=1)[free]
        order = np.argsort(best, kind="stable")
        negative_index = free[order[:n_gt]]
    else:
        negative_index = np.zeros(0, dtype=np.int64)
    device = queries.device
    return DomainSamples(
        domain=domain,
        positives=queries[torch.as_tensor(positive_index, device=device)],
        negatives=queries[torch.as_tensor(negative_index, device=device)],
        positive_index=positive_index,
        negative_index=negative_index,
    )


def build_sample_sets(per_domain: Sequence[DomainSamples]) -> SampleSets:
    """Concatenates per-domain samples in the given domain order."""
    return SampleSets(
        positives=torch.cat([samples.positives for samples in per_domain], dim=0),
        negatives=torch.cat([samples.negatives for samples in per_domain], dim=0),
        domains=tuple(samples.domain for samples in per_domain for _ in range(samples.count)),
    )


def decouple(rows: Tensor) -> SemanticGeometrySplit:
    channels = rows.shape[-1]
    if channels % 2:
        raise OddChannelError(f"cannot bisect {channels} channels")
    half = channels // 2
    return SemanticGeometrySplit(semantic=rows[..., :half], geometry=rows[..., half:])


def _norms(rows: Tensor) -> Tensor:
    norms = rows.norm(dim=-1)
    if bool((norms < NORM_EPS).any()):
        raise ZeroVectorError("cannot compare a zero query vector")
    return norms


def similarity(q_i: Tensor, q_j: Tensor, i: int, j: int) -> Tensor:
    if i == j:
        return q_i.sum() * 0.0
    norm_i, norm_j = _norms(torch.stack((q_i, q_j)))
    return torch.sigmoid((q_i * q_j).sum() / (norm_i * norm_j))


def similarity_matrix(anchors: Tensor, candidates: Tensor) -> Tensor:
    """(K, M) sigmoid cosine similarities; entry (i, i) is zero."""
    cos = (anchors @ candidates.T) / (_norms(anchors)[:, None] * _norms(candidates)[None, :])
    s = torch.sigmoid(cos)
    k = min(anchors.shape[0], candidates.shape[0])
    diagonal = torch.zeros_like(s, dtype=torch.bool)
    diagonal[torch.arange(k), torch.arange(k)] = True
    return s.masked_fill(diagonal, 0.0)


def similarity_labels(k: int, dtype: torch.dtype = torch.float32) -> Tensor:
    """(K, 2K) targets: 1 between distinct positives, 0 elsewhere."""
    labels = torch.zeros(k, 2 * k, dtype=dtype)
    labels[:, :k] = 1.0
    labels[torch.arange(k), torch.arange(k)] = 0.0
    return labels


def contrastive_loss(
    sets: SampleSets,
    decouple_channels: bool = True,
    normalization: ClNormalization = ClNormalization.Off,
) -> Tensor:
    """L1 distance between positive-anchored similarities and their labels.

    With `decouple_channels` only the semantic half of every query takes part.
    """
    k = sets.count
    if k == 0:
        return sets.positives.sum() * 0.0
    positives, negatives = sets.positives, sets.negatives
    if decouple_channels:
        positives, negatives = decouple(positives).semantic, decouple(negatives).semantic
    candidates = torch.cat((positives, negatives), dim=0)
    s = similarity_matrix(positives, candidates)
    loss = (s - similarity_labels(k, dtype=s.dtype).to(s.device)).abs().sum()
    if normalization is ClNormalization.PerAnchor:
        return loss / k
    if normalization is ClNormalization.PerPair:
        return loss / k**2
    return loss
