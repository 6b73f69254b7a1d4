"""Epoch plans: which samples of which domain are drawn, and how the two domains are paired."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from ..const import Split
from ..core import CrossViewError, Domain
from ..synthdata import DatasetManifest, ManifestEntry
from ..utils import child_rng
from .config import Pairing, TrainMode

# seed hierarchy keys of the planner
_PAIRING_KEY = 101
_SUBSET_KEY = 102
_SINGLE_KEY = 103
_VEHICLE_STREAM_KEY = 104

Slot = Tuple[Domain, int]


class EmptyDomainError(CrossViewError):
    pass


def _cycled(n: int, length: int, rng: np.random.Generator) -> np.ndarray:
    """Concatenated fresh permutations of range(n), truncated to `length`."""
    cycles = math.ceil(length / n)
    return np.concatenate([rng.permutation(n) for _ in range(cycles)])[:length]


def pair_indices(n_vehicle: int, n_roadside: int, pairing: Pairing, seed: int, epoch: int = 0) -> List[Tuple[int, int]]:
    """(vehicle index, roadside index) pairs of one epoch; deterministic for (seed, epoch)."""
    if n_vehicle < 1 or n_roadside < 1:
        raise EmptyDomainError(f"pairing needs both domains, got {n_vehicle} vehicle / {n_roadside} roadside samples")
    rng = child_rng(seed, _PAIRING_KEY, epoch)

    if pairing is Pairing.SubsampleVehicle:
        # one pair per roadside sample; vehicle samples continue through the pool across epochs
        roadside = rng.permutation(n_roadside)
        start = epoch * n_roadside
        passes = range(start // n_vehicle, (start + n_roadside - 1) // n_vehicle + 1)
        stream = np.concatenate([child_rng(seed, _VEHICLE_STREAM_KEY, p).permutation(n_vehicle) for p in passes])
        offset = start - passes[0] * n_vehicle
        vehicle = stream[offset : offset + n_roadside]
        return [(int(v), int(r)) for v, r in zip(vehicle, roadside)]

    length = max(n_vehicle, n_roadside)
    if pairing is Pairing.CycleShorter:
        vehicle = _cycled(n_vehicle, length, rng)
        roadside = _cycled(n_roadside, length, rng)
    elif pairing is Pairing.WithReplacement:
        if n_vehicle >= n_roadside:
            vehicle = rng.permutation(n_vehicle)
            roadside = rng.integers(0, n_roadside, size=length)
        else:
            roadside = rng.permutation(n_roadside)
            vehicle = rng.integers(0, n_vehicle, size=length)
    else:
        raise ValueError(f"unsupported pairing {pairing}")
    return [(int(v), int(r)) for v, r in zip(vehicle, roadside)]


def roadside_subset(entries: Sequence[ManifestEntry], fraction: float, seed: int) -> List[ManifestEntry]:
    """Seeded prefix of a permutation, so smaller fractions are subsets of larger ones."""
    if not entries or fraction >= 1.0:
        return list(entries)
    keep = max(1, int(round(fraction * len(entries))))
    order = child_rng(seed, _SUBSET_KEY).permutation(len(entries))[:keep]
    return [entries[i] for i in sorted(order)]


@dataclass
class EpochPlan:
    """Items of one epoch; each item holds one slot per domain branch it feeds."""

    items: List[Tuple[Slot, ...]]
    mode: TrainMode

    @property
    def images(self) -> int:
        return sum(len(item) for item in self.items)

    def __len__(self) -> int:
        return len(self.items)


class Planner:
    def __init__(
        self,
        manifest: DatasetManifest,
        mode: TrainMode,
        pairing: Pairing,
        seed: int,
        roadside_fraction: float = 1.0,
    ) -> None:
        self.mode = mode
        self.pairing = pairing
        self.seed = seed
        self.entries = {
            Domain.Roadside: roadside_subset(manifest.select(Domain.Roadside, Split.TRAIN), roadside_fraction, seed),
            Domain.Vehicle: manifest.select(Domain.Vehicle, Split.TRAIN),
        }
        for domain in mode.domains:
            if not self.entries[domain]:
                raise EmptyDomainError(f"{mode.display} training needs {domain.display} train samples")

    @property
    def n_roadside(self) -> int:
        return len(self.entries[Domain.Roadside])

    @property
    def n_vehicle(self) -> int:
        return len(self.entries[Domain.Vehicle])

    @property
    def ratio(self) -> float:
        """Vehicle-side to roadside sample ratio."""
        return self.n_vehicle / self.n_roadside if self.n_roadside else math.inf

    def entry(self, slot: Slot) -> ManifestEntry:
        domain, index = slot
        return self.entries[domain][index]

    def plan(self, epoch: int) -> EpochPlan:
        rng = child_rng(self.seed, _SINGLE_KEY, epoch)
        if self.mode is TrainMode.OnlyRoad:
            # roadside data is repeated twice within one epoch
            order = np.concatenate([rng.permutation(self.n_roadside), rng.permutation(self.n_roadside)])
            items = [((Domain.Roadside, int(i)),) for i in order]
        elif self.mode is TrainMode.OnlyVeh:
            items = [((Domain.Vehicle, int(i)),) for i in rng.permutation(self.n_vehicle)]
        elif self.mode is TrainMode.Addon:
            pool = [(Domain.Roadside, i) for i in range(self.n_roadside)]
            pool += [(Domain.Vehicle, i) for i in range(self.n_vehicle)]
            items = [(pool[int(i)],) for i in rng.permutation(len(pool))]
        else:
            pairs = pair_indices(self.n_vehicle, self.n_roadside, self.pairing, self.seed, epoch)
            items = [((Domain.Roadside, r), (Domain.Vehicle, v)) for v, r in pairs]
        return EpochPlan(items=items, mode=self.mode)


def pair_iterator(
    manifest: DatasetManifest, pairing: Pairing, seed: int, epoch: int = 0, roadside_fraction: float = 1.0
) -> Iterator[Tuple[ManifestEntry, ManifestEntry]]:
    """Yields (vehicle entry, roadside entry) pairs of one epoch."""
    planner = Planner(manifest, TrainMode.Paired, pairing, seed, roadside_fraction)
    for (_, r), (_, v) in planner.plan(epoch).items:
        yield planner.entries[Domain.Vehicle][v], planner.entries[Domain.Roadside][r]
