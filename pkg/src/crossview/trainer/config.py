from __future__ import annotations

from dataclasses import dataclass
from enum import unique
from typing import Any, Tuple

from ..const import LOSS_WEIGHTS, SCORE_THRESHOLD
from ..core import DisplayEnum, Domain
from ..crossdomain import ClNormalization


@unique
class TrainMode(DisplayEnum):
    OnlyRoad = "only_road", "Only-Road"
    OnlyVeh = "only_veh", "Only-Veh"
    Addon = "addon", "Addon"
    Paired = "paired", "Paired"

    @classmethod
    def _missing_(cls, value: Any) -> "TrainMode | None":
        # name used by published experiment tables for the paired contrastive mode
        if value == "iroam":
            return cls.Paired
        return None

    @property
    def domains(self) -> Tuple[Domain, ...]:
        if self is TrainMode.OnlyRoad:
            return (Domain.Roadside,)
        if self is TrainMode.OnlyVeh:
            return (Domain.Vehicle,)
        return (Domain.Roadside, Domain.Vehicle)


@unique
class Pairing(DisplayEnum):
    CycleShorter = "cycle_shorter", "cycle shorter domain"
    WithReplacement = "sample_with_replacement", "sample with replacement"
    SubsampleVehicle = "subsample_vehicle", "subsample vehicle-side"


@dataclass(frozen=True)
class TrainConfig:
    mode: TrainMode = TrainMode.Paired
    pairing: Pairing = Pairing.CycleShorter
    epochs: int = 40
    batch_size: int = 4
    lr: float = 5e-5
    weight_decay: float = 1e-4
    lr_decay_epochs: Tuple[int, ...] = (25, 33)
    lr_decay_factor: float = 0.1
    lambdas: Tuple[float, ...] = LOSS_WEIGHTS
    seed: int = 0
    share_weights: bool = True
    use_cl: bool = True
    decouple: bool = True
    cl_normalization: ClNormalization = ClNormalization.Off
    roadside_fraction: float = 1.0
    eval_domain: Domain = Domain.Roadside
    eval_every: int = 1
    score_threshold: float = SCORE_THRESHOLD
    grad_clip: float = 1.0
    augment: bool = True
    crop_prob: float = 0.5
    crop_min_scale: float = 0.8
    num_workers: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise ValueError(f"lr_decay_factor must be in (0, 1), got {self.lr_decay_factor}")
        if len(self.lambdas) != len(LOSS_WEIGHTS):
            raise ValueError(f"lambdas needs {len(LOSS_WEIGHTS)} weights, got {len(self.lambdas)}")
        if any(w < 0 for w in self.lambdas):
            raise ValueError("loss weights must be non-negative")
        if not 0.0 < self.roadside_fraction <= 1.0:
            raise ValueError(f"roadside_fraction must be in (0, 1], got {self.roadside_fraction}")
        if list(self.lr_decay_epochs) != sorted(self.lr_decay_epochs):
            raise ValueError("lr_decay_epochs must be ascending")
        if self.num_workers < 0 or self.eval_every < 0:
            raise ValueError("num_workers and eval_every must be non-negative")
        if not 0.0 < self.crop_min_scale <= 1.0:
            raise ValueError("crop_min_scale must be in (0, 1]")

    @property
    def contrastive(self) -> bool:
        return self.mode is TrainMode.Paired and self.use_cl
