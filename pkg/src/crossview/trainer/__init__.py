from __future__ import annotations

__all__ = ["config", "pairing", "loop", "checkpoint"]

from .config import Pairing, TrainConfig, TrainMode
from .pairing import EmptyDomainError, EpochPlan, Planner, pair_indices, pair_iterator, roadside_subset
from .checkpoint import (
    CheckpointError,
    LoadedModels,
    build_models,
    is_supported_format,
    load_checkpoint,
    load_detectors,
    save_checkpoint,
)
from .loop import (
    BranchLoss,
    EmptyGTBatchError,
    FrameRecord,
    LossBreakdown,
    NonFiniteLossError,
    TrainResult,
    Trainer,
    overall_loss,
    pair_contrastive,
    train,
    val_ap,
)
