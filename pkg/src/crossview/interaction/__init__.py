from __future__ import annotations

__all__ = ["transformer", "heads", "matcher", "losses", "detector"]

from .transformer import DecoderBlock, DepthAwareDecoder, EncoderBlock, SequenceEncoder, sine_position_embedding
from .heads import HeadOutputs, PredictionHeads
from .matcher import (
    CostTerms,
    EmptyGTError,
    InfeasibleError,
    MatchResult,
    Targets,
    cost_terms,
    focal_class_cost,
    hungarian,
    matching_cost,
)
from .losses import PairLoss, empty_pair_loss, pair_loss
from .detector import BranchOutput, Detector, ModelConfig, decode_predictions, image_tensor
