from __future__ import annotations

import pickle
from dataclasses import dataclass, fields
from logging import getLogger
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import torch
from awesomeversion import AwesomeVersion
from torch import nn

from ..config import ConfigError, build_config, config_keys, dump_config, format_value
from ..const import CHECKPOINT_FORMAT_VERSION, MIN_CHECKPOINT_VERSION, CheckpointAttribute
from ..core import CrossViewError
from ..interaction import Detector, ModelConfig
from .config import TrainConfig

logger = getLogger(__name__)


class CheckpointError(CrossViewError):
    pass


def is_supported_format(version: str) -> bool:
    return AwesomeVersion(version) >= AwesomeVersion(MIN_CHECKPOINT_VERSION)


def _flat_config(*configs: Any) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for config in configs:
        for item in fields(config):
            values[item.name] = format_value(getattr(config, item.name))
    return values


def save_checkpoint(
    path: Path,
    models: nn.ModuleDict,
    model_config: ModelConfig,
    train_config: TrainConfig,
    epoch: int,
    optimizer: Optional[torch.optim.Optimizer] = None,
) -> None:
    state = {
        CheckpointAttribute.FORMAT_VERSION: CHECKPOINT_FORMAT_VERSION,
        CheckpointAttribute.CONFIG: _flat_config(model_config, train_config),
        CheckpointAttribute.MODELS: {name: module.state_dict() for name, module in models.items()},
        CheckpointAttribute.EPOCH: epoch,
        CheckpointAttribute.TORCH_RNG: torch.get_rng_state(),
    }
    if optimizer is not None:
        state[CheckpointAttribute.OPTIMIZER] = optimizer.state_dict()
    try:
        torch.save(state, Path(path))
    except OSError as err:
        raise CheckpointError(f"cannot write checkpoint {path}: {err}") from err
    logger.info("Saved checkpoint %s (epoch %d)", path, epoch)


def load_checkpoint(path: Path) -> Dict[str, Any]:
    try:
        state = torch.load(Path(path), map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    if not isinstance(state, dict) or CheckpointAttribute.FORMAT_VERSION not in state:
        raise CheckpointError(f"{path} is not a checkpoint")
    version = str(state[CheckpointAttribute.FORMAT_VERSION])
    if not is_supported_format(version):
        raise CheckpointError(f"checkpoint format {version} is older than {MIN_CHECKPOINT_VERSION}")
    return state


def configs_from_state(state: Mapping[str, Any]) -> tuple[ModelConfig, TrainConfig]:
    values = state[CheckpointAttribute.CONFIG]
    model_keys = config_keys(ModelConfig)
    try:
        model_config = build_config(ModelConfig, {k: v for k, v in values.items() if k in model_keys})
        train_config = build_config(TrainConfig, {k: v for k, v in values.items() if k not in model_keys})
    except ConfigError as err:
        raise CheckpointError(f"checkpoint config is not readable: {err}") from err
    return model_config, train_config


@dataclass
class LoadedModels:
    models: nn.ModuleDict
    model_config: ModelConfig
    train_config: TrainConfig
    epoch: int

    def detector(self, name: str) -> Detector:
        if name in self.models:
            return self.models[name]  # type: ignore[return-value]
        return self.models["shared"]  # type: ignore[return-value]

    def resolved_config(self) -> str:
        return dump_config(self.model_config) + dump_config(self.train_config)


def build_models(model_config: ModelConfig, share_weights: bool) -> nn.ModuleDict:
    if share_weights:
        return nn.ModuleDict({"shared": Detector(model_config)})
    return nn.ModuleDict({"roadside": Detector(model_config), "vehicle": Detector(model_config)})


def load_detectors(path: Path) -> LoadedModels:
    state = load_checkpoint(path)
    model_config, train_config = configs_from_state(state)
    models = build_models(model_config, train_config.share_weights)
    saved = state[CheckpointAttribute.MODELS]
    if set(saved) != set(models.keys()):
        raise CheckpointError(f"checkpoint holds branches {sorted(saved)}, expected {sorted(models.keys())}")
    for name, module in models.items():
        module.load_state_dict(saved[name])
    models.eval()
    return LoadedModels(models, model_config, train_config, int(state[CheckpointAttribute.EPOCH]))
