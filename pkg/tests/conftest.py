from __future__ import annotations

import pytest
import torch

from crossview.core import CameraModel
from crossview.interaction import ModelConfig
from crossview.synthdata import DatasetManifest, SynthConfig, build_dataset
from crossview.trainer import TrainConfig, TrainMode


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "slow: end-to-end runs that train for several epochs")


@pytest.fixture
def camera() -> CameraModel:
    return CameraModel(fx=100.0, fy=100.0, cx=64.0, cy=64.0, image_size=(128, 128))


@pytest.fixture(scope="session")
def small_synth() -> SynthConfig:
    return SynthConfig(
        image_width=128,
        image_height=96,
        focal=100.0,
        max_objects=3,
        n_roadside=4,
        n_vehicle=8,
        n_roadside_val=2,
        n_vehicle_val=2,
        seed=7,
    )


@pytest.fixture(scope="session")
def dataset(tmp_path_factory: pytest.TempPathFactory, small_synth: SynthConfig) -> DatasetManifest:
    return build_dataset(small_synth, tmp_path_factory.mktemp("dataset"))


@pytest.fixture
def tiny_model() -> ModelConfig:
    return ModelConfig(
        channels=16,
        num_queries=12,
        heads=2,
        ffn_dim=32,
        depth_bins=8,
        content_blocks=1,
        depth_blocks=1,
        decoder_blocks=2,
    )


@pytest.fixture
def quick_train() -> TrainConfig:
    return TrainConfig(
        mode=TrainMode.Paired,
        epochs=1,
        batch_size=2,
        lr_decay_epochs=(1,),
        eval_every=0,
        augment=False,
    )


@pytest.fixture(autouse=True)
def _seeded() -> None:
    torch.manual_seed(0)
