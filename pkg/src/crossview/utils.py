from __future__ import annotations

import hashlib
import random
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F


def seed_everything(seed: int) -> None:
    """Seed python, numpy and torch and force deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def child_rng(seed: int, *keys: int) -> np.random.Generator:
    """Returns a generator for one node of the seed hierarchy rooted at `seed`."""
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def softmax_focal_loss(logits: torch.Tensor, target: torch.Tensor, gamma: float = 2.0, dim: int = 1) -> torch.Tensor:
    """Elementwise multiclass focal loss -(1 - p_t)^gamma * log(p_t), no alpha weighting."""
    log_p = F.log_softmax(logits, dim=dim).gather(dim, target.unsqueeze(dim)).squeeze(dim)
    return -((1.0 - log_p.exp()) ** gamma) * log_p
