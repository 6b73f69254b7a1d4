"""Two-branch training: per-branch pair and depth-map losses, the contrastive term, and the epoch loop."""
from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, fields
from logging import getLogger
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import Tensor, nn
from torch.utils.data import DataLoader, Dataset

from ..config import write_config
from ..const import (
    CHECKPOINT_FILE,
    FOCAL_GAMMA,
    METRICS_FILE,
    RESOLVED_CONFIG_FILE,
    MetricsAttribute,
    Split,
)
from ..core import CrossViewError, Difficulty, Domain
from ..crossdomain import ClNormalization, build_sample_sets, contrastive_loss, sample_queries
from ..encoder import LidBins, depth_map_loss
from ..evaluator.inference import evaluate_model
from ..evaluator.metric import Metric
from ..evaluator.report import EvalReport
from ..interaction import (
    BranchOutput,
    Detector,
    HeadOutputs,
    MatchResult,
    ModelConfig,
    Targets,
    hungarian,
    image_tensor,
    matching_cost,
    pair_loss,
)
from ..synthdata import DatasetManifest, DomainSample, load_sample, random_crop
from ..utils import child_rng, seed_everything
from .checkpoint import build_models, save_checkpoint
from .config import TrainConfig, TrainMode
from .pairing import EpochPlan, Planner

logger = getLogger(__name__)

# seed hierarchy key of per-item augmentation
_AUGMENT_KEY = 201

MIXED_BRANCH = "mixed"


class EmptyGTBatchError(CrossViewError):
    pass


class NonFiniteLossError(CrossViewError):
    def __init__(self, message: str, dump_path: Optional[Path] = None) -> None:
        super().__init__(message)
        self.dump_path = dump_path


@dataclass
class BranchLoss:
    """Summed weighted pair losses of one domain in a batch, with its object count and depth-map loss."""

    pair_sum: Tensor
    count: int
    dmap: Tensor

    @property
    def pair_mean(self) -> Tensor:
        # 1/K scaling; a branch without objects keeps its no-object terms unscaled
        return self.pair_sum / max(self.count, 1)


@dataclass
class LossBreakdown:
    l_pair_v: Tensor
    l_pair_r: Tensor
    l_dmap_v: Tensor
    l_dmap_r: Tensor
    l_cl: Tensor
    k_v: int = 0
    k_r: int = 0

    @property
    def total(self) -> Tensor:
        return self.l_pair_v + self.l_pair_r + self.l_dmap_v + self.l_dmap_r + self.l_cl

    def as_floats(self) -> Dict[str, float]:
        values = {f.name: float(getattr(self, f.name)) for f in fields(self)}
        values["total"] = float(self.total)
        return values

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.as_floats().values())


def overall_loss(
    vehicle: Optional[BranchLoss], roadside: Optional[BranchLoss], l_cl: Optional[Tensor] = None
) -> LossBreakdown:
    """Sums the scaled pair losses, the depth-map losses and the contrastive term of a batch.

    Branches that did not run contribute zero.
    """
    active = [b for b in (vehicle, roadside) if b is not None]
    if not active:
        raise ValueError("at least one branch must contribute")
    if all(b.count == 0 for b in active):
        raise EmptyGTBatchError("no ground-truth object in any branch of the batch")
    zero = active[0].pair_sum * 0.0
    return LossBreakdown(
        l_pair_v=vehicle.pair_mean if vehicle else zero,
        l_pair_r=roadside.pair_mean if roadside else zero,
        l_dmap_v=vehicle.dmap if vehicle else zero,
        l_dmap_r=roadside.dmap if roadside else zero,
        l_cl=l_cl if l_cl is not None else zero,
        k_v=vehicle.count if vehicle else 0,
        k_r=roadside.count if roadside else 0,
    )


def assign(pred: HeadOutputs, gt: Targets, weights: Sequence[float]) -> MatchResult:
    if gt.count == 0:
        return hungarian(np.zeros((pred.num_queries, 0)))
    return hungarian(matching_cost(pred, gt, weights))


class PlanDataset(Dataset):
    """Loads the samples of one epoch plan; item i holds one sample per slot of plan item i."""

    def __init__(self, planner: Planner, plan: EpochPlan, manifest: DatasetManifest, config: TrainConfig, epoch: int):
        self.planner = planner
        self.plan = plan
        self.manifest = manifest
        self.config = config
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.plan)

    def __getitem__(self, index: int) -> Tuple[DomainSample, ...]:
        samples = []
        for position, slot in enumerate(self.plan.items[index]):
            sample = load_sample(self.manifest, self.planner.entry(slot))
            if self.config.augment:
                rng = child_rng(self.config.seed, _AUGMENT_KEY, self.epoch, index, position)
                sample = random_crop(sample, rng, self.config.crop_prob, self.config.crop_min_scale)
            samples.append(sample)
        return tuple(samples)


@dataclass
class FrameRecord:
    queries: Tensor
    match: MatchResult

    @property
    def count(self) -> int:
        return len(self.match.assignment)


def pair_contrastive(
    road: Optional[FrameRecord],
    vehicle: Optional[FrameRecord],
    decouple_channels: bool = True,
    normalization: ClNormalization = ClNormalization.Off,
) -> Optional[Tensor]:
    """Contrastive term of one roadside/vehicle pair; None unless both views hold objects."""
    if road is None or vehicle is None:
        return None
    if road.count == 0 or vehicle.count == 0:
        return None
    sets = build_sample_sets(
        [
            sample_queries(road.queries, road.match, Domain.Roadside),
            sample_queries(vehicle.queries, vehicle.match, Domain.Vehicle),
        ]
    )
    return contrastive_loss(sets, decouple_channels, normalization)


@dataclass
class TrainResult:
    out_dir: Path
    checkpoint: Path
    metrics: Path
    history: List[Dict[str, Any]] = field(default_factory=list)
    branch_calls: Dict[str, int] = field(default_factory=dict)
    report: Optional[EvalReport] = None
    n_roadside: int = 0
    n_vehicle: int = 0
    ratio: float = 0.0
    images_per_epoch: int = 0


class Trainer:
    def __init__(
        self,
        train_config: TrainConfig,
        model_config: ModelConfig,
        manifest: DatasetManifest,
        out_dir: Path,
    ) -> None:
        self.config = train_config
        self.model_config = model_config
        self.manifest = manifest
        self.out_dir = Path(out_dir)
        seed_everything(train_config.seed)
        self.planner = Planner(
            manifest, train_config.mode, train_config.pairing, train_config.seed, train_config.roadside_fraction
        )
        self.models = build_models(model_config, train_config.share_weights)
        self.models.train()
        self.dtype = torch.float32
        self.bins = LidBins(model_config.depth_bins)
        self.optimizer = torch.optim.AdamW(
            self.models.parameters(), lr=train_config.lr, weight_decay=train_config.weight_decay
        )
        self.scheduler = torch.optim.lr_scheduler.MultiStepLR(
            self.optimizer, milestones=list(train_config.lr_decay_epochs), gamma=train_config.lr_decay_factor
        )
        self.branch_calls: Counter = Counter({Domain.Vehicle.value: 0, Domain.Roadside.value: 0, MIXED_BRANCH: 0})
        self.epoch = 0

    def detector_for(self, branch: str) -> Detector:
        if self.config.share_weights:
            return self.models["shared"]  # type: ignore[return-value]
        if branch == MIXED_BRANCH:
            branch = Domain.Roadside.value
        return self.models[branch]  # type: ignore[return-value]

    @property
    def lr(self) -> float:
        return float(self.optimizer.param_groups[0]["lr"])

    def _branch_of(self, sample: DomainSample) -> str:
        return MIXED_BRANCH if self.config.mode is TrainMode.Addon else sample.domain.value

    def _frame_losses(self, out: BranchOutput, index: int, gt: Targets) -> Tuple[Tensor, MatchResult]:
        weights = self.config.lambdas
        pred = out.heads.frame(index)
        match = assign(pred, gt, weights)
        total = pair_loss(pred, gt, match, FOCAL_GAMMA).total(weights)
        for aux in out.aux:
            aux_pred = aux.frame(index)
            total = total + pair_loss(aux_pred, gt, assign(aux_pred, gt, weights), FOCAL_GAMMA).total(weights)
        return total, match

    def batch_losses(self, batch: Sequence[Tuple[DomainSample, ...]]) -> LossBreakdown:
        groups: Dict[str, List[Tuple[int, DomainSample]]] = defaultdict(list)
        for item_index, item in enumerate(batch):
            for sample in item:
                groups[self._branch_of(sample)].append((item_index, sample))

        pair_sums: Dict[Domain, Tensor] = {}
        counts: Dict[Domain, int] = defaultdict(int)
        dmaps: Dict[Domain, Tensor] = {}
        records: Dict[Tuple[int, Domain], FrameRecord] = {}
        for branch in sorted(groups):
            members = groups[branch]
            detector = self.detector_for(branch)
            images = torch.stack([image_tensor(s.image, self.dtype) for _, s in members])
            out = detector(images)
            self.branch_calls[branch] += 1
            for j, (item_index, sample) in enumerate(members):
                gt = Targets.from_labels(sample.labels, sample.cam, self.dtype)
                loss, match = self._frame_losses(out, j, gt)
                domain = sample.domain
                pair_sums[domain] = pair_sums[domain] + loss if domain in pair_sums else loss
                counts[domain] += gt.count
                records[(item_index, domain)] = FrameRecord(out.queries[j], match)
            for domain in {s.domain for _, s in members}:
                rows = [j for j, (_, s) in enumerate(members) if s.domain is domain]
                depth_gt = torch.stack([torch.tensor(members[j][1].depth_gt, dtype=self.dtype) for j in rows])
                dmaps[domain] = depth_map_loss(
                    out.depth_logits[rows],
                    depth_gt,
                    self.bins,
                    FOCAL_GAMMA,
                    self.model_config.supervise_background,
                )

        def branch(domain: Domain) -> Optional[BranchLoss]:
            if domain not in pair_sums:
                return None
            return BranchLoss(pair_sums[domain], counts[domain], dmaps[domain])

        return overall_loss(branch(Domain.Vehicle), branch(Domain.Roadside), self._contrastive(len(batch), records))

    def _contrastive(self, size: int, records: Dict[Tuple[int, Domain], FrameRecord]) -> Optional[Tensor]:
        if not self.config.contrastive:
            return None
        terms = []
        for i in range(size):
            road, veh = records.get((i, Domain.Roadside)), records.get((i, Domain.Vehicle))
            term = pair_contrastive(road, veh, self.config.decouple, self.config.cl_normalization)
            if term is None:
                if road is not None and veh is not None:
                    logger.debug("pair %d lacks objects in one view, skipping the contrastive term", i)
                continue
            terms.append(term)
        if not terms:
            return None
        return torch.stack(terms).mean()

    def _dump_batch(self, batch: Sequence[Tuple[DomainSample, ...]], losses: LossBreakdown, index: int) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / f"nonfinite_epoch{self.epoch}_batch{index}.json"
        payload = {
            "epoch": self.epoch,
            "batch": index,
            "lr": self.lr,
            "samples": [[s.sample_id for s in item] for item in batch],
            "losses": losses.as_floats(),
        }
        path.write_text(json.dumps(payload, indent=2))
        return path

    def step(self, batch: Sequence[Tuple[DomainSample, ...]], index: int = 0) -> Optional[LossBreakdown]:
        """One optimizer step; returns None when the batch is skipped."""
        try:
            losses = self.batch_losses(batch)
        except EmptyGTBatchError:
            logger.warning("Skipping batch %d of epoch %d: no ground truth", index, self.epoch)
            return None
        if not losses.is_finite():
            path = self._dump_batch(batch, losses, index)
            logger.error("Non-finite loss in epoch %d batch %d, dumped to %s", self.epoch, index, path)
            raise NonFiniteLossError(f"non-finite loss in epoch {self.epoch} batch {index}", path)
        self.optimizer.zero_grad(set_to_none=True)
        losses.total.backward()
        if self.config.grad_clip > 0:
            nn.utils.clip_grad_norm_(self.models.parameters(), self.config.grad_clip)
        self.optimizer.step()
        return losses

    def loader(self, plan: EpochPlan) -> DataLoader:
        return DataLoader(
            PlanDataset(self.planner, plan, self.manifest, self.config, self.epoch),
            batch_size=self.config.batch_size,
            shuffle=False,
            num_workers=self.config.num_workers,
            collate_fn=list,
        )

    def validate(self) -> EvalReport:
        domain = self.config.eval_domain
        report = evaluate_model(
            self.detector_for(domain.value), self.manifest, domain, Split.VAL, self.config.score_threshold
        )
        self.models.train()
        return report

    def run_epoch(self) -> Dict[str, Any]:
        plan = self.planner.plan(self.epoch)
        lr = self.lr
        sums: Dict[str, float] = defaultdict(float)
        steps = skipped = 0
        for index, batch in enumerate(self.loader(plan)):
            losses = self.step(batch, index)
            if losses is None:
                skipped += 1
                continue
            steps += 1
            for key, value in losses.as_floats().items():
                sums[key] += value
        self.scheduler.step()

        record: Dict[str, Any] = {
            MetricsAttribute.EPOCH: self.epoch,
            MetricsAttribute.LOSSES: {key: value / max(steps, 1) for key, value in sums.items()},
            MetricsAttribute.LR: lr,
            MetricsAttribute.VAL_AP: None,
            MetricsAttribute.SKIPPED: skipped,
            MetricsAttribute.BRANCH_CALLS: dict(self.branch_calls),
            MetricsAttribute.IMAGES: plan.images,
            MetricsAttribute.RATIO: self.planner.ratio,
        }
        logger.info(
            "Epoch %d: loss %.4f over %d steps (%d skipped), lr %g",
            self.epoch,
            record[MetricsAttribute.LOSSES].get("total", 0.0),
            steps,
            skipped,
            lr,
        )
        self.epoch += 1
        return record

    def _should_validate(self) -> bool:
        every = self.config.eval_every
        return every > 0 and (self.epoch % every == 0 or self.epoch == self.config.epochs)

    def fit(self) -> TrainResult:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        write_config(self.out_dir / RESOLVED_CONFIG_FILE, self.model_config, self.config)
        metrics_path = self.out_dir / METRICS_FILE
        metrics_path.write_text("")
        logger.info(
            "Training %s: %d roadside / %d vehicle samples (ratio %.2f)",
            self.config.mode.display,
            self.planner.n_roadside,
            self.planner.n_vehicle,
            self.planner.ratio,
        )
        result = TrainResult(
            out_dir=self.out_dir,
            checkpoint=self.out_dir / CHECKPOINT_FILE,
            metrics=metrics_path,
            n_roadside=self.planner.n_roadside,
            n_vehicle=self.planner.n_vehicle,
            ratio=self.planner.ratio,
        )
        while self.epoch < self.config.epochs:
            record = self.run_epoch()
            result.images_per_epoch = record[MetricsAttribute.IMAGES]
            if self._should_validate():
                result.report = self.validate()
                record[MetricsAttribute.VAL_AP] = val_ap(result.report)
            result.history.append(record)
            with open(metrics_path, "a") as handle:
                handle.write(json.dumps(record) + "\n")
        save_checkpoint(result.checkpoint, self.models, self.model_config, self.config, self.epoch, self.optimizer)
        result.branch_calls = dict(self.branch_calls)
        return result


def val_ap(report: EvalReport) -> Dict[str, Optional[float]]:
    return {
        "ap3d_mod_07": report.value(Metric.AP3D, 0.7, Difficulty.Mod),
        "ap3d_mod_05": report.value(Metric.AP3D, 0.5, Difficulty.Mod),
    }


def train(
    train_config: TrainConfig, model_config: ModelConfig, manifest: DatasetManifest, out_dir: Path
) -> TrainResult:
    return Trainer(train_config, model_config, manifest, out_dir).fit()
