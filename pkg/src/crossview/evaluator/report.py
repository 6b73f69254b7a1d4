from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

from ..core import Difficulty
from .metric import Metric

GridKey = Tuple[Metric, float, Difficulty]


@dataclass
class EvalReport:
    """AP grid over metric x IoU threshold x difficulty, values in [0, 100] or None."""

    ap: Dict[GridKey, Optional[float]]
    num_frames: int = 0
    num_gt: int = 0
    num_dets: int = 0
    config: Dict[str, str] = field(default_factory=dict)

    @property
    def ious(self) -> Tuple[float, ...]:
        return tuple(sorted({key[1] for key in self.ap}, reverse=True))

    def value(self, metric: Metric, iou: float, difficulty: Difficulty) -> Optional[float]:
        return self.ap[(metric, float(iou), difficulty)]

    def restrict(self, ious: Sequence[float]) -> "EvalReport":
        wanted = {float(v) for v in ious}
        missing = wanted - set(self.ious)
        if missing:
            raise KeyError(f"IoU thresholds {sorted(missing)} were not evaluated")
        return EvalReport(
            ap={key: value for key, value in self.ap.items() if key[1] in wanted},
            num_frames=self.num_frames,
            num_gt=self.num_gt,
            num_dets=self.num_dets,
            config=dict(self.config),
        )

    def to_dict(self) -> Dict[str, Any]:
        grid: Dict[str, Dict[str, Dict[str, Optional[float]]]] = {}
        for (metric, iou, difficulty), value in sorted(
            self.ap.items(), key=lambda item: (item[0][0].value, -item[0][1], item[0][2].rank)
        ):
            grid.setdefault(metric.value, {}).setdefault(repr(iou), {})[difficulty.value] = value
        return {
            "ap": grid,
            "num_frames": self.num_frames,
            "num_gt": self.num_gt,
            "num_dets": self.num_dets,
            "config": dict(sorted(self.config.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvalReport":
        ap: Dict[GridKey, Optional[float]] = {}
        for metric, by_iou in data["ap"].items():
            for iou, by_difficulty in by_iou.items():
                for difficulty, value in by_difficulty.items():
                    ap[(Metric(metric), float(iou), Difficulty(difficulty))] = value
        return cls(
            ap=ap,
            num_frames=data.get("num_frames", 0),
            num_gt=data.get("num_gt", 0),
            num_dets=data.get("num_dets", 0),
            config=data.get("config", {}),
        )

    def to_table(self) -> str:
        """Aligned text table: one row per IoU, Easy/Mod/Hard under each metric."""
        metrics = [m for m in Metric if any(key[0] is m for key in self.ap)]
        cell = 7
        group = cell * len(Difficulty)
        header = f"{'IoU':<6}|" + "|".join(f"{m.display:^{group}}" for m in metrics)
        sub = f"{'':<6}|" + "|".join("".join(f"{d.display:>{cell}}" for d in Difficulty) for _ in metrics)
        lines = [header, sub, "-" * len(sub)]
        for iou in self.ious:
            cells = []
            for metric in metrics:
                values = [self.ap.get((metric, iou, d)) for d in Difficulty]
                cells.append("".join(f"{'-':>{cell}}" if v is None else f"{v:>{cell}.2f}" for v in values))
            lines.append(f"{iou:<6.2f}|" + "|".join(cells))
        return "\n".join(lines) + "\n"

    def __str__(self) -> str:
        return self.to_table()
