from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from logging import getLogger
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np
from PIL import Image
from scipy.stats import ks_2samp

from ..config import format_value
from ..const import (
    DEPTH_DIR,
    IMAGES_DIR,
    LABELS_DIR,
    MANIFEST_FILE,
    CameraAttribute,
    LabelAttribute,
    ManifestAttribute,
    Split,
)
from ..core import Box2D, Box3D, CameraModel, Category, CrossViewError, Difficulty, Domain, Label
from ..utils import sha256_file
from .render import DomainSample, EmptyViewError, difficulty_for_depth, render_view
from .scene import PlacementError, SynthConfig, generate_scene, roadside_camera, vehicle_camera

logger = getLogger(__name__)

DOMAIN_KEYS = {Domain.Vehicle: 0, Domain.Roadside: 1}
SPLIT_KEYS = {Split.TRAIN: 0, Split.VAL: 1}


class DatasetIOError(CrossViewError, OSError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    domain: Domain
    split: str
    index: int
    image: str
    label: str
    depth: str
    checksums: Dict[str, str] = field(default_factory=dict)


@dataclass
class DatasetManifest:
    root: Path
    seed: int
    entries: List[ManifestEntry]
    counts: Dict[str, Dict[str, int]]
    depth_terciles: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    config: Dict[str, str] = field(default_factory=dict)

    def select(self, domain: Domain, split: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.domain == domain and e.split == split]

    @property
    def n_roadside(self) -> int:
        return self.counts.get(Domain.Roadside.value, {}).get(Split.TRAIN, 0)

    @property
    def n_vehicle(self) -> int:
        return self.counts.get(Domain.Vehicle.value, {}).get(Split.TRAIN, 0)


# ---------------------------------------------------------------- binary depth


def write_depth_map(path: Path, depth: np.ndarray) -> None:
    """Little-endian header (rows, cols) as uint32 followed by row-major float32."""
    rows, cols = depth.shape
    payload = np.asarray([rows, cols], dtype="<u4").tobytes() + np.ascontiguousarray(depth, dtype="<f4").tobytes()
    Path(path).write_bytes(payload)


def read_depth_map(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise DatasetIOError(f"depth file {path} is truncated")
    rows, cols = (int(v) for v in np.frombuffer(raw[:8], dtype="<u4"))
    if len(raw) != 8 + 4 * rows * cols:
        raise DatasetIOError(f"depth file {path} holds {len(raw) - 8} bytes, expected {4 * rows * cols}")
    return np.frombuffer(raw[8:], dtype="<f4").reshape(rows, cols).astype(np.float32)


# ---------------------------------------------------------------- label json


def camera_to_dict(cam: CameraModel) -> Dict[str, Any]:
    return {
        CameraAttribute.FX: cam.fx,
        CameraAttribute.FY: cam.fy,
        CameraAttribute.CX: cam.cx,
        CameraAttribute.CY: cam.cy,
        CameraAttribute.HEIGHT: cam.height_above_ground,
        CameraAttribute.PITCH: cam.pitch,
        CameraAttribute.IMAGE_SIZE: list(cam.image_size),
        CameraAttribute.POSITION: list(cam.position),
    }


def camera_from_dict(data: Dict[str, Any]) -> CameraModel:
    return CameraModel(
        fx=data[CameraAttribute.FX],
        fy=data[CameraAttribute.FY],
        cx=data[CameraAttribute.CX],
        cy=data[CameraAttribute.CY],
        height_above_ground=data[CameraAttribute.HEIGHT],
        pitch=data[CameraAttribute.PITCH],
        image_size=tuple(data[CameraAttribute.IMAGE_SIZE]),  # type: ignore[arg-type]
        position=tuple(data[CameraAttribute.POSITION]),  # type: ignore[arg-type]
    )


def label_to_dict(label: Label) -> Dict[str, Any]:
    box = label.box3d
    return {
        LabelAttribute.OBJECT_ID: label.object_id,
        LabelAttribute.CENTER: list(box.center),
        LabelAttribute.DIMS: list(box.dims),
        LabelAttribute.YAW: box.yaw,
        LabelAttribute.CATEGORY: box.category.value,
        LabelAttribute.DIFFICULTY: box.difficulty.value,
        LabelAttribute.BOX2D: list(label.box2d.as_tuple()),
        LabelAttribute.ALBEDO: list(label.albedo),
    }


def label_from_dict(item: Dict[str, Any]) -> Label:
    box = Box3D(
        center=tuple(item[LabelAttribute.CENTER]),  # type: ignore[arg-type]
        dims=tuple(item[LabelAttribute.DIMS]),  # type: ignore[arg-type]
        yaw=item[LabelAttribute.YAW],
        category=Category(item[LabelAttribute.CATEGORY]),
        difficulty=Difficulty(item[LabelAttribute.DIFFICULTY]),
    )
    return Label(
        box3d=box,
        box2d=Box2D(*item[LabelAttribute.BOX2D]),
        object_id=item[LabelAttribute.OBJECT_ID],
        albedo=tuple(item[LabelAttribute.ALBEDO]),  # type: ignore[arg-type]
    )


def sample_to_json(sample: DomainSample) -> Dict[str, Any]:
    return {
        LabelAttribute.SAMPLE_ID: sample.sample_id,
        LabelAttribute.DOMAIN: sample.domain.value,
        LabelAttribute.CAMERA: camera_to_dict(sample.cam),
        LabelAttribute.OBJECTS: [label_to_dict(label) for label in sample.labels],
    }


# ---------------------------------------------------------------- build


def render_sample(config: SynthConfig, domain: Domain, split: str, index: int) -> DomainSample:
    """Renders one sample from its own node of the seed hierarchy, resampling empty views."""
    sample_id = f"{domain.value}/{split}/{index:06d}"
    for attempt in range(config.resample_attempts):
        sequence = np.random.SeedSequence([config.seed, DOMAIN_KEYS[domain], SPLIT_KEYS[split], index, attempt])
        rng = np.random.default_rng(sequence)
        scene_seed = int(sequence.generate_state(1)[0])
        cam = roadside_camera(config, rng) if domain == Domain.Roadside else vehicle_camera(config)
        try:
            scene = generate_scene(config, scene_seed)
            return render_view(scene, cam, domain, config.depth_bands, sample_id=sample_id)
        except (EmptyViewError, PlacementError) as err:
            logger.debug("resampling %s (attempt %d): %s", sample_id, attempt, err)
    raise EmptyViewError(f"{sample_id}: no visible object after {config.resample_attempts} attempts")


def _render_job(args: Tuple[SynthConfig, Domain, str, int]) -> DomainSample:
    return render_sample(*args)


def depth_terciles(depths: List[float]) -> Tuple[float, float]:
    if not depths:
        return (0.0, 0.0)
    first, second = np.quantile(np.asarray(depths, dtype=np.float64), [1 / 3, 2 / 3])
    return (float(first), float(second))


def _write_sample(root: Path, sample: DomainSample, split: str, index: int) -> ManifestEntry:
    base = root / sample.domain.value / split
    image_path = Path(IMAGES_DIR) / f"{index:06d}.png"
    depth_path = Path(DEPTH_DIR) / f"{index:06d}.bin"
    label_path = Path(LABELS_DIR) / f"{index:06d}.json"
    pixels = np.round(sample.image * 255).astype(np.uint8)
    Image.fromarray(pixels).save(base / image_path, format="PNG")
    write_depth_map(base / depth_path, sample.depth_gt)
    (base / label_path).write_text(json.dumps(sample_to_json(sample), indent=1, sort_keys=True))
    rel = Path(sample.domain.value) / split
    entry = ManifestEntry(
        sample_id=sample.sample_id,
        domain=sample.domain,
        split=split,
        index=index,
        image=str(rel / image_path),
        label=str(rel / label_path),
        depth=str(rel / depth_path),
    )
    checksums = {name: sha256_file(root / getattr(entry, name)) for name in ("image", "label", "depth")}
    return replace(entry, checksums=checksums)


def _iter_jobs(config: SynthConfig) -> Iterator[Tuple[SynthConfig, Domain, str, int]]:
    counts = {
        (Domain.Roadside, Split.TRAIN): config.n_roadside,
        (Domain.Roadside, Split.VAL): config.n_roadside_val,
        (Domain.Vehicle, Split.TRAIN): config.n_vehicle,
        (Domain.Vehicle, Split.VAL): config.n_vehicle_val,
    }
    for (domain, split), count in counts.items():
        for index in range(count):
            yield config, domain, split, index


def build_dataset(config: SynthConfig, root: Path) -> DatasetManifest:
    """Renders and writes both domains; difficulty uses per-domain depth terciles."""
    root = Path(root)
    try:
        for domain in Domain:
            for split in (Split.TRAIN, Split.VAL):
                for sub in (IMAGES_DIR, LABELS_DIR, DEPTH_DIR):
                    (root / domain.value / split / sub).mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise DatasetIOError(f"cannot create dataset directory {root}: {err}") from err

    jobs = list(_iter_jobs(config))
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            rendered = list(pool.map(_render_job, jobs, chunksize=8))
    else:
        rendered = [_render_job(job) for job in jobs]

    terciles = {
        domain.value: depth_terciles([l.box3d.depth for s in rendered if s.domain == domain for l in s.labels])
        for domain in Domain
    }

    entries: List[ManifestEntry] = []
    counts: Dict[str, Dict[str, int]] = {d.value: {Split.TRAIN: 0, Split.VAL: 0} for d in Domain}
    try:
        for (_, domain, split, index), sample in zip(jobs, rendered):
            bands = terciles[domain.value]
            labels = tuple(
                replace(l, box3d=replace(l.box3d, difficulty=difficulty_for_depth(l.box3d.depth, bands)))
                for l in sample.labels
            )
            entries.append(_write_sample(root, replace(sample, labels=labels), split, index))
            counts[domain.value][split] += 1
    except OSError as err:
        raise DatasetIOError(f"failed writing dataset under {root}: {err}") from err

    manifest = DatasetManifest(
        root=root,
        seed=config.seed,
        entries=entries,
        counts=counts,
        depth_terciles=terciles,
        config={key: format_value(value) for key, value in asdict(config).items()},
    )
    write_manifest(manifest)
    logger.info(
        "Wrote dataset to %s: %d roadside + %d vehicle train samples",
        root,
        manifest.n_roadside,
        manifest.n_vehicle,
    )
    return manifest


# ---------------------------------------------------------------- read


def write_manifest(manifest: DatasetManifest) -> None:
    data = {
        ManifestAttribute.SEED: manifest.seed,
        ManifestAttribute.COUNTS: manifest.counts,
        ManifestAttribute.DEPTH_TERCILES: {k: list(v) for k, v in manifest.depth_terciles.items()},
        ManifestAttribute.CONFIG: manifest.config,
        ManifestAttribute.ENTRIES: [
            {
                ManifestAttribute.SAMPLE_ID: e.sample_id,
                ManifestAttribute.DOMAIN: e.domain.value,
                ManifestAttribute.SPLIT: e.split,
                ManifestAttribute.INDEX: e.index,
                ManifestAttribute.IMAGE: e.image,
                ManifestAttribute.LABEL: e.label,
                ManifestAttribute.DEPTH: e.depth,
                ManifestAttribute.CHECKSUMS: e.checksums,
            }
            for e in manifest.entries
        ],
    }
    try:
        (manifest.root / MANIFEST_FILE).write_text(json.dumps(data, indent=1, sort_keys=True))
    except OSError as err:
        raise DatasetIOError(f"cannot write manifest: {err}") from err


def load_manifest(root: Path) -> DatasetManifest:
    root = Path(root)
    try:
        data = json.loads((root / MANIFEST_FILE).read_text())
    except (OSError, ValueError) as err:
        raise DatasetIOError(f"cannot read manifest under {root}: {err}") from err

    entries = []
    for item in data[ManifestAttribute.ENTRIES]:
        entry = ManifestEntry(
            sample_id=item[ManifestAttribute.SAMPLE_ID],
            domain=Domain(item[ManifestAttribute.DOMAIN]),
            split=item[ManifestAttribute.SPLIT],
            index=item[ManifestAttribute.INDEX],
            image=item[ManifestAttribute.IMAGE],
            label=item[ManifestAttribute.LABEL],
            depth=item[ManifestAttribute.DEPTH],
            checksums=item.get(ManifestAttribute.CHECKSUMS, {}),
        )
        for name in ("image", "label", "depth"):
            if not (root / getattr(entry, name)).is_file():
                raise DatasetIOError(f"{entry.sample_id}: missing {name} file {getattr(entry, name)}")
        entries.append(entry)

    counts = data[ManifestAttribute.COUNTS]
    for domain in Domain:
        for split in (Split.TRAIN, Split.VAL):
            listed = sum(1 for e in entries if e.domain == domain and e.split == split)
            if counts.get(domain.value, {}).get(split, 0) != listed:
                raise DatasetIOError(f"manifest counts disagree with entries for {domain.value}/{split}")

    return DatasetManifest(
        root=root,
        seed=data[ManifestAttribute.SEED],
        entries=entries,
        counts=counts,
        depth_terciles={k: tuple(v) for k, v in data.get(ManifestAttribute.DEPTH_TERCILES, {}).items()},  # type: ignore[misc]
        config=data.get(ManifestAttribute.CONFIG, {}),
    )


def load_sample(manifest: DatasetManifest, entry: ManifestEntry) -> DomainSample:
    root = manifest.root
    try:
        with Image.open(root / entry.image) as pixels:
            image = np.asarray(pixels.convert("RGB"), dtype=np.float32) / 255.0
        data = json.loads((root / entry.label).read_text())
        depth = read_depth_map(root / entry.depth)
    except (OSError, ValueError) as err:
        raise DatasetIOError(f"cannot load {entry.sample_id}: {err}") from err
    return DomainSample(
        image=image,
        labels=tuple(label_from_dict(item) for item in data[LabelAttribute.OBJECTS]),
        depth_gt=depth,
        domain=Domain(data[LabelAttribute.DOMAIN]),
        cam=camera_from_dict(data[LabelAttribute.CAMERA]),
        sample_id=data[LabelAttribute.SAMPLE_ID],
    )


def label_depths(manifest: DatasetManifest, domain: Domain, split: str = Split.TRAIN) -> List[float]:
    depths: List[float] = []
    for entry in manifest.select(domain, split):
        data = json.loads((manifest.root / entry.label).read_text())
        depths.extend(item[LabelAttribute.CENTER][2] for item in data[LabelAttribute.OBJECTS])
    return depths


def depth_gap_statistic(manifest: DatasetManifest, split: str = Split.TRAIN) -> Optional[float]:
    """Two-sample KS statistic between the domains' label depth distributions."""
    vehicle = label_depths(manifest, Domain.Vehicle, split)
    roadside = label_depths(manifest, Domain.Roadside, split)
    if not vehicle or not roadside:
        return None
    return float(ks_2samp(vehicle, roadside).statistic)
