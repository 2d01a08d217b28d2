"""Generated video datasets: records, JSONL persistence, splits and statistics.

On disk a dataset directory holds one ``{split}.jsonl`` per split plus a
``manifest.json``. Each JSONL file starts with a header line
``{"schema_version": N, "kind": "header", ...}`` followed by one video per
line. Files ending in ``.gz`` are transparently gzip-compressed.
"""
from __future__ import annotations

import gzip
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .annotator import (LABELS, AnnotationConfig, FrameLabel, ObservationMode,
                        annotate_video)
from .scene_sim import Scenario, ScenarioConfig, build_scenario

SCHEMA_VERSION = 1
DEFAULT_SPLITS = {"train": 500, "dev": 100, "test": 100}


class SchemaError(ValueError):
    pass


class DatasetParseError(ValueError):
    pass


@dataclass
class VideoRecord:
    """One annotated video.

    Arrays are indexed by frame first. ``observations`` is ``(T, K, 5)``;
    ``all_boxes`` is ``(T, n_objects, 4)`` in ``object_ids`` order;
    ``cover_slots`` holds, per frame, the slot of the object that physically
    reveals the target's location (the target itself, or its outermost cone).
    """

    video_id: str
    seed: int
    observations: np.ndarray
    labels: list[FrameLabel]
    target_boxes: np.ndarray
    all_boxes: np.ndarray
    object_ids: list[int]
    slots: dict[int, int]
    cover_slots: np.ndarray
    target_positions: np.ndarray
    target_slot: int = 0
    floor_half_extent: float = 3.0
    target_radius: float = 0.35

    def __post_init__(self):
        T = len(self.labels)
        for name in ("observations", "target_boxes", "all_boxes", "cover_slots",
                     "target_positions"):
            if len(getattr(self, name)) != T:
                raise ValueError(f"{self.video_id}: {name} has {len(getattr(self, name))} "
                                 f"frames, labels have {T}")
        if not 0 <= self.target_slot < self.observations.shape[1]:
            raise ValueError(f"{self.video_id}: target slot {self.target_slot} out of range")

    @property
    def num_frames(self) -> int:
        return len(self.labels)

    def label_codes(self) -> np.ndarray:
        return np.array([LABELS.index(l) for l in self.labels], dtype=int)

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "seed": int(self.seed),
            "observations": self.observations.tolist(),
            "labels": [l.value for l in self.labels],
            "target_boxes": self.target_boxes.tolist(),
            "all_boxes": self.all_boxes.tolist(),
            "object_ids": [int(i) for i in self.object_ids],
            "slots": {str(k): int(v) for k, v in self.slots.items()},
            "cover_slots": self.cover_slots.tolist(),
            "target_positions": self.target_positions.tolist(),
            "target_slot": self.target_slot,
            "floor_half_extent": self.floor_half_extent,
            "target_radius": self.target_radius,
        }

    @classmethod
    def from_json(cls, d: dict) -> "VideoRecord":
        n_obj = len(d["object_ids"])
        return cls(
            video_id=d["video_id"],
            seed=int(d["seed"]),
            observations=np.asarray(d["observations"], dtype=np.float64).reshape(
                len(d["labels"]), -1, 5),
            labels=[FrameLabel(l) for l in d["labels"]],
            target_boxes=np.asarray(d["target_boxes"], dtype=np.float64).reshape(-1, 4),
            all_boxes=np.asarray(d["all_boxes"], dtype=np.float64).reshape(-1, n_obj, 4),
            object_ids=[int(i) for i in d["object_ids"]],
            slots={int(k): int(v) for k, v in d["slots"].items()},
            cover_slots=np.asarray(d["cover_slots"], dtype=int),
            target_positions=np.asarray(d["target_positions"], dtype=np.float64).reshape(-1, 3),
            target_slot=int(d["target_slot"]),
            floor_half_extent=float(d["floor_half_extent"]),
            target_radius=float(d["target_radius"]),
        )

    def equals(self, other: "VideoRecord") -> bool:
        if not isinstance(other, VideoRecord):
            return False
        for name in self.__dataclass_fields__:
            a, b = getattr(self, name), getattr(other, name)
            if isinstance(a, np.ndarray):
                if a.shape != b.shape or a.dtype.kind != b.dtype.kind or not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True


def record_from_scenario(scenario: Scenario, video_id: str,
                         annotation: AnnotationConfig = AnnotationConfig(),
                         mode: ObservationMode = ObservationMode.PERFECT) -> VideoRecord:
    ann = annotate_video(scenario, mode=mode, config=annotation)
    target = scenario.spec(scenario.target_id)
    return VideoRecord(
        video_id=video_id,
        seed=scenario.seed,
        observations=ann["observations"],
        labels=ann["labels"],
        target_boxes=ann["target_boxes"],
        all_boxes=ann["all_boxes"],
        object_ids=ann["object_ids"],
        slots=ann["slots"],
        cover_slots=ann["cover_slots"],
        target_positions=ann["target_positions"],
        target_slot=0,
        floor_half_extent=scenario.floor_half_extent,
        target_radius=target.radius,
    )


def video_seed(seed: int, split: str, index: int) -> int:
    """64-bit seed for video ``index`` of ``split``, independent across splits."""
    ss = np.random.SeedSequence([seed, _split_code(split), index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _split_code(split: str) -> int:
    return int.from_bytes(hashlib.sha256(split.encode()).digest()[:4], "little")


def _make_record(args) -> VideoRecord:
    seed, video_id, scenario_config, annotation = args
    return record_from_scenario(build_scenario(seed, scenario_config), video_id, annotation)


def generate_split(seed: int, split: str, count: int,
                   scenario_config: ScenarioConfig = ScenarioConfig(),
                   annotation: AnnotationConfig = AnnotationConfig(),
                   workers: Optional[int] = 1) -> list[VideoRecord]:
    """Build ``count`` annotated videos; output order does not depend on ``workers``."""
    jobs = [(video_seed(seed, split, i), f"{split}-{i:05d}", scenario_config, annotation)
            for i in range(count)]
    workers = os.cpu_count() if workers is None else workers
    if workers <= 1 or count < 2:
        return [_make_record(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_make_record, jobs, chunksize=8))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _open(path, mode: str):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def write_dataset(records: Sequence[VideoRecord], path, meta: Optional[dict] = None) -> dict:
    """Write records as JSONL behind a header line; returns the header."""
    header = {"schema_version": SCHEMA_VERSION, "kind": "header", "count": len(records),
              "video_ids": [r.video_id for r in records], **(meta or {})}
    with _open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
    return header


def read_dataset(path) -> list[VideoRecord]:
    records = []
    with _open(path, "r") as fh:
        first = fh.readline()
        if not first.strip():
            raise DatasetParseError(f"{path}: missing header line")
        try:
            header = json.loads(first)
        except json.JSONDecodeError as e:
            raise DatasetParseError(f"{path}:1: bad header: {e}") from None
        version = header.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaError(f"{path}: schema version {version!r} is not supported "
                              f"(expected {SCHEMA_VERSION})")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                records.append(VideoRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise DatasetParseError(f"{path}:{lineno}: {e}") from None
    if header.get("count") is not None and header["count"] != len(records):
        raise DatasetParseError(f"{path}: header announces {header['count']} videos, "
                                f"found {len(records)}")
    return records


def config_hash(scenario_config: ScenarioConfig, annotation: AnnotationConfig,
                seed: int, counts: dict) -> str:
    blob = json.dumps({"scenario": scenario_config.to_dict(),
                       "annotation": {"p": annotation.p, "slots": annotation.slots},
                       "seed": seed, "counts": counts}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def write_splits(out_dir, splits: dict[str, Sequence[VideoRecord]], *, seed: int,
                 scenario_config: ScenarioConfig, annotation: AnnotationConfig,
                 compress: bool = False) -> dict:
    """Write ``{split}.jsonl`` files and ``manifest.json`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = {name: [r.video_id for r in recs] for name, recs in splits.items()}
    seen: set[str] = set()
    for name, vids in ids.items():
        clash = seen.intersection(vids)
        if clash:
            raise ValueError(f"split {name!r} shares videos with another split: {sorted(clash)[:3]}")
        seen.update(vids)
    suffix = ".jsonl.gz" if compress else ".jsonl"
    for name, recs in splits.items():
        write_dataset(recs, out / f"{name}{suffix}", {"split": name})
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "config_hash": config_hash(scenario_config, annotation, seed,
                                   {k: len(v) for k, v in splits.items()}),
        "scenario_config": scenario_config.to_dict(),
        "annotation": {"p": annotation.p, "slots": annotation.slots},
        "splits": ids,
        "files": {name: f"{name}{suffix}" for name in splits},
        "stats": {name: compute_stats(recs).to_dict() for name, recs in splits.items() if recs},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_split(dataset_dir, split: str) -> list[VideoRecord]:
    d = Path(dataset_dir)
    manifest_path = d / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {d}; run `oplab generate` first")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if split not in manifest["files"]:
        raise KeyError(f"dataset {d} has no split {split!r} (has {sorted(manifest['files'])})")
    return read_dataset(d / manifest["files"][split])


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

@dataclass
class DatasetStats:
    video_count: int
    frame_count: int
    fractions: dict[FrameLabel, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"videos": self.video_count, "frames": self.frame_count,
                "fractions": {l.value: self.fractions[l] for l in LABELS}}

    def table(self, name: str = "") -> str:
        head = f"{'split':<8}{'videos':>8}{'frames':>9}" + "".join(f"{l.value:>11}" for l in LABELS)
        row = f"{name:<8}{self.video_count:>8}{self.frame_count:>9}" + "".join(
            f"{100 * self.fractions[l]:>10.2f}%" for l in LABELS)
        return head + "\n" + row


def compute_stats(records: Sequence[VideoRecord]) -> DatasetStats:
    if not records:
        raise ValueError("cannot compute statistics of an empty dataset")
    counts = {l: 0 for l in LABELS}
    total = 0
    for r in records:
        for l in r.labels:
            counts[l] += 1
        total += r.num_frames
    return DatasetStats(len(records), total, {l: counts[l] / total for l in LABELS})


def stack_records(records: Sequence[VideoRecord], slots: Optional[int] = None) -> dict[str, np.ndarray]:
    """Batch arrays: obs ``(N,T,K,5)``, boxes ``(N,T,4)``, labels ``(N,T)``, cover ``(N,T)``."""
    if not records:
        raise ValueError("no records")
    T = {r.num_frames for r in records}
    if len(T) != 1:
        raise ValueError(f"records have differing frame counts {sorted(T)}")
    K = slots or max(r.observations.shape[1] for r in records)
    obs = np.zeros((len(records), T.pop(), K, 5))
    for i, r in enumerate(records):
        k = r.observations.shape[1]
        if k > K:
            if np.any(r.observations[:, K:]):
                raise ValueError(f"{r.video_id}: occupied slots beyond K={K}")
            k = K
        obs[i, :, :k] = r.observations[:, :k]
    return {
        "obs": obs,
        "boxes": np.stack([r.target_boxes for r in records]),
        "labels": np.stack([r.label_codes() for r in records]),
        "cover": np.stack([r.cover_slots for r in records]),
    }
