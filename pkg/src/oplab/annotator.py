"""Frame labels and slot observations.

Occlusion is judged from projected boxes and camera distances only: an object
``x`` is occluded by ``y`` to the degree that ``x``'s box is covered by a box
that is at least as large, provided ``y`` is not farther from the camera.
Frame labels use full occlusion; observation visibility uses a partial
occlusion threshold (0.7 by default). The two are deliberately independent.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .scene_sim import (ActionKind, BBox, Scenario, Shape, Vec3, WorldState,
                        frame_boxes)

log = logging.getLogger(__name__)

DEFAULT_SLOTS = 15


class FrameLabel(str, enum.Enum):
    VISIBLE = "visible"
    OCCLUDED = "occluded"
    CONTAINED = "contained"
    CARRIED = "carried"


LABELS = tuple(FrameLabel)


class ObservationMode(str, enum.Enum):
    PERFECT = "perfect"
    GROUND_TRUTH_VISIBLE = "ground_truth_visible"


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotationConfig:
    p: float = 0.7
    slots: int = DEFAULT_SLOTS

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"partial-occlusion threshold p={self.p} not in (0, 1]")
        if self.slots < 1:
            raise ValueError("slots must be positive")


@dataclass(frozen=True)
class DetectorNoise:
    miss_rate: float = 0.0
    jitter_sigma: float = 0.0
    swap_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("miss_rate", "swap_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} is not a probability")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be non-negative")

    @property
    def is_identity(self) -> bool:
        return self.miss_rate == 0 and self.jitter_sigma == 0 and self.swap_rate == 0


@dataclass(frozen=True)
class FrameGeometry:
    """Per-frame boxes and 3D positions of every object, plus the camera."""

    boxes: Mapping[int, BBox]
    positions: Mapping[int, Vec3]
    camera_position: Vec3

    @classmethod
    def from_world(cls, scenario: Scenario, world: WorldState) -> "FrameGeometry":
        return cls(boxes=frame_boxes(scenario, world),
                   positions={i: s.position for i, s in world.objects.items()},
                   camera_position=scenario.camera.position)


def _intersection(x: BBox, y: BBox) -> float:
    w = min(x.x2, y.x2) - max(x.x1, y.x1)
    h = min(x.y2, y.y2) - max(x.y1, y.y1)
    return max(0.0, w) * max(0.0, h)


def occlusion_rate(x: BBox, y: BBox) -> float:
    """Fraction of ``x``'s area covered by ``y``; 0 when ``y`` is smaller."""
    ax, ay = x.area, y.area
    if ax > ay:
        return 0.0
    if ax <= 0.0:
        if _intersection(x, y) > 0.0:
            log.debug("degenerate zero-area box %s", x)
        return 0.0
    return min(1.0, _intersection(x, y) / ax)


def distance_from_camera(loc: Sequence[float], camera_loc: Sequence[float]) -> float:
    d = np.asarray(loc, dtype=float) - np.asarray(camera_loc, dtype=float)
    return float(d @ d)


def _occluded_at(x: int, geom: FrameGeometry, p: float) -> bool:
    bx = geom.boxes[x]
    dcx = distance_from_camera(geom.positions[x], geom.camera_position)
    for y, by in geom.boxes.items():
        if y == x:
            continue
        if occlusion_rate(bx, by) >= p and \
                dcx >= distance_from_camera(geom.positions[y], geom.camera_position):
            return True
    return False


def fully_occluded(x: int, geom: FrameGeometry) -> int:
    return int(_occluded_at(x, geom, 1.0))


def partially_occluded(x: int, geom: FrameGeometry, p: float) -> int:
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p={p} not in (0, 1]")
    return int(_occluded_at(x, geom, p))


def classify_frame(scenario: Scenario, world: WorldState, target: Optional[int] = None,
                   geom: Optional[FrameGeometry] = None) -> FrameLabel:
    """Label one frame for ``target`` (default: the scenario's snitch).

    Containment outranks occlusion: a covered target is Carried while any
    cone in its container chain is sliding, otherwise Contained.
    """
    if target is None:
        target = scenario.target_id
    if target not in world.objects:
        raise KeyError(f"unknown target id {target}")
    chain = world.carrier_chain(target)
    if chain:
        t = world.frame
        for ev in scenario.events:
            if ev.kind is ActionKind.SLIDE and ev.actor in chain and ev.active(t):
                return FrameLabel.CARRIED
        return FrameLabel.CONTAINED
    if geom is None:
        geom = FrameGeometry.from_world(scenario, world)
    if fully_occluded(target, geom):
        return FrameLabel.OCCLUDED
    return FrameLabel.VISIBLE


def object_visibility(scenario: Scenario, world: WorldState, geom: FrameGeometry,
                      mode: ObservationMode, config: AnnotationConfig) -> dict[int, bool]:
    """Which objects the observation reports as visible in this frame."""
    vis = {}
    for o in scenario.objects:
        if world.objects[o.id].contained_by is not None:
            vis[o.id] = False
        elif mode is ObservationMode.PERFECT:
            vis[o.id] = not partially_occluded(o.id, geom, config.p)
        else:
            vis[o.id] = not fully_occluded(o.id, geom)
    return vis


def assign_slots(visibility: Sequence[Mapping[int, bool]], target: int,
                 capacity: int) -> dict[int, int]:
    """Map object ids to observation rows.

    The target always gets row 0; the rest follow in order of first
    appearance (ties by id); never-seen objects go last.
    """
    ids = sorted(visibility[0]) if visibility else []
    if len(ids) > capacity:
        raise CapacityError(f"{len(ids)} objects exceed slot capacity {capacity}")
    first = {}
    for t, vis in enumerate(visibility):
        for i, v in vis.items():
            if v and i not in first:
                first[i] = t
    never = len(visibility)
    others = sorted((i for i in ids if i != target), key=lambda i: (first.get(i, never), i))
    slots = {target: 0}
    for k, i in enumerate(others, start=1):
        slots[i] = k
    return slots


def build_observation(boxes: Mapping[int, BBox], visible: Mapping[int, bool],
                      slots: Mapping[int, int], capacity: int) -> np.ndarray:
    """The ``(capacity, 5)`` slot matrix for one frame."""
    obs = np.zeros((capacity, 5))
    for i, k in slots.items():
        if k >= capacity:
            raise CapacityError(f"slot {k} exceeds capacity {capacity}")
        if visible[i]:
            obs[k, :4] = boxes[i]
            obs[k, 4] = 1.0
    return obs


def observe_frame(scenario: Scenario, world: WorldState, slots: Mapping[int, int],
                  mode: ObservationMode = ObservationMode.PERFECT,
                  config: AnnotationConfig = AnnotationConfig(),
                  geom: Optional[FrameGeometry] = None) -> np.ndarray:
    if geom is None:
        geom = FrameGeometry.from_world(scenario, world)
    vis = object_visibility(scenario, world, geom, mode, config)
    return build_observation(geom.boxes, vis, slots, config.slots)


def emulate_detector(obs: np.ndarray, noise: DetectorNoise,
                     rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Corrupt a ``(K, 5)`` frame, or a ``(T, K, 5)`` sequence, like a detector would.

    Visible rows may be dropped, jittered, or swapped with another row. The
    visibility bit always agrees with whether the row is populated.
    """
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    obs = np.array(obs, dtype=float, copy=True)
    if noise.is_identity:
        return obs
    if obs.ndim == 3:
        for t in range(obs.shape[0]):
            obs[t] = emulate_detector(obs[t], noise, rng)
        return obs
    K = obs.shape[0]
    for k in range(K):
        if obs[k, 4] <= 0.5:
            continue
        if rng.random() < noise.miss_rate:
            obs[k] = 0.0
            continue
        if noise.jitter_sigma > 0:
            box = np.clip(obs[k, :4] + rng.normal(0.0, noise.jitter_sigma, 4), 0.0, 1.0)
            obs[k, :4] = [min(box[0], box[2]), min(box[1], box[3]),
                          max(box[0], box[2]), max(box[1], box[3])]
    if noise.swap_rate > 0:
        for k in range(K):
            if obs[k, 4] > 0.5 and rng.random() < noise.swap_rate:
                j = int(rng.integers(K - 1))
                j += j >= k
                obs[[k, j]] = obs[[j, k]]
    return obs


def annotate_video(scenario: Scenario, worlds: Optional[Sequence[WorldState]] = None,
                   mode: ObservationMode = ObservationMode.PERFECT,
                   config: AnnotationConfig = AnnotationConfig()) -> dict:
    """Labels, observations and ground-truth boxes for a whole scenario."""
    from .scene_sim import simulate
    if worlds is None:
        worlds = simulate(scenario)
    target = scenario.target_id
    geoms = [FrameGeometry.from_world(scenario, w) for w in worlds]
    labels = [classify_frame(scenario, w, target, g) for w, g in zip(worlds, geoms)]
    vis = [object_visibility(scenario, w, g, mode, config) for w, g in zip(worlds, geoms)]
    slots = assign_slots(vis, target, config.slots)
    obs = np.stack([build_observation(g.boxes, v, slots, config.slots)
                    for g, v in zip(geoms, vis)])
    ids = [o.id for o in scenario.objects]
    all_boxes = np.array([[g.boxes[i] for i in ids] for g in geoms], dtype=float)
    cover = []
    for w in worlds:
        chain = w.carrier_chain(target)
        cover.append(slots[chain[-1]] if chain else slots[target])
    return {
        "labels": labels,
        "observations": obs,
        "slots": slots,
        "object_ids": ids,
        "all_boxes": all_boxes,
        "target_boxes": np.array([g.boxes[target] for g in geoms], dtype=float),
        "target_positions": np.array([w.objects[target].position for w in worlds], dtype=float),
        "cover_slots": np.array(cover, dtype=int),
    }
