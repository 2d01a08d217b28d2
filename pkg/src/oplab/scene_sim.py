"""Scripted desk-scale scene simulator.

Objects live on a square floor and perform three kinds of scripted actions:
sliding on the floor plane, being picked up and placed elsewhere, and (cones
only) being placed over another object so that it becomes contained. A
contained object rides along with its container until the container is
lifted again. Nested containment is allowed.

The simulator is a pure function of ``(Scenario, t)``; nothing is random once
a :class:`Scenario` has been built.
"""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np


class InvalidConfigError(ValueError):
    """Raised for scenario configurations that cannot produce a video."""


class ProjectionError(ValueError):
    """Raised when a point cannot be projected (behind the camera)."""


class Vec3(NamedTuple):
    x: float
    y: float
    z: float

    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


class Shape(str, enum.Enum):
    CUBE = "cube"
    SPHERE = "sphere"
    CYLINDER = "cylinder"
    CONE = "cone"
    SNITCH = "snitch"


class Size(str, enum.Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


SIZE_RADIUS = {Size.SMALL: 0.35, Size.MEDIUM: 0.5, Size.LARGE: 0.7}

COLORS = ("gray", "red", "blue", "green", "brown", "purple", "cyan", "yellow")
MATERIALS = ("rubber", "metal")


class ActionKind(str, enum.Enum):
    SLIDE = "slide"
    PICK_PLACE = "pick_place"
    CONTAIN = "contain"


@dataclass(frozen=True)
class ObjectSpec:
    id: int
    shape: Shape
    size: Size
    radius: float
    color: str = "gray"
    material: str = "rubber"


@dataclass(frozen=True)
class ObjectState:
    position: Vec3
    contained_by: Optional[int] = None
    airborne: bool = False


@dataclass(frozen=True)
class ActionEvent:
    kind: ActionKind
    actor: int
    start_frame: int
    end_frame: int
    destination: Vec3
    target: Optional[int] = None

    def active(self, t: int) -> bool:
        return self.start_frame <= t <= self.end_frame


@dataclass(frozen=True)
class CameraParams:
    position: Vec3 = Vec3(0.0, -9.0, 7.5)
    look_at: Vec3 = Vec3(0.0, 0.3, 0.0)
    focal_length: float = 380.0
    image_width: int = 320
    image_height: int = 240

    def __post_init__(self):
        if tuple(self.position) == tuple(self.look_at):
            raise InvalidConfigError("camera position equals look_at")
        if self.image_width <= 0 or self.image_height <= 0:
            raise InvalidConfigError("image dimensions must be positive")

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return the (right, up, forward) unit vectors of the camera frame."""
        pos = np.asarray(self.position, dtype=float)
        forward = np.asarray(self.look_at, dtype=float) - pos
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, [0.0, 0.0, 1.0])
        if np.linalg.norm(right) < 1e-12:
            # looking straight down; pick world x as image right
            right = np.array([1.0, 0.0, 0.0])
        right /= np.linalg.norm(right)
        up = np.cross(right, forward)
        return right, up, forward


class BBox(NamedTuple):
    """Axis-aligned box in normalized image coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def area(self) -> float:
        return max(0.0, self.x2 - self.x1) * max(0.0, self.y2 - self.y1)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))


@dataclass(frozen=True)
class ScenarioConfig:
    """Knobs for :func:`build_scenario`.

    ``action_rate`` is the per-frame probability that an idle object starts a
    new action. ``contain_prob`` is the chance that an idle cone's action is a
    contain; ``target_bias`` steers contains toward the target (or the
    outermost cone already holding it); ``carry_prob`` is the chance that a
    cone holding something slides instead of lifting; ``recursive_prob`` is
    the chance a contain is aimed at a cone that already holds the target.
    ``hold_rate`` replaces ``action_rate`` for a cone that is holding
    something, so it sets how long a covered object stays put before it is
    carried off or uncovered. ``min_gap`` is the clearance the planner tries
    to keep between resting objects.
    """

    num_frames: int = 60
    min_objects: int = 4
    max_objects: int = 6
    min_cones: int = 1
    max_cones: int = 3
    floor_half_extent: float = 3.0
    action_rate: float = 0.08
    hold_rate: float = 0.08
    min_duration: int = 6
    max_duration: int = 12
    contain_prob: float = 0.5
    target_bias: float = 0.9
    carry_prob: float = 0.9
    recursive_prob: float = 0.3
    lift_height: float = 1.5
    min_gap: float = 0.8
    camera: CameraParams = field(default_factory=CameraParams)

    def validate(self) -> None:
        if self.num_frames < 1:
            raise InvalidConfigError("num_frames must be >= 1")
        if self.min_objects < 1 or self.max_objects < self.min_objects:
            raise InvalidConfigError(
                f"bad object range [{self.min_objects}, {self.max_objects}]")
        if self.min_cones < 0 or self.max_cones < self.min_cones:
            raise InvalidConfigError("bad cone range")
        if self.min_duration < 1 or self.max_duration < self.min_duration:
            raise InvalidConfigError("bad duration range")
        for name in ("action_rate", "hold_rate", "contain_prob", "target_bias",
                     "carry_prob", "recursive_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfigError(f"{name}={v} is not a probability")

    def to_dict(self) -> dict:
        return _to_jsonable(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "camera" in d and isinstance(d["camera"], dict):
            d["camera"] = _camera_from_dict(d["camera"])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown scenario config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


PRESETS = {
    "desk": ScenarioConfig(),
    "lacater-like": ScenarioConfig(num_frames=300, min_objects=5, max_objects=10,
                                   max_cones=4, action_rate=0.03,
                                   min_duration=10, max_duration=30),
}


@dataclass(frozen=True)
class Scenario:
    objects: tuple[ObjectSpec, ...]
    initial_positions: tuple[Vec3, ...]
    events: tuple[ActionEvent, ...]
    num_frames: int
    camera: CameraParams
    seed: int
    floor_half_extent: float = 3.0
    lift_height: float = 1.5

    @property
    def target_id(self) -> int:
        return next(o.id for o in self.objects if o.shape is Shape.SNITCH)

    def spec(self, obj_id: int) -> ObjectSpec:
        return self.objects[self._index(obj_id)]

    def _index(self, obj_id: int) -> int:
        for i, o in enumerate(self.objects):
            if o.id == obj_id:
                return i
        raise KeyError(f"unknown object id {obj_id}")

    def to_dict(self) -> dict:
        return _to_jsonable(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            objects=tuple(ObjectSpec(id=o["id"], shape=Shape(o["shape"]),
                                     size=Size(o["size"]), radius=o["radius"],
                                     color=o["color"], material=o["material"])
                          for o in d["objects"]),
            initial_positions=tuple(Vec3(*p) for p in d["initial_positions"]),
            events=tuple(ActionEvent(kind=ActionKind(e["kind"]), actor=e["actor"],
                                     start_frame=e["start_frame"],
                                     end_frame=e["end_frame"],
                                     destination=Vec3(*e["destination"]),
                                     target=e["target"])
                         for e in d["events"]),
            num_frames=d["num_frames"],
            camera=_camera_from_dict(d["camera"]),
            seed=d["seed"],
            floor_half_extent=d["floor_half_extent"],
            lift_height=d["lift_height"],
        )

    @classmethod
    def from_json(cls, s: str) -> "Scenario":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class WorldState:
    frame: int
    objects: dict[int, ObjectState]
    camera: CameraParams

    def carrier_chain(self, obj_id: int) -> list[int]:
        """Containers of ``obj_id`` from innermost to outermost."""
        chain = []
        cur = self.objects[obj_id].contained_by
        while cur is not None:
            if cur in chain or cur == obj_id:
                raise RuntimeError(f"containment cycle through {cur}")
            chain.append(cur)
            cur = self.objects[cur].contained_by
        return chain


def _to_jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, tuple) and hasattr(obj, "_fields"):
        return [float(v) for v in obj]
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _camera_from_dict(d: dict) -> CameraParams:
    return CameraParams(position=Vec3(*d["position"]), look_at=Vec3(*d["look_at"]),
                        focal_length=d["focal_length"], image_width=d["image_width"],
                        image_height=d["image_height"])


# ---------------------------------------------------------------------------
# scenario generation
# ---------------------------------------------------------------------------

def build_scenario(seed: int, config: ScenarioConfig = ScenarioConfig()) -> Scenario:
    """Sample a scripted scenario.

    The same ``(seed, config)`` always yields an identical scenario.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    n_obj = int(rng.integers(config.min_objects, config.max_objects + 1))
    n_cones = int(rng.integers(config.min_cones, config.max_cones + 1))
    n_cones = min(n_cones, n_obj - 1)

    ids = [int(i) for i in rng.permutation(n_obj)]
    objects = []
    colors = list(rng.permutation(len(COLORS)))
    for k, obj_id in enumerate(ids):
        if k == 0:
            shape, size = Shape.SNITCH, Size.SMALL
        elif k <= n_cones:
            shape = Shape.CONE
            size = Size.LARGE if rng.random() < 0.5 else Size.MEDIUM
        else:
            shape = [Shape.CUBE, Shape.SPHERE, Shape.CYLINDER][int(rng.integers(3))]
            size = list(Size)[int(rng.integers(3))]
        objects.append(ObjectSpec(id=obj_id, shape=shape, size=size,
                                  radius=SIZE_RADIUS[size],
                                  color=COLORS[colors[k % len(colors)]],
                                  material=MATERIALS[int(rng.integers(2))]))
    objects.sort(key=lambda o: o.id)
    radius = {o.id: o.radius for o in objects}
    shapes = {o.id: o.shape for o in objects}

    ext = config.floor_half_extent
    xy: dict[int, np.ndarray] = {}
    for o in objects:
        xy[o.id] = _free_spot(rng, ext, o.radius, [(xy[j], radius[j]) for j in xy],
                             config.min_gap)
    initial = tuple(Vec3(float(xy[o.id][0]), float(xy[o.id][1]), o.radius) for o in objects)

    target = next(o.id for o in objects if o.shape is Shape.SNITCH)
    contained_by: dict[int, Optional[int]] = {o.id: None for o in objects}
    busy_until = {o.id: -1 for o in objects}
    events: list[ActionEvent] = []
    T = config.num_frames

    def contents(c):
        return [j for j, p in contained_by.items() if p == c]

    def descendants(c):
        out, stack = [], contents(c)
        while stack:
            j = stack.pop()
            out.append(j)
            stack.extend(contents(j))
        return out

    def root_of(j):
        while contained_by[j] is not None:
            j = contained_by[j]
        return j

    for t in range(T):
        order = [objects[i].id for i in rng.permutation(len(objects))]
        for a in order:
            if busy_until[a] >= t or contained_by[a] is not None:
                continue
            rate = config.hold_rate if contents(a) else config.action_rate
            if rng.random() >= rate:
                continue
            dur = int(rng.integers(config.min_duration, config.max_duration + 1))
            end = t + dur
            if end > T - 1:
                continue
            others = [(xy[j], radius[j]) for j in xy
                      if j != a and contained_by[j] is None]
            if shapes[a] is Shape.CONE and rng.random() < config.contain_prob:
                goal = _pick_contain_goal(rng, a, config, target, radius, shapes,
                                          contained_by, busy_until, t, root_of,
                                          descendants)
                if goal is not None:
                    events.append(ActionEvent(ActionKind.CONTAIN, a, t, end,
                                              Vec3(float(xy[goal][0]), float(xy[goal][1]),
                                                   radius[a]), target=goal))
                    for j in contents(a):
                        contained_by[j] = None
                    busy_until[a] = end
                    busy_until[goal] = max(busy_until[goal], end)
                    xy[a] = xy[goal].copy()
                    contained_by[goal] = a
                    continue
            holding = bool(contents(a))
            if holding:
                kind = ActionKind.SLIDE if rng.random() < config.carry_prob else ActionKind.PICK_PLACE
            else:
                kind = ActionKind.SLIDE if rng.random() < 0.5 else ActionKind.PICK_PLACE
            dest = _free_spot(rng, ext, radius[a], others, config.min_gap)
            events.append(ActionEvent(kind, a, t, end,
                                      Vec3(float(dest[0]), float(dest[1]), radius[a])))
            busy_until[a] = end
            if kind is ActionKind.SLIDE:
                shift = dest - xy[a]
                for j in descendants(a):
                    xy[j] = xy[j] + shift
            else:
                for j in contents(a):
                    contained_by[j] = None
            xy[a] = dest

    events.sort(key=lambda e: (e.start_frame, e.actor))
    return Scenario(objects=tuple(objects), initial_positions=initial,
                    events=tuple(events), num_frames=T, camera=config.camera,
                    seed=int(seed), floor_half_extent=ext,
                    lift_height=config.lift_height)


def _free_spot(rng, ext, r, occupied, min_gap, tries=50) -> np.ndarray:
    lo, hi = -ext + r, ext - r
    best, best_gap = None, -np.inf
    for _ in range(tries):
        p = rng.uniform(lo, hi, size=2)
        gap = min((np.linalg.norm(p - q) - (r + rq) for q, rq in occupied), default=np.inf)
        if gap >= min_gap:
            return p
        if gap > best_gap:
            best, best_gap = p, gap
    return best


def _pick_contain_goal(rng, cone, config, target, radius, shapes, contained_by,
                       busy_until, t, root_of, descendants):
    def eligible(j):
        return (j != cone and contained_by[j] is None and busy_until[j] < t
                and radius[j] < radius[cone] and cone not in descendants(j))

    root = root_of(target)
    if root != cone and rng.random() < config.target_bias:
        if root == target or rng.random() < config.recursive_prob:
            if eligible(root):
                return root
    pool = [j for j in radius if eligible(j)]
    if not pool:
        return None
    return pool[int(rng.integers(len(pool)))]


# ---------------------------------------------------------------------------
# world stepping
# ---------------------------------------------------------------------------

def _interpolate(event: ActionEvent, start: Vec3, t: int, lift: float) -> tuple[Vec3, bool]:
    s, e = event.start_frame, event.end_frame
    u = min(max((t - s) / (e - s), 0.0), 1.0)
    dx, dy = event.destination.x - start.x, event.destination.y - start.y
    if event.kind is ActionKind.SLIDE:
        return Vec3(start.x + u * dx, start.y + u * dy, start.z), False
    # up over the first quarter, across over the middle half, down over the last quarter
    rest_z = event.destination.z
    if u <= 0.25:
        w, z = 0.0, start.z + (rest_z + lift - start.z) * (u / 0.25)
    elif u <= 0.75:
        w, z = (u - 0.25) / 0.5, rest_z + lift
    else:
        w, z = 1.0, rest_z + lift * (1.0 - u) / 0.25
    airborne = 0.0 < u < 1.0
    return Vec3(start.x + w * dx, start.y + w * dy, z), airborne


def simulate(scenario: Scenario, upto: Optional[int] = None) -> list[WorldState]:
    """World states for frames ``0..upto`` (default: the whole video)."""
    T = scenario.num_frames
    last = T - 1 if upto is None else upto
    pos = {o.id: p for o, p in zip(scenario.objects, scenario.initial_positions)}
    parent: dict[int, Optional[int]] = {o.id: None for o in scenario.objects}
    offset: dict[int, tuple[float, float]] = {}
    starts: dict[int, Vec3] = {}
    by_start: dict[int, list[ActionEvent]] = {}
    for ev in scenario.events:
        by_start.setdefault(ev.start_frame, []).append(ev)
    active: list[ActionEvent] = []
    states = []
    for t in range(last + 1):
        for ev in by_start.get(t, ()):
            active.append(ev)
            starts[id(ev)] = pos[ev.actor]
        airborne = set()
        still_active = []
        completed = []
        for ev in active:
            if ev.kind is not ActionKind.SLIDE and t == ev.start_frame + 1:
                # lift-off releases direct contents where they stand
                for j, p in parent.items():
                    if p == ev.actor:
                        parent[j] = None
                        offset.pop(j, None)
            new, up = _interpolate(ev, starts[id(ev)], t, scenario.lift_height)
            pos[ev.actor] = new
            if up:
                airborne.add(ev.actor)
            if t >= ev.end_frame:
                completed.append(ev)
            else:
                still_active.append(ev)
        for ev in completed:
            if ev.kind is ActionKind.CONTAIN and ev.target is not None:
                parent[ev.target] = ev.actor
                tp, cp = pos[ev.target], pos[ev.actor]
                offset[ev.target] = (tp.x - cp.x, tp.y - cp.y)
        active = still_active
        for j in _topological(parent):
            c = parent[j]
            if c is None:
                continue
            cp, dx = pos[c], offset[j]
            pos[j] = Vec3(cp.x + dx[0], cp.y + dx[1], pos[j].z)
        states.append(WorldState(
            frame=t,
            objects={o.id: ObjectState(pos[o.id], parent[o.id], o.id in airborne)
                     for o in scenario.objects},
            camera=scenario.camera))
    return states


def _topological(parent: dict[int, Optional[int]]) -> list[int]:
    depth = {}
    for j in parent:
        d, cur, seen = 0, parent[j], {j}
        while cur is not None:
            if cur in seen:
                raise RuntimeError(f"containment cycle through {cur}")
            seen.add(cur)
            d += 1
            cur = parent[cur]
        depth[j] = d
    return sorted(parent, key=lambda j: (depth[j], j))


def step_world(scenario: Scenario, t: int) -> WorldState:
    """World state at frame ``t``."""
    if not 0 <= t < scenario.num_frames:
        raise IndexError(f"frame {t} outside [0, {scenario.num_frames})")
    return simulate(scenario, upto=t)[-1]


def active_events(scenario: Scenario, t: int) -> list[ActionEvent]:
    return [ev for ev in scenario.events if ev.active(t)]


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def project_points(camera: CameraParams, points: np.ndarray) -> np.ndarray:
    """Pinhole-project world points (N, 3) to normalized image coords (N, 2)."""
    right, up, forward = camera.basis()
    d = np.asarray(points, dtype=float) - np.asarray(camera.position, dtype=float)
    depth = d @ forward
    if np.any(depth <= 1e-9):
        raise ProjectionError("point at or behind the camera plane")
    u = camera.focal_length * (d @ right) / depth + 0.5 * camera.image_width
    v = 0.5 * camera.image_height - camera.focal_length * (d @ up) / depth
    return np.stack([u / camera.image_width, v / camera.image_height], axis=-1)


def cube_corners(center: Vec3, half: float) -> np.ndarray:
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
                     dtype=float)
    return np.asarray(center, dtype=float) + half * signs


def project_bbox(camera: CameraParams, spec: ObjectSpec, state: ObjectState) -> BBox:
    """Box around the projection of the object's world-aligned bounding cube."""
    uv = project_points(camera, cube_corners(state.position, spec.radius))
    lo = np.clip(uv.min(axis=0), 0.0, 1.0)
    hi = np.clip(uv.max(axis=0), 0.0, 1.0)
    return BBox(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def frame_boxes(scenario: Scenario, world: WorldState) -> dict[int, BBox]:
    return {o.id: project_bbox(scenario.camera, o, world.objects[o.id])
            for o in scenario.objects}


def image_to_floor(camera: CameraParams, u: float, v: float, plane_z: float = 0.0) -> tuple[float, float]:
    """Back-project a normalized image point onto the plane ``z = plane_z``."""
    right, up, forward = camera.basis()
    xc = (u * camera.image_width - 0.5 * camera.image_width) / camera.focal_length
    yc = (0.5 * camera.image_height - v * camera.image_height) / camera.focal_length
    ray = forward + xc * right + yc * up
    origin = np.asarray(camera.position, dtype=float)
    if abs(ray[2]) < 1e-12:
        raise ProjectionError("ray parallel to the floor")
    s = (plane_z - origin[2]) / ray[2]
    if s <= 0:
        raise ProjectionError("floor point behind the camera")
    hit = origin + s * ray
    return float(hit[0]), float(hit[1])
