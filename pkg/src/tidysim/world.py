"""Discrete-time apartment simulation.

The world holds ground truth: where every object is, which openable
receptacles are open, and the robot. Manipulation is a set of guarded,
transactional primitives; a failed precondition returns a ``Failed``
outcome and leaves the state untouched. The one exception is an injected
drop, which leaves the object on the floor under the robot.
"""

from __future__ import annotations

import copy
import enum
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Any, Optional

import numpy as np
import yaml

from .errors import ConfigError, NoApproachExists, NoTempLocation, UnknownObject, UnknownReceptacle
from .nav import Costmap, carrot_plan, inflate
from .semantic_map import (
    HEADINGS,
    GridPose,
    ReceptacleObservation,
    SemanticMap,
    bearing_deg,
    heading_between,
    load_map,
    register_receptacle,
)

FLAT_CLASSES = frozenset({"table", "counter", "shelf"})
ACTION_KINDS = ("pickup", "place", "open", "drop")


class Mode(str, enum.Enum):
    ON = "on"
    INSIDE = "inside"
    HELD = "held"
    FLOOR = "floor"


@dataclass
class Containment:
    mode: Mode
    receptacle_id: Optional[int] = None


@dataclass
class ObjectInstance:
    id: str
    object_class: str
    location: Containment
    position: Optional[tuple[int, int]]


@dataclass
class RobotState:
    pose: GridPose
    held: Optional[str] = None
    reach: int = 1
    sensor_range: float = 8.0
    fov: float = 360.0
    footprint: int = 0
    motion: deque = field(default_factory=deque)


@dataclass
class FailureSpec:
    p: float = 0.0
    first: int = 0  # the first N attempts fail regardless of p


class Outcome(str, enum.Enum):
    SUCCEEDED = "Succeeded"
    FAILED = "Failed"


@dataclass(frozen=True)
class ActionOutcome:
    status: Outcome
    reason: Optional[str] = None

    def __post_init__(self):
        if self.status is Outcome.FAILED and not self.reason:
            raise ValueError("a failed outcome needs a reason")

    @property
    def ok(self) -> bool:
        return self.status is Outcome.SUCCEEDED

    def __str__(self):
        return self.status.value if self.ok else f"Failed({self.reason})"


SUCCEEDED = ActionOutcome(Outcome.SUCCEEDED)


def failed(reason: str) -> ActionOutcome:
    return ActionOutcome(Outcome.FAILED, reason)


@dataclass
class WorldState:
    map: SemanticMap
    objects: dict[str, ObjectInstance]
    robot: RobotState
    receptacle_open: dict[int, bool] = field(default_factory=dict)
    tick: int = 0
    rng_seed: int = 0
    failures: dict[str, FailureSpec] = field(default_factory=dict)
    p_miss: float = 0.0

    def __post_init__(self):
        self.rng = np.random.default_rng(self.rng_seed)
        self.attempts = {k: 0 for k in ACTION_KINDS}
        self.last_move: Optional[tuple[int, int]] = None
        self._costmap: Optional[tuple[int, Costmap]] = None
        for rec in self.map.receptacles:
            if rec.openable:
                self.receptacle_open.setdefault(rec.id, False)

    def receptacle(self, rid: int):
        try:
            return self.map.receptacle(rid)
        except KeyError:
            raise UnknownReceptacle(rid) from None

    def object(self, oid: str) -> ObjectInstance:
        try:
            return self.objects[oid]
        except KeyError:
            raise UnknownObject(oid) from None

    def costmap(self) -> Costmap:
        if self._costmap is None or self._costmap[0] != self.map.version:
            self._costmap = (self.map.version, inflate(self.map, self.robot.footprint))
        return self._costmap[1]

    def is_open(self, rid: int) -> bool:
        return self.receptacle_open.get(rid, False)

    def room_of_robot(self) -> Optional[str]:
        return self.map.room_at(*self.robot.pose.cell)

    def in_reach(self, cell) -> bool:
        x, y = self.robot.pose.cell
        return max(abs(cell[0] - x), abs(cell[1] - y)) <= self.robot.reach


def snapshot(world: WorldState) -> dict[str, Any]:
    """Plain-data copy of everything an action may change."""
    return {
        "tick": world.tick,
        "robot": (world.robot.pose, world.robot.held, tuple(world.robot.motion)),
        "objects": {
            oid: (o.object_class, o.location.mode.value, o.location.receptacle_id, o.position)
            for oid, o in sorted(world.objects.items())
        },
        "open": dict(sorted(world.receptacle_open.items())),
    }


def _injected(world: WorldState, kind: str) -> bool:
    spec = world.failures.get(kind)
    if spec is None:
        return False
    world.attempts[kind] += 1
    if world.attempts[kind] <= spec.first:
        return True
    return spec.p > 0 and bool(world.rng.random() < spec.p)


# --- perception -----------------------------------------------------------

@dataclass(frozen=True)
class DetectorConfig:
    range: float = 8.0
    fov: float = 360.0
    p_miss: float = 0.0


@dataclass(frozen=True)
class Detection:
    kind: str  # "object" or "receptacle"
    object_class: str
    position: tuple[int, int]
    room: Optional[str]
    object_id: Optional[str] = None
    support: Optional[str] = None  # receptacle class an object rests on/in
    mode: Optional[str] = None


def _visible(world: WorldState, cell, cfg: DetectorConfig) -> bool:
    px, py = world.robot.pose.cell
    dx, dy = cell[0] - px, cell[1] - py
    if dx * dx + dy * dy > cfg.range * cfg.range:
        return False
    if cfg.fov >= 360.0 or (dx == 0 and dy == 0):
        return True
    hx, hy = HEADINGS[world.robot.pose.heading]
    diff = abs((bearing_deg(dx, dy) - bearing_deg(hx, hy) + 180.0) % 360.0 - 180.0)
    return diff <= cfg.fov / 2.0


def scan(
    world: WorldState,
    detector: Optional[DetectorConfig] = None,
    belief: Optional[SemanticMap] = None,
) -> list[Detection]:
    """Ground-truth detector limited by range and field of view.

    Objects inside a closed receptacle and held objects are not seen. With
    ``p_miss > 0`` each candidate detection is dropped by a seeded draw.
    Receptacle detections are registered into ``belief`` when given.
    """
    cfg = detector or DetectorConfig(world.robot.sensor_range, world.robot.fov, world.p_miss)
    found = []
    for rec in sorted(world.map.receptacles, key=lambda r: r.id):
        if _visible(world, rec.position, cfg):
            found.append(Detection("receptacle", rec.receptacle_class, rec.position, rec.room))
    for oid in sorted(world.objects):
        obj = world.objects[oid]
        if obj.position is None or obj.location.mode is Mode.HELD:
            continue
        rid = obj.location.receptacle_id
        if obj.location.mode is Mode.INSIDE and not world.is_open(rid):
            continue
        if not _visible(world, obj.position, cfg):
            continue
        support = world.map.receptacle(rid).receptacle_class if rid is not None else None
        found.append(
            Detection(
                "object",
                obj.object_class,
                obj.position,
                world.map.room_at(*obj.position),
                object_id=oid,
                support=support,
                mode=obj.location.mode.value,
            )
        )
    if cfg.p_miss > 0:
        keep = world.rng.random(len(found)) >= cfg.p_miss
        found = [d for d, k in zip(found, keep) if k]
    if belief is not None:
        for d in found:
            if d.kind == "receptacle":
                register_receptacle(belief, ReceptacleObservation(d.object_class, d.position, world.tick))
    return found


# --- manipulation ---------------------------------------------------------

def pickup(world: WorldState, object_id: str) -> ActionOutcome:
    obj = world.object(object_id)
    if world.robot.held is not None:
        return failed("HandOccupied")
    if obj.position is None or not world.in_reach(obj.position):
        return failed("OutOfReach")
    if obj.location.mode is Mode.INSIDE and not world.is_open(obj.location.receptacle_id):
        return failed("ContainerClosed")
    if _injected(world, "pickup"):
        return failed("Injected")
    obj.location = Containment(Mode.HELD)
    obj.position = None
    world.robot.held = object_id
    return SUCCEEDED


def place(world: WorldState, receptacle_id: int, mode: str = "on") -> ActionOutcome:
    rec = world.receptacle(receptacle_id)
    mode = Mode(mode)
    if mode not in (Mode.ON, Mode.INSIDE):
        raise ValueError("place mode must be 'on' or 'inside'")
    held = world.robot.held
    if held is None:
        return failed("NothingHeld")
    if not world.in_reach(rec.position):
        return failed("OutOfReach")
    if mode is Mode.INSIDE:
        if not rec.openable:
            return failed("NotOpenable")
        if not world.is_open(rec.id):
            return failed("ContainerClosed")
    if _injected(world, "place"):
        return failed("Injected")
    obj = world.objects[held]
    if _injected(world, "drop"):
        obj.location = Containment(Mode.FLOOR)
        obj.position = world.robot.pose.cell
        world.robot.held = None
        return failed("Dropped")
    obj.location = Containment(mode, rec.id)
    obj.position = rec.position
    world.robot.held = None
    return SUCCEEDED


def open_receptacle(world: WorldState, receptacle_id: int) -> ActionOutcome:
    rec = world.receptacle(receptacle_id)
    if not rec.openable:
        return failed("NotOpenable")
    if not world.in_reach(rec.position):
        return failed("OutOfReach")
    if world.robot.held is not None:
        return failed("HandOccupied")
    if _injected(world, "open"):
        return failed("Injected")
    world.receptacle_open[rec.id] = True
    return SUCCEEDED


def find_temp_location(world: WorldState) -> int:
    """Nearest flat, non-openable receptacle in the robot's room that the
    carrot planner can bring within reach; ties go to the lower id."""
    if world.robot.held is None:
        raise NoTempLocation("robot is not holding anything")
    room = world.room_of_robot()
    px, py = world.robot.pose.cell
    options = []
    for rec in world.map.receptacles:
        if rec.room != room or rec.openable or rec.receptacle_class not in FLAT_CLASSES:
            continue
        try:
            path = carrot_plan(world.costmap(), (px, py), rec.position)
        except NoApproachExists:
            continue
        end = path.end or (px, py)
        if max(abs(end[0] - rec.position[0]), abs(end[1] - rec.position[1])) > world.robot.reach:
            continue
        options.append((math.hypot(rec.position[0] - px, rec.position[1] - py), rec.id))
    if not options:
        raise NoTempLocation(f"no temporary surface reachable in {room!r}")
    return min(options)[1]


def step(world: WorldState) -> WorldState:
    """Advance the clock one tick and apply at most one queued robot move."""
    world.tick += 1
    world.last_move = None
    if world.robot.motion:
        nxt = world.robot.motion.popleft()
        cur = world.robot.pose
        heading = heading_between(cur.cell, nxt) or cur.heading
        world.robot.pose = GridPose(nxt[0], nxt[1], heading)
        world.last_move = nxt
    return world


# --- scenario files -------------------------------------------------------

@dataclass
class Scenario:
    path: FsPath
    map_path: FsPath
    corpus_path: Optional[FsPath]
    model_path: Optional[FsPath]
    user: Optional[str]
    top_k: Optional[int]
    room_mode: str
    seed: int
    max_ticks: Optional[int]
    robot: dict
    p_miss: float
    failures: dict[str, FailureSpec]
    receptacle_states: list[tuple[str, str]]
    objects: list[dict]


ROBOT_DEFAULTS = {"x": 0, "y": 0, "heading": "E", "reach": 1, "sensor_range": 8.0, "fov": 360.0, "footprint": 0}
SCENARIO_KEYS = {
    "map", "corpus", "model", "user", "top_k", "room_mode", "seed", "max_ticks",
    "robot", "detector", "failures", "receptacles", "objects",
}


def load_scenario(path) -> Scenario:
    """Read a YAML scenario; relative file references resolve against it."""
    path = FsPath(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"bad scenario YAML in {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("scenario must be a mapping")
    unknown = set(raw) - SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
    if "map" not in raw:
        raise ConfigError("scenario needs a map")

    def rel(key):
        return (path.parent / raw[key]).resolve() if raw.get(key) else None

    robot = {**ROBOT_DEFAULTS, **(raw.get("robot") or {})}
    failures = {}
    for kind, spec in (raw.get("failures") or {}).items():
        if kind not in ACTION_KINDS:
            raise ConfigError(f"unknown failure channel {kind!r}")
        failures[kind] = FailureSpec(p=float(spec.get("p", 0.0)), first=int(spec.get("first", 0)))
    room_mode = raw.get("room_mode", "kb")
    if room_mode not in ("kb", "user"):
        raise ConfigError("room_mode must be kb or user")
    return Scenario(
        path=path.resolve(),
        map_path=rel("map"),
        corpus_path=rel("corpus"),
        model_path=rel("model"),
        user=raw.get("user"),
        top_k=raw.get("top_k"),
        room_mode=room_mode,
        seed=int(raw.get("seed", 0)),
        max_ticks=raw.get("max_ticks"),
        robot=robot,
        p_miss=float((raw.get("detector") or {}).get("p_miss", 0.0)),
        failures=failures,
        receptacle_states=[(r["ref"], r["state"]) for r in raw.get("receptacles") or []],
        objects=list(raw.get("objects") or []),
    )


def resolve_receptacle(smap: SemanticMap, ref: str) -> int:
    """``room/class`` or ``room/class#n`` (n-th such receptacle, id order)."""
    try:
        room, rest = ref.split("/", 1)
        cls, _, nth = rest.partition("#")
        n = int(nth) if nth else 0
    except ValueError:
        raise ConfigError(f"bad receptacle reference {ref!r}") from None
    matches = sorted(
        (r for r in smap.receptacles if r.room == room and r.receptacle_class == cls), key=lambda r: r.id
    )
    if n >= len(matches):
        raise ConfigError(f"no receptacle matches {ref!r}")
    return matches[n].id


def build_world(scenario: Scenario, seed: Optional[int] = None) -> WorldState:
    try:
        smap = load_map(scenario.map_path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read map {scenario.map_path}: {exc}") from None
    r = scenario.robot
    if not smap.is_free(int(r["x"]), int(r["y"])):
        raise ConfigError("robot must start on a free cell")
    robot = RobotState(
        pose=GridPose(int(r["x"]), int(r["y"]), r["heading"]),
        reach=int(r["reach"]),
        sensor_range=float(r["sensor_range"]),
        fov=float(r["fov"]),
        footprint=int(r["footprint"]),
    )
    if robot.reach < 1:
        raise ConfigError("robot reach must be >= 1")
    world = WorldState(
        map=smap,
        objects={},
        robot=robot,
        rng_seed=scenario.seed if seed is None else seed,
        failures=copy.deepcopy(scenario.failures),
        p_miss=scenario.p_miss,
    )
    for ref, state in scenario.receptacle_states:
        rid = resolve_receptacle(smap, ref)
        if not smap.receptacle(rid).openable:
            raise ConfigError(f"{ref} is not openable")
        if state not in ("open", "closed"):
            raise ConfigError(f"receptacle state must be open or closed, got {state!r}")
        world.receptacle_open[rid] = state == "open"
    counts: dict[str, int] = {}
    for spec in scenario.objects:
        cls = spec["class"]
        oid = spec.get("id") or f"{cls}_{counts.get(cls, 0)}"
        counts[cls] = counts.get(cls, 0) + 1
        if oid in world.objects:
            raise ConfigError(f"duplicate object id {oid!r}")
        rid = resolve_receptacle(smap, spec["at"])
        raw_mode = spec.get("mode", "on")
        # YAML 1.1 reads a bare ``on`` as true
        try:
            mode = Mode("on" if raw_mode is True else raw_mode)
        except ValueError:
            raise ConfigError(f"bad object mode {raw_mode!r}") from None
        if mode not in (Mode.ON, Mode.INSIDE):
            raise ConfigError("object mode must be on or inside")
        rec = smap.receptacle(rid)
        if mode is Mode.INSIDE and not rec.openable:
            raise ConfigError(f"{spec['at']} cannot contain objects")
        world.objects[oid] = ObjectInstance(oid, cls, Containment(mode, rid), rec.position)
    return world
