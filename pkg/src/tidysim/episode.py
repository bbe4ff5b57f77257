"""Tidy-up episodes: preference model + behavior tree + planners + simulator.

The runner scans, picks the worst misplaced object it knows about, ticks the
tidy tree (one world tick per tree tick) until the tree finishes, rescans and
repeats. An episode ends when nothing known is misplaced (``AllPlaced``),
when the tree fails or an object is dropped (``UnrecoverableFailure``), or
when the tick budget runs out (``TickBudgetExhausted``).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from . import preference as pm
from .bt import (
    Action,
    Blackboard,
    Condition,
    Fallback,
    Inverter,
    Node,
    Sequence,
    Status,
    build_drawer_place_tree,
    build_tidy_tree,
)
from .errors import (
    ConfigError,
    GoalUntraversable,
    NoApproachExists,
    NoPathExists,
    NoTempLocation,
    TidySimError,
)
from .nav import NavStatus, PathFollower, carrot_plan, inflate, plan_point_goal
from .semantic_map import room_center
from .world import (
    Detection,
    DetectorConfig,
    Mode,
    WorldState,
    build_world,
    find_temp_location,
    load_scenario,
    open_receptacle,
    pickup,
    place,
    scan,
    step,
)

logger = logging.getLogger(__name__)

ALL_PLACED = "AllPlaced"
UNRECOVERABLE = "UnrecoverableFailure"
TICK_BUDGET = "TickBudgetExhausted"
EXIT_CODES = {ALL_PLACED: 0, UNRECOVERABLE: 2, TICK_BUDGET: 3}

DEFAULT_K = pm.TOP_K
DEFAULT_MAX_TICKS = 2000


@dataclass
class EpisodeConfig:
    scenario: Path
    corpus: Optional[Path] = None
    model: Optional[Path] = None
    user: Optional[str] = None
    k: Optional[int] = None
    max_ticks: Optional[int] = None
    seed: Optional[int] = None
    room_mode: Optional[str] = None


@dataclass
class EpisodeLog:
    header: dict
    events: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_jsonl(self) -> str:
        lines = [{"kind": "episode", **self.header}, *self.events, {"kind": "summary", **self.summary}]
        return "".join(json.dumps(line, sort_keys=True) + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text: str) -> "EpisodeLog":
        header, events, summary = {}, [], {}
        for raw in text.splitlines():
            if not raw.strip():
                continue
            rec = json.loads(raw)
            kind = rec.pop("kind", None)
            if kind == "episode":
                header = rec
            elif kind == "summary":
                summary = rec
            else:
                rec["kind"] = kind
                events.append(rec)
        return cls(header, events, summary)

    @property
    def terminal_reason(self) -> Optional[str]:
        return self.summary.get("terminal_reason")

    def trajectory(self) -> list[tuple[int, int]]:
        return [tuple(e["pose"][:2]) for e in self.events if e["kind"] == "move"]

    def actions(self, name: Optional[str] = None) -> list[dict]:
        return [e for e in self.events if e["kind"] == "action" and (name is None or e["behavior"] == name)]

    def leaf_order(self) -> list[str]:
        """Leaf behaviors in the order they completed (Running ticks dropped)."""
        return [e["behavior"] for e in self.events if e["kind"] == "leaf" and e["status"] != "Running"]

    def attempted_targets(self) -> list[tuple[str, str]]:
        return [tuple(e["bb"]["current_candidate"]) for e in self.events if "current_candidate" in e.get("bb", {})]


def summarize(events: list[dict], terminal_reason: Optional[str]) -> dict:
    actions = [e for e in events if e["kind"] == "action"]
    return {
        "objects_rearranged": sum(1 for e in events if e["kind"] == "activation_end" and e["status"] == "Success"),
        "successes": sum(1 for e in actions if e["status"] == "Succeeded"),
        "failures": sum(1 for e in actions if e["status"] == "Failed"),
        "total_path_cells": sum(1 for e in events if e["kind"] == "move"),
        "total_ticks": max((e["tick"] for e in events), default=0),
        "terminal_reason": terminal_reason,
    }


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


class Approach:
    """Leaf behavior: drive next to a goal cell, then run ``act``.

    Returns Running while the robot is moving. Planning failures and a blocked
    path are Failures, which hands recovery to the tree's retry layer.
    """

    def __init__(self, runner: "EpisodeRunner", name: str, goal: Callable, act=None, planner: str = "carrot"):
        self.runner = runner
        self.name = name
        self.goal = goal
        self.act = act
        self.planner = planner
        self.follower: Optional[PathFollower] = None

    def reset(self):
        self.follower = None

    def __call__(self, bb: Blackboard, env) -> Status:
        r = self.runner
        if self.follower is None:
            cell = self.goal(bb)
            if cell is None:
                return Status.FAILURE
            cm = r.costmap()
            try:
                if self.planner == "carrot":
                    path = carrot_plan(cm, r.world.robot.pose.cell, cell)
                else:
                    path = plan_point_goal(cm, r.world.robot.pose.cell, cell)
            except (NoApproachExists, NoPathExists, GoalUntraversable) as exc:
                r.note(self.name, f"plan failed: {exc}")
                return Status.FAILURE
            self.follower = PathFollower(r.world, path, r.costmap)
        nav = self.follower.tick()
        if nav is NavStatus.RUNNING:
            return Status.RUNNING
        self.follower = None
        if nav is NavStatus.BLOCKED:
            r.note(self.name, "path blocked")
            return Status.FAILURE
        return self.act(bb) if self.act else Status.SUCCESS


class EpisodeRunner:
    def __init__(self, config: EpisodeConfig):
        scenario = load_scenario(config.scenario)
        self.scenario = scenario
        self.user = config.user or scenario.user
        if not self.user:
            raise ConfigError("no user identity given (config or scenario)")
        self.k = config.k if config.k is not None else (scenario.top_k or DEFAULT_K)
        self.max_ticks = config.max_ticks if config.max_ticks is not None else (scenario.max_ticks or DEFAULT_MAX_TICKS)
        if self.k < 1 or self.max_ticks < 1:
            raise ConfigError("k and max_ticks must be >= 1")
        self.room_mode = config.room_mode or scenario.room_mode
        self.seed = config.seed if config.seed is not None else scenario.seed

        corpus_path = config.corpus or scenario.corpus_path
        model_path = config.model or scenario.model_path
        corpus = None
        if corpus_path is not None:
            try:
                corpus = pm.ingest_corpus(Path(corpus_path).read_text())
            except OSError as exc:
                raise ConfigError(f"cannot read corpus {corpus_path}: {exc}") from None
        if model_path is not None:
            try:
                self.model = pm.load_model(Path(model_path).read_bytes())
            except OSError as exc:
                raise ConfigError(f"cannot read model {model_path}: {exc}") from None
        elif corpus is not None:
            self.model = pm.train(corpus, pm.TrainConfig())
        else:
            raise ConfigError("episode needs a corpus or a model")
        if self.room_mode == "kb" and corpus is None:
            raise ConfigError("room_mode 'kb' needs a corpus to build the knowledge base")
        self.kb = pm.CommonSenseKB.from_corpus(corpus) if corpus is not None else None
        self.model.user_vector(self.user)

        self.world: WorldState = build_world(scenario, seed=self.seed)
        self.belief = self.world.map.without_receptacles()
        self._cm_cache = None
        self.bb = Blackboard({"observed": {}})
        self.events: list[dict] = []
        self.terminal: Optional[str] = None
        self.dropped = False
        self.header = {
            "scenario": str(scenario.path),
            "map": str(scenario.map_path),
            "user": self.user,
            "k": self.k,
            "room_mode": self.room_mode,
            "seed": self.seed,
            "max_ticks": self.max_ticks,
        }
        self.tree = self._build_tree()

    # --- plumbing ---------------------------------------------------------

    def costmap(self):
        if self._cm_cache is None or self._cm_cache[0] != self.belief.version:
            self._cm_cache = (self.belief.version, inflate(self.belief, self.world.robot.footprint))
        return self._cm_cache[1]

    def _pose(self):
        p = self.world.robot.pose
        return [p.x, p.y, p.heading]

    def emit(self, kind: str, behavior: str, status: str, **extra):
        if self.terminal is not None:
            return
        event = {"tick": self.world.tick, "kind": kind, "behavior": behavior, "status": status, "pose": self._pose()}
        event.update({k: _jsonable(v) for k, v in extra.items()})
        self.events.append(event)

    def note(self, behavior: str, detail: str):
        self.emit("note", behavior, "Info", detail=detail)

    def act(self, name: str, outcome, **target):
        self.emit("action", name, outcome.status.value, reason=outcome.reason, **target)
        if outcome.reason == "Dropped":
            self.dropped = True
        return outcome

    def observe(self, detections: list[Detection]):
        observed = self.bb.get("observed")
        for d in detections:
            if d.kind != "object":
                continue
            observed[d.object_id] = {
                "class": d.object_class,
                "room": d.room,
                "receptacle": d.support,
                "mode": d.mode,
                "position": list(d.position),
            }

    def do_scan(self, behavior: str, full_circle: bool = False):
        robot = self.world.robot
        fov = 360.0 if full_circle else robot.fov
        dets = scan(self.world, DetectorConfig(robot.sensor_range, fov, self.world.p_miss), belief=self.belief)
        self.observe(dets)
        self.emit(
            "scan",
            behavior,
            "Success",
            objects=sorted(d.object_id for d in dets if d.kind == "object"),
            receptacles=len([d for d in dets if d.kind == "receptacle"]),
        )
        return dets

    # --- misplacement -----------------------------------------------------

    def misplaced(self) -> list[tuple[float, str]]:
        """(current placement rank, object id) for every known misplaced object."""
        out = []
        for oid, info in sorted(self.bb.get("observed").items()):
            if info["mode"] in (Mode.HELD.value, Mode.FLOOR.value) or info["receptacle"] is None:
                continue
            if info["class"] not in self.model.objects:
                continue
            current = (info["room"], info["receptacle"])
            try:
                rank = pm.placement_rank(self.model, self.user, info["class"], current)
            except TidySimError:
                rank = float("inf")
            if rank >= self.k:
                out.append((rank, oid))
        return out

    # --- leaves -----------------------------------------------------------

    def identify_misplaced(self, bb, env):
        cands = self.misplaced()
        if not cands:
            return Status.FAILURE
        rank, oid = sorted(cands, key=lambda c: (-c[0], c[1]))[0]
        info = bb.get("observed")[oid]
        bb.set("target_object", {"id": oid, "class": info["class"], "room": info["room"], "receptacle": info["receptacle"]})
        return Status.SUCCESS

    def placement_candidates(self, bb, env):
        target = bb.get("target_object")
        cands = pm.placement_candidates(self.model, self.kb, self.user, target["class"], self.room_mode)
        bb.set("candidates", [list(c) for c in cands])
        return Status.SUCCESS if cands else Status.FAILURE

    def _object_goal(self, bb):
        return tuple(bb.get("observed")[bb.get("target_object")["id"]]["position"])

    def _do_pickup(self, bb):
        oid = bb.get("target_object")["id"]
        out = self.act("pickup", pickup(self.world, oid), object=oid)
        if not out.ok:
            return Status.FAILURE
        bb.get("observed")[oid].update(mode=Mode.HELD.value, room=None, receptacle=None, position=None)
        bb.set("held_object", oid)
        return Status.SUCCESS

    def _room_goal(self, bb):
        room, rec = bb.get("candidates")[bb.get("candidate_index")]
        bb.set("current_candidate", [room, rec])
        try:
            return room_center(self.belief, room).cell
        except TidySimError as exc:
            self.note("RoomNavigator", str(exc))
            return None

    def _receptacle_goal(self, bb):
        room, rec_class = bb.get("current_candidate")
        self.do_scan("ReceptacleNavigator", full_circle=True)
        records = [r for r in self.belief.receptacles if r.room == room and r.receptacle_class == rec_class]
        if not records:
            self.note("ReceptacleNavigator", f"no {rec_class} found in {room}")
            return None
        rx, ry = self.world.robot.pose.cell
        best = min(records, key=lambda r: ((r.position[0] - rx) ** 2 + (r.position[1] - ry) ** 2, r.id))
        truth = self.world.map.receptacle_at(*best.position)
        if truth is None:
            self.note("ReceptacleNavigator", f"registered {rec_class} at {best.position} not found")
            return None
        bb.set(
            "target_receptacle",
            {"id": truth.id, "class": truth.receptacle_class, "room": truth.room,
             "position": list(truth.position), "openable": truth.openable},
        )
        return truth.position

    def _target_pos(self, bb):
        return tuple(bb.get("target_receptacle")["position"])

    def _temp_pos(self, bb):
        return self.world.map.receptacle(bb.get("temp_receptacle")).position

    def _placed(self, bb, rid: int, mode: str):
        oid = bb.get("held_object")
        rec = self.world.map.receptacle(rid)
        bb.get("observed")[oid].update(
            mode=mode, room=rec.room, receptacle=rec.receptacle_class, position=list(rec.position)
        )
        bb.unset("held_object")

    def _place_on(self, bb):
        rid = bb.get("target_receptacle")["id"]
        out = self.act("place", place(self.world, rid, "on"), receptacle=rid, mode="on")
        if not out.ok:
            return Status.FAILURE
        self._placed(bb, rid, "on")
        return Status.SUCCESS

    def _see_drawer(self, bb):
        bb.set("drawer_open", self.world.is_open(bb.get("target_receptacle")["id"]))
        return Status.SUCCESS

    def find_temp(self, bb, env):
        try:
            rid = find_temp_location(self.world)
        except NoTempLocation as exc:
            self.note("FindTempLocation", str(exc))
            return Status.FAILURE
        bb.set("temp_receptacle", rid)
        return Status.SUCCESS

    def _set_down(self, bb):
        rid = bb.get("temp_receptacle")
        out = self.act("place", place(self.world, rid, "on"), receptacle=rid, mode="on", temporary=True)
        if not out.ok:
            return Status.FAILURE
        self._placed(bb, rid, "on")
        bb.set("held_object", None)
        return Status.SUCCESS

    def _open(self, bb):
        rid = bb.get("target_receptacle")["id"]
        out = self.act("open", open_receptacle(self.world, rid), receptacle=rid)
        if out.ok:
            bb.set("drawer_open", True)
        return Status.SUCCESS if out.ok else Status.FAILURE

    def _repick(self, bb):
        oid = bb.get("target_object")["id"]
        out = self.act("pickup", pickup(self.world, oid), object=oid)
        if not out.ok:
            return Status.FAILURE
        bb.get("observed")[oid].update(mode=Mode.HELD.value, room=None, receptacle=None, position=None)
        bb.set("held_object", oid)
        return Status.SUCCESS

    def _place_inside(self, bb):
        rid = bb.get("target_receptacle")["id"]
        out = self.act("place", place(self.world, rid, "inside"), receptacle=rid, mode="inside")
        if not out.ok:
            return Status.FAILURE
        self._placed(bb, rid, "inside")
        return Status.SUCCESS

    def _logged(self, name: str, fn):
        def leaf(bb, env):
            try:
                status = fn(bb, env)
            except TidySimError as exc:
                self.emit("leaf", name, "Failure", bb=bb.drain_delta(), detail=str(exc))
                if isinstance(exc, KeyError):
                    raise
                return Status.FAILURE
            self.emit("leaf", name, str(status), bb=bb.drain_delta())
            return status

        leaf.reset = getattr(fn, "reset", None)
        return leaf

    def _build_tree(self) -> Node:
        def approach(name, goal, act=None, planner="carrot"):
            return self._logged(name, Approach(self, name, goal, act, planner))

        drawer = build_drawer_place_tree(
            {
                "ApproachDrawer": approach("ApproachDrawer", self._target_pos, self._see_drawer),
                "FindTempLocation": self._logged("FindTempLocation", self.find_temp),
                "SetDownTemporary": approach("SetDownTemporary", self._temp_pos, self._set_down),
                "OpenDrawer": approach("OpenDrawer", self._target_pos, self._open),
                "RePickObject": approach("RePickObject", self._temp_pos, self._repick),
                "PlaceInside": approach("PlaceInside", self._target_pos, self._place_inside),
            }
        )

        def target_openable(bb, env):
            return bool(bb.get("target_receptacle")["openable"])

        place_behavior = Fallback(
            [
                Sequence([Inverter(Condition("TargetOpenable", target_openable)),
                          Action("PlaceOn", self._logged("PlaceOn", lambda bb, env: self._place_on(bb)))]),
                Sequence([Condition("TargetOpenable", target_openable), drawer]),
            ],
            name="PlaceBehavior",
        )
        return build_tidy_tree(
            {
                "IdentifyMisplaced": self._logged("IdentifyMisplaced", self.identify_misplaced),
                "PlacementCandidates": self._logged("PlacementCandidates", self.placement_candidates),
                "PickupBehavior": approach("PickupBehavior", self._object_goal, self._do_pickup),
                "RoomNavigator": approach("RoomNavigator", self._room_goal, planner="point"),
                "ReceptacleNavigator": approach("ReceptacleNavigator", self._receptacle_goal),
                "PlaceBehavior": place_behavior,
            }
        )

    # --- main loop --------------------------------------------------------

    def _finish(self, reason: str):
        if self.terminal is None:
            self.terminal = reason

    def run(self) -> EpisodeLog:
        self.do_scan("InitialScan")
        while self.terminal is None:
            if self.world.tick >= self.max_ticks:
                self._finish(TICK_BUDGET)
                break
            if not self.misplaced():
                self._finish(ALL_PLACED)
                break
            self.tree.reset()
            status = Status.RUNNING
            while status is Status.RUNNING:
                status = self.tree.tick(self.bb, {})
                step(self.world)
                if self.world.last_move is not None:
                    self.emit("move", "Robot", "Success")
                if self.dropped:
                    break
                if status is Status.RUNNING and self.world.tick >= self.max_ticks:
                    break
            if self.dropped:
                self.emit("activation_end", "Tidy", "Failure", detail="object dropped")
                self._finish(UNRECOVERABLE)
            elif status is Status.RUNNING:
                self._finish(TICK_BUDGET)
            elif status is Status.FAILURE:
                self.emit("activation_end", "Tidy", "Failure", bb=self.bb.drain_delta())
                self._finish(UNRECOVERABLE)
            else:
                self.emit("activation_end", "Tidy", "Success", bb=self.bb.drain_delta())
                self.do_scan("Rescan")
        log = EpisodeLog(dict(self.header), self.events)
        log.summary = summarize(self.events, self.terminal)
        log.summary["total_ticks"] = self.world.tick
        return log


def run_episode(config: EpisodeConfig) -> EpisodeLog:
    return EpisodeRunner(config).run()


def final_placements(runner: EpisodeRunner) -> dict[str, tuple]:
    """Ground-truth (room, receptacle class, mode) of every object."""
    out = {}
    for oid, obj in sorted(runner.world.objects.items()):
        rid = obj.location.receptacle_id
        if rid is None:
            out[oid] = (None, None, obj.location.mode.value)
        else:
            rec = runner.world.map.receptacle(rid)
            out[oid] = (rec.room, rec.receptacle_class, obj.location.mode.value)
    return out
