"""Reactive behavior trees with memory, a retry decorator and a blackboard.

Leaves call plain Python callables. An :class:`Action` gets ``(bb, env)`` and
returns a :class:`Status` (or ``True``/``False``); a :class:`Condition` gets
the same arguments and returns a bool. Leaves without a bound callable are
resolved by name from ``env`` at tick time.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping, Optional, Union

from .errors import BlackboardKeyMissing, MalformedTree, MissingBinding, UnboundLeaf

logger = logging.getLogger(__name__)


class Status(enum.Enum):
    SUCCESS = "Success"
    FAILURE = "Failure"
    RUNNING = "Running"

    def __str__(self):
        return self.value


_MISSING = object()


class Blackboard:
    """Keyed store shared by behaviors. Reading an absent key raises."""

    def __init__(self, initial: Optional[Mapping[str, Any]] = None):
        self._data: dict[str, Any] = {}
        self._delta: dict[str, Any] = {}
        for k, v in (initial or {}).items():
            self.set(k, v)

    def get(self, key: str, default=_MISSING):
        if key in self._data:
            return self._data[key]
        if default is not _MISSING:
            return default
        raise BlackboardKeyMissing(key)

    def set(self, key: str, value: Any) -> "Blackboard":
        self._data[key] = value
        self._delta[key] = value
        return self

    def unset(self, key: str) -> None:
        self._data.pop(key, None)
        self._delta[key] = None

    def __contains__(self, key):
        return key in self._data

    def __getitem__(self, key):
        return self.get(key)

    def __setitem__(self, key, value):
        self.set(key, value)

    def drain_delta(self) -> dict[str, Any]:
        """Keys written since the last drain (in write order)."""
        out, self._delta = self._delta, {}
        return out

    def snapshot(self) -> dict[str, Any]:
        return dict(self._data)


def blackboard_get(bb: Blackboard, key: str):
    return bb.get(key)


def blackboard_set(bb: Blackboard, key: str, value: Any) -> Blackboard:
    return bb.set(key, value)


@dataclass(frozen=True)
class TraceEvent:
    node: str
    kind: str
    status: Status
    diagnostic: str = ""


class Node:
    kind = "Node"

    def __init__(self, name: Optional[str] = None, children: Iterable["Node"] = ()):
        self.name = name or self.kind
        self.children = list(children)

    def tick(self, bb: Blackboard, env, trace: Optional[list] = None) -> Status:
        raise NotImplementedError

    def reset(self) -> None:
        for child in self.children:
            child.reset()

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Sequence(Node):
    """Ticks children in order; resumes at a Running child on the next tick."""

    kind = "Sequence"

    def __init__(self, children: Iterable[Node], name: Optional[str] = None):
        super().__init__(name, children)
        if not self.children:
            raise MalformedTree(f"{self.name}: control node needs at least one child")
        self._index = 0

    def tick(self, bb, env, trace=None):
        while self._index < len(self.children):
            status = self.children[self._index].tick(bb, env, trace)
            if status is Status.RUNNING:
                return status
            if status is Status.FAILURE:
                self._index = 0
                return status
            self._index += 1
        self._index = 0
        return Status.SUCCESS

    def reset(self):
        self._index = 0
        super().reset()


class Fallback(Node):
    """Dual of :class:`Sequence`: first Success wins, Failure if all fail."""

    kind = "Fallback"

    def __init__(self, children: Iterable[Node], name: Optional[str] = None):
        super().__init__(name, children)
        if not self.children:
            raise MalformedTree(f"{self.name}: control node needs at least one child")
        self._index = 0

    def tick(self, bb, env, trace=None):
        while self._index < len(self.children):
            status = self.children[self._index].tick(bb, env, trace)
            if status is Status.RUNNING:
                return status
            if status is Status.SUCCESS:
                self._index = 0
                return status
            self._index += 1
        self._index = 0
        return Status.FAILURE

    def reset(self):
        self._index = 0
        super().reset()


class Decorator(Node):
    def __init__(self, child: Node, name: Optional[str] = None):
        if not isinstance(child, Node):
            raise MalformedTree(f"{type(self).__name__} needs exactly one child node")
        super().__init__(name, [child])

    @property
    def child(self) -> Node:
        return self.children[0]


class Inverter(Decorator):
    kind = "Inverter"

    def tick(self, bb, env, trace=None):
        status = self.child.tick(bb, env, trace)
        if status is Status.SUCCESS:
            return Status.FAILURE
        if status is Status.FAILURE:
            return Status.SUCCESS
        return status


class Retry(Decorator):
    """Re-ticks its child after a Failure, at most ``attempts`` times in total
    per activation. Re-attempts happen within the same tick."""

    kind = "Retry"

    def __init__(self, child: Node, attempts: int, name: Optional[str] = None):
        super().__init__(child, name)
        if attempts < 1:
            raise MalformedTree("retry budget must be >= 1")
        self.attempts = attempts
        self._used = 0

    def budget(self, bb: Blackboard) -> int:
        return self.attempts

    def on_start(self, bb: Blackboard) -> None:
        pass

    def on_retry(self, bb: Blackboard, attempt: int) -> None:
        pass

    def tick(self, bb, env, trace=None):
        if self._used == 0:
            self.on_start(bb)
            if self.budget(bb) < 1:
                return Status.FAILURE
            self._used = 1
        while True:
            status = self.child.tick(bb, env, trace)
            if status is Status.RUNNING:
                return status
            if status is Status.SUCCESS or self._used >= self.budget(bb):
                self._used = 0
                return status
            self.child.reset()
            self.on_retry(bb, self._used)
            self._used += 1

    def reset(self):
        self._used = 0
        super().reset()


class RetryOverCandidates(Retry):
    """Retry whose budget is the length of a blackboard list; a cursor key is
    zeroed on activation and advanced before every re-attempt."""

    kind = "RetryOverCandidates"

    def __init__(
        self,
        child: Node,
        candidates_key: str = "candidates",
        cursor_key: str = "candidate_index",
        name: Optional[str] = None,
    ):
        super().__init__(child, attempts=1, name=name)
        self.candidates_key = candidates_key
        self.cursor_key = cursor_key

    def budget(self, bb):
        return len(bb.get(self.candidates_key))

    def on_start(self, bb):
        bb.set(self.cursor_key, 0)

    def on_retry(self, bb, attempt):
        bb.set(self.cursor_key, attempt)


LeafFn = Callable[[Blackboard, Any], Any]


class _Leaf(Node):
    def __init__(self, name: str, fn: Optional[LeafFn] = None):
        super().__init__(name)
        self.fn = fn

    def _resolve(self, env) -> LeafFn:
        if self.fn is not None:
            return self.fn
        try:
            return env[self.name]
        except (KeyError, TypeError):
            raise UnboundLeaf(f"no behavior bound for leaf {self.name!r}") from None

    def _invoke(self, bb, env) -> tuple[Status, str]:
        fn = self._resolve(env)
        try:
            result = fn(bb, env)
        except BlackboardKeyMissing as exc:
            logger.debug("%s failed: %s", self.name, exc)
            return Status.FAILURE, str(exc)
        return self._coerce(result), ""

    def _coerce(self, result) -> Status:
        raise NotImplementedError

    def tick(self, bb, env, trace=None):
        status, diag = self._invoke(bb, env)
        if trace is not None:
            trace.append(TraceEvent(self.name, self.kind, status, diag))
        return status

    def reset(self):
        reset = getattr(self.fn, "reset", None)
        if callable(reset):
            reset()


class Action(_Leaf):
    kind = "Action"

    def _coerce(self, result):
        if isinstance(result, Status):
            return result
        if isinstance(result, bool):
            return Status.SUCCESS if result else Status.FAILURE
        raise TypeError(f"action {self.name!r} returned {result!r}")


class Condition(_Leaf):
    """Leaf answering a yes/no question; must not write the blackboard."""

    kind = "Condition"

    def _coerce(self, result):
        if isinstance(result, Status):
            if result is Status.RUNNING:
                raise TypeError(f"condition {self.name!r} returned Running")
            return result
        return Status.SUCCESS if result else Status.FAILURE


def tick(node: Node, bb: Blackboard, env=None, trace: Optional[list] = None) -> Status:
    return node.tick(bb, env if env is not None else {}, trace)


def leaf_names(node: Node) -> list[str]:
    return [n.name for n in node.walk() if isinstance(n, _Leaf)]


# --- canonical trees ------------------------------------------------------

Binding = Union[LeafFn, Node]

TIDY_LEAVES = (
    "IdentifyMisplaced",
    "PlacementCandidates",
    "PickupBehavior",
    "RoomNavigator",
    "ReceptacleNavigator",
    "PlaceBehavior",
)
DRAWER_LEAVES = (
    "ApproachDrawer",
    "FindTempLocation",
    "SetDownTemporary",
    "OpenDrawer",
    "RePickObject",
    "PlaceInside",
)
DRAWER_OPEN_KEY = "drawer_open"


def _bind(bindings: Mapping[str, Binding], name: str) -> Node:
    if name not in bindings:
        raise MissingBinding(f"binding {name!r} not provided")
    b = bindings[name]
    if isinstance(b, Node):
        return b
    if not callable(b):
        raise MissingBinding(f"binding {name!r} is neither callable nor a node")
    return Action(name, b)


def build_tidy_tree(bindings: Mapping[str, Binding]) -> Node:
    """Identify, pick, then try placement candidates until one works.

    A binding may be a callable (wrapped in an :class:`Action`) or a ready-made
    subtree, which is how the drawer routine plugs in as ``PlaceBehavior``.
    """
    missing = [n for n in TIDY_LEAVES if n not in bindings]
    if missing:
        raise MissingBinding(f"tidy tree bindings missing: {', '.join(missing)}")
    deliver = Sequence(
        [_bind(bindings, "RoomNavigator"), _bind(bindings, "ReceptacleNavigator"), _bind(bindings, "PlaceBehavior")],
        name="Deliver",
    )
    return Sequence(
        [
            _bind(bindings, "IdentifyMisplaced"),
            _bind(bindings, "PlacementCandidates"),
            _bind(bindings, "PickupBehavior"),
            RetryOverCandidates(deliver, name="TryCandidates"),
        ],
        name="Tidy",
    )


def _drawer_is_open(bb, env):
    return bool(bb.get(DRAWER_OPEN_KEY))


def build_drawer_place_tree(bindings: Mapping[str, Binding]) -> Node:
    """Approach, (set down, open, re-pick if the drawer is shut), place inside."""
    missing = [n for n in DRAWER_LEAVES if n not in bindings]
    if missing:
        raise MissingBinding(f"drawer tree bindings missing: {', '.join(missing)}")
    make_room = Sequence(
        [_bind(bindings, n) for n in ("FindTempLocation", "SetDownTemporary", "OpenDrawer", "RePickObject")],
        name="OpenWithFreeHand",
    )
    return Sequence(
        [
            _bind(bindings, "ApproachDrawer"),
            Fallback([Condition("DrawerOpen", _drawer_is_open), make_room], name="EnsureOpen"),
            _bind(bindings, "PlaceInside"),
        ],
        name="DrawerPlace",
    )


# --- text tree descriptions -----------------------------------------------
#
# One node per line, children indented deeper than their parent:
#
#   Sequence
#     Action IdentifyMisplaced
#     Retry 3
#       Fallback
#         Condition IsOpen
#         Action Open
#     Inverter
#       Condition Busy
#     RetryOverCandidates candidates candidate_index

def parse_tree(text: str) -> Node:
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip() or raw.lstrip().startswith(";"):
            continue
        indent = len(raw) - len(raw.lstrip(" "))
        entries.append((indent, raw.split(), lineno))
    if not entries:
        raise MalformedTree("empty tree description")

    pos = 0

    def build(level_indent):
        nonlocal pos
        indent, toks, lineno = entries[pos]
        pos += 1
        children = []
        while pos < len(entries) and entries[pos][0] > indent:
            children.append(build(entries[pos][0]))
        kind, args = toks[0], toks[1:]
        try:
            if kind in ("Action", "Condition"):
                if len(args) != 1 or children:
                    raise MalformedTree(f"line {lineno}: {kind} takes a name and no children")
                return (Action if kind == "Action" else Condition)(args[0])
            if kind in ("Sequence", "Fallback"):
                return (Sequence if kind == "Sequence" else Fallback)(children, name=args[0] if args else None)
            if kind in ("Retry", "Inverter", "RetryOverCandidates"):
                if len(children) != 1:
                    raise MalformedTree(f"line {lineno}: {kind} needs exactly one child")
                if kind == "Retry":
                    if len(args) != 1:
                        raise MalformedTree(f"line {lineno}: Retry takes an attempt count")
                    return Retry(children[0], int(args[0]))
                if kind == "Inverter":
                    return Inverter(children[0])
                return RetryOverCandidates(children[0], *args[:2])
        except ValueError as exc:
            if isinstance(exc, MalformedTree):
                raise
            raise MalformedTree(f"line {lineno}: {exc}") from None
        raise MalformedTree(f"line {lineno}: unknown node kind {kind!r}")

    root = build(entries[0][0])
    if pos != len(entries):
        raise MalformedTree(f"line {entries[pos][2]}: more than one root node")
    return root
