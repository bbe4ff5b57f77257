"""Occupancy grid with room labels and a registry of discovered receptacles.

Coordinates are ``(x, y)`` with ``x`` the column and ``y`` the row; row 0 is
the first grid line of the map file. Arrays are indexed ``[y, x]``.

Map file format (UTF-8 text, ``;`` starts a comment line)::

    width 5
    height 3
    resolution 0.05
    grid
    #####
    #...#
    #####
    rooms office                 ; optional room table
    openable drawer              ; optional, defaults to "drawer"
    room office 0 0 4 2          ; inclusive rectangle, later lines win
    receptacle table 2 0         ; optional trailing "openable"
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    InconsistentDimensions,
    OutOfBounds,
    ParseError,
    RoomHasNoFreeCell,
    UnknownRoom,
    UnknownRoomLabel,
)

FREE, OCCUPIED, UNKNOWN = 0, 1, 2
GLYPHS = {".": FREE, "#": OCCUPIED, "?": UNKNOWN}
CELL_GLYPH = {v: k for k, v in GLYPHS.items()}
PATH_GLYPH = "*"

RECEPTACLE_CLASSES = ("table", "counter", "shelf", "drawer", "sink", "sofa")
DEFAULT_OPENABLE = frozenset({"drawer"})
MERGE_RADIUS = 1

# heading -> unit step (dx, dy); "N" is toward row 0
HEADINGS = {
    "E": (1, 0),
    "NE": (1, -1),
    "N": (0, -1),
    "NW": (-1, -1),
    "W": (-1, 0),
    "SW": (-1, 1),
    "S": (0, 1),
    "SE": (1, 1),
}
STEP_HEADING = {v: k for k, v in HEADINGS.items()}


@dataclass(frozen=True)
class GridPose:
    x: int
    y: int
    heading: str = "E"

    def __post_init__(self):
        if self.heading not in HEADINGS:
            raise ValueError(f"bad heading {self.heading!r}")

    @property
    def cell(self) -> tuple[int, int]:
        return (self.x, self.y)


@dataclass
class ReceptacleRecord:
    id: int
    receptacle_class: str
    room: Optional[str]
    position: tuple[int, int]
    openable: bool = False
    last_observed_tick: int = 0


@dataclass(frozen=True)
class ReceptacleObservation:
    """A receptacle detection handed to :func:`register_receptacle`."""

    receptacle_class: str
    position: tuple[int, int]
    tick: int = 0


@dataclass
class SemanticMap:
    width: int
    height: int
    resolution: float
    cells: np.ndarray
    room_labels: np.ndarray  # -1 where unlabeled, else index into ``rooms``
    rooms: list[str]
    room_rects: list[tuple[str, int, int, int, int]] = field(default_factory=list)
    receptacles: list[ReceptacleRecord] = field(default_factory=list)
    openable_classes: frozenset = DEFAULT_OPENABLE
    version: int = 0

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def cell(self, x: int, y: int) -> int:
        return int(self.cells[y, x])

    def is_free(self, x: int, y: int) -> bool:
        return self.in_bounds(x, y) and self.cells[y, x] == FREE

    def room_at(self, x: int, y: int) -> Optional[str]:
        if not self.in_bounds(x, y):
            return None
        idx = int(self.room_labels[y, x])
        return None if idx < 0 else self.rooms[idx]

    def room_cells(self, room: str) -> np.ndarray:
        """(n, 2) array of ``(x, y)`` cells carrying the room label."""
        if room not in self.rooms:
            raise UnknownRoom(room)
        ys, xs = np.nonzero(self.room_labels == self.rooms.index(room))
        return np.column_stack([xs, ys])

    def receptacle(self, rid: int) -> ReceptacleRecord:
        for rec in self.receptacles:
            if rec.id == rid:
                return rec
        raise KeyError(rid)

    def receptacle_at(self, x: int, y: int) -> Optional[ReceptacleRecord]:
        for rec in self.receptacles:
            if rec.position == (x, y):
                return rec
        return None

    def without_receptacles(self) -> "SemanticMap":
        """Copy with an empty registry; the robot's belief starts like this."""
        clone = copy.deepcopy(self)
        clone.receptacles = []
        clone.version = 0
        return clone

    def next_receptacle_id(self) -> int:
        return max((r.id for r in self.receptacles), default=-1) + 1


def _parse_int(tok: str, lineno: int, col: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"expected integer, got {tok!r}", lineno, col) from None


def _columns(line: str) -> list[tuple[str, int]]:
    out, col = [], 0
    for tok in line.split():
        col = line.index(tok, col)
        out.append((tok, col + 1))
        col += len(tok)
    return out


def load_map(text: str) -> SemanticMap:
    """Parse map-file text. Nothing is returned unless the whole file is valid."""
    header: dict[str, tuple[str, int]] = {}
    rows: list[str] = []
    room_table: Optional[list[str]] = None
    openable: Optional[frozenset] = None
    rects: list[tuple[str, int, int, int, int, int]] = []
    recs: list[tuple[str, int, int, bool, int]] = []

    lines = text.splitlines()
    i = 0
    while i < len(lines):
        raw = lines[i]
        lineno = i + 1
        i += 1
        stripped = raw.strip()
        if not stripped or stripped.startswith(";"):
            continue
        toks = _columns(stripped.split(";", 1)[0])
        key = toks[0][0]
        args = toks[1:]
        if key in ("width", "height", "resolution"):
            if len(args) != 1:
                raise ParseError(f"{key} takes one value", lineno)
            header[key] = (args[0][0], lineno)
        elif key == "grid":
            if "height" not in header:
                raise ParseError("grid block before height header", lineno)
            h = _parse_int(*header["height"], 1)
            if i + h > len(lines):
                raise InconsistentDimensions(
                    f"grid declares {h} rows but file ends early", lineno
                )
            rows = [lines[i + k].rstrip("\r\n").rstrip() for k in range(h)]
            grid_start = i + 1
            i += h
        elif key == "rooms":
            room_table = [a for a, _ in args]
            if not room_table or len(set(room_table)) != len(room_table):
                raise ParseError("rooms line must list distinct names", lineno)
        elif key == "openable":
            openable = frozenset(a for a, _ in args)
        elif key == "room":
            if len(args) != 5:
                raise ParseError("room takes: name x0 y0 x1 y1", lineno)
            name = args[0][0]
            x0, y0, x1, y1 = (_parse_int(t, lineno, c) for t, c in args[1:])
            rects.append((name, x0, y0, x1, y1, lineno))
        elif key == "receptacle":
            if len(args) not in (3, 4) or (len(args) == 4 and args[3][0] != "openable"):
                raise ParseError("receptacle takes: class x y [openable]", lineno)
            cls = args[0][0]
            x, y = (_parse_int(t, lineno, c) for t, c in args[1:3])
            recs.append((cls, x, y, len(args) == 4, lineno))
        else:
            raise ParseError(f"unknown directive {key!r}", lineno, toks[0][1])

    for key in ("width", "height", "resolution"):
        if key not in header:
            raise ParseError(f"missing {key} header")
    width = _parse_int(header["width"][0], header["width"][1], 1)
    height = _parse_int(header["height"][0], header["height"][1], 1)
    try:
        resolution = float(header["resolution"][0])
    except ValueError:
        raise ParseError("resolution must be a number", header["resolution"][1]) from None
    if width < 1 or height < 1 or not resolution > 0:
        raise ParseError("width, height and resolution must be positive")
    if not rows:
        raise ParseError("missing grid block")

    cells = np.empty((height, width), dtype=np.uint8)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise InconsistentDimensions(
                f"row {r} has {len(row)} cells, expected {width}", grid_start + r
            )
        for c, ch in enumerate(row):
            if ch not in GLYPHS:
                raise ParseError(f"bad glyph {ch!r}", grid_start + r, c + 1)
            cells[r, c] = GLYPHS[ch]

    names = list(room_table) if room_table is not None else []
    labels = np.full((height, width), -1, dtype=np.int16)
    room_rects = []
    for name, x0, y0, x1, y1, lineno in rects:
        if room_table is not None and name not in room_table:
            raise UnknownRoomLabel(f"room {name!r} not in room table", lineno)
        if name not in names:
            names.append(name)
        if not (0 <= x0 <= x1 < width and 0 <= y0 <= y1 < height):
            raise ParseError(f"room rectangle for {name!r} out of bounds", lineno)
        labels[y0 : y1 + 1, x0 : x1 + 1] = names.index(name)
        room_rects.append((name, x0, y0, x1, y1))

    smap = SemanticMap(
        width=width,
        height=height,
        resolution=resolution,
        cells=cells,
        room_labels=labels,
        rooms=names,
        room_rects=room_rects,
        openable_classes=openable if openable is not None else DEFAULT_OPENABLE,
    )
    for cls, x, y, flag, lineno in recs:
        if not smap.in_bounds(x, y):
            raise ParseError(f"receptacle at ({x},{y}) out of bounds", lineno)
        if flag and cls not in smap.openable_classes:
            raise ParseError(f"class {cls!r} is not declared openable", lineno)
        if not _has_free_access(smap, x, y):
            raise ParseError(f"receptacle at ({x},{y}) has no free neighbor", lineno)
        for other in smap.receptacles:
            if other.receptacle_class == cls and _chebyshev(other.position, (x, y)) <= MERGE_RADIUS:
                raise ParseError(f"two {cls} records within merge radius", lineno)
        smap.receptacles.append(
            ReceptacleRecord(
                id=smap.next_receptacle_id(),
                receptacle_class=cls,
                room=smap.room_at(x, y),
                position=(x, y),
                openable=cls in smap.openable_classes,
            )
        )
    return smap


def dump_map(smap: SemanticMap) -> str:
    """Serialize back to map-file text (inverse of :func:`load_map`)."""
    out = [
        f"width {smap.width}",
        f"height {smap.height}",
        f"resolution {smap.resolution!r}",
        "grid",
    ]
    for y in range(smap.height):
        out.append("".join(CELL_GLYPH[int(v)] for v in smap.cells[y]))
    if smap.rooms:
        out.append("rooms " + " ".join(smap.rooms))
    out.append("openable " + " ".join(sorted(smap.openable_classes)))
    for name, x0, y0, x1, y1 in smap.room_rects:
        out.append(f"room {name} {x0} {y0} {x1} {y1}")
    for rec in smap.receptacles:
        flag = " openable" if rec.openable else ""
        out.append(f"receptacle {rec.receptacle_class} {rec.position[0]} {rec.position[1]}{flag}")
    return "\n".join(out) + "\n"


def maps_equal(a: SemanticMap, b: SemanticMap) -> bool:
    def recs(m):
        return [(r.receptacle_class, r.room, r.position, r.openable) for r in m.receptacles]

    return (
        (a.width, a.height, a.resolution) == (b.width, b.height, b.resolution)
        and np.array_equal(a.cells, b.cells)
        and a.rooms == b.rooms
        and np.array_equal(a.room_labels, b.room_labels)
        and recs(a) == recs(b)
        and a.openable_classes == b.openable_classes
    )


def _chebyshev(a: Sequence[int], b: Sequence[int]) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def _has_free_access(smap: SemanticMap, x: int, y: int) -> bool:
    if smap.is_free(x, y):
        return True
    return any(
        smap.is_free(x + dx, y + dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)
    )


def room_center(smap: SemanticMap, room: str) -> GridPose:
    """Free labeled cell nearest to the room's centroid.

    Ties are broken by row then column so concave rooms still give a
    deterministic, reachable navigation goal.
    """
    cells = smap.room_cells(room)
    if len(cells) == 0:
        raise RoomHasNoFreeCell(f"room {room!r} has no labeled cells")
    cx, cy = cells.mean(axis=0)
    free = [(int(x), int(y)) for x, y in cells if smap.cells[y, x] == FREE]
    if not free:
        raise RoomHasNoFreeCell(f"room {room!r} has no free cell")
    x, y = min(free, key=lambda c: ((c[0] - cx) ** 2 + (c[1] - cy) ** 2, c[1], c[0]))
    return GridPose(x, y)


def register_receptacle(smap: SemanticMap, obs: ReceptacleObservation) -> ReceptacleRecord:
    """Fuse one detection into the registry and return the affected record.

    A same-class record within ``MERGE_RADIUS`` absorbs the detection. It only
    moves if moving keeps it clear of every other same-class record; otherwise
    just its timestamp is refreshed.
    """
    x, y = obs.position
    if not smap.in_bounds(x, y):
        raise OutOfBounds(f"detection at ({x},{y}) outside {smap.width}x{smap.height} grid")
    near = [
        r
        for r in smap.receptacles
        if r.receptacle_class == obs.receptacle_class
        and _chebyshev(r.position, (x, y)) <= MERGE_RADIUS
    ]
    if near:
        rec = min(near, key=lambda r: (_chebyshev(r.position, (x, y)), r.id))
        clash = any(
            r is not rec
            and r.receptacle_class == rec.receptacle_class
            and _chebyshev(r.position, (x, y)) <= MERGE_RADIUS
            for r in smap.receptacles
        )
        if not clash and rec.position != (x, y):
            rec.position = (x, y)
            rec.room = smap.room_at(x, y)
            smap.version += 1
        rec.last_observed_tick = obs.tick
        return rec
    rec = ReceptacleRecord(
        id=smap.next_receptacle_id(),
        receptacle_class=obs.receptacle_class,
        room=smap.room_at(x, y),
        position=(x, y),
        openable=obs.receptacle_class in smap.openable_classes,
        last_observed_tick=obs.tick,
    )
    smap.receptacles.append(rec)
    smap.version += 1
    return rec


def receptacles_in_room(smap: SemanticMap, room: str) -> list[ReceptacleRecord]:
    if room not in smap.rooms:
        raise UnknownRoom(room)
    return [r for r in smap.receptacles if r.room == room]


def render(
    smap: SemanticMap,
    path: Optional[Iterable[Sequence[int]]] = None,
    show_receptacles: bool = False,
) -> str:
    """Text rendering, one line per row. Path cells are drawn as ``*``;
    receptacles (if shown) by the upper-cased first letter of their class."""
    grid = [[CELL_GLYPH[int(v)] for v in row] for row in smap.cells]
    if show_receptacles:
        for rec in smap.receptacles:
            x, y = rec.position
            grid[y][x] = rec.receptacle_class[0].upper()
    for cell in path or ():
        x, y = int(cell[0]), int(cell[1])
        if smap.in_bounds(x, y):
            grid[y][x] = PATH_GLYPH
    return "\n".join("".join(row) for row in grid)


def render_png(smap: SemanticMap, path=None, out_path=None, scale: int = 12):
    """Raster rendering via Pillow; returns the image (and saves if asked)."""
    from PIL import Image

    palette = {FREE: (245, 245, 245), OCCUPIED: (40, 40, 40), UNKNOWN: (150, 150, 150)}
    room_tint = [(255, 228, 196), (198, 226, 255), (204, 240, 204), (255, 255, 200), (230, 210, 255)]
    img = Image.new("RGB", (smap.width * scale, smap.height * scale))
    px = img.load()

    def fill(x, y, rgb):
        for dy in range(scale):
            for dx in range(scale):
                px[x * scale + dx, y * scale + dy] = rgb

    for y in range(smap.height):
        for x in range(smap.width):
            rgb = palette[int(smap.cells[y, x])]
            label = int(smap.room_labels[y, x])
            if rgb == palette[FREE] and label >= 0:
                rgb = room_tint[label % len(room_tint)]
            fill(x, y, rgb)
    for rec in smap.receptacles:
        fill(*rec.position, (160, 82, 45))
    for cell in path or ():
        fill(int(cell[0]), int(cell[1]), (220, 20, 60))
    if out_path is not None:
        img.save(out_path)
    return img


def heading_between(a: Sequence[int], b: Sequence[int]) -> Optional[str]:
    step = (int(np.sign(b[0] - a[0])), int(np.sign(b[1] - a[1])))
    return STEP_HEADING.get(step)


def bearing_deg(dx: float, dy: float) -> float:
    """Compass-style bearing in degrees, counterclockwise from east, with
    grid rows growing southward."""
    return math.degrees(math.atan2(-dy, dx))
