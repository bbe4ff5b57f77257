"""Latent-factor placement preferences.

A user's rating of an item (an ``(object, room, receptacle)`` triple) is
predicted as the dot product of two learned vectors. Factors are fit by
full-batch gradient descent on the weighted mean squared error plus an L2
penalty on every factor::

    L = (1/N) * sum_n w_n (r_n - <U[u_n], I[i_n]>)^2 + lam * (|U|^2 + |I|^2)
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import (
    DivergenceDetected,
    DuplicateRating,
    EmptyCorpus,
    ModelFormatError,
    ParseError,
    RatingOutOfScale,
    UnknownItem,
    UnknownObject,
    UnknownRoom,
    UnknownUser,
    VocabularyMismatch,
)

DEFAULT_SCALE = (0.0, 1.0)
TOP_K = 10


class PlacementItem(NamedTuple):
    object_class: str
    room: str
    receptacle_class: str


@dataclass(frozen=True)
class RatingEntry:
    user: int
    item: int
    rating: float
    weight: float = 1.0


@dataclass
class RatingsCorpus:
    users: list[str]
    items: list[PlacementItem]
    user_idx: np.ndarray
    item_idx: np.ndarray
    ratings: np.ndarray
    weights: np.ndarray
    rating_scale: tuple[float, float] = DEFAULT_SCALE

    def __post_init__(self):
        self.user_index = {u: n for n, u in enumerate(self.users)}
        self.item_index = {it: n for n, it in enumerate(self.items)}

    def __len__(self):
        return len(self.ratings)

    @property
    def entries(self) -> list[RatingEntry]:
        return [
            RatingEntry(int(u), int(i), float(r), float(w))
            for u, i, r, w in zip(self.user_idx, self.item_idx, self.ratings, self.weights)
        ]

    def subset(self, mask: np.ndarray) -> "RatingsCorpus":
        """Entries selected by ``mask``; vocabularies are kept whole."""
        mask = np.asarray(mask, dtype=bool)
        return RatingsCorpus(
            users=list(self.users),
            items=list(self.items),
            user_idx=self.user_idx[mask],
            item_idx=self.item_idx[mask],
            ratings=self.ratings[mask],
            weights=self.weights[mask],
            rating_scale=self.rating_scale,
        )

    @classmethod
    def from_triples(
        cls,
        rows: Iterable[tuple[str, PlacementItem, float]],
        rating_scale=DEFAULT_SCALE,
        weights: Optional[Sequence[float]] = None,
    ) -> "RatingsCorpus":
        users, items = {}, {}
        uu, ii, rr = [], [], []
        seen = set()
        for user, item, rating in rows:
            item = PlacementItem(*item)
            u = users.setdefault(user, len(users))
            i = items.setdefault(item, len(items))
            if (u, i) in seen:
                raise DuplicateRating(f"duplicate rating for ({user}, {item})")
            seen.add((u, i))
            uu.append(u)
            ii.append(i)
            rr.append(float(rating))
        w = np.ones(len(rr)) if weights is None else np.asarray(weights, dtype=float)
        return cls(
            users=list(users),
            items=list(items),
            user_idx=np.asarray(uu, dtype=np.int64),
            item_idx=np.asarray(ii, dtype=np.int64),
            ratings=np.asarray(rr, dtype=float),
            weights=w,
            rating_scale=tuple(rating_scale),
        )


def rank_to_rating(rank: int, total: int, scale=DEFAULT_SCALE) -> float:
    """Linear map: rank 1 of ``total`` is the scale max, the last rank the min."""
    lo, hi = scale
    if total == 1:
        return float(hi)
    return hi - (rank - 1) * (hi - lo) / (total - 1)


REQUIRED_COLUMNS = ("user", "object", "room", "receptacle", "kind", "value")


def ingest_corpus(text: str, rating_scale=None) -> RatingsCorpus:
    """Parse corpus CSV text.

    Header: ``user,object,room,receptacle,kind,value[,weight][,rank_total]``.
    ``kind`` is ``rating`` or ``rank``. A leading ``# scale LO HI`` line
    declares the rating scale (default ``[0, 1]``). For rank rows without
    ``rank_total`` the total is the number of rank rows sharing that user
    and object.
    """
    lines = text.splitlines()
    scale = rating_scale
    body_start = 0
    for n, line in enumerate(lines):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            parts = s.lstrip("#").split()
            if parts and parts[0] == "scale":
                if len(parts) != 3:
                    raise ParseError("scale line takes: # scale LO HI", n + 1)
                if scale is None:
                    scale = (float(parts[1]), float(parts[2]))
            continue
        body_start = n
        break
    else:
        raise ParseError("corpus has no header row")
    scale = tuple(scale) if scale is not None else DEFAULT_SCALE
    lo, hi = scale
    if not hi > lo:
        raise ParseError("rating scale must have max > min")

    reader = csv.DictReader(io.StringIO("\n".join(lines[body_start:])))
    header = reader.fieldnames or []
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise ParseError(f"corpus header missing columns: {', '.join(missing)}", body_start + 1)

    parsed = []
    for n, row in enumerate(reader):
        lineno = body_start + 2 + n
        if not any((v or "").strip() for v in row.values()):
            continue
        if None in row or any(row.get(c) is None for c in REQUIRED_COLUMNS):
            raise ParseError("wrong number of fields", lineno)
        kind = row["kind"].strip()
        if kind not in ("rating", "rank"):
            raise ParseError(f"kind must be rating or rank, got {kind!r}", lineno)
        try:
            value = float(row["value"])
            weight = float(row["weight"]) if (row.get("weight") or "").strip() else 1.0
            total = int(row["rank_total"]) if (row.get("rank_total") or "").strip() else None
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if weight < 0:
            raise ParseError("weight must be nonnegative", lineno)
        item = PlacementItem(row["object"].strip(), row["room"].strip(), row["receptacle"].strip())
        parsed.append((lineno, row["user"].strip(), item, kind, value, weight, total))

    group_sizes: dict[tuple[str, str], int] = {}
    for _, user, item, kind, *_ in parsed:
        if kind == "rank":
            key = (user, item.object_class)
            group_sizes[key] = group_sizes.get(key, 0) + 1

    users, items = {}, {}
    uu, ii, rr, ww = [], [], [], []
    seen = set()
    for lineno, user, item, kind, value, weight, total in parsed:
        if kind == "rank":
            if value != int(value):
                raise ParseError("rank must be an integer", lineno)
            m = total if total is not None else group_sizes[(user, item.object_class)]
            if not 1 <= value <= m:
                raise ParseError(f"rank {int(value)} outside 1..{m}", lineno)
            rating = rank_to_rating(int(value), m, scale)
        else:
            rating = value
        if not lo <= rating <= hi:
            raise RatingOutOfScale(f"rating {rating} outside [{lo}, {hi}]", lineno)
        u = users.setdefault(user, len(users))
        i = items.setdefault(item, len(items))
        if (u, i) in seen:
            raise DuplicateRating(f"duplicate rating for ({user}, {'/'.join(item)})", lineno)
        seen.add((u, i))
        uu.append(u)
        ii.append(i)
        rr.append(rating)
        ww.append(weight)

    return RatingsCorpus(
        users=list(users),
        items=list(items),
        user_idx=np.asarray(uu, dtype=np.int64),
        item_idx=np.asarray(ii, dtype=np.int64),
        ratings=np.asarray(rr, dtype=float),
        weights=np.asarray(ww, dtype=float),
        rating_scale=scale,
    )


@dataclass
class FactorModel:
    users: list[str]
    items: list[PlacementItem]
    user_factors: np.ndarray
    item_factors: np.ndarray
    lam: float
    loss_history: tuple = field(default=(), compare=False)

    def __post_init__(self):
        self.items = [PlacementItem(*it) for it in self.items]
        self.user_factors = np.asarray(self.user_factors, dtype=float)
        self.item_factors = np.asarray(self.item_factors, dtype=float)
        if self.user_factors.shape != (len(self.users), self.d) or self.item_factors.shape != (
            len(self.items),
            self.d,
        ):
            raise ValueError("factor shapes do not match vocabularies")
        if self.d < 1:
            raise ValueError("latent dimension must be >= 1")
        self.user_index = {u: n for n, u in enumerate(self.users)}
        self.item_index = {it: n for n, it in enumerate(self.items)}
        by_object: dict[str, list[int]] = {}
        for n, it in enumerate(self.items):
            by_object.setdefault(it.object_class, []).append(n)
        self._by_object = {k: np.asarray(v, dtype=np.int64) for k, v in by_object.items()}
        self.rooms = frozenset(it.room for it in self.items)
        self.receptacle_classes = frozenset(it.receptacle_class for it in self.items)

    @property
    def d(self) -> int:
        return self.user_factors.shape[1] if self.user_factors.ndim == 2 else 0

    @property
    def objects(self) -> list[str]:
        return list(self._by_object)

    def user_vector(self, user: str) -> np.ndarray:
        try:
            return self.user_factors[self.user_index[user]]
        except KeyError:
            raise UnknownUser(user) from None

    def object_items(self, object_class: str) -> np.ndarray:
        try:
            return self._by_object[object_class]
        except KeyError:
            raise UnknownObject(object_class) from None

    def same_as(self, other: "FactorModel") -> bool:
        """Bitwise equality of vocabularies, factors and lambda."""
        return (
            self.users == other.users
            and self.items == other.items
            and self.lam == other.lam
            and self.user_factors.tobytes() == other.user_factors.tobytes()
            and self.item_factors.tobytes() == other.item_factors.tobytes()
        )


def _align(model: FactorModel, corpus: RatingsCorpus) -> tuple[np.ndarray, np.ndarray]:
    try:
        umap = np.asarray([model.user_index[u] for u in corpus.users], dtype=np.int64)
        imap = np.asarray([model.item_index[it] for it in corpus.items], dtype=np.int64)
    except KeyError as exc:
        raise VocabularyMismatch(f"model vocabulary lacks {exc.args[0]!r}") from None
    if len(corpus) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return umap[corpus.user_idx], imap[corpus.item_idx]


def _loss(U, I, u, i, r, w, lam):
    n = len(r)
    data = 0.0
    if n:
        e = r - np.einsum("nd,nd->n", U[u], I[i])
        data = float(np.dot(w, e * e)) / n
    return data + lam * (float(np.sum(U * U)) + float(np.sum(I * I)))


def _grad(U, I, u, i, r, w, lam):
    gU = 2.0 * lam * U
    gI = 2.0 * lam * I
    n = len(r)
    if n:
        e = r - np.einsum("nd,nd->n", U[u], I[i])
        c = (-2.0 / n) * (w * e)
        np.add.at(gU, u, c[:, None] * I[i])
        np.add.at(gI, i, c[:, None] * U[u])
    return gU, gI


def loss(model: FactorModel, corpus: RatingsCorpus) -> float:
    u, i = _align(model, corpus)
    return _loss(model.user_factors, model.item_factors, u, i, corpus.ratings, corpus.weights, model.lam)


def gradient(model: FactorModel, corpus: RatingsCorpus) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradient of :func:`loss` w.r.t. (user_factors, item_factors)."""
    u, i = _align(model, corpus)
    return _grad(model.user_factors, model.item_factors, u, i, corpus.ratings, corpus.weights, model.lam)


@dataclass(frozen=True)
class TrainConfig:
    d: int = 16
    lam: float = 0.05
    learning_rate: float = 0.05
    epochs: int = 500
    seed: int = 0
    init_scale: float = 0.1


def train(corpus: RatingsCorpus, hyper: Optional[TrainConfig] = None, **overrides) -> FactorModel:
    """Full-batch gradient descent from a seeded uniform initialisation.

    The loss after every epoch is kept in ``model.loss_history`` (entry 0 is
    the loss at initialisation).
    """
    hyper = hyper or TrainConfig()
    if overrides:
        hyper = TrainConfig(**{**hyper.__dict__, **overrides})
    if len(corpus) == 0:
        raise EmptyCorpus("cannot train on an empty corpus")
    if hyper.d < 1:
        raise ValueError("d must be >= 1")

    rng = np.random.default_rng(hyper.seed)
    s = hyper.init_scale
    U = rng.uniform(-s, s, size=(len(corpus.users), hyper.d))
    I = rng.uniform(-s, s, size=(len(corpus.items), hyper.d))
    u, i, r, w = corpus.user_idx, corpus.item_idx, corpus.ratings, corpus.weights
    lr, lam = hyper.learning_rate, hyper.lam

    history = [_loss(U, I, u, i, r, w, lam)]
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(hyper.epochs):
            gU, gI = _grad(U, I, u, i, r, w, lam)
            U = U - lr * gU
            I = I - lr * gI
            current = _loss(U, I, u, i, r, w, lam)
            if not np.isfinite(current) or not (np.all(np.isfinite(U)) and np.all(np.isfinite(I))):
                raise DivergenceDetected(f"loss became non-finite at epoch {epoch + 1}")
            history.append(current)
    if history[-1] > history[0]:
        raise DivergenceDetected(
            f"final loss {history[-1]:.6g} exceeds initial loss {history[0]:.6g}"
        )
    return FactorModel(
        users=list(corpus.users),
        items=list(corpus.items),
        user_factors=U,
        item_factors=I,
        lam=lam,
        loss_history=tuple(history),
    )


def rmse(model: FactorModel, corpus: RatingsCorpus) -> float:
    u, i = _align(model, corpus)
    if len(corpus) == 0:
        return float("nan")
    pred = np.einsum("nd,nd->n", model.user_factors[u], model.item_factors[i])
    return float(np.sqrt(np.mean((corpus.ratings - pred) ** 2)))


def holdout_split(n: int, fraction: float, seed: int) -> np.ndarray:
    """Boolean mask marking a seeded ``fraction`` of ``n`` entries as held out."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("holdout fraction must be in [0, 1)")
    rng = np.random.default_rng(seed)
    mask = np.zeros(n, dtype=bool)
    mask[rng.permutation(n)[: int(round(fraction * n))]] = True
    return mask


ItemRef = Union[int, PlacementItem, tuple]


def predict_rating(model: FactorModel, user: str, item: ItemRef) -> float:
    uvec = model.user_vector(user)
    if isinstance(item, (int, np.integer)):
        if not 0 <= item < len(model.items):
            raise UnknownItem(item)
        idx = int(item)
    else:
        try:
            idx = model.item_index[PlacementItem(*item)]
        except (KeyError, TypeError):
            raise UnknownItem(item) from None
    return float(np.dot(uvec, model.item_factors[idx]))


def rank_order(scores: np.ndarray) -> np.ndarray:
    """Positions of ``scores`` from best to worst; equal scores keep input order."""
    return np.argsort(-np.asarray(scores, dtype=float), kind="stable")


def ranked_items(model: FactorModel, user: str, object_class: str) -> list[int]:
    """All item indices of ``object_class`` by descending predicted rating."""
    uvec = model.user_vector(user)
    idxs = model.object_items(object_class)
    scores = model.item_factors[idxs] @ uvec
    return [int(idxs[j]) for j in rank_order(scores)]


def top_placements(model: FactorModel, user: str, object_class: str, k: int) -> list[PlacementItem]:
    if k < 0:
        raise ValueError("k must be >= 0")
    order = ranked_items(model, user, object_class)
    return [model.items[n] for n in order[:k]]


def _check_location(model: FactorModel, current: tuple[str, str]) -> tuple[str, str]:
    room, rec = current
    if room not in model.rooms:
        raise UnknownRoom(room)
    if rec not in model.receptacle_classes:
        raise UnknownItem(rec)
    return room, rec


def is_misplaced(
    model: FactorModel, user: str, object_class: str, current: tuple[str, str], k: int = TOP_K
) -> bool:
    room, rec = _check_location(model, current)
    top = top_placements(model, user, object_class, k)
    return not any(it.room == room and it.receptacle_class == rec for it in top)


def placement_rank(
    model: FactorModel, user: str, object_class: str, current: tuple[str, str]
) -> float:
    """0-based rank of the current placement among the object's items;
    ``inf`` if the placement is not an item at all."""
    room, rec = _check_location(model, current)
    for pos, n in enumerate(ranked_items(model, user, object_class)):
        it = model.items[n]
        if it.room == room and it.receptacle_class == rec:
            return float(pos)
    return float("inf")


def receptacle_candidates(model: FactorModel, user: str, object_class: str, room: str) -> list[str]:
    model.user_vector(user)
    if room not in model.rooms:
        raise UnknownRoom(room)
    return [
        model.items[n].receptacle_class
        for n in ranked_items(model, user, object_class)
        if model.items[n].room == room
    ]


def user_room_ranking(model: FactorModel, user: str, object_class: str) -> list[str]:
    """Rooms ordered by the user's best predicted rating inside each room."""
    uvec = model.user_vector(user)
    best: dict[str, float] = {}
    for n in model.object_items(object_class):
        it = model.items[n]
        score = float(model.item_factors[n] @ uvec)
        if it.room not in best or score > best[it.room]:
            best[it.room] = score
    return sorted(best, key=lambda room: (-best[room], room))


@dataclass
class CommonSenseKB:
    room_scores: dict[str, dict[str, float]]

    @classmethod
    def from_corpus(cls, corpus: RatingsCorpus) -> "CommonSenseKB":
        """Room frequency counts: each user votes for the room(s) holding
        their best observed rating of the object; a tie splits the vote."""
        best: dict[tuple[int, str], dict[str, float]] = {}
        scores: dict[str, dict[str, float]] = {}
        for u, i, r in zip(corpus.user_idx, corpus.item_idx, corpus.ratings):
            it = corpus.items[i]
            scores.setdefault(it.object_class, {}).setdefault(it.room, 0.0)
            rooms = best.setdefault((int(u), it.object_class), {})
            rooms[it.room] = max(rooms.get(it.room, -np.inf), float(r))
        for (_, obj), rooms in sorted(best.items()):
            top = max(rooms.values())
            winners = [room for room, v in rooms.items() if v == top]
            for room in winners:
                scores[obj][room] += 1.0 / len(winners)
        return cls(room_scores=scores)


def target_room(kb: CommonSenseKB, object_class: str) -> list[str]:
    try:
        rooms = kb.room_scores[object_class]
    except KeyError:
        raise UnknownObject(object_class) from None
    return sorted(rooms, key=lambda room: (-rooms[room], room))


def placement_candidates(
    model: FactorModel,
    kb: Optional[CommonSenseKB],
    user: str,
    object_class: str,
    room_mode: str = "kb",
) -> list[tuple[str, str]]:
    """Flattened ``(room, receptacle)`` targets in attempt order.

    ``room_mode="kb"`` ranks rooms with the common-sense KB; ``"user"`` ranks
    them by the user's own predictions. Receptacles are always user-ranked.
    """
    if room_mode == "kb":
        if kb is None:
            raise ValueError("room_mode 'kb' needs a knowledge base")
        rooms = target_room(kb, object_class)
    elif room_mode == "user":
        rooms = user_room_ranking(model, user, object_class)
    else:
        raise ValueError(f"room_mode must be 'kb' or 'user', got {room_mode!r}")
    out = []
    for room in rooms:
        if room not in model.rooms:
            continue
        out.extend((room, rec) for rec in receptacle_candidates(model, user, object_class, room))
    return out


# --- model file -----------------------------------------------------------
#
# Little-endian throughout:
#   8 bytes   magic b"TIDYFM\x00\x01" (last byte = format version)
#   uint32    d
#   float64   lambda
#   uint32    n_users
#   uint32    n_items
#   n_users x string                       user ids
#   n_items x (string, string, string)     object, room, receptacle
#   float64[n_users * d]                   user factors, row-major
#   float64[n_items * d]                   item factors, row-major
# where string = uint16 byte length + UTF-8 bytes.

MAGIC = b"TIDYFM\x00\x01"


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def dump_model(model: FactorModel) -> bytes:
    parts = [
        MAGIC,
        struct.pack("<IdII", model.d, model.lam, len(model.users), len(model.items)),
    ]
    parts += [_pack_str(u) for u in model.users]
    for it in model.items:
        parts += [_pack_str(s) for s in it]
    parts.append(np.ascontiguousarray(model.user_factors, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(model.item_factors, dtype="<f8").tobytes())
    return b"".join(parts)


def load_model(data: bytes) -> FactorModel:
    if data[:8] != MAGIC:
        raise ModelFormatError("not a tidysim factor model (bad magic)")
    off = 8
    try:
        d, lam, n_users, n_items = struct.unpack_from("<IdII", data, off)
        off += struct.calcsize("<IdII")

        def read_str():
            nonlocal off
            (n,) = struct.unpack_from("<H", data, off)
            off += 2
            s = data[off : off + n].decode("utf-8")
            off += n
            return s

        users = [read_str() for _ in range(n_users)]
        items = [PlacementItem(read_str(), read_str(), read_str()) for _ in range(n_items)]
        nu, ni = n_users * d * 8, n_items * d * 8
        if len(data) != off + nu + ni:
            raise ModelFormatError("model file length does not match header")
        U = np.frombuffer(data, dtype="<f8", count=n_users * d, offset=off).reshape(n_users, d)
        I = np.frombuffer(data, dtype="<f8", count=n_items * d, offset=off + nu).reshape(n_items, d)
    except (struct.error, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"truncated or corrupt model file: {exc}") from None
    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(I))):
        raise ModelFormatError("model contains non-finite factors")
    return FactorModel(users=users, items=items, user_factors=U.astype(float), item_factors=I.astype(float), lam=lam)
