"""Regenerate the bundled preference fixtures.

Writes ``src/tidysim/data/fixture_corpus.csv`` and trains
``src/tidysim/data/fixture_model.tfm`` from it. U1 and U2 rate every item of
their objects so the fitted model ranks rooms and receptacles exactly as in
the preference table below; ten background users (sparse, some giving ranks
instead of scores) shape the room knowledge base.

    python scripts/make_fixtures.py
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from tidysim.preference import TrainConfig, dump_model, ingest_corpus, train  # noqa: E402

DATA = ROOT / "src" / "tidysim" / "data"

# object -> user -> [(room, [receptacle, receptacle]), ...] best room first
PREFERENCES = {
    "rubiks_cube": {
        "U1": [("office", ["shelf", "table"]), ("kitchen", ["counter", "table"]), ("livingroom", ["drawer", "table"])],
        "U2": [("livingroom", ["drawer", "table"]), ("office", ["table", "drawer"]), ("kitchen", ["drawer", "table"])],
    },
    "mustard_bottle": {
        "U1": [("kitchen", ["drawer", "counter"]), ("livingroom", ["table", "sofa"]), ("office", ["table", "drawer"])],
        "U2": [("kitchen", ["shelf", "counter"]), ("livingroom", ["table", "drawer"]), ("office", ["drawer", "table"])],
    },
    "marker": {
        "U1": [("livingroom", ["drawer", "shelf"]), ("office", ["table", "drawer"]), ("kitchen", ["drawer", "table"])],
        "U2": [("office", ["table", "drawer"]), ("kitchen", ["table", "drawer"]), ("livingroom", ["table", "shelf"])],
    },
    "cracker_box": {
        "U1": [("kitchen", ["drawer", "table"]), ("livingroom", ["drawer", "table"]), ("office", ["drawer", "shelf"])],
        "U2": [("office", ["shelf", "drawer"]), ("kitchen", ["drawer", "table"]), ("livingroom", ["drawer", "sofa"])],
    },
    "bleach_cleanser": {
        "U1": [("livingroom", ["drawer", "table"]), ("office", ["shelf", "table"]), ("kitchen", ["shelf", "drawer"])],
        "U2": [("office", ["shelf", "table"]), ("kitchen", ["drawer", "table"]), ("livingroom", ["table", "drawer"])],
    },
    "gelatin_box": {
        "U1": [("office", ["table", "shelf"]), ("kitchen", ["drawer", "counter"]), ("livingroom", ["drawer", "table"])],
        "U2": [("livingroom", ["table", "drawer"]), ("office", ["table", "shelf"]), ("kitchen", ["drawer", "counter"])],
    },
    "potted_meat_can": {
        "U1": [("kitchen", ["counter", "shelf"]), ("livingroom", ["drawer", "table"]), ("office", ["drawer", "table"])],
        "U2": [("office", ["drawer", "table"]), ("kitchen", ["counter", "shelf"]), ("livingroom", ["drawer", "table"])],
    },
    "mug": {
        "U1": [("kitchen", ["counter", "sink"]), ("livingroom", ["shelf", "sofa"]), ("office", ["drawer", "table"])],
        "U2": [("livingroom", ["table", "shelf"]), ("office", ["drawer", "table"]), ("kitchen", ["sink", "drawer"])],
    },
}

# Room order most background users share; drives the common-sense KB.
CONSENSUS = {
    "rubiks_cube": ["livingroom", "office", "kitchen"],
    "mustard_bottle": ["kitchen", "livingroom", "office"],
    "marker": ["office", "livingroom", "kitchen"],
    "cracker_box": ["kitchen", "office", "livingroom"],
    "bleach_cleanser": ["kitchen", "office", "livingroom"],
    "gelatin_box": ["kitchen", "livingroom", "office"],
    "potted_meat_can": ["kitchen", "livingroom", "office"],
    "mug": ["livingroom", "kitchen", "office"],
}

N_BACKGROUND = 10
RETRY_TRAIN = TrainConfig(d=4, lam=1e-4, learning_rate=1.0, epochs=2000, seed=0, init_scale=0.1)
FIXTURE_TRAIN = TrainConfig(d=16, lam=1e-5, learning_rate=20.0, epochs=4000, seed=0, init_scale=0.1)


def items_of(obj):
    seen = []
    for prefs in PREFERENCES[obj].values():
        for room, recs in prefs:
            for rec in recs:
                if (room, rec) not in seen:
                    seen.append((room, rec))
    return seen


def sampled_user_rating(prefs, room, rec):
    """Room rank dominates; listed receptacles beat unlisted ones."""
    order = [r for r, _ in prefs]
    rr = order.index(room)
    listed = dict(prefs)[room]
    if rec in listed:
        return round(1.0 - 0.3 * rr - 0.1 * listed.index(rec), 4)
    return round(1.0 - 0.3 * rr - 0.25, 4)


def build_rows():
    rows = ["# scale 0 1", "user,object,room,receptacle,kind,value,weight,rank_total"]
    for user in ("U1", "U2"):
        for obj, by_user in PREFERENCES.items():
            for room, rec in items_of(obj):
                v = sampled_user_rating(by_user[user], room, rec)
                rows.append(f"{user},{obj},{room},{rec},rating,{v},,")

    rng = np.random.default_rng(2023)
    for b in range(N_BACKGROUND):
        user = f"H{b + 1:02d}"
        for obj in PREFERENCES:
            rooms = list(CONSENSUS[obj])
            if rng.random() < 0.25:
                rooms[0], rooms[1] = rooms[1], rooms[0]
            items = items_of(obj)
            observed = [it for it in items if rng.random() < 0.6]
            if not observed:
                continue
            noise = {it: rng.uniform(0.0, 0.15) for it in observed}
            score = {it: 1.0 - 0.3 * rooms.index(it[0]) - noise[it] for it in observed}
            if rng.random() < 0.3:
                ranked = sorted(observed, key=lambda it: (-score[it], it))
                for j, (room, rec) in enumerate(ranked):
                    rows.append(f"{user},{obj},{room},{rec},rank,{j + 1},,{len(ranked)}")
            else:
                for room, rec in observed:
                    rows.append(f"{user},{obj},{room},{rec},rating,{round(max(score[(room, rec)], 0.0), 4)},,")
    return rows


# Small corpus for the all-candidates-fail scenario: every mug target exists
# in the apartment; the sponge row only puts (kitchen, sink) in the vocabulary.
RETRY_ROWS = [
    "user,object,room,receptacle,kind,value",
    "U1,mug,livingroom,table,rating,1.0",
    "U1,mug,livingroom,shelf,rating,0.8",
    "U1,mug,office,table,rating,0.6",
    "U1,mug,office,shelf,rating,0.4",
    "U1,sponge,kitchen,sink,rating,1.0",
]


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    text = "\n".join(build_rows()) + "\n"
    (DATA / "fixture_corpus.csv").write_text(text)
    corpus = ingest_corpus(text)
    model = train(corpus, FIXTURE_TRAIN)
    (DATA / "fixture_model.tfm").write_bytes(dump_model(model))
    print(f"{len(corpus)} ratings, {len(corpus.users)} users, {len(corpus.items)} items")
    print(f"loss {model.loss_history[0]:.4f} -> {model.loss_history[-1]:.6f}")

    text = "\n".join(RETRY_ROWS) + "\n"
    (DATA / "retry_corpus.csv").write_text(text)
    retry = train(ingest_corpus(text), RETRY_TRAIN)
    (DATA / "retry_model.tfm").write_bytes(dump_model(retry))


if __name__ == "__main__":
    main()
