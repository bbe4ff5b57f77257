import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tidysim import preference as pm
from tidysim.errors import (
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


def naive_loss(U, I, entries, lam):
    """Loop-by-loop MSE + L2, written independently of the package."""
    total = 0.0
    for u, i, r, w in entries:
        f = sum(U[u][k] * I[i][k] for k in range(len(U[u])))
        total += w * (r - f) ** 2
    reg = sum(x * x for row in U for x in row) + sum(x * x for row in I for x in row)
    return total / len(entries) + lam * reg


def random_problem(rng, n_users, n_items, d, density=0.4, lam=0.1):
    users = [f"u{n}" for n in range(n_users)]
    items = [pm.PlacementItem(f"o{n % 7}", f"r{n % 3}", f"c{n}") for n in range(n_items)]
    mask = rng.random((n_users, n_items)) < density
    mask[0, 0] = True
    rows = [(users[u], items[i], float(rng.random())) for u, i in zip(*np.nonzero(mask))]
    corpus = pm.RatingsCorpus.from_triples(rows, weights=rng.uniform(0.5, 2.0, len(rows)))
    model = pm.FactorModel(
        users=corpus.users,
        items=corpus.items,
        user_factors=rng.normal(0, 0.5, (len(corpus.users), d)),
        item_factors=rng.normal(0, 0.5, (len(corpus.items), d)),
        lam=lam,
    )
    return model, corpus


def fd_gradient(model, corpus, h=1e-5):
    gU = np.zeros_like(model.user_factors)
    gI = np.zeros_like(model.item_factors)
    for mat, out in ((model.user_factors, gU), (model.item_factors, gI)):
        for idx in np.ndindex(mat.shape):
            keep = mat[idx]
            mat[idx] = keep + h
            plus = pm.loss(model, corpus)
            mat[idx] = keep - h
            minus = pm.loss(model, corpus)
            mat[idx] = keep
            out[idx] = (plus - minus) / (2 * h)
    return gU, gI


def max_rel_err(a, b, floor=1e-8):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


# --- corpus ingestion ---------------------------------------------------------

def test_ingest_two_users_three_items():
    text = "user,object,room,receptacle,kind,value\n" + "".join(
        f"{u},mug,kitchen,{c},rating,0.5\n" for u in ("a", "b") for c in ("sink", "counter", "shelf")
    )
    corpus = pm.ingest_corpus(text)
    assert len(corpus) == 6 and corpus.users == ["a", "b"] and len(corpus.items) == 3


def test_rank_rows_map_linearly():
    text = "user,object,room,receptacle,kind,value,weight,rank_total\n" "a,mug,kitchen,sink,rank,1,,6\n" "a,mug,kitchen,shelf,rank,6,,6\n"
    corpus = pm.ingest_corpus(text)
    assert list(corpus.ratings) == [1.0, 0.0]
    assert pm.rank_to_rating(3, 5, (0.0, 1.0)) == pytest.approx(0.5)
    assert pm.rank_to_rating(1, 1, (1.0, 5.0)) == 5.0


def test_rank_total_defaults_to_group_size():
    text = "user,object,room,receptacle,kind,value\n" + "".join(
        f"a,mug,kitchen,{c},rank,{n + 1}\n" for n, c in enumerate(["sink", "counter", "shelf"])
    )
    assert list(pm.ingest_corpus(text).ratings) == [1.0, 0.5, 0.0]


def test_scale_line_and_weights():
    text = "# scale 1 5\nuser,object,room,receptacle,kind,value,weight\na,mug,kitchen,sink,rating,4,2.5\n"
    corpus = pm.ingest_corpus(text)
    assert corpus.rating_scale == (1.0, 5.0) and corpus.weights[0] == 2.5


@pytest.mark.parametrize(
    "body, exc",
    [
        ("a,mug,kitchen,sink,rating,0.5\na,mug,kitchen,sink,rating,0.7\n", DuplicateRating),
        ("a,mug,kitchen,sink,rating,1.5\n", RatingOutOfScale),
        ("a,mug,kitchen,sink,score,0.5\n", ParseError),
        ("a,mug,kitchen,sink,rating,abc\n", ParseError),
        ("a,mug,kitchen,sink,rank,4\n", ParseError),
    ],
)
def test_ingest_errors(body, exc):
    with pytest.raises(exc):
        pm.ingest_corpus("user,object,room,receptacle,kind,value\n" + body)


def test_duplicate_reports_line():
    text = "user,object,room,receptacle,kind,value\na,mug,kitchen,sink,rating,0.5\na,mug,kitchen,sink,rating,0.6\n"
    with pytest.raises(DuplicateRating) as err:
        pm.ingest_corpus(text)
    assert err.value.line == 3


def test_missing_header_column():
    with pytest.raises(ParseError):
        pm.ingest_corpus("user,object,room,kind,value\na,mug,kitchen,rating,0.5\n")


# --- loss and gradient ----------------------------------------------------------

def one_entry(r=1.0, d=2, lam=0.0, uf=None, itf=None):
    corpus = pm.RatingsCorpus.from_triples([("u", ("mug", "kitchen", "sink"), r)])
    model = pm.FactorModel(
        users=corpus.users,
        items=corpus.items,
        user_factors=np.zeros((1, d)) if uf is None else np.asarray([uf], float),
        item_factors=np.zeros((1, d)) if itf is None else np.asarray([itf], float),
        lam=lam,
    )
    return model, corpus


def test_loss_examples():
    model, corpus = one_entry()
    assert pm.loss(model, corpus) == 1.0
    model, corpus = one_entry(r=1.0, uf=[1, 0], itf=[1, 0])
    assert pm.loss(model, corpus) == 0.0
    model, corpus = one_entry(lam=0.5)
    assert pm.loss(model, corpus) == 1.0


def test_gradient_examples():
    model, corpus = one_entry(lam=0.0)
    gU, gI = pm.gradient(model, corpus)
    assert not gU.any() and not gI.any()
    model, corpus = one_entry(lam=0.3, uf=[1.0, -2.0], itf=[0.5, 0.25])
    corpus.weights[:] = 0.0
    gU, gI = pm.gradient(model, corpus)
    np.testing.assert_array_equal(gU, 2 * 0.3 * model.user_factors)
    np.testing.assert_array_equal(gI, 2 * 0.3 * model.item_factors)


def test_loss_matches_naive_oracle():
    rng = np.random.default_rng(5)
    for _ in range(10):
        model, corpus = random_problem(rng, 6, 9, 3)
        entries = list(zip(corpus.user_idx, corpus.item_idx, corpus.ratings, corpus.weights))
        want = naive_loss(model.user_factors.tolist(), model.item_factors.tolist(), entries, model.lam)
        assert pm.loss(model, corpus) == pytest.approx(want, rel=1e-12)


def test_gradient_finite_differences_small():
    rng = np.random.default_rng(11)
    for d in (1, 3):
        model, corpus = random_problem(rng, 5, 8, d)
        gU, gI = pm.gradient(model, corpus)
        fU, fI = fd_gradient(model, corpus)
        assert max_rel_err(gU, fU) < 1e-4 and max_rel_err(gI, fI) < 1e-4


def test_vocabulary_mismatch():
    model, _ = one_entry()
    other = pm.RatingsCorpus.from_triples([("v", ("mug", "kitchen", "sink"), 0.5)])
    with pytest.raises(VocabularyMismatch):
        pm.loss(model, other)


# --- training ---------------------------------------------------------------------

def test_rank_one_recovery():
    rng = np.random.default_rng(0)
    a, b = rng.uniform(0.2, 1.0, 10), rng.uniform(0.2, 1.0, 10)
    rows = [(f"u{u}", ("o", "r", f"c{i}"), a[u] * b[i]) for u in range(10) for i in range(10)]
    model = pm.train(pm.RatingsCorpus.from_triples(rows), d=2, lam=0.0, learning_rate=2.0, epochs=3000)
    assert model.loss_history[-1] < 1e-3


def test_single_entry_fit():
    _, corpus = one_entry()
    model = pm.train(corpus, d=1, lam=0.0, learning_rate=0.1, epochs=1000)
    assert pm.predict_rating(model, "u", 0) == pytest.approx(1.0, abs=1e-2)


def test_divergence_and_empty():
    _, corpus = one_entry()
    with pytest.raises(DivergenceDetected):
        pm.train(corpus, d=2, lam=0.0, learning_rate=1e6, epochs=50, init_scale=1.0)
    with pytest.raises(EmptyCorpus):
        pm.train(corpus.subset(np.zeros(1, bool)))


def test_small_step_loss_monotone():
    rng = np.random.default_rng(3)
    _, corpus = random_problem(rng, 8, 12, 3)
    model = pm.train(corpus, d=3, lam=0.05, learning_rate=0.01, epochs=200)
    hist = np.asarray(model.loss_history)
    assert np.all(np.diff(hist) <= 1e-9)


def test_training_is_bitwise_deterministic(fixture_corpus):
    a = pm.train(fixture_corpus, epochs=50, seed=4)
    b = pm.train(fixture_corpus, epochs=50, seed=4)
    assert a.same_as(b)
    c = pm.train(fixture_corpus, epochs=50, seed=5)
    assert not a.same_as(c)


def test_holdout_split():
    m = pm.holdout_split(100, 0.2, 7)
    assert m.sum() == 20
    np.testing.assert_array_equal(m, pm.holdout_split(100, 0.2, 7))
    with pytest.raises(ValueError):
        pm.holdout_split(10, 1.0, 0)


# --- prediction and ranking ----------------------------------------------------------

def test_predict_rating_examples():
    model, _ = one_entry(uf=[1, 0], itf=[1, 0])
    assert pm.predict_rating(model, "u", ("mug", "kitchen", "sink")) == 1.0
    model, _ = one_entry(uf=[0, 0], itf=[3, 4])
    assert pm.predict_rating(model, "u", 0) == 0.0
    model, _ = one_entry(uf=[1, 2], itf=[3, -1])
    assert pm.predict_rating(model, "u", 0) == 1.0
    with pytest.raises(UnknownUser):
        pm.predict_rating(model, "nobody", 0)
    with pytest.raises(UnknownItem):
        pm.predict_rating(model, "u", ("mug", "garage", "sink"))
    with pytest.raises(UnknownItem):
        pm.predict_rating(model, "u", 5)


def test_table_examples(fixture_model):
    assert pm.top_placements(fixture_model, "U1", "mug", 2) == [("mug", "kitchen", "counter"), ("mug", "kitchen", "sink")]
    assert pm.top_placements(fixture_model, "U2", "rubiks_cube", 1) == [("rubiks_cube", "livingroom", "drawer")]
    assert pm.top_placements(fixture_model, "U1", "mug", 0) == []
    assert not pm.is_misplaced(fixture_model, "U1", "mug", ("kitchen", "counter"), 2)
    assert pm.is_misplaced(fixture_model, "U2", "mug", ("kitchen", "sink"), 2)
    assert pm.receptacle_candidates(fixture_model, "U1", "mug", "kitchen")[:2] == ["counter", "sink"]
    assert pm.receptacle_candidates(fixture_model, "U2", "mug", "livingroom")[:2] == ["table", "shelf"]


def test_ranking_errors(fixture_model):
    with pytest.raises(UnknownObject):
        pm.top_placements(fixture_model, "U1", "teapot", 3)
    with pytest.raises(UnknownUser):
        pm.top_placements(fixture_model, "U9", "mug", 3)
    with pytest.raises(UnknownRoom):
        pm.receptacle_candidates(fixture_model, "U1", "mug", "garage")
    with pytest.raises(UnknownRoom):
        pm.is_misplaced(fixture_model, "U1", "mug", ("garage", "sink"))


def test_receptacle_candidates_empty_room():
    corpus = pm.RatingsCorpus.from_triples([("u", ("mug", "kitchen", "sink"), 1.0), ("u", ("cup", "office", "desk"), 1.0)])
    model = pm.train(corpus, d=2, epochs=5)
    assert pm.receptacle_candidates(model, "u", "mug", "office") == []


def brute_force_top(model, user, obj, k):
    uvec = model.user_factors[model.users.index(user)]
    scored = [
        (-sum(a * b for a, b in zip(uvec, model.item_factors[n])), n)
        for n, it in enumerate(model.items)
        if it.object_class == obj
    ]
    scored.sort()
    return [model.items[n] for _, n in scored[:k]]


def test_ranking_oracle_small():
    rng = np.random.default_rng(21)
    for _ in range(100):
        model, _ = random_problem(rng, 5, 20, 3)
        obj = model.items[int(rng.integers(len(model.items)))].object_class
        for k in (1, 2, 5):
            assert pm.top_placements(model, "u0", obj, k) == brute_force_top(model, "u0", obj, k)
            for it in model.items:
                if it.object_class == obj:
                    want = it not in brute_force_top(model, "u0", obj, k)
                    assert pm.is_misplaced(model, "u0", obj, (it.room, it.receptacle_class), k) == want


def test_ties_break_by_item_index():
    assert list(pm.rank_order(np.array([0.5, 0.9, 0.5, 0.9]))) == [1, 3, 0, 2]


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=40),
    st.sampled_from(["exp", "affine", "cube"]),
)
def test_rank_order_invariant_under_increasing_maps(scores, kind):
    s = np.asarray(scores)
    f = {"exp": np.exp, "affine": lambda x: 3.0 * x + 1.0, "cube": lambda x: x**3 + x}[kind]
    t = f(s)
    # only compare where the transform keeps strict order (floating point can merge neighbours)
    if len(np.unique(t)) == len(np.unique(s)):
        np.testing.assert_array_equal(pm.rank_order(s), pm.rank_order(t))


def test_rank_one_never_misplaced(fixture_model):
    for user in ("U1", "U2"):
        for obj in fixture_model.objects:
            best = pm.top_placements(fixture_model, user, obj, 1)[0]
            for k in (1, 3, 10):
                assert not pm.is_misplaced(fixture_model, user, obj, (best.room, best.receptacle_class), k)


# --- knowledge base and candidates ------------------------------------------------------

def test_kb_examples(fixture_corpus):
    kb = pm.CommonSenseKB.from_corpus(fixture_corpus)
    assert pm.target_room(kb, "mustard_bottle")[0] == "kitchen"
    for rooms in kb.room_scores.values():
        assert rooms and all(v >= 0 for v in rooms.values())
    with pytest.raises(UnknownObject):
        pm.target_room(kb, "teapot")


def test_kb_single_room_and_tie():
    single = pm.RatingsCorpus.from_triples([("a", ("mug", "kitchen", "sink"), 1.0)])
    assert pm.target_room(pm.CommonSenseKB.from_corpus(single), "mug") == ["kitchen"]
    tie = pm.RatingsCorpus.from_triples([("a", ("mug", "office", "desk"), 1.0), ("b", ("mug", "attic", "box"), 1.0)])
    assert pm.target_room(pm.CommonSenseKB.from_corpus(tie), "mug") == ["attic", "office"]


def test_placement_candidates_modes(fixture_model, fixture_corpus):
    kb = pm.CommonSenseKB.from_corpus(fixture_corpus)
    kb_mode = pm.placement_candidates(fixture_model, kb, "U1", "mug", "kb")
    assert kb_mode[0][0] == "livingroom"
    user_mode = pm.placement_candidates(fixture_model, kb, "U1", "mug", "user")
    assert user_mode[:2] == [("kitchen", "counter"), ("kitchen", "sink")]
    assert sorted(kb_mode) == sorted(user_mode)
    with pytest.raises(ValueError):
        pm.placement_candidates(fixture_model, kb, "U1", "mug", "both")


# --- model file ----------------------------------------------------------------------

def test_model_round_trip(fixture_model):
    blob = pm.dump_model(fixture_model)
    assert blob[:8] == pm.MAGIC
    again = pm.load_model(blob)
    assert again.same_as(fixture_model)
    assert pm.dump_model(again) == blob


def test_model_format_errors(fixture_model):
    blob = pm.dump_model(fixture_model)
    with pytest.raises(ModelFormatError):
        pm.load_model(b"NOTAMODEL" + blob[9:])
    with pytest.raises(ModelFormatError):
        pm.load_model(blob[:-8])
    with pytest.raises(ModelFormatError):
        pm.load_model(blob[:20])
