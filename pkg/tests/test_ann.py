import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from plembed.ann import RPForest, build_forest, exact_knn, query, recall
from plembed.table import EmbeddingTable


def _table(rng, n, d, prefix="v"):
    return EmbeddingTable([f"{prefix}{i:05d}" for i in range(n)], rng.normal(size=(n, d)))


def scan(t, q, k):
    """Independent oracle: python loop, cosine via math, ties by id."""
    qn = math.sqrt(sum(x * x for x in q))
    rows = []
    for key, v in zip(t.ids, t.vectors):
        vn = math.sqrt(sum(x * x for x in v))
        rows.append((1 - sum(a * b for a, b in zip(q, v)) / (qn * vn), key))
    rows.sort()
    return [key for _, key in rows[:k]]


class TestExact:
    def test_hand_angles(self):
        ang = {"east": 0.0, "ne": 45.0, "north": 90.0, "west": 180.0}
        t = EmbeddingTable(list(ang), np.array([[math.cos(math.radians(a)), math.sin(math.radians(a))]
                                                for a in ang.values()]))
        r = exact_knn(t, [math.cos(math.radians(10)), math.sin(math.radians(10))], 4)
        assert r.ids == ["east", "ne", "north", "west"]
        np.testing.assert_allclose(r.distances, [1 - math.cos(math.radians(a)) for a in (10, 35, 80, 170)])

    def test_duplicate_first(self, rng):
        t = _table(rng, 50, 6)
        q = t.vectors[7] * 3
        assert exact_knn(t, q, 1).ids == ["v00007"]

    def test_input_order_invariant(self, rng):
        t = _table(rng, 40, 3)
        t.vectors[5] = t.vectors[9]      # exact tie, broken by id
        perm = rng.permutation(40)
        shuffled = EmbeddingTable([t.ids[i] for i in perm], t.vectors[perm])
        q = t.vectors[9]
        assert exact_knn(t, q, 10).ids == exact_knn(shuffled, q, 10).ids
        assert exact_knn(t, q, 2).ids == ["v00005", "v00009"]

    @given(st.integers(0, 10_000))
    def test_matches_scan(self, seed):
        r = np.random.default_rng(seed)
        t = _table(r, 30, 4)
        q = r.normal(size=4)
        assert exact_knn(t, q, 8).ids == scan(t, q, 8)

    def test_errors(self, rng):
        t = _table(rng, 5, 3)
        with pytest.raises(ValueError):
            exact_knn(t, np.ones(3), 6)
        with pytest.raises(ValueError):
            exact_knn(t, np.ones(4), 2)


@pytest.fixture(scope="module")
def forest():
    rng = np.random.default_rng(0)
    t = _table(rng, 2000, 16)
    return t, RPForest(n_trees=30, leaf_size=1, seed=3).fit(t)


class TestForest:
    def test_single_leaf_when_small(self, rng):
        t = _table(rng, 5, 3)
        f = RPForest(n_trees=3, leaf_size=8).fit(t)
        assert all(tr.root < 0 and len(tr.leaves()) == 1 for tr in f.trees_)

    def test_self_query(self, forest):
        t, f = forest
        for i in (0, 17, 1999):
            r = f.query(t.vectors[i], 1, search_k=f.n_trees)
            assert r.ids == [t.ids[i]] and r.distances[0] == pytest.approx(0, abs=1e-12)

    def test_every_item_in_every_tree_once(self, forest):
        t, f = forest
        for tr in f.trees_[:5]:
            assert sorted(tr.leaf_items.tolist()) == list(range(len(t)))

    def test_depth_logarithmic(self, forest):
        t, f = forest
        assert max(tr.depth() for tr in f.trees_) < 4 * math.log2(len(t) / f.leaf_size) + 16

    def test_exhaustive_matches_oracle(self, forest, rng):
        t, f = forest
        for _ in range(5):
            q = rng.normal(size=16)
            r = f.query(q, 10, search_k=len(t))
            e = exact_knn(t, q, 10)
            assert r.ids == e.ids
            np.testing.assert_array_equal(r.distances, e.distances)

    def test_recall(self, forest, rng):
        t, f = forest
        Q = rng.normal(size=(50, 16))
        assert recall(f, t, Q, 10, search_k=f.n_trees * 10) >= 0.9
        assert recall(f, t, Q, 10, search_k=len(t)) == 1.0

    def test_recall_monotone_in_search_k(self, forest, rng):
        t, f = forest
        Q = rng.normal(size=(100, 16))
        rs = [recall(f, t, Q, 10, s) for s in (10, 40, 160, 640)]
        assert all(b >= a - 0.01 for a, b in zip(rs, rs[1:]))

    def test_query_id_excludes_self(self, forest):
        t, f = forest
        r = f.query_id("v00042", 5, search_k=len(t))
        assert "v00042" not in r.ids
        e = exact_knn(t, t["v00042"], 6).ids
        assert r.ids == [i for i in e if i != "v00042"][:5]

    def test_round_trip(self, forest, tmp_path, rng):
        t, f = forest
        f.save(tmp_path / "f.idx")
        g = RPForest.load(tmp_path / "f.idx")
        assert (g.n_trees, g.leaf_size, g.seed, g.ids_) == (f.n_trees, f.leaf_size, f.seed, f.ids_)
        for q in rng.normal(size=(10, 16)):
            assert g.query(q, 10).ids == f.query(q, 10).ids
        g.save(tmp_path / "g.idx")
        assert (tmp_path / "f.idx").read_bytes() == (tmp_path / "g.idx").read_bytes()
        (tmp_path / "bad.idx").write_bytes(b"nonsense")
        with pytest.raises(ValueError):
            RPForest.load(tmp_path / "bad.idx")

    def test_deterministic_build(self, rng):
        t = _table(rng, 300, 8)
        a, b = build_forest(t, 5, seed=9), build_forest(t, 5, seed=9)
        for x, y in zip(a.trees_, b.trees_):
            assert np.array_equal(x.leaf_items, y.leaf_items) and np.array_equal(x.normals, y.normals)
        q = rng.normal(size=8)
        assert query(a, q, 7).ids == query(b, q, 7).ids

    def test_duplicates_split(self):
        t = EmbeddingTable([f"d{i}" for i in range(20)], np.ones((20, 3)))
        f = RPForest(n_trees=2, leaf_size=1).fit(t)
        assert len(f.trees_[0].leaves()) == 20
        assert f.query(np.ones(3), 3, search_k=20).ids == ["d0", "d1", "d10"]

    def test_errors(self, rng):
        with pytest.raises(ValueError):
            RPForest(leaf_size=0)
        with pytest.raises(ValueError):
            RPForest(metric="euclidean")
        f = RPForest(n_trees=1).fit(_table(rng, 4, 2))
        with pytest.raises(ValueError):
            f.query(np.ones(2), 5)
