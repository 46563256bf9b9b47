import numpy as np
import pytest
from hypothesis import given, strategies as st

from plembed.corpus import Playlist
from plembed.recsys import (ExactIndex, RecEvalConfig, build_index, chance_precision, eval_recommendation,
                            length_labels, precision_at_k, recall_at_k, write_pr_csv)
from plembed.table import EmbeddingTable


def _clusters(rng, n_per=30, k=4, d=6, spread=0.1):
    centers = rng.normal(size=(k, d)) * 3
    X = np.repeat(centers, n_per, 0) + rng.normal(scale=spread, size=(k * n_per, d))
    ids = [f"p{i:03d}" for i in range(k * n_per)]
    labels = {i: f"g{j // n_per}" for j, i in enumerate(ids)}
    return EmbeddingTable(ids, X), labels


def scan_precision(t, labels, q, k):
    """Oracle: loop over all other rows, sort by (1 - cos, id)."""
    x = t[q] / np.linalg.norm(t[q])
    scored = sorted((1 - float(x @ (v / np.linalg.norm(v))), i) for i, v in zip(t.ids, t.vectors) if i != q)
    return sum(labels[i] == labels[q] for _, i in scored[:k]) / k


def test_precision_extremes(rng):
    t, labels = _clusters(rng)
    idx = ExactIndex(t)
    assert precision_at_k(idx, labels, "p000", 10) == 1.0
    other = {i: ("x" if i == "p000" else "y") for i in t.ids}
    assert precision_at_k(idx, other, "p000", 10) == 0.0
    assert precision_at_k(idx, labels, "p000", 0) == 0.0
    with pytest.raises(KeyError):
        precision_at_k(idx, {}, "p000", 3)


def test_recall_properties(rng):
    t, labels = _clusters(rng)
    idx = ExactIndex(t)
    assert recall_at_k(idx, labels, "p005", 29) == 1.0
    assert recall_at_k(idx, labels, "p005", 0) == 0.0
    vals = [recall_at_k(idx, labels, "p005", k) for k in range(1, 60)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert recall_at_k(idx, {"p005": "lonely"}, "p005", 3) is None


@given(st.integers(0, 5000))
def test_exact_index_matches_scan(seed):
    r = np.random.default_rng(seed)
    t, labels = _clusters(r, n_per=8, k=3, spread=2.0)
    idx = ExactIndex(t)
    for q in ("p000", "p010", "p023"):
        for k in (1, 5, 10):
            assert precision_at_k(idx, labels, q, k) == scan_precision(t, labels, q, k)


def test_chance_precision():
    # two classes of 3 and 1: 3/4 * 2/3 + 1/4 * 0
    assert chance_precision({"a": 0, "b": 0, "c": 0, "d": 1}) == pytest.approx(0.5)
    assert chance_precision({i: 0 for i in range(5)}) == 1.0


def test_random_labels_near_chance(rng):
    t, _ = _clusters(rng, n_per=250, k=4, spread=0.5)
    labels = dict(zip(t.ids, rng.integers(0, 5, len(t)).tolist()))
    rep = eval_recommendation(ExactIndex(t), labels, RecEvalConfig(n_queries=500, ks=(10,), seed=1))
    assert abs(rep.at(10) - chance_precision(labels)) <= 0.05


def test_eval_report(rng, tmp_path):
    t, labels = _clusters(rng)
    cfg = RecEvalConfig(n_queries=40, ks=(1, 5, 10, 500), seed=3)
    rep = eval_recommendation(ExactIndex(t), labels, cfg, encoder="bow")
    assert rep.ks == (1, 5, 10)        # k above n - 1 is dropped
    np.testing.assert_allclose(rep.mean_precision, 1.0)
    for q, row in zip(rep.queries, rep.precision):
        assert row[2] == scan_precision(t, labels, q, 10)
    assert np.all(np.diff(rep.mean_recall) >= 0)
    again = eval_recommendation(ExactIndex(t), labels, cfg, encoder="bow")
    assert again.queries == rep.queries and np.array_equal(again.precision, rep.precision)
    write_pr_csv(tmp_path / "pr.csv", [rep])
    lines = (tmp_path / "pr.csv").read_text().splitlines()
    assert lines[0] == "k,label_kind,encoder,mean_precision,mean_recall" and lines[1].startswith("1,genre,bow,")
    with pytest.raises(ValueError):
        eval_recommendation(ExactIndex(t), labels, RecEvalConfig(n_queries=1000))


def test_forest_and_exact_agree_when_exhaustive(rng):
    t, labels = _clusters(rng, spread=1.0)
    half = {i: g for i, g in labels.items() if int(i[1:]) % 2 == 0}
    ex = build_index(t, half, exact=True)
    fo = build_index(t, half, n_trees=10, seed=1)
    assert len(ex) == len(fo) == len(half)
    cfg = RecEvalConfig(n_queries=30, ks=(5, 10), search_k=len(half))
    a = eval_recommendation(ex, half, cfg)
    b = eval_recommendation(fo, half, cfg)
    assert np.array_equal(a.precision, b.precision)


def test_length_labels():
    pls = [Playlist(f"p{n}", tuple(str(i) for i in range(n))) for n in (10, 30, 100, 250, 300)]
    assert length_labels(pls) == {"p30": 0, "p100": 3, "p250": 9}


def test_config_validation():
    with pytest.raises(ValueError):
        RecEvalConfig(label_kind="mood")
    with pytest.raises(ValueError):
        RecEvalConfig(ks=(0, 5))
    assert RecEvalConfig(ks=(10, 1, 10)).ks == (1, 10)
