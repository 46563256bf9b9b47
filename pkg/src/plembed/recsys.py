"""Recommendation quality of an embedding space: do a playlist's nearest
neighbours share its genre or its length class?"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .ann import QueryResult, RPForest, _id_ranks, _top, _unit, angular_distances
from .probes import plen_class
from .table import EmbeddingTable

LABEL_KINDS = ("genre", "length")


class ExactIndex:
    """Brute-force index with the forest's query interface."""

    def __init__(self, t: EmbeddingTable):
        self.ids_ = list(t.ids)
        self.index_ = dict(t.index)
        self.vectors_ = _unit(t.vectors)
        self.ranks_ = _id_ranks(self.ids_)

    def __len__(self):
        return len(self.ids_)

    def query_id(self, key: str, k: int, search_k=None) -> QueryResult:
        i = self.index_[key]
        if not 1 <= k <= len(self) - 1:
            raise ValueError(f"k={k} outside 1..{len(self) - 1}")
        cands = np.delete(np.arange(len(self)), i)
        d = angular_distances(self.vectors_[cands], self.vectors_[i])
        idx, dist = _top(cands, d, self.ranks_, k)
        return QueryResult([self.ids_[j] for j in idx], dist, len(self) - 1)


def length_labels(playlists) -> dict[str, int]:
    """Length class (20-song bins over [30, 250]) of every playlist in range."""
    out = {}
    for p in playlists:
        c = plen_class(len(p.track_ids))
        if c is not None:
            out[p.playlist_id] = c
    return out


def _neighbours(index, qid, k, search_k=None) -> list[str]:
    return index.query_id(qid, k, search_k).ids


def precision_at_k(index, labels: Mapping, qid: str, k: int, search_k=None) -> float:
    """Share of the top-k neighbours (query excluded) carrying the query's label."""
    if qid not in labels:
        raise KeyError(f"query {qid} is unlabeled")
    if k == 0:
        return 0.0
    nb = _neighbours(index, qid, k, search_k)
    return sum(labels.get(n) == labels[qid] for n in nb) / k


def recall_at_k(index, labels: Mapping, qid: str, k: int, search_k=None) -> float | None:
    """Share of all other same-label items retrieved in the top k.

    ``None`` when the query's label has no other member.
    """
    if qid not in labels:
        raise KeyError(f"query {qid} is unlabeled")
    y = labels[qid]
    total = sum(1 for i in index.ids_ if i != qid and labels.get(i) == y)
    if total == 0:
        return None
    if k == 0:
        return 0.0
    nb = _neighbours(index, qid, k, search_k)
    return sum(labels.get(n) == y for n in nb) / total


def chance_precision(labels: Mapping) -> float:
    """Expected precision when neighbours are a uniform draw of the other
    items and queries are drawn uniformly from the labeled items."""
    counts = np.array(list(np.unique(list(labels.values()), return_counts=True)[1]), dtype=np.float64)
    n = counts.sum()
    return float((counts / n * (counts - 1) / (n - 1)).sum())


@dataclass
class RecEvalConfig:
    n_queries: int = 100
    ks: Sequence[int] = (1, 5, 10, 20, 50, 100)
    label_kind: str = "genre"
    seed: int = 0
    search_k: int | None = None

    def __post_init__(self):
        if self.n_queries < 1:
            raise ValueError("n_queries must be >= 1")
        if self.label_kind not in LABEL_KINDS:
            raise ValueError(f"label_kind must be one of {LABEL_KINDS}")
        self.ks = tuple(sorted(set(int(k) for k in self.ks)))
        if not self.ks or self.ks[0] < 1:
            raise ValueError("ks must be positive")


@dataclass
class RecReport:
    label_kind: str
    encoder: str
    ks: tuple
    mean_precision: np.ndarray
    mean_recall: np.ndarray
    queries: list = field(default_factory=list)
    precision: np.ndarray | None = None     # (n_queries, len(ks))
    recall: np.ndarray | None = None
    per_class_precision: dict = field(default_factory=dict)

    def at(self, k: int) -> float:
        return float(self.mean_precision[self.ks.index(k)])


def eval_recommendation(index, labels: Mapping, cfg: RecEvalConfig | None = None,
                        encoder: str = "") -> RecReport:
    """Average precision/recall at every k over seeded random labeled queries.

    Neighbours are retrieved once at the largest k and truncated, so the
    retrieval sets are nested across k.
    """
    cfg = cfg or RecEvalConfig()
    pool = sorted(i for i in index.ids_ if i in labels)
    if len(pool) < cfg.n_queries:
        raise ValueError(f"only {len(pool)} labeled items for {cfg.n_queries} queries")
    kmax = min(cfg.ks[-1], len(index) - 1)
    ks = tuple(k for k in cfg.ks if k <= kmax)
    rng = np.random.default_rng(cfg.seed)
    queries = [pool[i] for i in rng.choice(len(pool), cfg.n_queries, replace=False)]
    class_size = {}
    for i in index.ids_:
        if i in labels:
            class_size[labels[i]] = class_size.get(labels[i], 0) + 1
    P = np.zeros((len(queries), len(ks)))
    R = np.full((len(queries), len(ks)), np.nan)
    for qi, q in enumerate(queries):
        nb = _neighbours(index, q, kmax, cfg.search_k)
        hit = np.cumsum([labels.get(n) == labels[q] for n in nb])
        total = class_size[labels[q]] - 1
        for j, k in enumerate(ks):
            P[qi, j] = hit[k - 1] / k
            if total > 0:
                R[qi, j] = hit[k - 1] / total
    per_class = {}
    for c in sorted(set(labels[q] for q in queries), key=str):
        rows = [i for i, q in enumerate(queries) if labels[q] == c]
        per_class[c] = P[rows].mean(0)
    mean_r = np.array([np.nanmean(R[:, j]) if np.isfinite(R[:, j]).any() else 0.0 for j in range(len(ks))])
    return RecReport(cfg.label_kind, encoder, ks, P.mean(0), mean_r, queries, P, R, per_class)


def write_pr_csv(path, reports: Sequence[RecReport]):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "label_kind", "encoder", "mean_precision", "mean_recall"])
        for r in reports:
            for k, p, rc in zip(r.ks, r.mean_precision, r.mean_recall):
                w.writerow([k, r.label_kind, r.encoder, f"{p:.6f}", f"{rc:.6f}"])


def build_index(t: EmbeddingTable, labels: Mapping | None = None, exact=False, **forest_kw):
    """Index the (labeled subset of the) table, by forest or exhaustively."""
    if labels is not None:
        t = t.subset([i for i in t.ids if i in labels])
    return ExactIndex(t) if exact else RPForest(**forest_kw).fit(t)
