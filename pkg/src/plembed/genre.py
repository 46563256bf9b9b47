"""Genre annotation: cluster song vectors, vote artist genres per cluster,
label playlists by song agreement."""

from __future__ import annotations

import csv
import warnings
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .corpus import PARENT_GENRES, Playlist, Track
from .table import EmbeddingTable


def normalise_genre(g: str) -> str:
    return " ".join(g.strip().lower().replace("_", "-").split())


class GenreLexicon:
    """Subgenre -> parent map onto the nine parent genres."""

    parents = PARENT_GENRES

    def __init__(self, mapping: Mapping[str, str]):
        self.mapping = {}
        for sub, parent in mapping.items():
            if parent not in self.parents:
                raise ValueError(f"{sub!r} maps to {parent!r}, which is not a parent genre")
            self.mapping[normalise_genre(sub)] = parent
        for p in self.parents:
            self.mapping.setdefault(normalise_genre(p), p)

    @classmethod
    def load(cls, path=None) -> "GenreLexicon":
        if path is None:
            text = resources.files("plembed").joinpath("data/genre_lexicon.csv").read_text("utf-8")
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        rows = list(csv.reader(text.splitlines()))
        if not rows or [h.strip() for h in rows[0]] != ["subgenre", "parent"]:
            raise ValueError("lexicon header must be subgenre,parent")
        return cls({r[0]: r[1].strip() for r in rows[1:] if r})

    def parent(self, genre: str) -> str | None:
        return self.mapping.get(normalise_genre(genre))


@dataclass
class VoteConfig:
    min_share: float = 0.5
    min_lead: float = 1.5

    def __post_init__(self):
        if not 0 < self.min_share <= 1:
            raise ValueError("min_share must be in (0, 1]")
        if self.min_lead < 1:
            raise ValueError("min_lead must be >= 1")


# ---------------------------------------------------------------- k-means

def _sq_dists(X, C):
    return np.maximum((X * X).sum(1)[:, None] - 2 * X @ C.T + (C * C).sum(1)[None, :], 0.0)


class KMeans(ClusterMixin, BaseEstimator):
    """Lloyd's algorithm with k-means++ seeding.

    Stops when no centroid moves by ``tol`` or more (Euclidean), or after
    ``max_iter`` rounds.  ``inertia_history_`` holds the inertia after each
    assignment step.
    """

    def __init__(self, n_clusters=8, max_iter=100, tol=1e-4, seed=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.tol = tol
        self.seed = seed

    def _init(self, X, rng):
        n = X.shape[0]
        C = np.empty((self.n_clusters, X.shape[1]))
        C[0] = X[rng.integers(n)]
        d2 = _sq_dists(X, C[:1]).ravel()
        for j in range(1, self.n_clusters):
            total = d2.sum()
            if total <= 0:
                idx = rng.integers(n)
            else:
                idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
                idx = min(idx, n - 1)
            C[j] = X[idx]
            d2 = np.minimum(d2, _sq_dists(X, C[j:j + 1]).ravel())
        return C

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if self.n_clusters < 2:
            raise ValueError("k-means needs at least 2 clusters")
        if self.n_clusters > X.shape[0]:
            raise ValueError(f"n_clusters={self.n_clusters} exceeds {X.shape[0]} points")
        rng = np.random.default_rng(self.seed)
        C = self._init(X, rng)
        history = []
        labels = None
        for it in range(self.max_iter):
            d2 = _sq_dists(X, C)
            labels = d2.argmin(1)
            history.append(float(d2[np.arange(X.shape[0]), labels].sum()))
            newC = C.copy()
            for j in range(self.n_clusters):
                m = labels == j
                if m.any():
                    newC[j] = X[m].mean(0)
            shift = np.sqrt(((newC - C) ** 2).sum(1)).max()
            C = newC
            if shift < self.tol:
                break
        d2 = _sq_dists(X, C)
        self.labels_ = d2.argmin(1)
        self.inertia_ = float(d2[np.arange(X.shape[0]), self.labels_].sum())
        history.append(self.inertia_)
        self.cluster_centers_ = C
        self.inertia_history_ = history
        self.n_iter_ = it + 1
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return _sq_dists(X, self.cluster_centers_).argmin(1)


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignment: dict[str, int]
    inertia_history: list


def kmeans(t: EmbeddingTable, k: int, seed: int = 0, max_iters: int = 100, tol: float = 1e-4) -> ClusterModel:
    km = KMeans(k, max_iters, tol, seed).fit(t.vectors)
    return ClusterModel(k, km.cluster_centers_, dict(zip(t.ids, km.labels_.tolist())), km.inertia_history_)


def default_k(n_songs: int) -> int:
    return max(2, n_songs // 125)


# ---------------------------------------------------------------- votes

def genre_counts(members: Iterable, lex: GenreLexicon) -> Counter:
    counts = Counter()
    for m in members:
        genres = m.artist_genres if isinstance(m, Track) else m
        for g in genres:
            p = lex.parent(g)
            if p is not None:
                counts[p] += 1
    return counts


def cluster_genre_vote(members: Iterable, lex: GenreLexicon, cfg: VoteConfig | None = None) -> str | None:
    """Parent genre with a clear majority among members' artist genres, else None.

    A tie at the top always abstains.
    """
    cfg = cfg or VoteConfig()
    counts = genre_counts(members, lex)
    if not counts:
        return None
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    top, n_top = ranked[0]
    n_second = ranked[1][1] if len(ranked) > 1 else 0
    if n_second == n_top:
        return None
    share = n_top / sum(counts.values())
    if share >= cfg.min_share or n_top >= cfg.min_lead * n_second:
        return top
    return None


@dataclass
class SongAnnotation:
    labels: dict[str, str]
    clusters: ClusterModel
    cluster_genre: dict[int, str | None]


def annotate_songs(t: EmbeddingTable, tracks: Mapping[str, Track], lex: GenreLexicon | None = None,
                   k: int | None = None, seed: int = 0, vote: VoteConfig | None = None) -> SongAnnotation:
    lex = lex or GenreLexicon.load()
    k = k or default_k(len(t))
    model = kmeans(t, k, seed)
    members = {}
    for tid, c in model.assignment.items():
        members.setdefault(c, []).append(tracks[tid])
    cg = {c: cluster_genre_vote(ms, lex, vote) for c, ms in sorted(members.items())}
    labels = {tid: cg[c] for tid, c in model.assignment.items() if cg[c] is not None}
    return SongAnnotation(labels, model, cg)


def annotate_playlists(song_labels: Mapping[str, str], playlists: Iterable[Playlist],
                       agree_frac: float = 0.7) -> dict[str, str]:
    """Label playlists whose songs are all annotated and where more than
    ``agree_frac`` of them share one genre."""
    out = {}
    for p in playlists:
        if not p.track_ids or any(t not in song_labels for t in p.track_ids):
            continue
        g, n = Counter(song_labels[t] for t in p.track_ids).most_common(1)[0]
        if n / len(p.track_ids) > agree_frac:
            out[p.playlist_id] = g
    return out


def fully_annotated(song_labels: Mapping[str, str], playlists: Iterable[Playlist]) -> list[Playlist]:
    return [p for p in playlists if p.track_ids and all(t in song_labels for t in p.track_ids)]


def validate_annotation(song_labels: Mapping[str, str], t: EmbeddingTable, split_seed: int = 0,
                        **probe_kw) -> float:
    """Held-out accuracy of a probe classifier predicting song genre from song vectors."""
    from .probes import ProbeDataset, train_probe

    ids = [s for s in t.ids if s in song_labels]
    names = sorted(set(song_labels[s] for s in ids))
    if len(names) < 2:
        raise ValueError("need at least two genres to validate")
    y = np.array([names.index(song_labels[s]) for s in ids])
    for c, n in zip(names, np.bincount(y, minlength=len(names))):
        if n < 5:
            warnings.warn(f"genre {c} has only {n} songs", stacklevel=2)
    ds = ProbeDataset.create("genre-annotation", t.rows(ids), y, classes=names, seed=split_seed)
    return train_probe(ds, seed=split_seed, **probe_kw).accuracy


# ---------------------------------------------------------------- projection

def top_components(X, n_components=2, iters=500, tol=1e-12, seed=0):
    """Leading eigenvectors of X^T X via power iteration with deflation."""
    A = X.T @ X
    rng = np.random.default_rng(seed)
    comps, vals = [], []
    for _ in range(n_components):
        v = rng.standard_normal(A.shape[0])
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(iters):
            w = A @ v
            nw = np.linalg.norm(w)
            if nw == 0:
                break
            w /= nw
            done = min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol
            v = w
            lam = float(v @ A @ v)
            if done:
                break
        comps.append(v)
        vals.append(lam)
        A = A - lam * np.outer(v, v)
    return np.array(comps), np.array(vals)


def pca2d(t: EmbeddingTable, labels: Mapping[str, str] | None = None, seed: int = 0):
    """Centered 2-D coordinates of every row; returns (coords, genres)."""
    if len(t) < 3:
        raise ValueError("need at least 3 points")
    X = np.asarray(t.vectors, dtype=np.float64)
    X = X - X.mean(0)
    if np.allclose(X, 0):
        raise ValueError("degenerate data: all points identical")
    comps, _ = top_components(X, 2, seed=seed)
    coords = X @ comps.T
    genres = [(labels or {}).get(i, "") for i in t.ids]
    return coords, genres


def write_pca_csv(path, t: EmbeddingTable, coords, genres):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "genre", "x", "y"])
        for i, g, (x, y) in zip(t.ids, genres, coords):
            w.writerow([i, g, repr(float(x)), repr(float(y))])


def write_annotations(path, labels: Mapping[str, str]):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "genre"])
        for k in sorted(labels):
            w.writerow([k, labels[k]])


def read_annotations(path) -> dict[str, str]:
    with open(path, encoding="utf-8", newline="") as fh:
        return {r["id"]: r["genre"] for r in csv.DictReader(fh)}
