"""Bag-of-words playlist encoders: plain mean and SIF weighting with
removal of the dominant singular direction."""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import Corpus, Playlist
from .nncore import load_tensors, save_tensors
from .table import EmbeddingTable


@dataclass
class SIFConfig:
    a: float = math.exp(-3)
    iters: int = 100
    tol: float = 1e-9

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("a must be positive")


class ConvergenceWarning(UserWarning):
    pass


def _seqs(X) -> list[tuple[str, ...]]:
    if isinstance(X, Corpus):
        return [p.track_ids for p in X.playlists]
    return [p.track_ids if isinstance(p, Playlist) else tuple(p) for p in X]


def frequency_table(c: Corpus | Iterable[Sequence[str]]) -> dict[str, float]:
    """Unigram probability of every track over all playlist tokens."""
    counts = Counter(t for s in _seqs(c) for t in s)
    total = sum(counts.values())
    return {t: n / total for t, n in counts.items()}


def sif_weight(p_w: float, a: float) -> float:
    return a / (a + p_w)


def bow_embed(pl, t: EmbeddingTable) -> np.ndarray:
    """Unweighted mean of the vectors of the playlist's songs that have one."""
    ids = pl.track_ids if isinstance(pl, Playlist) else pl
    rows = [t.index[s] for s in ids if s in t.index]
    if not rows:
        raise ValueError("playlist has no song with an embedding")
    return t.vectors[rows].astype(np.float64).mean(0)


def first_singular_vector(X, iters: int = 100, tol: float = 1e-9, seed: int = 0):
    """Dominant right-singular direction of ``X`` by power iteration.

    Iterates on the smaller of ``X^T X`` and ``X X^T``.  Returns
    ``(u, converged)``; ``u`` has unit norm and a deterministic sign (its
    largest-magnitude coordinate is positive).
    """
    X = np.asarray(X, dtype=np.float64)
    if not np.any(X):
        raise ValueError("matrix is zero")
    n, d = X.shape
    gram_right = d <= n
    A = X.T @ X if gram_right else X @ X.T
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    converged = False
    for _ in range(iters):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        w /= nw
        if w @ v < 0:
            w = -w
        delta = np.linalg.norm(w - v)
        v = w
        if delta < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"power iteration did not converge in {iters} iterations", ConvergenceWarning,
                      stacklevel=2)
    u = v if gram_right else X.T @ v
    u = u / np.linalg.norm(u)
    if u[np.argmax(np.abs(u))] < 0:
        u = -u
    return u, converged


def dominant_energy_ratio(X, **kw) -> float:
    """sigma_1^2 / sum sigma_i^2, with sigma_1 from power iteration."""
    X = np.asarray(X, dtype=np.float64)
    u, _ = first_singular_vector(X, **kw)
    return float(np.sum((X @ u) ** 2) / np.sum(X * X))


class BowEncoder(TransformerMixin, BaseEstimator):
    """Arithmetic mean of song vectors.  ``fit`` only records the song table."""

    def __init__(self, song_table: EmbeddingTable | None = None):
        self.song_table = song_table

    def fit(self, X=None, y=None):
        if self.song_table is None:
            raise ValueError("BowEncoder needs a song_table")
        self.dim_ = self.song_table.dim
        return self

    def transform(self, X):
        check_is_fitted(self, "dim_")
        return np.stack([bow_embed(s, self.song_table) for s in _seqs(X)])


class SIFEncoder(TransformerMixin, BaseEstimator):
    """Smooth-inverse-frequency weighted mean followed by projecting out the
    first singular direction of the fitted playlists.

    ``fit`` estimates the frequency table (unless ``frequencies`` is given)
    and the direction ``u_``; ``transform`` reuses both, so unseen playlists
    are embedded consistently.
    """

    def __init__(self, song_table: EmbeddingTable | None = None, a=math.exp(-3), iters=100,
                 tol=1e-9, frequencies: Mapping[str, float] | None = None):
        self.song_table = song_table
        self.a = a
        self.iters = iters
        self.tol = tol
        self.frequencies = frequencies

    def weighted_mean(self, seqs) -> np.ndarray:
        t, freq, a = self.song_table, self.freq_, self.a
        out = np.empty((len(seqs), t.dim))
        for i, s in enumerate(seqs):
            known = [x for x in s if x in t.index]
            if not known:
                raise ValueError("playlist has no song with an embedding")
            w = np.array([sif_weight(freq.get(x, 0.0), a) for x in known])
            out[i] = w @ t.vectors[[t.index[x] for x in known]].astype(np.float64) / len(known)
        return out

    def fit(self, X, y=None):
        SIFConfig(self.a, self.iters, self.tol)
        if self.song_table is None:
            raise ValueError("SIFEncoder needs a song_table")
        seqs = _seqs(X)
        if len(seqs) < 2:
            warnings.warn("fitting the removal direction on fewer than 2 playlists", stacklevel=2)
        self.freq_ = dict(self.frequencies) if self.frequencies is not None else frequency_table(seqs)
        V = self.weighted_mean(seqs)
        self.u_, self.converged_ = first_singular_vector(V, self.iters, self.tol)
        return self

    def transform(self, X):
        check_is_fitted(self, "u_")
        V = self.weighted_mean(_seqs(X))
        return V - np.outer(V @ self.u_, self.u_)

    def save_state(self, path):
        ids = sorted(self.freq_)
        save_tensors(path, {"u": self.u_, "p": np.array([self.freq_[i] for i in ids])}, {"a": self.a, "ids": ids})

    def load_state(self, path):
        tensors, meta = load_tensors(path)
        self.u_ = tensors["u"]
        self.a = meta["a"]
        self.freq_ = dict(zip(meta["ids"], tensors["p"].tolist()))
        return self


def sif_embed_corpus(playlists, t: EmbeddingTable, f: Mapping[str, float], cfg: SIFConfig | None = None):
    cfg = cfg or SIFConfig()
    enc = SIFEncoder(t, cfg.a, cfg.iters, cfg.tol, frequencies=f)
    pls = list(playlists.playlists if isinstance(playlists, Corpus) else playlists)
    V = enc.fit_transform(pls)
    ids = [p.playlist_id if isinstance(p, Playlist) else str(i) for i, p in enumerate(pls)]
    return EmbeddingTable(ids, V), enc
