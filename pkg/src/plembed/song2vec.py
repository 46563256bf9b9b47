"""Song embeddings from playlist co-occurrence (skipgram, negative sampling)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import Corpus, build_vocab
from .table import EmbeddingTable

log = logging.getLogger(__name__)


@dataclass
class SkipgramConfig:
    dim: int = 32
    window: int = 5
    negatives: int = 5
    min_count: int = 5
    epochs: int = 5
    alpha: float = 0.025
    min_alpha: float = 1e-4
    seed: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.window < 1 or self.negatives < 1:
            raise ValueError("window and negatives must be >= 1")


# ---------------------------------------------------------------- kernels

@numba.njit(cache=True, inline="always")
def _next(state):
    # splitmix64; state is a 1-element uint64 array.
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True, inline="always")
def _draw(prob, alias, state):
    # Walker alias method: the integer part of u*n picks a bucket, the
    # fractional part decides between the bucket and its alias.
    x = _next(state) * prob.shape[0]
    i = int(x)
    if x - i < prob[i]:
        return i
    return alias[i]


@numba.njit(cache=True)
def _draw_many(prob, alias, n, seed):
    state = np.array([seed], dtype=np.uint64)
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = _draw(prob, alias, state)
    return out


@numba.njit(cache=True, inline="always")
def _sig(x):
    if x > 0:
        return np.float32(1.0) / (np.float32(1.0) + np.exp(-x))
    e = np.exp(x)
    return e / (np.float32(1.0) + e)


@numba.njit(cache=True, fastmath=True)
def _sgns_epoch(tokens, offsets, syn0, syn1, prob, alias, window, negatives,
                alpha0, min_alpha, done0, total, state):
    dim = syn0.shape[1]
    neu = np.empty(dim, dtype=syn0.dtype)
    loss = 0.0
    pairs = 0
    done = done0
    for s in range(offsets.shape[0] - 1):
        a, b = offsets[s], offsets[s + 1]
        for pos in range(a, b):
            alpha = alpha0 - (alpha0 - min_alpha) * (done / total)
            if alpha < min_alpha:
                alpha = min_alpha
            done += 1
            alpha32 = np.float32(alpha)
            w = tokens[pos]
            lo = max(a, pos - window)
            hi = min(b, pos + window + 1)
            for cpos in range(lo, hi):
                if cpos == pos:
                    continue
                ctx = tokens[cpos]
                neu[:] = 0.0
                wrow = syn0[w]
                for d in range(negatives + 1):
                    if d == 0:
                        target = ctx
                        label = np.float32(1.0)
                    else:
                        target = _draw(prob, alias, state)
                        if target == ctx:
                            continue
                        label = np.float32(0.0)
                    trow = syn1[target]
                    f = np.float32(0.0)
                    for j in range(dim):
                        f += wrow[j] * trow[j]
                    sg = _sig(f)
                    if d == 0:
                        loss -= np.log(max(sg, np.float32(1e-12)))
                    else:
                        loss -= np.log(max(np.float32(1.0) - sg, np.float32(1e-12)))
                    g = (label - sg) * alpha32
                    for j in range(dim):
                        neu[j] += g * trow[j]
                        trow[j] += g * wrow[j]
                for j in range(dim):
                    wrow[j] += neu[j]
                pairs += 1
    return loss, pairs


@numba.njit(cache=True, parallel=True)
def _sgns_epoch_parallel(tokens, offsets, syn0, syn1, prob, alias, window, negatives,
                         alpha0, min_alpha, done0, total, seed, n_chunks):
    # Unsynchronised updates across chunks: results depend on thread timing.
    n_seq = offsets.shape[0] - 1
    losses = np.zeros(n_chunks)
    counts = np.zeros(n_chunks, dtype=np.int64)
    for c in numba.prange(n_chunks):
        lo = c * n_seq // n_chunks
        hi = (c + 1) * n_seq // n_chunks
        state = np.array([seed + np.uint64(c) * np.uint64(7919)], dtype=np.uint64)
        l, p = _sgns_epoch(tokens, offsets[lo:hi + 1], syn0, syn1, prob, alias, window, negatives,
                           alpha0, min_alpha, done0 + offsets[lo], total, state)
        losses[c] = l
        counts[c] = p
    return losses.sum(), counts.sum()


# ---------------------------------------------------------------- public API

class NegativeSampler:
    """Unigram distribution raised to ``power``, sampled with an alias table."""

    def __init__(self, counts, power=0.75):
        w = np.asarray(counts, dtype=np.float64) ** power
        self.probs = w / w.sum()
        self.cdf = np.cumsum(self.probs)
        n = len(w)
        scaled = self.probs * n
        prob = np.ones(n)
        alias = np.arange(n, dtype=np.int64)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, l = small.pop(), large.pop()
            prob[s] = scaled[s]
            alias[s] = l
            scaled[l] -= 1.0 - scaled[s]
            (small if scaled[l] < 1.0 else large).append(l)
        self.prob_table = prob
        self.alias_table = alias

    def draw(self, n, seed=0):
        return _draw_many(self.prob_table, self.alias_table, int(n), np.uint64(seed))


def sgns_pair_objective(center, context, negatives):
    """Loss ``-log s(u.v) - sum log s(-u.n_i)`` and gradients for all vectors."""
    u = np.asarray(center, dtype=np.float64)
    v = np.asarray(context, dtype=np.float64)
    N = np.asarray(negatives, dtype=np.float64).reshape(-1, u.shape[0])
    sp = 1.0 / (1.0 + np.exp(-(u @ v)))
    sn = 1.0 / (1.0 + np.exp(-(N @ u)))
    loss = -np.log(sp) - np.log(1.0 - sn).sum()
    du = -(1.0 - sp) * v + sn @ N
    dv = -(1.0 - sp) * u
    dN = sn[:, None] * u[None, :]
    return float(loss), du, dv, dN


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine of a zero vector is undefined")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _normalise(X):
    X = np.asarray(X, dtype=np.float64)
    n = np.linalg.norm(X, axis=-1, keepdims=True)
    return X / np.where(n == 0, 1.0, n)


def nearest_songs(table: EmbeddingTable, key: str, k: int) -> list[str]:
    """Exact top-k by cosine, excluding ``key``; ties go to the smaller id."""
    if key not in table:
        raise KeyError(f"unknown id {key}")
    if not 0 < k < len(table):
        raise ValueError("k must satisfy 0 < k < table size")
    X = _normalise(table.vectors)
    q = X[table.index[key]]
    sims = X @ q
    others = [i for i in range(len(table)) if i != table.index[key]]
    ids = np.array(table.ids, dtype=object)[others]
    order = sorted(range(len(others)), key=lambda j: (-sims[others[j]], ids[j]))
    return [ids[j] for j in order[:k]]


def _sequences(X):
    if isinstance(X, Corpus):
        return [p.track_ids for p in X.playlists]
    return [tuple(s) for s in X]


class SkipGram(TransformerMixin, BaseEstimator):
    """Skipgram with negative sampling over playlists-as-sentences.

    ``fit`` takes a :class:`Corpus` or an iterable of track-id sequences;
    ``transform`` maps track ids to their (center) vectors.  Single-worker
    training is deterministic under ``seed``; ``workers > 1`` trades that
    for speed.
    """

    def __init__(self, dim=32, window=5, negatives=5, min_count=5, epochs=5,
                 alpha=0.025, min_alpha=1e-4, seed=1, workers=1):
        self.dim = dim
        self.window = window
        self.negatives = negatives
        self.min_count = min_count
        self.epochs = epochs
        self.alpha = alpha
        self.min_alpha = min_alpha
        self.seed = seed
        self.workers = workers

    @classmethod
    def from_config(cls, cfg: SkipgramConfig):
        return cls(**vars(cfg))

    def fit(self, X, y=None):
        SkipgramConfig(**self.get_params())  # validates
        seqs = _sequences(X)
        from .corpus import Playlist
        tmp = Corpus(tuple(Playlist(str(i), s) for i, s in enumerate(seqs)), {}, "filtered")
        vocab = build_vocab(tmp, self.min_count)
        words = vocab.ids[4:]
        if not words:
            raise ValueError("empty vocabulary: no track reaches min_count")
        index = {w: i for i, w in enumerate(words)}
        encoded = [np.array([index[t] for t in s if t in index], dtype=np.int64) for s in seqs]
        encoded = [e for e in encoded if e.size > 1]
        tokens = np.concatenate(encoded) if encoded else np.zeros(0, np.int64)
        offsets = np.zeros(len(encoded) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([e.size for e in encoded])

        counts = np.array([vocab.counts[w] for w in words], dtype=np.float64)
        self.sampler_ = NegativeSampler(counts)
        rng = np.random.default_rng(self.seed)
        V, d = len(words), self.dim
        syn0 = ((rng.random((V, d)) - 0.5) / d).astype(np.float32)
        syn1 = np.zeros((V, d), dtype=np.float32)
        total = float(max(tokens.size * self.epochs, 1))
        state = np.array([np.uint64(self.seed) * np.uint64(2654435761) + np.uint64(1)], dtype=np.uint64)
        self.loss_history_ = []
        for ep in range(self.epochs):
            done0 = tokens.size * ep
            if self.workers > 1:
                loss, pairs = _sgns_epoch_parallel(
                    tokens, offsets, syn0, syn1, self.sampler_.prob_table, self.sampler_.alias_table, self.window, self.negatives,
                    self.alpha, self.min_alpha, done0, total, np.uint64(self.seed + ep), self.workers)
            else:
                loss, pairs = _sgns_epoch(
                    tokens, offsets, syn0, syn1, self.sampler_.prob_table, self.sampler_.alias_table, self.window, self.negatives,
                    self.alpha, self.min_alpha, done0, total, state)
            self.loss_history_.append(loss / max(pairs, 1))
            log.info("skipgram epoch %d: mean pair loss %.4f", ep + 1, self.loss_history_[-1])
        self.vocab_ = vocab
        self.table_ = EmbeddingTable(words, syn0)
        self.context_vectors_ = syn1
        return self

    def transform(self, X):
        check_is_fitted(self, "table_")
        return self.table_.rows(X)


def train_skipgram(c: Corpus, cfg: SkipgramConfig | None = None) -> EmbeddingTable:
    return SkipGram.from_config(cfg or SkipgramConfig()).fit(c).table_
