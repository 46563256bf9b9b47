"""Probing tasks over playlist embeddings and the small classifier that scores them."""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .corpus import PARENT_GENRES, Corpus, Playlist
from .nncore import (AdamConfig, Parameter, adam_update, batch_softmax_cross_entropy,
                     init_uniform, init_zeros, sigmoid, sigmoid_binary_cross_entropy)
from .table import EmbeddingTable

PERMUTE_KINDS = ("shuffle1", "shuffle2", "reversal")
PERMUTE_FRACTIONS = (0.1, 0.25, 0.5, 0.75, 1.0)
DIVERSITY_BINS = ((1, 3), (4, 6), (7, 9))
DIVERSITY_NAMES = ("low", "medium", "high")
SHIFT_EDGES = (0.34, 0.67)
SHIFT_NAMES = ("low", "mid", "high")
PLEN_RANGE = (30, 250)
PLEN_WIDTH = 20
PLEN_CLASSES = 10


def class_weights(y, n_classes: int | None = None) -> np.ndarray:
    """Balanced weights N / (K * count_c) over the K classes present.

    Absent classes (possible when ``n_classes`` is given) get weight 0.
    """
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise ValueError("class weights of an empty label set")
    counts = np.bincount(y, minlength=n_classes or 0).astype(np.float64)
    present = counts > 0
    w = np.zeros_like(counts)
    w[present] = y.size / (present.sum() * counts[present])
    return w


# ---------------------------------------------------------------- datasets

@dataclass
class ProbeDataset:
    task: str
    X: np.ndarray
    y: np.ndarray
    kind: str                       # multiclass | binary | multilabel
    classes: list
    class_weights: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    groups: np.ndarray | None = None
    ids: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.X) != len(self.y):
            raise ValueError(f"{len(self.X)} inputs but {len(self.y)} labels")

    @property
    def chance(self) -> float:
        """Accuracy of guessing uniformly among the classes present."""
        if self.kind == "multilabel":
            return 0.5
        return 1.0 / len(np.unique(self.y))

    @classmethod
    def create(cls, task, X, y, classes=None, seed=0, groups=None, test_size=0.2, kind=None,
               ids=None) -> "ProbeDataset":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if kind is None:
            if y.ndim == 2:
                kind = "multilabel"
            else:
                kind = "binary" if len(np.unique(y)) <= 2 and (classes is None or len(classes) == 2) else "multiclass"
        if kind == "multilabel":
            n_out = y.shape[1]
            classes = list(classes) if classes is not None else list(range(n_out))
            w = np.ones(n_out)
        else:
            y = y.astype(np.int64)
            classes = list(classes) if classes is not None else sorted(np.unique(y).tolist())
            if len(np.unique(y)) < 2:
                raise ValueError(f"{task}: fewer than 2 classes present")
            w = class_weights(y, len(classes))
        tr, te = split_indices(y if kind != "multilabel" else None, len(y), seed, groups, test_size)
        return cls(task, X, y, kind, classes, w, tr, te,
                   None if groups is None else np.asarray(groups), list(ids or []))


def split_indices(y, n, seed=0, groups=None, test_size=0.2):
    """Seeded train/test split.

    With ``groups`` whole groups go to one side (so an original playlist
    and its permuted copy never straddle the split); otherwise the split is
    stratified by class when labels are given.
    """
    # separate stream from the dataset builders, which draw from ``seed`` itself
    rng = np.random.default_rng([seed, 0x5B1])
    if n < 2:
        raise ValueError("need at least two samples to split")
    test = np.zeros(n, dtype=bool)
    if groups is not None:
        groups = np.asarray(groups)
        ug = np.unique(groups)
        chosen = rng.permutation(ug)[:max(1, int(round(test_size * len(ug))))]
        test = np.isin(groups, chosen)
    elif y is not None:
        for c in np.unique(y):
            idx = np.flatnonzero(y == c)
            k = int(round(test_size * len(idx)))
            if len(idx) > 1:
                k = min(max(k, 1), len(idx) - 1)
            else:
                k = 0
            test[rng.permutation(idx)[:k]] = True
    else:
        test[rng.permutation(n)[:max(1, int(round(test_size * n)))]] = True
    return np.flatnonzero(~test), np.flatnonzero(test)


def _embed(encoder, seqs) -> np.ndarray:
    if hasattr(encoder, "transform"):
        return np.asarray(encoder.transform(seqs), dtype=np.float64)
    return np.asarray(encoder(seqs), dtype=np.float64)


def _seq(p):
    return p.track_ids if isinstance(p, Playlist) else tuple(p)


def _pid(p, i):
    return p.playlist_id if isinstance(p, Playlist) else str(i)


def make_gpred(labels: Mapping[str, str], embeddings: EmbeddingTable, seed=0) -> ProbeDataset:
    """Genre of each labeled playlist, over the parent genres."""
    ids = [i for i in embeddings.ids if i in labels]
    classes = [g for g in PARENT_GENRES if any(labels[i] == g for i in ids)]
    if len(classes) < 2:
        raise ValueError("genre prediction needs at least 2 genres")
    y = np.array([classes.index(labels[i]) for i in ids])
    return ProbeDataset.create("GPred", embeddings.rows(ids), y, classes, seed, ids=ids)


def diversity_class(n_genres: int) -> int:
    for c, (lo, hi) in enumerate(DIVERSITY_BINS):
        if lo <= n_genres <= hi:
            return c
    raise ValueError(f"genre count {n_genres} outside 1..9")


def make_gdpred(playlists: Sequence[Playlist], song_labels: Mapping[str, str],
                embeddings: EmbeddingTable, seed=0) -> ProbeDataset:
    """Number of distinct song genres, binned low / medium / high."""
    pls = [p for p in playlists if p.playlist_id in embeddings and p.track_ids
           and all(t in song_labels for t in p.track_ids)]
    y = np.array([diversity_class(len({song_labels[t] for t in p.track_ids})) for p in pls])
    ids = [p.playlist_id for p in pls]
    return ProbeDataset.create("GDPred", embeddings.rows(ids), y, list(DIVERSITY_NAMES), seed,
                               kind="multiclass", ids=ids)


def plen_class(n: int) -> int | None:
    lo, hi = PLEN_RANGE
    if n < lo or n > hi:
        return None
    # ten classes over [30, 250]: the last bin absorbs 230-250
    return min((n - lo) // PLEN_WIDTH, PLEN_CLASSES - 1)


def make_plen(playlists: Sequence[Playlist], embeddings: EmbeddingTable, seed=0) -> ProbeDataset:
    """Length in 20-song bins over [30, 250]; other lengths are left out."""
    pls = [p for p in playlists if p.playlist_id in embeddings and plen_class(len(p.track_ids)) is not None]
    y = np.array([plen_class(len(p.track_ids)) for p in pls])
    ids = [p.playlist_id for p in pls]
    names = [f"{30 + 20 * c}-{30 + 20 * c + 19}" for c in range(10)]
    names[-1] = "210-250"
    return ProbeDataset.create("PLen", embeddings.rows(ids), y, names, seed, kind="multiclass", ids=ids)


def sc_targets(c: Corpus, n_targets: int) -> list[str]:
    """The middle ``n_targets`` songs when ranked by occurrence count."""
    counts = c.track_counts()
    ranked = sorted(counts, key=lambda t: (-counts[t], t))
    if len(ranked) < n_targets:
        raise ValueError(f"vocabulary of {len(ranked)} is smaller than {n_targets} targets")
    start = (len(ranked) - n_targets) // 2
    return ranked[start:start + n_targets]


def make_sc(c: Corpus, embeddings: EmbeddingTable, n_targets=50, seed=0,
            min_per_class=10) -> ProbeDataset:
    """Which of the target songs a playlist contains.

    Only playlists holding exactly one target qualify; every class is
    sampled down to the same count.  Targets with fewer than
    ``min_per_class`` qualifying playlists are dropped with a warning.
    """
    targets = sc_targets(c, n_targets)
    tset = set(targets)
    by_target: dict[str, list[str]] = {t: [] for t in targets}
    for p in c.playlists:
        if p.playlist_id not in embeddings:
            continue
        hit = [t for t in p.track_ids if t in tset]
        if len(hit) == 1:
            by_target[hit[0]].append(p.playlist_id)
    kept = [t for t in targets if len(by_target[t]) >= min_per_class]
    if len(kept) < len(targets):
        warnings.warn(f"song content: {len(targets) - len(kept)} of {len(targets)} targets lack "
                      f"{min_per_class} qualifying playlists and were dropped", stacklevel=2)
    if len(kept) < 2:
        raise ValueError("song content task needs at least 2 usable targets")
    per = min(len(by_target[t]) for t in kept)
    rng = np.random.default_rng(seed)
    ids, y = [], []
    for ci, t in enumerate(kept):
        pool = by_target[t]
        pick = sorted(rng.choice(len(pool), per, replace=False))
        ids += [pool[i] for i in pick]
        y += [ci] * per
    return ProbeDataset.create("SC", embeddings.rows(ids), np.array(y), kept, seed, kind="multiclass", ids=ids)


# ---------------------------------------------------------------- order tasks

def bigram_shift(seq, i: int) -> tuple:
    s = list(seq)
    s[i], s[i + 1] = s[i + 1], s[i]
    return tuple(s)


def _order_pool(playlists, lo=50, hi=100):
    return [(_pid(p, i), _seq(p)) for i, p in enumerate(playlists) if lo <= len(_seq(p)) <= hi]


def bshift_sequences(playlists, seed=0):
    """Originals (label 0) and one-adjacent-swap copies (label 1), grouped by source."""
    rng = np.random.default_rng(seed)
    seqs, y, groups = [], [], []
    for g, (_, s) in enumerate(_order_pool(playlists)):
        i = int(rng.integers(len(s) - 1))
        seqs += [s, bigram_shift(s, i)]
        y += [0, 1]
        groups += [g, g]
    return seqs, np.array(y), np.array(groups)


def make_bshift(playlists, encoder, seed=0) -> ProbeDataset:
    seqs, y, groups = bshift_sequences(playlists, seed)
    if not seqs:
        raise ValueError("no playlist with length in [50, 100]")
    return ProbeDataset.create("BShift", _embed(encoder, seqs), y, ["original", "shifted"], seed,
                               groups=groups, kind="binary")


def permute(seq, kind: str, fraction: float, rng, max_tries=20) -> tuple:
    """Reorder part of ``seq``; the result always differs from the input."""
    if kind not in PERMUTE_KINDS:
        raise ValueError(f"unknown permutation kind {kind!r}")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    s = list(seq)
    L = len(s)
    n = max(2, math.ceil(fraction * L))
    if L < 2:
        raise ValueError("cannot permute fewer than 2 songs")
    n = min(n, L)
    for _ in range(max_tries):
        out = list(s)
        if kind == "shuffle2":
            pos = np.sort(rng.choice(L, n, replace=False))
            vals = [s[i] for i in pos]
            for i, j in zip(pos, rng.permutation(n)):
                out[i] = vals[j]
        else:
            a = int(rng.integers(L - n + 1))
            block = s[a:a + n]
            out[a:a + n] = block[::-1] if kind == "reversal" else [block[j] for j in rng.permutation(n)]
        if out != s:
            return tuple(out)
    raise RuntimeError(f"could not produce a distinct permutation in {max_tries} tries")


def permute_sequences(playlists, kind="shuffle1", fraction=1.0, exclude_complement=False, seed=0):
    rng = np.random.default_rng(seed)
    pool = _order_pool(playlists)
    seqs, y, groups = [], [], []
    if exclude_complement:
        flip = np.zeros(len(pool), dtype=bool)
        flip[rng.permutation(len(pool))[:len(pool) // 2]] = True
    for g, (_, s) in enumerate(pool):
        p = permute(s, kind, fraction, rng)
        if exclude_complement:
            seqs.append(p if flip[g] else s)
            y.append(int(flip[g]))
            groups.append(g)
        else:
            seqs += [s, p]
            y += [0, 1]
            groups += [g, g]
    return seqs, np.array(y), np.array(groups)


def make_permute(playlists, encoder, kind="shuffle1", fraction=1.0, exclude_complement=False,
                 seed=0) -> ProbeDataset:
    seqs, y, groups = permute_sequences(playlists, kind, fraction, exclude_complement, seed)
    if not seqs:
        raise ValueError("no playlist with length in [50, 100]")
    task = f"Permute-{kind}-{fraction:g}" + ("-excl" if exclude_complement else "")
    return ProbeDataset.create(task, _embed(encoder, seqs), y, ["original", "permuted"], seed,
                               groups=groups, kind="binary")


# ---------------------------------------------------------------- genre structure tasks

def _annotated(playlists, song_labels, embeddings):
    return [p for p in playlists if p.playlist_id in embeddings and p.track_ids
            and all(t in song_labels for t in p.track_ids)]


def genre_bits(p: Playlist, song_labels) -> np.ndarray:
    present = {song_labels[t] for t in p.track_ids}
    return np.array([g in present for g in PARENT_GENRES], dtype=np.int64)


def make_gmlpred(playlists, song_labels, embeddings: EmbeddingTable, seed=0) -> ProbeDataset:
    """Multi-label: which parent genres occur among the playlist's songs."""
    pls = _annotated(playlists, song_labels, embeddings)
    y = np.stack([genre_bits(p, song_labels) for p in pls])
    ids = [p.playlist_id for p in pls]
    return ProbeDataset.create("GMLPred", embeddings.rows(ids), y, list(PARENT_GENRES), seed,
                               kind="multilabel", ids=ids)


def switch_rate(genres: Sequence[str]) -> float:
    if not genres:
        raise ValueError("switch rate of an empty playlist")
    return sum(a != b for a, b in zip(genres, genres[1:])) / len(genres)


def shift_class(r: float) -> int:
    return int(np.searchsorted(SHIFT_EDGES, r, side="right"))


def make_gspred(playlists, song_labels, embeddings: EmbeddingTable, seed=0) -> ProbeDataset:
    """Rate of genre changes between consecutive songs, binned low / mid / high."""
    pls = _annotated(playlists, song_labels, embeddings)
    y = np.array([shift_class(switch_rate([song_labels[t] for t in p.track_ids])) for p in pls])
    ids = [p.playlist_id for p in pls]
    return ProbeDataset.create("GSPred", embeddings.rows(ids), y, list(SHIFT_NAMES), seed,
                               kind="multiclass", ids=ids)


# ---------------------------------------------------------------- classifier

class ProbeClassifier(ClassifierMixin, BaseEstimator):
    """One ReLU hidden layer; softmax output for multi-class, sigmoid for
    binary and multi-label targets.  Trained with class-weighted
    cross-entropy and Adam on standardised inputs."""

    def __init__(self, hidden=512, epochs=30, batch_size=128, learning_rate=1e-3, weight_decay=0.0,
                 seed=0, multilabel=False):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.seed = seed
        self.multilabel = multilabel

    def _forward(self, X):
        Z = (X - self.mean_) / self.scale_
        A = Z @ self.W1_.value + self.b1_.value
        Hh = np.maximum(A, 0)
        return Z, A, Hh, Hh @ self.W2_.value + self.b2_.value

    def _loss_grad(self, X, t, w):
        """Weighted loss of a batch; accumulates the gradient of
        ``loss / w.sum()`` into the parameters and returns the raw loss."""
        Z, A, Hh, logits = self._forward(X)
        if self.multilabel:
            loss, dlog = sigmoid_binary_cross_entropy(logits, t, w[:, None])
        elif self.binary_:
            loss, dlog = sigmoid_binary_cross_entropy(logits[:, 0], t, w)
            dlog = dlog[:, None]
        else:
            loss, dlog, _ = batch_softmax_cross_entropy(logits, t, w)
        dlog = dlog / w.sum()
        self.W2_.grad += Hh.T @ dlog
        self.b2_.grad += dlog.sum(0)
        dA = (dlog @ self.W2_.value.T) * (A > 0)
        self.W1_.grad += Z.T @ dA
        self.b1_.grad += dA.sum(0)
        return loss

    def fit(self, X, y, sample_weight=None):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        if self.multilabel:
            Y = y.astype(np.float64)
            self.classes_ = np.arange(Y.shape[1])
            n_out = Y.shape[1]
            self.binary_ = False
        else:
            self.classes_, yi = np.unique(y, return_inverse=True)
            if len(self.classes_) < 2:
                raise ValueError("need at least two classes")
            self.binary_ = len(self.classes_) == 2
            n_out = 1 if self.binary_ else len(self.classes_)
        T = Y if self.multilabel else yi
        w = np.ones(len(X)) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        rng = np.random.default_rng(self.seed)
        self.mean_ = X.mean(0)
        sd = X.std(0)
        self.scale_ = np.where(sd > 0, sd, 1.0)
        d = X.shape[1]
        self.W1_ = init_uniform(rng, (d, self.hidden), d, np.float64)
        self.b1_ = init_zeros((self.hidden,), np.float64)
        self.W2_ = init_uniform(rng, (self.hidden, n_out), self.hidden, np.float64)
        self.b2_ = init_zeros((n_out,), np.float64)
        params = [self.W1_, self.b1_, self.W2_, self.b2_]
        cfg = AdamConfig(self.learning_rate)
        self.loss_history_ = []
        for _ in range(self.epochs):
            order = rng.permutation(len(X))
            tot = 0.0
            for s in range(0, len(X), self.batch_size):
                idx = order[s:s + self.batch_size]
                tot += self._loss_grad(X[idx], T[idx], w[idx])
                if self.weight_decay:
                    self.W1_.grad += self.weight_decay * self.W1_.value
                    self.W2_.grad += self.weight_decay * self.W2_.value
                for p in params:
                    adam_update(p, cfg)
            self.loss_history_.append(tot / w.sum())
        return self

    def decision_function(self, X):
        check_is_fitted(self, "W1_")
        return self._forward(check_array(X, dtype=np.float64))[3]

    def predict_proba(self, X):
        z = self.decision_function(X)
        if self.multilabel:
            return sigmoid(z)
        if self.binary_:
            p = sigmoid(z[:, 0])
            return np.stack([1 - p, p], 1)
        z = z - z.max(1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(1, keepdims=True)

    def predict(self, X):
        if self.multilabel:
            return (self.decision_function(X) > 0).astype(np.int64)
        return self.classes_[self.predict_proba(X).argmax(1)]

    def score(self, X, y, sample_weight=None):
        pred = self.predict(X)
        return float(np.mean(pred == np.asarray(y)))


@dataclass
class ProbeReport:
    task: str
    encoder: str
    dim: int
    accuracy: float
    confusion: np.ndarray
    chance: float
    n_train: int
    n_test: int
    per_label_accuracy: np.ndarray | None = None

    def row(self) -> dict:
        return {"task": self.task, "encoder": self.encoder, "dim": self.dim, "accuracy": self.accuracy}


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return m


def train_probe(d: ProbeDataset, hidden=512, epochs=30, seed=0, encoder="", **kw) -> ProbeReport:
    """Fit on the training split, report held-out accuracy.

    Multi-label accuracy is the mean per-label accuracy over all bits.
    """
    Xtr, ytr = d.X[d.train_idx], d.y[d.train_idx]
    Xte, yte = d.X[d.test_idx], d.y[d.test_idx]
    ml = d.kind == "multilabel"
    if not ml:
        missing = set(np.unique(d.y).tolist()) - set(np.unique(ytr).tolist())
        if missing:
            raise ValueError(f"{d.task}: classes {sorted(missing)} absent from the training split")
        sw = d.class_weights[ytr]
    else:
        sw = None
    clf = ProbeClassifier(hidden=hidden, epochs=epochs, seed=seed, multilabel=ml, **kw).fit(Xtr, ytr, sw)
    pred = clf.predict(Xte)
    if ml:
        per = (pred == yte).mean(0)
        acc = float((pred == yte).mean())
        conf = np.zeros((0, 0), dtype=np.int64)
    else:
        per = None
        acc = float(np.mean(pred == yte))
        conf = confusion_matrix(yte, pred, len(d.classes))
    return ProbeReport(d.task, encoder, d.X.shape[1], acc, conf, d.chance, len(ytr), len(yte), per)


def write_reports(path, reports: Sequence[ProbeReport]):
    import csv
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "encoder", "dim", "accuracy"])
        for r in reports:
            w.writerow([r.task, r.encoder, r.dim, f"{r.accuracy:.6f}"])
