"""Shared fixtures-as-data and gradient-check drivers for the test modules."""

import numpy as np

from plembed.corpus import Corpus, FilterConfig, Playlist, Track
from plembed.nncore import grad_check
from plembed.probes import ProbeClassifier
from plembed.seq2seq import Seq2seqConfig, Seq2seqNet, make_batch


def make_corpus(rows, provenance="ingested") -> Corpus:
    """Corpus from ``{playlist_id: "a b c"}`` with every mentioned track."""
    playlists = tuple(Playlist(pid, tuple(s.split())) for pid, s in rows.items())
    tracks = {t: Track(t) for p in playlists for t in p.track_ids}
    return Corpus(playlists, tracks, provenance)


def as_rows(c: Corpus) -> dict:
    return {p.playlist_id: " ".join(p.track_ids) for p in c.playlists}


# Each entry: (name, input rows, config, expected rows).  Expected outputs
# were worked out by hand, rule by rule.
FILTER_FIXTURES = [
    (
        # d..g and x, y, z sit in one playlist each; p3 keeps exactly half
        # its songs, which is enough; p4 loses everything.
        "rare-tracks",
        {"p1": "a b c d", "p2": "a b e", "p3": "a c f g", "p4": "x y z"},
        FilterConfig(min_track_playlist_count=2, min_retained_fraction=0.5, min_length=2, max_length=10),
        {"p1": "a b c", "p2": "a b", "p3": "a c"},
    ),
    (
        # duplicates collapse to their first occurrence before the length rule
        "dedup-and-length",
        {"p1": "a b a c", "p2": "a b", "p3": "a b c d e", "p4": "d d d d"},
        FilterConfig(min_track_playlist_count=1, min_retained_fraction=0.3, min_length=3, max_length=4),
        {"p1": "a b c"},
    ),
    (
        # dropping p4 (too short once e goes) leaves d in a single playlist,
        # so a second pass removes d from p3
        "cascade",
        {"p1": "a b", "p2": "a c", "p3": "b c d", "p4": "d e"},
        FilterConfig(min_track_playlist_count=2, min_retained_fraction=0.3, min_length=2, max_length=100),
        {"p1": "a b", "p2": "a c", "p3": "b c"},
    ),
]


def seq2seq_gradient_report(cell, bidirectional, attention, seed=0):
    """Finite-difference check of the whole autoencoder on a tiny float64 model.

    Weights are scaled up so that the loss is not so flat that central
    differences drown in roundoff.
    """
    cfg = Seq2seqConfig(layers=2, hidden=5, cell=cell, bidirectional=bidirectional, attention=attention)
    rng = np.random.default_rng(seed)
    net = Seq2seqNet(cfg, 12, np.float64, rng)
    for p in net.params.values():
        p.value *= 6.0
    batch = make_batch([rng.integers(4, 12, size=n) for n in (4, 2, 3)])
    net.zero_grad()
    net.forward(*batch)
    analytic = {k: p.grad.copy() for k, p in net.params.items()}
    values = {k: p.value for k, p in net.params.items()}
    return grad_check(lambda: net.forward(*batch, backward=False)[0], values, analytic, max_per_param=15, seed=seed)


def probe_gradient_report(kind, seed=0):
    """Check the probe classifier's weighted loss gradient (multiclass, binary or multilabel)."""
    rng = np.random.default_rng(seed)
    n, d = 12, 4
    X = rng.normal(size=(n, d))
    w = rng.uniform(0.5, 2.0, n)
    if kind == "multilabel":
        y = (rng.random((n, 3)) < 0.5).astype(np.int64)
    else:
        y = np.arange(n) % (2 if kind == "binary" else 3)
    clf = ProbeClassifier(hidden=6, epochs=0, seed=seed, multilabel=kind == "multilabel").fit(X, y)
    t = y.astype(np.float64) if kind == "multilabel" else np.unique(y, return_inverse=True)[1]
    params = {"W1": clf.W1_, "b1": clf.b1_, "W2": clf.W2_, "b2": clf.b2_}
    for p in params.values():
        p.value += rng.normal(0, 0.3, p.value.shape)
        p.zero_grad()
    clf._loss_grad(X, t, w)
    analytic = {k: p.grad.copy() for k, p in params.items()}
    values = {k: p.value for k, p in params.items()}
    return grad_check(lambda: clf._loss_grad(X, t, w) / w.sum(), values, analytic)
