"""Playlist corpora: ingestion, filtering, vocabulary, statistics and a
synthetic generator with planted genre and order structure."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PARENT_GENRES = (
    "Rock", "Metal", "Blues", "Country", "Classical",
    "Electronic", "Hip Hop", "Reggae", "Latin",
)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<s>", "</s>", "<unk>")


class CorpusError(ValueError):
    """Malformed or inconsistent corpus input."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class Track:
    track_id: str
    artist_id: str = ""
    artist_genres: tuple[str, ...] = ()


@dataclass(frozen=True)
class Playlist:
    playlist_id: str
    track_ids: tuple[str, ...]

    def __len__(self):
        return len(self.track_ids)


@dataclass(frozen=True)
class Corpus:
    playlists: tuple[Playlist, ...]
    tracks: dict[str, Track]
    provenance: str = "ingested"
    malformed_lines: int = 0

    def __post_init__(self):
        if self.provenance not in ("ingested", "filtered", "synthetic"):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def __len__(self):
        return len(self.playlists)

    def lengths(self) -> np.ndarray:
        return np.array([len(p) for p in self.playlists], dtype=np.int64)

    def check_integrity(self):
        for p in self.playlists:
            for t in p.track_ids:
                if t not in self.tracks:
                    raise CorpusError(f"playlist {p.playlist_id} references unknown track {t}")

    def track_counts(self) -> Counter:
        """Token occurrence count per track."""
        return Counter(t for p in self.playlists for t in p.track_ids)


@dataclass
class FilterConfig:
    min_track_playlist_count: int = 3
    min_retained_fraction: float = 0.3
    min_length: int = 10
    max_length: int = 5000
    # Repeat the four rules until nothing changes, so the result is a fixed point.
    fixed_point: bool = True

    def __post_init__(self):
        if not 0 < self.min_retained_fraction <= 1:
            raise ValueError("min_retained_fraction must be in (0, 1]")
        if self.min_length > self.max_length:
            raise ValueError("empty length range")


@dataclass
class SynthConfig:
    n_genres: int = 8
    songs_per_genre: int = 400
    n_playlists: int = 12000
    noise_prob: float = 0.15
    length_median: float = 45.0
    length_sigma: float = 1.1
    min_length: int = 10
    max_length: int = 5000
    popularity_exponent: float = 1.0
    # Probability that a home-genre slot continues from the successor of the
    # previous home-genre song (album-like runs); gives playlists an order.
    order_strength: float = 0.3
    # "runs": order comes from album-like runs only.  "arc": every song also
    # has a latent energy and each slot picks, among ``arc_candidates``
    # popularity draws, the one closest to an energy ramping 0 -> 1 along
    # the playlist.
    order_mode: str = "arc"
    arc_candidates: int = 16
    # > 0: each playlist draws its own foreign rate from a Beta with mean
    # noise_prob and this concentration.
    noise_concentration: float = 10.0
    songs_per_artist: int = 8
    artist_genre_noise: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class SynthTruth:
    genres: tuple[str, ...]
    song_genre: dict[str, str]
    playlist_genre: dict[str, str]
    playlist_genre_set: dict[str, frozenset]
    foreign_fraction: float


@dataclass
class CorpusStats:
    playlist_count: int
    track_count: int
    token_count: int
    length_mean: float
    length_std: float
    length_median: float
    length_min: int
    length_max: int
    rank_frequency: list[tuple[int, int]] = field(repr=False, default_factory=list)

    def zipf_slope(self) -> float:
        """Least-squares slope of log(count) against log(rank)."""
        r = np.array([x[0] for x in self.rank_frequency], dtype=float)
        c = np.array([x[1] for x in self.rank_frequency], dtype=float)
        slope, _ = np.polyfit(np.log(r), np.log(c), 1)
        return float(slope)


# ---------------------------------------------------------------- ingestion

def ingest(playlist_path, tracks_path) -> Corpus:
    """Read a playlist TSV file and a track metadata CSV.

    Lines of the playlist file that cannot be split into an id and a track
    list are skipped and counted in ``Corpus.malformed_lines``.  Duplicate
    playlist ids and references to unknown tracks raise :class:`CorpusError`.
    """
    tracks = read_tracks(tracks_path)
    playlists = []
    seen = set()
    malformed = 0
    with open(playlist_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip():
                malformed += 1
                continue
            pid = parts[0].strip()
            tids = tuple(t.strip() for t in parts[1].split(",") if t.strip())
            if not tids:
                malformed += 1
                continue
            if pid in seen:
                raise CorpusError(f"duplicate playlist_id {pid}", lineno)
            for t in tids:
                if t not in tracks:
                    raise CorpusError(f"playlist {pid} references unknown track {t}", lineno)
            seen.add(pid)
            playlists.append(Playlist(pid, tids))
    return Corpus(tuple(playlists), tracks, "ingested", malformed)


def read_tracks(path) -> dict[str, Track]:
    tracks = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return tracks
        if [h.strip() for h in header[:3]] != ["track_id", "artist_id", "artist_genres"]:
            raise CorpusError("track file header must be track_id,artist_id,artist_genres", 1)
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) < 1 or not row[0].strip():
                raise CorpusError("empty track_id", lineno)
            tid = row[0].strip()
            if tid in tracks:
                raise CorpusError(f"duplicate track_id {tid}", lineno)
            artist = row[1].strip() if len(row) > 1 else ""
            genres = tuple(g.strip() for g in row[2].split("|") if g.strip()) if len(row) > 2 else ()
            tracks[tid] = Track(tid, artist, genres)
    return tracks


def write_playlists(corpus: Corpus, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in corpus.playlists:
            fh.write(f"{p.playlist_id}\t{','.join(p.track_ids)}\n")


def write_tracks(corpus: Corpus, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["track_id", "artist_id", "artist_genres"])
        for t in corpus.tracks.values():
            w.writerow([t.track_id, t.artist_id, "|".join(t.artist_genres)])


# ---------------------------------------------------------------- filtering

def _filter_pass(playlists, original_len, cfg):
    n_containing = Counter()
    for p in playlists:
        n_containing.update(set(p.track_ids))
    keep_track = {t for t, n in n_containing.items() if n >= cfg.min_track_playlist_count}

    out = []
    for p in playlists:
        kept = [t for t in p.track_ids if t in keep_track]
        if len(kept) < cfg.min_retained_fraction * original_len[p.playlist_id]:
            continue
        kept = list(dict.fromkeys(kept))
        if cfg.min_length <= len(kept) <= cfg.max_length:
            out.append(Playlist(p.playlist_id, tuple(kept)))
    return out


def filter_corpus(c: Corpus, cfg: FilterConfig | None = None) -> Corpus:
    """Drop rare tracks, under-retained playlists, duplicates and out-of-range lengths.

    The rules run in that order.  Retention is measured against each
    playlist's length in ``c``.  With ``cfg.fixed_point`` the pass repeats
    until stable, which makes the operation idempotent.
    """
    cfg = cfg or FilterConfig()
    original_len = {p.playlist_id: len(p) for p in c.playlists}
    playlists = list(c.playlists)
    while True:
        out = _filter_pass(playlists, original_len, cfg)
        if not cfg.fixed_point or out == playlists:
            break
        playlists = out
    used = {t for p in out for t in p.track_ids}
    tracks = {tid: tr for tid, tr in c.tracks.items() if tid in used}
    return Corpus(tuple(out), tracks, "filtered")


# ---------------------------------------------------------------- vocabulary

class Vocabulary:
    """Dense track-id <-> index map with four reserved tokens at 0..3."""

    def __init__(self, ids: Sequence[str], counts: dict[str, int], min_count: int):
        self.ids = list(RESERVED_TOKENS) + list(ids)
        self.index = {t: i for i, t in enumerate(self.ids)}
        self.counts = dict(counts)
        self.min_count = min_count

    def __len__(self):
        return len(self.ids)

    def __contains__(self, track_id):
        return track_id in self.index and self.index[track_id] >= len(RESERVED_TOKENS)

    def encode(self, track_ids: Iterable[str]) -> np.ndarray:
        get = self.index.get
        return np.array([get(t, UNK) for t in track_ids], dtype=np.int64)

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.ids[int(i)] for i in indices]


def build_vocab(c: Corpus, min_count: int = 1) -> Vocabulary:
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = c.track_counts()
    # Descending count, ties by id, so indices are stable across runs.
    kept = sorted((t for t, n in counts.items() if n >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(kept, counts, min_count)


# ---------------------------------------------------------------- statistics

def corpus_stats(c: Corpus) -> CorpusStats:
    if not c.playlists:
        raise CorpusError("cannot compute statistics of an empty corpus")
    lengths = c.lengths()
    counts = c.track_counts()
    ordered = sorted(counts.values(), reverse=True)
    return CorpusStats(
        playlist_count=len(c.playlists),
        track_count=len(counts),
        token_count=int(lengths.sum()),
        length_mean=float(lengths.mean()),
        length_std=float(lengths.std()),
        length_median=float(np.median(lengths)),
        length_min=int(lengths.min()),
        length_max=int(lengths.max()),
        rank_frequency=[(i + 1, n) for i, n in enumerate(ordered)],
    )


def write_stats(stats: CorpusStats, stats_path, rank_path=None):
    metrics = [(f.name, getattr(stats, f.name)) for f in fields(stats) if f.name != "rank_frequency"]
    with open(stats_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerows(metrics)
    if rank_path is not None:
        with open(rank_path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "count"])
            w.writerows(stats.rank_frequency)


# ---------------------------------------------------------------- synthetic data

def synthetic_subgenres(lexicon_path=None) -> dict[str, list[str]]:
    from .genre import GenreLexicon

    lex = GenreLexicon.load(lexicon_path)
    out = {p: [] for p in PARENT_GENRES}
    for sub, parent in lex.mapping.items():
        out[parent].append(sub)
    return {p: sorted(v) for p, v in out.items()}


def generate_synthetic(cfg: SynthConfig | None = None) -> tuple[Corpus, SynthTruth]:
    """Generate a corpus with planted song and playlist genres.

    Every playlist gets a dominant genre.  Each slot independently draws from
    a uniformly chosen foreign genre with probability ``noise_prob``;
    otherwise it is a home-genre song, which continues the previous
    home-genre song's run with probability ``order_strength`` and is a
    Zipf-popularity draw otherwise.  In "arc" mode a fresh draw takes the
    candidate whose latent energy best matches the playlist's position, so
    energy rises from start to end.  Lengths are log-normal, clamped to
    ``[min_length, max_length]``.
    """
    cfg = cfg or SynthConfig()
    if cfg.n_genres < 2:
        raise ValueError("n_genres must be >= 2")
    if cfg.n_genres > len(PARENT_GENRES):
        raise ValueError(f"n_genres must be <= {len(PARENT_GENRES)}")
    if cfg.songs_per_genre < 10:
        raise ValueError("songs_per_genre must be >= 10")
    if not 0 <= cfg.noise_prob <= 1 or not 0 <= cfg.order_strength <= 1:
        raise ValueError("probabilities must lie in [0, 1]")
    if cfg.order_mode not in ("runs", "arc"):
        raise ValueError("order_mode must be 'runs' or 'arc'")
    if cfg.arc_candidates < 1 or cfg.noise_concentration < 0:
        raise ValueError("bad arc_candidates / noise_concentration")

    # side streams keep the "runs" corpus identical whatever the new fields are
    side = np.random.default_rng([cfg.seed, 0xA2C])
    rng = np.random.default_rng(cfg.seed)
    G, S = cfg.n_genres, cfg.songs_per_genre
    genres = PARENT_GENRES[:G]
    subgenres = synthetic_subgenres()

    song_ids = [[f"trk{g:02d}{r:05d}" for r in range(S)] for g in range(G)]
    tracks = {}
    song_genre = {}
    for g in range(G):
        foreign_parents = [p for p in PARENT_GENRES if p != genres[g]]
        n_artists = math.ceil(S / cfg.songs_per_artist)
        artist_genres = []
        for a in range(n_artists):
            subs = subgenres[genres[g]]
            k = int(rng.integers(1, 4))
            picked = [subs[i] for i in sorted(rng.choice(len(subs), size=min(k, len(subs)), replace=False))]
            if rng.random() < cfg.artist_genre_noise:
                fp = foreign_parents[int(rng.integers(len(foreign_parents)))]
                fsubs = subgenres[fp]
                picked[-1] = fsubs[int(rng.integers(len(fsubs)))]
            artist_genres.append(tuple(picked))
        for r, tid in enumerate(song_ids[g]):
            a = r // cfg.songs_per_artist
            tracks[tid] = Track(tid, f"art{g:02d}{a:04d}", artist_genres[a])
            song_genre[tid] = genres[g]

    pop = np.arange(1, S + 1, dtype=float) ** -cfg.popularity_exponent
    cdf = np.cumsum(pop / pop.sum())

    raw_len = rng.lognormal(math.log(cfg.length_median), cfg.length_sigma, size=cfg.n_playlists)
    lengths = np.clip(np.rint(raw_len), cfg.min_length, cfg.max_length).astype(np.int64)
    home = rng.integers(0, G, size=cfg.n_playlists)
    arc = cfg.order_mode == "arc"
    energy = side.random((G, S))
    if cfg.noise_concentration > 0 and 0 < cfg.noise_prob < 1:
        k = cfg.noise_concentration
        rates = side.beta(cfg.noise_prob * k, (1 - cfg.noise_prob) * k, size=cfg.n_playlists)
    else:
        rates = np.full(cfg.n_playlists, cfg.noise_prob)

    playlists = []
    playlist_genre = {}
    playlist_genre_set = {}
    n_foreign = 0
    n_slots = 0
    for i in range(cfg.n_playlists):
        L = int(lengths[i])
        g = int(home[i])
        foreign = rng.random(L) < rates[i]
        offsets = rng.integers(1, G, size=L)
        cont = rng.random(L) < cfg.order_strength
        u = rng.random((L, 4))
        if arc:
            ua = side.random((L, cfg.arc_candidates))
            target = np.arange(L) / max(L - 1, 1)
        used = set()
        seq = []
        prev_home = -1
        for j in range(L):
            if arc and not (cont[j] and not foreign[j] and prev_home >= 0):
                sg = (g + int(offsets[j])) % G if foreign[j] else g
                ranks = np.minimum(np.searchsorted(cdf, ua[j]), S - 1)
                free = [x for x in ranks if (sg, x) not in used] or list(ranks)
                r = int(min(free, key=lambda x: (abs(energy[sg, x] - target[j]), x)))
                if not foreign[j]:
                    prev_home = r
            elif foreign[j]:
                sg = (g + int(offsets[j])) % G
                ranks = np.searchsorted(cdf, u[j])
                r = int(next((x for x in ranks if (sg, x) not in used), ranks[-1]))
            else:
                sg = g
                r = -1
                if cont[j] and prev_home >= 0 and (g, (prev_home + 1) % S) not in used:
                    r = (prev_home + 1) % S
                if r < 0:
                    ranks = np.searchsorted(cdf, u[j])
                    r = int(next((x for x in ranks if (sg, x) not in used), ranks[-1]))
                prev_home = r
            r = min(r, S - 1)
            used.add((sg, r))
            seq.append(song_ids[sg][r])
        n_foreign += int(foreign.sum())
        n_slots += L
        pid = f"pl{i:06d}"
        playlists.append(Playlist(pid, tuple(seq)))
        playlist_genre[pid] = genres[g]
        playlist_genre_set[pid] = frozenset(song_genre[t] for t in seq)

    corpus = Corpus(tuple(playlists), tracks, "synthetic")
    truth = SynthTruth(genres, song_genre, playlist_genre, playlist_genre_set, n_foreign / max(n_slots, 1))
    return corpus, truth


def corpus_bytes(c: Corpus) -> bytes:
    """Canonical serialisation (playlist file + track file), for hashing."""
    buf = io.StringIO()
    for p in c.playlists:
        buf.write(f"{p.playlist_id}\t{','.join(p.track_ids)}\n")
    buf.write("\n")
    w = csv.writer(buf, lineterminator="\n")
    for t in c.tracks.values():
        w.writerow([t.track_id, t.artist_id, "|".join(t.artist_genres)])
    return buf.getvalue().encode("utf-8")


def subset(c: Corpus, playlist_ids: Iterable[str]) -> Corpus:
    keep = set(playlist_ids)
    pls = tuple(p for p in c.playlists if p.playlist_id in keep)
    return replace(c, playlists=pls)
