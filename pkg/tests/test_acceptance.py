"""End-to-end acceptance checks on the desk pipeline.

Each criterion prints one ``criterion N: PASS|FAIL ...`` line (also
collected into the terminal summary) and then asserts.  The desk run is
produced through the CLI, stage by stage, so stage runtimes are measured.
Set ``PLEMBED_DESK_RUN`` to a directory to keep (and on later sessions
reuse) the desk run instead of building it in a temporary directory.
"""

import csv
import json
import math
import os
import time
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest

from helpers import FILTER_FIXTURES, as_rows, make_corpus, probe_gradient_report, seq2seq_gradient_report
from plembed import probes as P
from plembed.ann import RPForest, exact_knn, recall
from plembed.bowenc import SIFEncoder, bow_embed, frequency_table, sif_weight
from plembed.cli import STAGES, main
from plembed.corpus import ingest, filter_corpus
from plembed.genre import read_annotations
from plembed.nncore import grad_check, softmax_cross_entropy
from plembed.recsys import ExactIndex, RecEvalConfig, chance_precision, eval_recommendation, length_labels
from plembed.seq2seq import Seq2seqAutoencoder
from plembed.song2vec import sgns_pair_objective
from plembed.table import EmbeddingTable

pytestmark = [pytest.mark.slow, pytest.mark.filterwarnings("ignore:song content")]

DESK_SET = ["probe.exclude_complement=[false,true]"]
UNI, BI = "seq2seq-uni", "seq2seq-bi"
BOW_FAMILY = ("bow", "sif")
S2S_FAMILY = (UNI, BI)
ORDER_FREE_TASKS = ("GPred", "GDPred", "PLen", "SC", "GMLPred", "GSPred")

RESULTS: list[str] = []


def report_line(n: int, ok: bool, text: str):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}"
    RESULTS.append(line)
    print(line)
    return ok


def _run_stages(run_dir: Path, extra=()):
    timings = {}
    for stage in [s for s in STAGES if s != "ingest"]:
        t0 = time.perf_counter()
        code = main([stage, "--run-dir", str(run_dir), *sum((["--set", s] for s in DESK_SET), []), *extra])
        timings[stage] = time.perf_counter() - t0
        assert code == 0, f"stage {stage} exited with {code}"
    return timings


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    keep = os.environ.get("PLEMBED_DESK_RUN")
    root = Path(keep) if keep else tmp_path_factory.mktemp("desk")
    tfile = root / "timings.json"
    if keep and tfile.exists():
        timings = json.loads(tfile.read_text())
    else:
        timings = _run_stages(root)
        tfile.write_text(json.dumps(timings, indent=1))
    return root, timings


def _probe_table(root):
    acc = defaultdict(dict)
    with open(root / "results/probes.csv", encoding="utf-8", newline="") as fh:
        for r in csv.DictReader(fh):
            acc[r["task"]][r["encoder"]] = float(r["accuracy"])
    return acc


def _fmt(d, keys):
    return " ".join(f"{k}={d[k]:.3f}" for k in keys if k in d)


# ---------------------------------------------------------------- 1

def test_c01_gradient_checks():
    t0 = time.perf_counter()
    errs = {}
    for cell in ("lstm", "gru"):
        for bi in (False, True):
            for att in ("general", "additive"):
                errs[f"{cell}{'-bi' if bi else ''}-{att}"] = seq2seq_gradient_report(cell, bi, att).max_rel_error
    z = np.random.default_rng(0).normal(size=9) * 3
    errs["softmax"] = grad_check(lambda: softmax_cross_entropy(z, 4)[0], {"z": z},
                                 {"z": softmax_cross_entropy(z, 4)[1]}).max_rel_error
    r = np.random.default_rng(1)
    u, v, N = r.normal(size=6), r.normal(size=6), r.normal(size=(5, 6))
    _, du, dv, dN = sgns_pair_objective(u, v, N)
    errs["sgns"] = grad_check(lambda: sgns_pair_objective(u, v, N)[0], {"u": u, "v": v, "N": N},
                              {"u": du, "v": dv, "N": dN}).max_rel_error
    for kind in ("multiclass", "binary", "multilabel"):
        errs[f"probe-{kind}"] = probe_gradient_report(kind).max_rel_error
    elapsed = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = errs[worst] < 1e-4 and elapsed < 60
    report_line(1, ok, f"gradient checks: worst {worst} rel err {errs[worst]:.2e} over {len(errs)} checks, "
                       f"{elapsed:.1f}s (need < 1e-4, < 60s)")
    assert ok


# ---------------------------------------------------------------- 2

def test_c02_memorisation():
    rng = np.random.default_rng(0)
    seqs = [[f"t{j}" for j in rng.integers(0, 400, rng.integers(5, 21))] for _ in range(100)]
    m = Seq2seqAutoencoder(layers=3, hidden=64, cell="gru", vocab_min_count=1, epochs=150, batch_size=16,
                           learning_rate=1e-2, max_grad_norm=5.0, seed=0).fit(seqs)
    acc, ppl = m.token_accuracy(seqs), m.perplexity(seqs)
    ok = acc > 0.95 and ppl < 1.5 and len(m.vocab_) <= 500
    report_line(2, ok, f"memorisation: token accuracy {acc:.4f}, perplexity {ppl:.4f}, vocab {len(m.vocab_)}, "
                       f"{m.epochs} epochs (need > 0.95, < 1.5)")
    assert ok


# ---------------------------------------------------------------- 3

def test_c03_filter_fixtures_and_idempotence():
    fixtures_ok = [as_rows(filter_corpus(make_corpus(rows), cfg)) == exp for _, rows, cfg, exp in FILTER_FIXTURES]
    rng = np.random.default_rng(3)
    idem = 0
    for _ in range(300):
        rows = {f"p{i}": " ".join(rng.choice(list("abcdefghij"), rng.integers(1, 12)))
                for i in range(rng.integers(1, 12))}
        cfg = FILTER_FIXTURES[rng.integers(3)][2]
        once = filter_corpus(make_corpus(rows), cfg)
        idem += filter_corpus(once, cfg).playlists == once.playlists
    ok = all(fixtures_ok) and idem == 300
    report_line(3, ok, f"filtering: fixtures {sum(fixtures_ok)}/3 exact, idempotent on {idem}/300 random corpora")
    assert ok


# ---------------------------------------------------------------- 4

def test_c04_sif_exactness(desk):
    root, _ = desk
    c = ingest(root / "corpus/filtered_playlists.tsv", root / "corpus/filtered_tracks.csv")
    songs = EmbeddingTable.load(root / "embeddings/songs.emb")
    enc = SIFEncoder(songs).fit(c)
    X = enc.transform(c)
    rel = float(np.max(np.abs(X @ enc.u_) / np.linalg.norm(X, axis=1)))
    freq = frequency_table(c)
    p = np.array(sorted(freq.values()))
    table_err = max(abs(sif_weight(x, a) - a / (a + x)) for a in (math.exp(-5), math.exp(-4), math.exp(-3))
                    for x in p)
    uniform = {s: 1 / len(songs) for s in songs.ids}
    enc_u = SIFEncoder(songs, frequencies=uniform).fit(c.playlists[:500])
    W = enc_u.weighted_mean([pl.track_ids for pl in c.playlists[:500]])
    B = np.stack([bow_embed(pl, songs) for pl in c.playlists[:500]])
    scale = enc_u.a / (enc_u.a + 1 / len(songs))
    uni_err = float(np.max(np.linalg.norm(W - scale * B, axis=1) / np.linalg.norm(scale * B, axis=1)))
    ok = rel < 1e-6 and table_err <= 1e-12 and uni_err < 1e-12
    report_line(4, ok, f"SIF: max |u.v|/|v| {rel:.1e} over {len(X)} playlists, weight table err {table_err:.1e}, "
                       f"uniform-frequency rel err {uni_err:.1e}")
    assert ok


# ---------------------------------------------------------------- 5

def test_c05_annotation(desk):
    root, timings = desk
    truth = json.loads((root / "corpus/truth.json").read_text())
    songs = read_annotations(root / "labels/song_genres.csv")
    pls = read_annotations(root / "labels/playlist_genres.csv")
    n_pl = sum(1 for _ in open(root / "corpus/filtered_playlists.tsv", encoding="utf-8"))
    song_acc = np.mean([truth["song_genre"][s] == g for s, g in songs.items()])
    pl_wrong = sum(truth["playlist_genre"][p] != g for p, g in pls.items())
    runtime = timings["train-song2vec"] + timings["annotate"]
    ok = song_acc >= 0.9 and len(pls) >= 0.6 * n_pl and pl_wrong == 0 and runtime < 300
    report_line(5, ok, f"annotation: {len(songs)} songs labeled, {song_acc:.3f} correct; {len(pls)}/{n_pl} "
                       f"playlists labeled ({len(pls) / n_pl:.2f}), {pl_wrong} wrong; song2vec+annotate "
                       f"{runtime:.0f}s")
    assert ok


# ---------------------------------------------------------------- 6

def _chances(root):
    c = ingest(root / "corpus/filtered_playlists.tsv", root / "corpus/filtered_tracks.csv")
    E = EmbeddingTable.load(root / "embeddings/bow.emb")
    song = read_annotations(root / "labels/song_genres.csv")
    pl = read_annotations(root / "labels/playlist_genres.csv")
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return {"GPred": P.make_gpred(pl, E).chance, "GDPred": P.make_gdpred(c.playlists, song, E).chance,
                "PLen": P.make_plen(c.playlists, E).chance, "SC": P.make_sc(c, E, 50).chance,
                "GMLPred": P.make_gmlpred(c.playlists, song, E).chance,
                "GSPred": P.make_gspred(c.playlists, song, E).chance}


def test_c06_probe_orderings(desk):
    root, timings = desk
    acc = _probe_table(root)
    g, pl, sc = acc["GPred"], acc["PLen"], acc["SC"]
    checks = {
        "GPred sif >= bow - 2": g["sif"] >= g["bow"] - 0.02,
        "GPred bow-family >= every seq2seq": min(g[e] for e in BOW_FAMILY) >= max(g[e] for e in S2S_FAMILY),
        "PLen every seq2seq >= bow-family + 10": min(pl[e] for e in S2S_FAMILY) >= max(pl[e] for e in BOW_FAMILY) + 0.10,
        "SC bow-family >= every seq2seq": min(sc[e] for e in BOW_FAMILY) >= max(sc[e] for e in S2S_FAMILY),
    }
    chance = _chances(root)
    below = [f"{t}/{e}" for t in ORDER_FREE_TASKS for e, a in acc[t].items() if a <= chance[t]]
    checks["all probes but BShift above chance"] = not below
    runtime = timings["probe"]
    checks["probe stage < 30 min"] = runtime < 1800
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    report_line(6, ok, f"probe orderings: GPred {_fmt(g, BOW_FAMILY + S2S_FAMILY)}; PLen {_fmt(pl, BOW_FAMILY + S2S_FAMILY)}; "
                       f"SC {_fmt(sc, BOW_FAMILY + S2S_FAMILY)}; probe stage {runtime:.0f}s"
                       + (f"; failed: {failed} {below}" if failed else ""))
    assert ok


# ---------------------------------------------------------------- 7

def test_c07_bshift_at_chance(desk):
    root, _ = desk
    b = _probe_table(root)["BShift"]
    ok = set(b) == set(BOW_FAMILY + S2S_FAMILY) and all(0.45 <= a <= 0.55 for a in b.values())
    report_line(7, ok, f"BShift: {_fmt(b, BOW_FAMILY + S2S_FAMILY)} (need 0.45-0.55 for all four)")
    assert ok


# ---------------------------------------------------------------- 8

def _curve_ok(vals):
    inversions = [a - b for a, b in zip(vals, vals[1:]) if b < a]
    return len(inversions) == 0 or (len(inversions) == 1 and inversions[0] <= 0.03)


def test_c08_permute_curves(desk):
    root, _ = desk
    acc = _probe_table(root)
    fracs = P.PERMUTE_FRACTIONS
    bad, lines, bi_info = [], [], []
    for kind in P.PERMUTE_KINDS:
        for excl in ("", "-excl"):
            name = kind + excl
            curve = [acc[f"Permute-{kind}-{f:g}{excl}"][UNI] for f in fracs]
            if not _curve_ok(curve) or curve[-1] < 0.70:
                bad.append(f"{UNI} {name}")
            for e in BOW_FAMILY:
                vals = [acc[f"Permute-{kind}-{f:g}{excl}"][e] for f in fracs]
                if not all(0.45 <= v <= 0.55 for v in vals):
                    bad.append(f"{e} {name}")
            lines.append(f"{name} " + "/".join(f"{v:.2f}" for v in curve))
            bi = [acc[f"Permute-{kind}-{f:g}{excl}"][BI] for f in fracs]
            bi_info.append(_curve_ok(bi) and bi[-1] >= 0.70)
    ok = not bad
    report_line(8, ok, f"permute curves ({UNI}): " + "; ".join(lines) + f"; BoW/SIF within 0.45-0.55: "
                       f"{not any(b.split()[0] in BOW_FAMILY for b in bad)}; {BI} also meets the curve rule on "
                       f"{sum(bi_info)}/{len(bi_info)}" + (f"; failed: {bad}" if bad else ""))
    assert ok


# ---------------------------------------------------------------- 9

def test_c09_ann(tmp_path):
    rng = np.random.default_rng(9)
    n, d = 10_000, 64
    t = EmbeddingTable([f"v{i:05d}" for i in range(n)], rng.normal(size=(n, d)))
    t0 = time.perf_counter()
    f = RPForest(n_trees=50, leaf_size=1, seed=0).fit(t)
    Q = rng.normal(size=(100, d))
    rec = recall(f, t, Q, 10, search_k=50 * 10)
    elapsed = time.perf_counter() - t0
    exhaustive = all(f.query(q, 10, search_k=n).ids == exact_knn(t, q, 10).ids for q in Q[:10])
    f.save(tmp_path / "f.ann")
    g = RPForest.load(tmp_path / "f.ann")
    g.save(tmp_path / "g.ann")
    round_trip = ((tmp_path / "f.ann").read_bytes() == (tmp_path / "g.ann").read_bytes()
                  and all(g.query(q, 10).ids == f.query(q, 10).ids for q in Q[:20]))
    ok = rec >= 0.9 and exhaustive and round_trip and elapsed < 120
    report_line(9, ok, f"ANN: recall@10 {rec:.3f} (n=10k, d=64, 50 trees, search_k=500); exhaustive == oracle "
                       f"{exhaustive}; round trip {round_trip}; build+query {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------- 10

def _scan_precision(t: EmbeddingTable, labels, q, k):
    """Oracle: whole-matrix cosine, ids as tie-break, independent of the index code."""
    X = t.vectors.astype(np.float64)
    X = X / np.linalg.norm(X, axis=1, keepdims=True)
    qi = t.index[q]
    d = 1.0 - X @ X[qi]
    order = sorted((d[i], t.ids[i]) for i in range(len(t)) if i != qi)
    return sum(labels[i] == labels[q] for _, i in order[:k]) / k


def test_c10_recommendation(desk):
    root, _ = desk
    c = ingest(root / "corpus/filtered_playlists.tsv", root / "corpus/filtered_tracks.csv")
    label_sets = {"genre": read_annotations(root / "labels/playlist_genres.csv"), "length": length_labels(c.playlists)}
    p10 = defaultdict(dict)
    idx_cache = {}
    for enc in BOW_FAMILY + S2S_FAMILY:
        E = EmbeddingTable.load(root / f"embeddings/{enc}.emb")
        for kind, labels in label_sets.items():
            sub = E.subset([i for i in E.ids if i in labels])
            idx = ExactIndex(sub)
            idx_cache[(enc, kind)] = (sub, idx)
            cfg = RecEvalConfig(n_queries=2000, ks=(10,), label_kind=kind, seed=10)
            p10[kind][enc] = eval_recommendation(idx, labels, cfg, enc).at(10)
    genre_ok = p10["genre"]["bow"] >= p10["genre"][UNI]
    length_ok = p10["length"][UNI] >= p10["length"]["bow"]
    rng = np.random.default_rng(11)
    g = label_sets["genre"]
    keys = sorted(g)
    shuffled = dict(zip(keys, rng.permutation([g[k] for k in keys]).tolist()))
    sub, idx = idx_cache[("bow", "genre")]
    ctrl = eval_recommendation(idx, shuffled, RecEvalConfig(n_queries=2000, ks=(10,), seed=12)).at(10)
    chance = chance_precision(shuffled)
    ctrl_ok = abs(ctrl - chance) <= 0.05
    rep = eval_recommendation(idx, g, RecEvalConfig(n_queries=40, ks=(10,), seed=13))
    oracle_ok = all(rep.precision[i, 0] == _scan_precision(sub, g, q, 10) for i, q in enumerate(rep.queries))
    ok = genre_ok and length_ok and ctrl_ok and oracle_ok
    report_line(10, ok, f"recommendation P@10 (exact index, 2000 queries): genre {_fmt(p10['genre'], BOW_FAMILY + S2S_FAMILY)}; "
                        f"length {_fmt(p10['length'], BOW_FAMILY + S2S_FAMILY)}; "
                        f"random-label control {ctrl:.3f} vs chance {chance:.3f}; exact index == scan oracle "
                        f"{oracle_ok}; {BI} length >= bow: {p10['length'][BI] >= p10['length']['bow']}")
    assert ok


# ---------------------------------------------------------------- 11

REDUCED = ["synth.n_playlists=1500", "synth.songs_per_genre=120", "song2vec.epochs=2", "seq2seq.layers=1",
           "seq2seq.hidden=16", "seq2seq.epochs=1", "seq2seq.vocab_min_count=5", "probe.hidden=32",
           "probe.epochs=3", "probe.permute_fractions=[0.5,1.0]", "index.n_trees=10", "rec.n_queries=50"]


def test_c11_determinism(desk, tmp_path, capsys):
    root, _ = desk
    hashes = []
    for name in ("a", "b"):
        args = ["all", "--run-dir", str(tmp_path / name)] + sum((["--set", s] for s in REDUCED), [])
        assert main(args) == 0
        m = json.loads((tmp_path / name / "manifest.json").read_text())
        hashes.append({s: r["outputs"] for s, r in m["stages"].items()})
    n_files = sum(len(v) for v in hashes[0].values())
    same = hashes[0] == hashes[1]
    capsys.readouterr()
    before = (root / "manifest.json").read_bytes()
    assert main(["all", "--run-dir", str(root)] + sum((["--set", s] for s in DESK_SET), [])) == 0
    noop = capsys.readouterr().out.count("up to date") == len(STAGES) - 1 and \
        (root / "manifest.json").read_bytes() == before
    ok = same and noop
    report_line(11, ok, f"determinism: two full reduced-config runs, {n_files} artifacts, hashes identical {same}; "
                        f"desk rerun is a no-op {noop}")
    assert ok
