"""Command-line pipeline over a run directory.

Every stage reads the artifacts of the stages it depends on, writes its own
outputs atomically, and records their SHA-256 in ``manifest.json``.  A stage
whose inputs and config section are unchanged since its last completion is
skipped.  Stage seeds are derived from one master seed.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (CorpusError, FilterConfig, SynthConfig, corpus_stats, filter_corpus, generate_synthetic,
                     ingest, write_playlists, write_stats, write_tracks)
from .table import EmbeddingTable

EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_DATA = 0, 2, 3, 4

STAGES = ("ingest", "synth", "filter", "stats", "train-song2vec", "annotate", "embed-bow", "embed-sif",
          "train-seq2seq", "embed-seq2seq", "probe", "build-index", "eval-rec")

# Each entry is a list of alternatives; at least one stage of each must be complete.
DEPENDENCIES = {
    "ingest": [],
    "synth": [],
    "filter": [("ingest", "synth")],
    "stats": [("filter",)],
    "train-song2vec": [("filter",)],
    "annotate": [("train-song2vec",)],
    "embed-bow": [("train-song2vec",)],
    "embed-sif": [("train-song2vec",)],
    "train-seq2seq": [("filter",)],
    "embed-seq2seq": [("train-seq2seq",)],
    "probe": [("annotate",), ("embed-bow", "embed-sif", "embed-seq2seq")],
    "build-index": [("embed-bow", "embed-sif", "embed-seq2seq")],
    "eval-rec": [("build-index",), ("annotate",)],
}

CONFIG_SECTION = {
    "ingest": None, "synth": "synth", "filter": "filter", "stats": None, "train-song2vec": "song2vec",
    "annotate": "annotate", "embed-bow": None, "embed-sif": "sif", "train-seq2seq": "seq2seq",
    "embed-seq2seq": "seq2seq", "probe": "probe", "build-index": "index", "eval-rec": "rec",
}


def default_config() -> dict:
    synth = asdict(SynthConfig())
    synth.pop("seed")
    return {
        "master_seed": 0,
        "synth": synth,
        "filter": asdict(FilterConfig()),
        "song2vec": {"dim": 32, "window": 5, "negatives": 5, "min_count": 5, "epochs": 5,
                     "alpha": 0.025, "min_alpha": 1e-4},
        "annotate": {"k": None, "min_share": 0.5, "min_lead": 1.5, "agree_frac": 0.7},
        "sif": {"a": math.exp(-3)},
        "seq2seq": {
            "layers": 3, "hidden": 64, "cell": "gru", "attention": "general", "max_len": 50,
            "vocab_min_count": 20, "epochs": 15, "batch_size": 64, "learning_rate": 3e-3,
            "variants": [{"name": "seq2seq-uni", "bidirectional": False},
                         {"name": "seq2seq-bi", "bidirectional": True}],
        },
        "probe": {
            "tasks": ["GPred", "GDPred", "PLen", "SC", "GMLPred", "GSPred", "BShift", "Permute"],
            "hidden": 512, "epochs": 30, "sc_targets": 50,
            "permute_kinds": ["shuffle1", "shuffle2", "reversal"],
            "permute_fractions": [0.1, 0.25, 0.5, 0.75, 1.0],
            "exclude_complement": [False],
        },
        "index": {"n_trees": 50, "leaf_size": 1},
        "rec": {"n_queries": 100, "ks": [1, 5, 10, 20, 50, 100], "label_kinds": ["genre", "length"],
                "exact": False},
    }


class ConfigError(Exception):
    pass


class DependencyError(Exception):
    pass


# ---------------------------------------------------------------- config

def _merge(base: dict, over: dict, where="config"):
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown key {where}.{k}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            _merge(base[k], v, f"{where}.{k}")
        else:
            base[k] = v


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, overrides=()) -> dict:
    cfg = default_config()
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(user, dict):
            raise ConfigError("config root must be an object")
        _merge(cfg, user)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, val = item.split("=", 1)
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown key {key}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown key {key}")
        node[parts[-1]] = _parse_value(val)
    return cfg


def derive_seed(master: int, stage: str) -> int:
    """Stage seed: first 4 bytes of sha256("<master>/<stage>"), big-endian."""
    return int.from_bytes(hashlib.sha256(f"{master}/{stage}".encode()).digest()[:4], "big")


# ---------------------------------------------------------------- run directory

def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class Run:
    def __init__(self, root, cfg: dict):
        self.root = Path(root)
        self.cfg = cfg
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.root / "manifest.json"
        if self.manifest_path.exists():
            with open(self.manifest_path, encoding="utf-8") as fh:
                self.manifest = json.load(fh)
        else:
            self.manifest = {"tool_version": __version__, "stages": {}}

    def path(self, rel) -> Path:
        return self.root / rel

    def complete(self, stage) -> bool:
        return self.manifest["stages"].get(stage, {}).get("complete", False)

    def outputs(self, stage) -> dict:
        return self.manifest["stages"].get(stage, {}).get("outputs", {})

    def save_manifest(self):
        self.manifest["tool_version"] = __version__
        self.manifest["master_seed"] = self.cfg["master_seed"]
        self.manifest["config"] = self.cfg
        with atomic(self.manifest_path) as tmp:
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(self.manifest, fh, indent=1, sort_keys=True)
                fh.write("\n")

    @contextlib.contextmanager
    def lock(self):
        lock = self.root / ".lock"
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"{self.root} is locked by another stage (remove {lock} if stale)") from None
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield
        finally:
            lock.unlink(missing_ok=True)


@contextlib.contextmanager
def atomic(path):
    """Yield a temporary path that replaces ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def check_dependencies(run: Run, stage: str):
    for alternatives in DEPENDENCIES[stage]:
        if not any(run.complete(s) for s in alternatives):
            need = " or ".join(f"'{s}'" for s in alternatives)
            raise DependencyError(f"stage '{stage}' needs {need} to be run first")


def _dep_inputs(run: Run, stage: str) -> dict:
    inputs = {}
    for alternatives in DEPENDENCIES[stage]:
        for s in alternatives:
            if run.complete(s):
                inputs.update(run.outputs(s))
    return inputs


# ---------------------------------------------------------------- shared loaders

def _corpus(run: Run, which="filtered"):
    from .corpus import Corpus
    c = ingest(run.path(f"corpus/{which}_playlists.tsv"), run.path(f"corpus/{which}_tracks.csv"))
    return Corpus(c.playlists, c.tracks, which if which == "filtered" else c.provenance, c.malformed_lines)


def _song_table(run: Run) -> EmbeddingTable:
    return EmbeddingTable.load(run.path("embeddings/songs.emb"))


def _variants(cfg) -> list[dict]:
    from .seq2seq import Seq2seqConfig
    sec = cfg["seq2seq"]
    shared = {k: v for k, v in sec.items() if k != "variants"}
    out = []
    for v in sec["variants"]:
        if "name" not in v:
            raise ConfigError("every seq2seq variant needs a name")
        params = dict(shared)
        params.update({k: val for k, val in v.items() if k != "name"})
        try:
            Seq2seqConfig(**params)
        except TypeError as e:
            raise ConfigError(f"seq2seq variant {v['name']}: {e}") from e
        out.append({"name": v["name"], **params})
    return out


def _encoders(run: Run) -> dict:
    """Encoder objects (with ``transform`` over track-id sequences) for every
    completed embedding stage."""
    from .bowenc import BowEncoder, SIFEncoder
    from .seq2seq import Seq2seqAutoencoder
    enc = {}
    if run.complete("embed-bow") or run.complete("embed-sif"):
        songs = _song_table(run)
    if run.complete("embed-bow"):
        enc["bow"] = BowEncoder(songs).fit()
    if run.complete("embed-sif"):
        enc["sif"] = SIFEncoder(songs).load_state(run.path("models/sif_state.bin"))
    if run.complete("embed-seq2seq"):
        for v in _variants(run.cfg):
            enc[v["name"]] = Seq2seqAutoencoder.load(run.path(f"models/{v['name']}.bin"))
    return enc


def _embedding_tables(run: Run) -> dict:
    out = {}
    for stage in ("embed-bow", "embed-sif", "embed-seq2seq"):
        for rel in sorted(run.outputs(stage)):
            if rel.endswith(".emb"):
                out[Path(rel).stem] = EmbeddingTable.load(run.path(rel))
    return out


# ---------------------------------------------------------------- stages

def stage_ingest(run: Run, seed: int, args) -> list[str]:
    if not args.playlists or not args.tracks:
        raise ConfigError("ingest needs --playlists and --tracks")
    c = ingest(args.playlists, args.tracks)
    if c.malformed_lines:
        print(f"skipped {c.malformed_lines} malformed playlist lines", file=sys.stderr)
    return _write_corpus(run, c, "raw")


def stage_synth(run: Run, seed: int, args) -> list[str]:
    cfg = SynthConfig(**run.cfg["synth"], seed=seed)
    c, truth = generate_synthetic(cfg)
    outs = _write_corpus(run, c, "raw")
    with atomic(run.path("corpus/truth.json")) as tmp:
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump({"genres": list(truth.genres), "song_genre": truth.song_genre,
                       "playlist_genre": truth.playlist_genre}, fh, sort_keys=True)
    return outs + ["corpus/truth.json"]


def _write_corpus(run: Run, c, which) -> list[str]:
    pl, tr = f"corpus/{which}_playlists.tsv", f"corpus/{which}_tracks.csv"
    with atomic(run.path(pl)) as tmp:
        write_playlists(c, tmp)
    with atomic(run.path(tr)) as tmp:
        write_tracks(c, tmp)
    return [pl, tr]


def stage_filter(run: Run, seed: int, args) -> list[str]:
    raw = _corpus(run, "raw")
    f = filter_corpus(raw, FilterConfig(**run.cfg["filter"]))
    if not f.playlists:
        raise CorpusError("filtering removed every playlist")
    return _write_corpus(run, f, "filtered")


def stage_stats(run: Run, seed: int, args) -> list[str]:
    s = corpus_stats(_corpus(run))
    with atomic(run.path("stats/stats.csv")) as tmp, atomic(run.path("stats/rank_counts.csv")) as tmp2:
        write_stats(s, tmp, tmp2)
    return ["stats/stats.csv", "stats/rank_counts.csv"]


def stage_train_song2vec(run: Run, seed: int, args) -> list[str]:
    from .song2vec import SkipGram
    sg = SkipGram(**run.cfg["song2vec"], seed=seed).fit(_corpus(run))
    with atomic(run.path("embeddings/songs.emb")) as tmp:
        sg.table_.save(tmp)
    with atomic(run.path("embeddings/songs.txt")) as tmp:
        sg.table_.save_text(tmp)
    return ["embeddings/songs.emb", "embeddings/songs.txt"]


def stage_annotate(run: Run, seed: int, args) -> list[str]:
    from .genre import (GenreLexicon, VoteConfig, annotate_playlists, annotate_songs, pca2d, write_annotations,
                        write_pca_csv)
    a = run.cfg["annotate"]
    c = _corpus(run)
    songs = _song_table(run)
    ann = annotate_songs(songs, c.tracks, GenreLexicon.load(), a["k"], seed, VoteConfig(a["min_share"], a["min_lead"]))
    pl = annotate_playlists(ann.labels, c.playlists, a["agree_frac"])
    coords, genres = pca2d(songs, ann.labels, seed)
    for rel, labels in (("labels/song_genres.csv", ann.labels), ("labels/playlist_genres.csv", pl)):
        with atomic(run.path(rel)) as tmp:
            write_annotations(tmp, labels)
    with atomic(run.path("labels/song_pca.csv")) as tmp:
        write_pca_csv(tmp, songs, coords, genres)
    print(f"labeled {len(ann.labels)}/{len(songs)} songs and {len(pl)}/{len(c.playlists)} playlists")
    return ["labels/song_genres.csv", "labels/playlist_genres.csv", "labels/song_pca.csv"]


def _write_table(run: Run, rel, ids, X) -> str:
    with atomic(run.path(rel)) as tmp:
        EmbeddingTable(ids, np.asarray(X, dtype=np.float32)).save(tmp)
    return rel


def stage_embed_bow(run: Run, seed: int, args) -> list[str]:
    from .bowenc import BowEncoder
    c = _corpus(run)
    X = BowEncoder(_song_table(run)).fit().transform(c)
    return [_write_table(run, "embeddings/bow.emb", [p.playlist_id for p in c.playlists], X)]


def stage_embed_sif(run: Run, seed: int, args) -> list[str]:
    from .bowenc import SIFEncoder
    c = _corpus(run)
    enc = SIFEncoder(_song_table(run), run.cfg["sif"]["a"]).fit(c)
    if not enc.converged_:
        print("warning: singular-vector iteration did not converge", file=sys.stderr)
    with atomic(run.path("models/sif_state.bin")) as tmp:
        enc.save_state(tmp)
    rel = _write_table(run, "embeddings/sif.emb", [p.playlist_id for p in c.playlists], enc.transform(c))
    return [rel, "models/sif_state.bin"]


def stage_train_seq2seq(run: Run, seed: int, args) -> list[str]:
    from .seq2seq import Seq2seqAutoencoder
    c = _corpus(run)
    outs = []
    for v in _variants(run.cfg):
        name = v.pop("name")
        print(f"# {name}")
        print("epoch,perplexity,token_accuracy")
        m = Seq2seqAutoencoder(**v, seed=seed).fit(c)
        rows = [(0, m.perplexity_log_[0], "")] + [
            (i + 1, p, a) for i, (p, a) in enumerate(zip(m.perplexity_log_[1:], m.accuracy_log_))]
        for r in rows:
            print(",".join(str(x) for x in r), flush=True)
        with atomic(run.path(f"models/{name}.bin")) as tmp:
            m.save(tmp)
        with atomic(run.path(f"models/{name}_perplexity.csv")) as tmp:
            with open(tmp, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["epoch", "perplexity", "token_accuracy"])
                w.writerows(rows)
        outs += [f"models/{name}.bin", f"models/{name}_perplexity.csv"]
    return outs


def stage_embed_seq2seq(run: Run, seed: int, args) -> list[str]:
    from .seq2seq import Seq2seqAutoencoder
    c = _corpus(run)
    ids = [p.playlist_id for p in c.playlists]
    outs = []
    for v in _variants(run.cfg):
        m = Seq2seqAutoencoder.load(run.path(f"models/{v['name']}.bin"))
        outs.append(_write_table(run, f"embeddings/{v['name']}.emb", ids, m.transform(c)))
    return outs


def stage_probe(run: Run, seed: int, args) -> list[str]:
    from . import probes as P
    from .genre import read_annotations
    pc = run.cfg["probe"]
    c = _corpus(run)
    song_labels = read_annotations(run.path("labels/song_genres.csv"))
    pl_labels = read_annotations(run.path("labels/playlist_genres.csv"))
    tables = _embedding_tables(run)
    encoders = _encoders(run) if {"BShift", "Permute"} & set(pc["tasks"]) else {}
    reports = []

    def fit(ds, name):
        r = P.train_probe(ds, hidden=pc["hidden"], epochs=pc["epochs"], seed=seed, encoder=name)
        print(f"{r.task},{name},{r.dim},{r.accuracy:.4f}", flush=True)
        reports.append(r)

    builders = {
        "GPred": lambda E: P.make_gpred(pl_labels, E, seed),
        "GDPred": lambda E: P.make_gdpred(c.playlists, song_labels, E, seed),
        "PLen": lambda E: P.make_plen(c.playlists, E, seed),
        "SC": lambda E: P.make_sc(c, E, pc["sc_targets"], seed),
        "GMLPred": lambda E: P.make_gmlpred(c.playlists, song_labels, E, seed),
        "GSPred": lambda E: P.make_gspred(c.playlists, song_labels, E, seed),
    }
    print("task,encoder,dim,accuracy")
    for name, E in tables.items():
        for task in pc["tasks"]:
            if task in builders:
                try:
                    fit(builders[task](E), name)
                except ValueError as e:
                    print(f"skipping {task} for {name}: {e}", file=sys.stderr)
    for name, enc in encoders.items():
        if "BShift" in pc["tasks"]:
            fit(P.make_bshift(c.playlists, enc, seed), name)
        if "Permute" in pc["tasks"]:
            for kind in pc["permute_kinds"]:
                for excl in pc["exclude_complement"]:
                    for frac in pc["permute_fractions"]:
                        fit(P.make_permute(c.playlists, enc, kind, frac, excl, seed), name)
    with atomic(run.path("results/probes.csv")) as tmp:
        P.write_reports(tmp, reports)
    return ["results/probes.csv"]


def stage_build_index(run: Run, seed: int, args) -> list[str]:
    from .ann import RPForest
    ic = run.cfg["index"]
    outs = []
    for name, E in _embedding_tables(run).items():
        rel = f"index/{name}.ann"
        with atomic(run.path(rel)) as tmp:
            RPForest(ic["n_trees"], ic["leaf_size"], seed).fit(E).save(tmp)
        outs.append(rel)
    return outs


def stage_eval_rec(run: Run, seed: int, args) -> list[str]:
    from .genre import read_annotations
    from .recsys import RecEvalConfig, build_index, eval_recommendation, length_labels, write_pr_csv
    rc, ic = run.cfg["rec"], run.cfg["index"]
    label_sets = {"genre": read_annotations(run.path("labels/playlist_genres.csv")),
                  "length": length_labels(_corpus(run).playlists)}
    reports = []
    for rel in sorted(run.outputs("build-index")):
        name = Path(rel).stem
        E = EmbeddingTable.load(run.path(f"embeddings/{name}.emb"))
        for kind in rc["label_kinds"]:
            labels = label_sets[kind]
            idx = build_index(E, labels, exact=rc["exact"], n_trees=ic["n_trees"], leaf_size=ic["leaf_size"],
                              seed=seed)
            r = eval_recommendation(idx, labels, RecEvalConfig(rc["n_queries"], rc["ks"], kind, seed), name)
            print(f"{kind},{name},P@10={r.at(10) if 10 in r.ks else float('nan'):.4f}", flush=True)
            reports.append(r)
    with atomic(run.path("results/precision_recall.csv")) as tmp:
        write_pr_csv(tmp, reports)
    return ["results/precision_recall.csv"]


STAGE_FUNCS = {
    "ingest": stage_ingest, "synth": stage_synth, "filter": stage_filter, "stats": stage_stats,
    "train-song2vec": stage_train_song2vec, "annotate": stage_annotate, "embed-bow": stage_embed_bow,
    "embed-sif": stage_embed_sif, "train-seq2seq": stage_train_seq2seq, "embed-seq2seq": stage_embed_seq2seq,
    "probe": stage_probe, "build-index": stage_build_index, "eval-rec": stage_eval_rec,
}


def run_stage(run: Run, stage: str, args=None, force=False) -> bool:
    """Run one stage; returns False when it was already up to date."""
    check_dependencies(run, stage)
    section = CONFIG_SECTION[stage]
    seed = derive_seed(run.cfg["master_seed"], stage)
    inputs = _dep_inputs(run, stage)
    if stage == "ingest" and args is not None and args.playlists and args.tracks:
        inputs = {str(args.playlists): file_hash(args.playlists), str(args.tracks): file_hash(args.tracks)}
    cfg_hash = hashlib.sha256(_canon(run.cfg.get(section) if section else None).encode()).hexdigest()
    rec = run.manifest["stages"].get(stage, {})
    if (not force and rec.get("complete") and rec.get("inputs") == inputs and rec.get("config_hash") == cfg_hash
            and all(run.path(p).exists() and file_hash(run.path(p)) == h for p, h in rec["outputs"].items())):
        print(f"{stage}: up to date")
        return False
    if stage in ("ingest", "synth"):
        # the two corpus sources are exclusive
        run.manifest["stages"].pop("synth" if stage == "ingest" else "ingest", None)
    outs = STAGE_FUNCS[stage](run, seed, args)
    run.manifest["stages"][stage] = {
        "complete": True, "seed": seed, "config_hash": cfg_hash, "inputs": inputs,
        "outputs": {p: file_hash(run.path(p)) for p in outs},
    }
    run.save_manifest()
    return True


# ---------------------------------------------------------------- report

def report(run_dir) -> list[dict]:
    """Merge stage results into ``results/report.csv`` and ``results/report.md``."""
    root = Path(run_dir)
    rows = []
    probe_csv = root / "results/probes.csv"
    if probe_csv.exists():
        with open(probe_csv, encoding="utf-8", newline="") as fh:
            rows = [dict(r, accuracy=float(r["accuracy"]), dim=int(r["dim"])) for r in csv.DictReader(fh)]
    rows.sort(key=lambda r: (r["task"], r["encoder"], r["dim"]))
    with atomic(root / "results/report.csv") as tmp:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["task", "encoder", "dim", "accuracy"])
            for r in rows:
                w.writerow([r["task"], r["encoder"], r["dim"], f"{r['accuracy']:.6f}"])
    lines = []
    tasks = sorted({r["task"] for r in rows if not r["task"].startswith("Permute")})
    encoders = sorted({r["encoder"] for r in rows})
    cell = {(r["task"], r["encoder"]): r["accuracy"] for r in rows}
    if rows:
        lines += ["## Probe accuracy", "", "| task | " + " | ".join(encoders) + " |",
                  "|---" * (len(encoders) + 1) + "|"]
        for t in tasks:
            vals = [f"{cell[(t, e)]:.3f}" if (t, e) in cell else "absent" for e in encoders]
            lines.append(f"| {t} | " + " | ".join(vals) + " |")
        dims = sorted({r["dim"] for r in rows})
        if len(dims) > 1:
            lines += ["", "## Accuracy by embedding size (best encoder per size)", "",
                      "| task | " + " | ".join(str(d) for d in dims) + " |", "|---" * (len(dims) + 1) + "|"]
            for t in tasks:
                vals = []
                for d in dims:
                    accs = [r["accuracy"] for r in rows if r["task"] == t and r["dim"] == d]
                    vals.append(f"{max(accs):.3f}" if accs else "absent")
                lines.append(f"| {t} | " + " | ".join(vals) + " |")
        perm = [r for r in rows if r["task"].startswith("Permute")]
        if perm:
            lines += ["", "## Permute accuracy by fraction", "", "| variant | encoder | fraction | accuracy |",
                      "|---|---|---|---|"]
            for r in sorted(perm, key=lambda r: (r["task"].rsplit("-", 1)[0] if not r["task"].endswith("excl")
                                                 else r["task"], r["encoder"])):
                parts = r["task"].split("-")
                frac = parts[2]
                variant = "-".join(parts[1:2] + parts[3:])
                lines.append(f"| {variant} | {r['encoder']} | {frac} | {r['accuracy']:.3f} |")
    pr = root / "results/precision_recall.csv"
    if pr.exists():
        with open(pr, encoding="utf-8", newline="") as fh:
            prs = list(csv.DictReader(fh))
        lines += ["", "## Recommendation precision / recall", "", "| label | encoder | k | precision | recall |",
                  "|---|---|---|---|---|"]
        for r in prs:
            lines.append(f"| {r['label_kind']} | {r['encoder']} | {r['k']} | {float(r['mean_precision']):.3f} | "
                         f"{float(r['mean_recall']):.3f} |")
    with atomic(root / "results/report.md") as tmp:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return rows


# ---------------------------------------------------------------- entry point

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plembed", description="Playlist embedding pipeline.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--run-dir", default="run", help="run directory (default: ./run)")
        p.add_argument("--config", help="JSON config; sections override the defaults")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. seq2seq.epochs=5 (repeatable)")
        p.add_argument("--seed", type=int, help="master seed (same as --set master_seed=N)")
        p.add_argument("--force", action="store_true", help="rerun even if up to date")

    for s in STAGES:
        p = sub.add_parser(s, help=f"run the {s} stage")
        common(p)
        if s == "ingest":
            p.add_argument("--playlists", help="playlist TSV: id<TAB>comma-separated track ids")
            p.add_argument("--tracks", help="track CSV: track_id,artist_id,artist_genres")
    p = sub.add_parser("all", help="synth then every later stage in order")
    common(p)
    p = sub.add_parser("report", help="aggregate results into report.csv / report.md")
    p.add_argument("--run-dir", default="run")
    p = sub.add_parser("query", help="nearest playlists from a built index")
    p.add_argument("--run-dir", default="run")
    p.add_argument("--encoder", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--id")
    g.add_argument("--vector", help="comma-separated components")
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--search-k", type=int)
    p = sub.add_parser("config", help="print the effective config as JSON")
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[])
    return ap


def _load(args):
    overrides = list(args.set)
    if getattr(args, "seed", None) is not None:
        overrides.append(f"master_seed={args.seed}")
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "config":
            print(json.dumps(load_config(args.config, args.set), indent=1, sort_keys=True))
            return EXIT_OK
        if args.command == "report":
            rows = report(args.run_dir)
            print(f"{len(rows)} rows -> {Path(args.run_dir) / 'results/report.csv'}")
            return EXIT_OK
        if args.command == "query":
            return _query(args)
        run = Run(args.run_dir, _load(args))
        stages = [s for s in STAGES if s != "ingest"] if args.command == "all" else [args.command]
        with run.lock():
            for s in stages:
                run_stage(run, s, args, args.force)
        return EXIT_OK
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DependencyError as e:
        print(f"dependency error: {e}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (CorpusError, ValueError, KeyError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


def _query(args) -> int:
    from .ann import RPForest
    path = Path(args.run_dir) / f"index/{args.encoder}.ann"
    if not path.exists():
        raise DependencyError(f"no index for encoder '{args.encoder}'; run 'build-index' first")
    f = RPForest.load(path)
    if args.id is not None:
        if args.id not in f.index_:
            raise KeyError(f"unknown playlist id {args.id}")
        res = f.query_id(args.id, args.k, args.search_k)
    else:
        q = np.array([float(x) for x in args.vector.split(",")])
        res = f.query(q, args.k, args.search_k)
    print("id,distance")
    for i, d in zip(res.ids, res.distances):
        print(f"{i},{d:.6f}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
