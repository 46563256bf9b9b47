import json

import pytest

from plembed.cli import (EXIT_CONFIG, EXIT_DATA, EXIT_DEPENDENCY, STAGES, ConfigError, Run, derive_seed,
                         load_config, main, report)

TINY = {
    "synth": {"n_genres": 4, "songs_per_genre": 60, "n_playlists": 500, "length_median": 50},
    "song2vec": {"dim": 8, "epochs": 2},
    "seq2seq": {"layers": 1, "hidden": 8, "epochs": 1, "vocab_min_count": 2, "max_len": 40,
                "variants": [{"name": "s2s", "bidirectional": False}]},
    "probe": {"hidden": 16, "epochs": 2, "sc_targets": 10, "permute_kinds": ["reversal"],
              "permute_fractions": [0.5, 1.0], "exclude_complement": [False, True]},
    "index": {"n_trees": 4},
    "rec": {"n_queries": 10, "ks": [1, 5, 10]},
}


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.json"
    p.write_text(json.dumps(TINY))
    return str(p)


@pytest.fixture(scope="module")
def full_run(tiny_config, tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert main(["all", "--run-dir", str(d), "--config", tiny_config]) == 0
    return d


def _manifest(d):
    return json.loads((d / "manifest.json").read_text())


def test_all_stages_complete(full_run):
    m = _manifest(full_run)
    assert {s for s, r in m["stages"].items() if r["complete"]} == set(STAGES) - {"ingest"}
    for rec in m["stages"].values():
        for rel in rec["outputs"]:
            assert (full_run / rel).exists()
    for rel in ("results/probes.csv", "results/precision_recall.csv", "index/bow.ann", "embeddings/s2s.emb",
                "labels/song_genres.csv", "stats/stats.csv", "models/s2s_perplexity.csv"):
        assert (full_run / rel).exists(), rel
    assert (full_run / "results/probes.csv").read_text().startswith("task,encoder,dim,accuracy\n")


def test_rerun_is_a_noop(full_run, tiny_config, capsys):
    before = (full_run / "manifest.json").read_bytes()
    assert main(["all", "--run-dir", str(full_run), "--config", tiny_config]) == 0
    out = capsys.readouterr().out
    assert out.count("up to date") == len(STAGES) - 1
    assert (full_run / "manifest.json").read_bytes() == before


def test_config_change_reruns_downstream_only(full_run, tiny_config, capsys):
    assert main(["all", "--run-dir", str(full_run), "--config", tiny_config, "--set", "index.n_trees=5"]) == 0
    out = capsys.readouterr().out
    stale = [s for s in STAGES if s != "ingest" and f"{s}: up to date" not in out]
    assert stale == ["build-index", "eval-rec"]
    assert _manifest(full_run)["config"]["index"]["n_trees"] == 5


def test_two_runs_byte_identical(full_run, tiny_config, tmp_path):
    assert main(["all", "--run-dir", str(tmp_path), "--config", tiny_config, "--set", "index.n_trees=5"]) == 0
    a, b = _manifest(full_run)["stages"], _manifest(tmp_path)["stages"]
    assert {s: r["outputs"] for s, r in a.items()} == {s: r["outputs"] for s, r in b.items()}


def test_report(full_run):
    rows = report(full_run)
    assert rows and (full_run / "results/report.csv").exists()
    md = (full_run / "results/report.md").read_text()
    assert "## Probe accuracy" in md and "## Permute accuracy by fraction" in md
    assert "## Recommendation precision / recall" in md


def test_report_grid_marks_absent(tmp_path):
    (tmp_path / "results").mkdir()
    (tmp_path / "results/probes.csv").write_text(
        "task,encoder,dim,accuracy\nGPred,bow,8,0.9\nGPred,sif,8,0.8\nPLen,bow,8,0.3\nPLen,sif,8,0.4\n"
        "SC,bow,8,0.2\n")
    rows = report(tmp_path)
    assert len(rows) == 5
    md = (tmp_path / "results/report.md").read_text()
    assert "| SC | 0.200 | absent |" in md


def test_report_dimension_sweep(tmp_path):
    (tmp_path / "results").mkdir()
    lines = ["task,encoder,dim,accuracy"] + [f"PLen,s2s-{d},{d},0.{d}" for d in (32, 64, 128)]
    (tmp_path / "results/probes.csv").write_text("\n".join(lines) + "\n")
    report(tmp_path)
    md = (tmp_path / "results/report.md").read_text()
    assert "| task | 32 | 64 | 128 |" in md


def test_query(full_run, capsys):
    pid = (full_run / "corpus/filtered_playlists.tsv").read_text().split("\t", 1)[0]
    assert main(["query", "--run-dir", str(full_run), "--encoder", "bow", "--id", pid, "-k", "3"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "id,distance" and len(out) == 4 and pid not in out[1:]
    assert main(["query", "--run-dir", str(full_run), "--encoder", "nope", "--id", pid]) == EXIT_DEPENDENCY
    assert main(["query", "--run-dir", str(full_run), "--encoder", "bow", "--id", "zz"]) == EXIT_DATA


def test_dependency_error_names_stage(tmp_path, capsys):
    assert main(["probe", "--run-dir", str(tmp_path)]) == EXIT_DEPENDENCY
    assert "'annotate'" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys):
    assert main(["synth", "--run-dir", str(tmp_path), "--set", "synth.colour=3"]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    assert main(["synth", "--run-dir", str(tmp_path), "--config", str(bad)]) == EXIT_CONFIG
    assert main(["ingest", "--run-dir", str(tmp_path)]) == EXIT_CONFIG
    with pytest.raises(ConfigError):
        load_config(overrides=["no-equals"])
    assert load_config(overrides=["seq2seq.epochs=3"])["seq2seq"]["epochs"] == 3


def test_lock_blocks_second_stage(tmp_path, capsys):
    (tmp_path / ".lock").write_text("123")
    assert main(["synth", "--run-dir", str(tmp_path)]) == EXIT_CONFIG
    assert "locked" in capsys.readouterr().err


def test_ingest_then_filter(tmp_path):
    pl = tmp_path / "p.tsv"
    tr = tmp_path / "t.csv"
    rows = [f"p{i}\t" + ",".join(f"t{(i + j) % 12}" for j in range(6)) for i in range(40)]
    pl.write_text("\n".join(rows) + "\n")
    tr.write_text("track_id,artist_id,artist_genres\n" + "".join(f"t{i},a{i % 3},rock\n" for i in range(12)))
    d = tmp_path / "run"
    assert main(["ingest", "--run-dir", str(d), "--playlists", str(pl), "--tracks", str(tr)]) == 0
    assert main(["filter", "--run-dir", str(d), "--set", "filter.min_length=3"]) == 0
    assert (d / "corpus/filtered_playlists.tsv").read_text().count("\n") == 40
    tr.write_text("track_id,artist_id,artist_genres\nt0,a0,rock\n")
    assert main(["ingest", "--run-dir", str(d), "--playlists", str(pl), "--tracks", str(tr)]) == EXIT_DATA


def test_seed_derivation():
    assert derive_seed(0, "synth") == derive_seed(0, "synth")
    assert derive_seed(0, "synth") != derive_seed(1, "synth") != derive_seed(0, "filter")
    assert 0 <= derive_seed(7, "probe") < 2 ** 32


def test_config_command(capsys):
    assert main(["config", "--set", "master_seed=9"]) == 0
    assert json.loads(capsys.readouterr().out)["master_seed"] == 9
