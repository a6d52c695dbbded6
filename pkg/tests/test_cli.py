import json
import subprocess
import sys

import numpy as np
import pytest

from dynwalk.cli import main
from dynwalk.embedding import read_embedding

FAST = ["--walks", "2", "--length", "8", "--dim", "8", "--window", "3", "--epochs", "1", "--warm-epochs", "1"]


@pytest.fixture
def snapdir(tmp_path):
    d = tmp_path / "snaps"
    assert main(["synth", "--n", "40", "--edges", "80", "--steps", "4", "--churn", "0.05",
                 "--communities", "2", "--seed", "1", "--out", str(d)]) == 0
    return d


def read_tsv(path):
    lines = path.read_text().splitlines()
    return lines[0].split("\t"), [line.split("\t") for line in lines[1:]]


class TestSynthIngest:
    def test_synth_files(self, snapdir):
        assert sorted(p.name for p in snapdir.glob("snapshot_*.tsv")) == [f"snapshot_{t}.tsv" for t in range(1, 5)]
        assert (snapdir / "labels.tsv").exists()

    def test_ingest_events(self, tmp_path):
        rng = np.random.default_rng(0)
        ev = tmp_path / "e.tsv"
        ev.write_text("".join(f"u{rng.integers(20)}\tv{rng.integers(20)}\t1\t{t}\n" for t in range(200)))
        out = tmp_path / "out"
        assert main(["ingest", "--events", str(ev), "--buckets", "10", "--cumulative", "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["snapshots"]) == 10
        for entry in manifest["snapshots"]:
            lines = (out / entry["file"]).read_text().splitlines()
            nodes = {x for line in lines for x in line.split("\t")[:2]}
            assert entry["edges"] == len(lines) and entry["nodes"] == len(nodes)
        edges = [m["edges"] for m in manifest["snapshots"]]
        assert edges == sorted(edges)

    def test_ingest_missing_file(self, tmp_path, capsys):
        assert main(["ingest", "--events", str(tmp_path / "nope.tsv"), "--buckets", "3", "--out", str(tmp_path)]) == 1
        assert "nope.tsv" in capsys.readouterr().err

    def test_ingest_needs_bucketing(self, tmp_path):
        ev = tmp_path / "e.tsv"
        ev.write_text("a\tb\t1\t0\n")
        assert main(["ingest", "--events", str(ev), "--out", str(tmp_path / "o")]) == 2

    def test_malformed_snapshot_is_runtime_error(self, tmp_path, capsys):
        d = tmp_path / "bad"
        d.mkdir()
        (d / "snapshot_1.tsv").write_text("a\tb\t-3\n")
        assert main(["ingest", "--snapshots", str(d), "--out", str(tmp_path / "o")]) == 1
        assert "snapshot_1.tsv:1" in capsys.readouterr().err


class TestEmbed:
    def test_deterministic(self, snapdir, tmp_path):
        for name in ("a", "b"):
            assert main(["embed", "--snapshots", str(snapdir), "--out", str(tmp_path / name), "--mode", "dyn",
                         "--p", "0.5", "--q", "1", "--seed", "7", *FAST]) == 0
        for t in range(1, 5):
            assert (tmp_path / "a" / f"emb_{t}.txt").read_bytes() == (tmp_path / "b" / f"emb_{t}.txt").read_bytes()

    def test_static_equals_dyn_at_first_timestamp(self, snapdir, tmp_path):
        for mode in ("static", "dyn"):
            assert main(["embed", "--snapshots", str(snapdir), "--out", str(tmp_path / mode), "--mode", mode, *FAST]) == 0
        a, b = read_embedding(tmp_path / "static" / "emb_1.txt"), read_embedding(tmp_path / "dyn" / "emb_1.txt")
        assert np.array_equal(a.vectors, b.vectors)

    def test_invalid_mode(self, snapdir, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["embed", "--snapshots", str(snapdir), "--out", str(tmp_path), "--mode", "fast"])
        assert exc.value.code == 2

    def test_invalid_value_is_usage_error(self, snapdir, tmp_path):
        assert main(["embed", "--snapshots", str(snapdir), "--out", str(tmp_path), "--p", "-1"]) == 2

    def test_missing_dir(self, tmp_path):
        assert main(["embed", "--snapshots", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 1

    def test_resume(self, snapdir, tmp_path):
        full, part = tmp_path / "full", tmp_path / "part"
        assert main(["embed", "--snapshots", str(snapdir), "--out", str(full), *FAST]) == 0
        short = tmp_path / "short"
        short.mkdir()
        for t in (1, 2):
            (short / f"snapshot_{t}.tsv").write_bytes((snapdir / f"snapshot_{t}.tsv").read_bytes())
        assert main(["embed", "--snapshots", str(short), "--out", str(part), "--checkpoint", *FAST]) == 0
        assert main(["embed", "--snapshots", str(snapdir), "--out", str(part), "--resume",
                     str(part / "checkpoint.bin"), *FAST]) == 0
        for t in range(1, 5):
            assert (full / f"emb_{t}.txt").read_bytes() == (part / f"emb_{t}.txt").read_bytes()

    def test_config_file_and_override(self, snapdir, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[walk]\nwalks_per_node = 2\nwalk_length = 6\n[train]\ndim = 4\nepochs = 1\n"
                       "warm_epochs = 1\nwindow = 2\n[pipeline]\nmode = all\n")
        out = tmp_path / "o"
        assert main(["embed", "--snapshots", str(snapdir), "--out", str(out), "--config", str(cfg), "--dim", "6"]) == 0
        assert read_embedding(out / "emb_1.txt").dim == 6
        rows = [json.loads(x) for x in (out / "results.jsonl").read_text().splitlines()]
        assert rows[1]["num_walks"] == 2 * rows[1]["num_nodes"]

    @pytest.mark.parametrize("text", ["[walk]\nbogus = 1\n", "[nonsense]\np = 1\n", "[walk]\np = abc\n"])
    def test_bad_config(self, snapdir, tmp_path, text):
        cfg = tmp_path / "bad.ini"
        cfg.write_text(text)
        assert main(["embed", "--snapshots", str(snapdir), "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 2


class TestEval:
    @pytest.fixture
    def embdir(self, snapdir, tmp_path):
        out = tmp_path / "emb"
        assert main(["embed", "--snapshots", str(snapdir), "--out", str(out), *FAST]) == 0
        return out

    def test_linkpred(self, snapdir, embdir, tmp_path):
        out = tmp_path / "rep"
        assert main(["eval", "--task", "linkpred", "--op", "hadamard", "--embeddings", str(embdir),
                     "--snapshots", str(snapdir), "--out", str(out)]) == 0
        header, rows = read_tsv(out / "linkpred.tsv")
        assert header[:3] == ["t", "op", "auc"]
        assert [r[0] for r in rows] == ["2", "3", "4"]
        assert all(0 <= float(r[2]) <= 1 for r in rows)
        _, summary = read_tsv(out / "linkpred_summary.tsv")
        assert summary[0][0] == "hadamard"

    def test_anomaly(self, embdir, tmp_path):
        out = tmp_path / "rep"
        assert main(["eval", "--task", "anomaly", "--embeddings", str(embdir), "--out", str(out)]) == 0
        header, rows = read_tsv(out / "anomaly.tsv")
        assert header == ["t", "s_t"] and len(rows) == 3 and all(len(r) == 2 for r in rows)

    def test_nodeclass(self, snapdir, embdir, tmp_path):
        out = tmp_path / "rep"
        assert main(["eval", "--task", "nodeclass", "--embeddings", str(embdir), "--labels",
                     str(snapdir / "labels.tsv"), "--out", str(out)]) == 0
        header, rows = read_tsv(out / "nodeclass.tsv")
        assert header == ["t", "micro_f1", "macro_f1"] and len(rows) == 4

    def test_nodeclass_needs_labels(self, embdir, tmp_path, capsys):
        assert main(["eval", "--task", "nodeclass", "--embeddings", str(embdir), "--out", str(tmp_path / "r")]) == 2
        assert "--labels" in capsys.readouterr().err

    def test_bad_operator(self, embdir, tmp_path):
        assert main(["eval", "--task", "linkpred", "--op", "dot", "--embeddings", str(embdir),
                     "--out", str(tmp_path / "r")]) == 2


class TestBenchGrid:
    def test_bench(self, snapdir, tmp_path):
        out = tmp_path / "bench.tsv"
        assert main(["bench", "--snapshots", str(snapdir), "--out", str(out), "--skip-train", *FAST]) == 0
        header, rows = read_tsv(out)
        assert header[0] == "mode" and len(rows) == 8
        walks = {m: sum(int(r[4]) for r in rows if r[0] == m) for m in ("dyn", "all")}
        assert walks["dyn"] < walks["all"]

    def test_bench_single_snapshot(self, tmp_path):
        d = tmp_path / "one"
        d.mkdir()
        (d / "snapshot_1.tsv").write_text("a\tb\n")
        assert main(["bench", "--snapshots", str(d), "--out", str(tmp_path / "b.tsv")]) == 2

    def test_grid(self, snapdir, tmp_path):
        out = tmp_path / "grid.tsv"
        assert main(["grid", "--snapshots", str(snapdir), "--grid", "0.5,2", "--out", str(out), *FAST]) == 0
        header, rows = read_tsv(out)
        assert header == ["p", "q", "mean_auc"] and len(rows) == 4


def test_version():
    res = subprocess.run([sys.executable, "-m", "dynwalk", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("dynwalk ")
