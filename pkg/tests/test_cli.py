import json

import numpy as np
import pytest

from emoq.cli import main
from emoq.data import Level, read_manifest
from emoq.formats import read_codebook, read_codes, read_embeddings
from emoq.probe import read_probe


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    emb = root / "synth.embv"
    code = main(["synth", "--dim", "8", "--per-class", "40", "--frames", "1", "2", "--ambiguity", "0.2", "--seed", "4", "--out", str(emb)])
    assert code == 0
    return root, emb


def run(*argv):
    return main([str(a) for a in argv])


def test_synth_writes_embeddings_and_manifest(corpus):
    _, emb = corpus
    eset = read_embeddings(emb)
    assert eset.dim == 8 and len(eset) == 160
    assert eset.level is Level.FRAME
    assert emb.with_suffix(".jsonl").exists()


def test_train_quantize_probe_evaluate(corpus, tmp_path):
    _, emb = corpus
    book = tmp_path / "bal.rvqc"
    assert run("train-codebook", "--embeddings", emb, "--regime", "balanced", "-L", 3, "-K", 4, "--budget", 40, "--out", book) == 0
    stack = read_codebook(book)
    assert (stack.n_stages, stack.entries) == (3, 4)

    codes, recon = tmp_path / "c.rvqi", tmp_path / "r.embv"
    assert run("quantize", "--embeddings", emb, "--codebook", book, "--depth", 2, "--out", codes, "--recon", recon) == 0
    seq = read_codes(codes)
    assert seq.indices.shape[1] == 2
    assert read_embeddings(recon).vectors.shape == read_embeddings(emb).vectors.shape

    probe = tmp_path / "p.prbe"
    assert run("probe-train", "--embeddings", emb, "--epochs", 50, "--out", probe) == 0
    assert read_probe(probe).weights.shape == (4, 8)

    out = tmp_path / "eval"
    assert run("evaluate", "--embeddings", emb, "--codebook", book, "--probe", probe, "--depths", "1,3", "--out-dir", out) == 0
    payload = json.loads((out / "evaluate.json").read_text())
    assert payload
    header = (out / "evaluate.csv").read_text().splitlines()[0]
    assert "metric" in header


def test_specific_stack_and_bank_routing(corpus, tmp_path):
    _, emb = corpus
    assert run("train-codebook", "--embeddings", emb, "--regime", "specific", "--target", "angry", "-L", 2, "-K", 4, "--budget", 32, "--out", tmp_path / "a.rvqc") == 0
    bank = tmp_path / "bank"
    assert run("train-codebook", "--embeddings", emb, "--regime", "specific", "--bank-dir", bank, "--level", "utterance", "--normalize", "-L", 2, "-K", 4, "--budget", 32) == 0
    assert sorted(p.stem for p in bank.glob("*.rvqc")) == ["angry", "happy", "neutral", "sad"]
    report = tmp_path / "route.json"
    assert run("route", "--embeddings", emb, "--bank", bank, "--depth", 1, "--baseline-f1", 0.5, "--out", report) == 0
    payload = json.loads(report.read_text())
    assert len(payload["predictions"]) == 160
    assert {p["label"] for p in payload["predictions"]} <= {"neutral", "happy", "angry", "sad"}


def test_failed_quota_leaves_no_partial_bank(corpus, tmp_path):
    _, emb = corpus
    bank = tmp_path / "bank"
    code = run("train-codebook", "--embeddings", emb, "--regime", "specific", "--bank-dir", bank, "-L", 1, "-K", 2, "--budget", 10_000)
    assert code == 2  # an unmeetable budget is a parameter error
    assert not bank.exists() or not list(bank.iterdir())


def test_research_commands(corpus, tmp_path):
    _, emb = corpus
    for cmd in ("rq1", "rq2"):
        assert run(cmd, "--embeddings", emb, "-L", 2, "-K", 4, "--out-dir", tmp_path / cmd) == 0
        assert (tmp_path / cmd / f"{cmd}.csv").exists() and (tmp_path / cmd / f"{cmd}.json").exists()
    assert run("rq3", "--embeddings", emb, "-L", 2, "-K", 4, "--regimes", "balanced,100+0", "--out-dir", tmp_path / "rq3") == 0
    rows = (tmp_path / "rq3" / "rq3.csv").read_text().splitlines()
    assert any("jsd_100+0" in r for r in rows)
    assert run("rq4", "--embeddings", emb, "--pairs", "2x4", "--out-dir", tmp_path / "rq4") == 0
    table = (tmp_path / "rq4" / "delta_table.csv").read_text().splitlines()
    assert table[0] == "condition,2x4"
    assert json.loads((tmp_path / "rq4" / "rq4.json").read_text())["rows"]


def test_sweep_is_reproducible(corpus, tmp_path):
    _, emb = corpus
    for name in ("a", "b"):
        assert run("sweep", "--embeddings", emb, "--pairs", "2x4,3x2", "--out-dir", tmp_path / name) == 0
    for f in ("sweep.csv", "delta_table.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_import_csv_and_npy(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 3))
    manifest = tmp_path / "m.jsonl"
    with open(manifest, "w") as fh:
        for i in range(8):
            fh.write(json.dumps({"uid": f"u{i}", "label": ["neutral", "happy", "angry", "sad"][i % 4], "frames": [i, i + 1]}) + "\n")
    np.save(tmp_path / "x.npy", x)
    np.savetxt(tmp_path / "x.csv", x, delimiter=",")
    for src in ("x.npy", "x.csv"):
        out = tmp_path / (src + ".embv")
        assert run("import", "--vectors", tmp_path / src, "--manifest", manifest, "--out", out) == 0
        eset = read_embeddings(out)
        assert np.allclose(eset.vectors, x, atol=1e-6)
        assert len(read_manifest(out.with_suffix(".jsonl"))) == 8


def test_validation_errors_exit_2(corpus, tmp_path, capsys):
    _, emb = corpus
    assert run("train-codebook", "--embeddings", emb, "--regime", "balanced", "-L", 2, "-K", 4, "--out", tmp_path / "x.rvqc") == 2
    assert "--budget" in capsys.readouterr().err
    assert run("train-codebook", "--embeddings", emb, "--regime", "biased", "--target", "sad", "-L", 2, "-K", 4, "--budget", 40, "--out", tmp_path / "x.rvqc") == 2
    assert run("sweep", "--embeddings", emb, "--pairs", "eight-by-two", "--out-dir", tmp_path) == 2
    with pytest.raises(SystemExit) as exc:
        run("route", "--depth", "one")
    assert exc.value.code == 2


def test_data_errors_exit_3(tmp_path, capsys):
    assert run("probe-train", "--embeddings", tmp_path / "missing.embv", "--out", tmp_path / "p.prbe") == 3
    bad = tmp_path / "bad.embv"
    bad.write_bytes(b"NOPE" + bytes(40))
    (tmp_path / "bad.jsonl").write_text("")
    assert run("probe-train", "--embeddings", bad, "--out", tmp_path / "p.prbe") == 3
    assert "error" in capsys.readouterr().err


def test_config_file_sets_defaults_and_flags_win(corpus, tmp_path):
    _, emb = corpus
    cfg = tmp_path / "run.toml"
    cfg.write_text(f'embeddings = "{emb}"\nregime = "balanced"\nstages = 3\nentries = 4\nbudget = 40\nout = "{tmp_path / "cfg.rvqc"}"\n')
    assert run("train-codebook", "--config", cfg) == 0
    assert read_codebook(tmp_path / "cfg.rvqc").n_stages == 3
    assert run("train-codebook", "--config", cfg, "-L", 2, "--out", tmp_path / "flag.rvqc") == 0
    assert read_codebook(tmp_path / "flag.rvqc").n_stages == 2

    lists = tmp_path / "sweep.toml"
    lists.write_text(f'embeddings = "{emb}"\npairs = ["2x4"]\nregimes = ["balanced", "100+0"]\nout-dir = "{tmp_path / "sw"}"\n')
    assert run("sweep", "--config", lists) == 0
    assert (tmp_path / "sw" / "delta_table.csv").read_text().splitlines()[0] == "condition,2x4"

    bad = tmp_path / "bad.toml"
    bad.write_text("colour = 3\n")
    assert run("probe-train", "--config", bad) == 2
