import hashlib
import json

import numpy as np
import pytest
from PIL import Image

from sparseiqa.cli import main
from sparseiqa.model_io import load_model, read_metadata
from sparseiqa.synthetic import make_corpus, synth_image


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_corpus")
    return root, make_corpus(root, 10, seed=21, height=64, width=64)


def train_args(corpus_dir, out, **overrides):
    args = ["train", "--corpus", str(corpus_dir), "--out", str(out),
            "--patches-per-image", "40", "--hidden", "12",
            "--max-iter", "25", "--seed", "5"]
    for flag, value in overrides.items():
        args += [f"--{flag}", str(value)]
    return args


@pytest.fixture(scope="module")
def trained_model_file(small_corpus, tmp_path_factory):
    corpus_dir, _ = small_corpus
    out = tmp_path_factory.mktemp("cli_model") / "model.siq"
    rc = main(train_args(corpus_dir, out))
    assert rc == 0
    return out


class TestTrain:
    def test_writes_all_artifacts(self, small_corpus, tmp_path):
        corpus_dir, _ = small_corpus
        out = tmp_path / "m.siq"
        trace = tmp_path / "trace.csv"
        filters = tmp_path / "filters.png"
        rc = main(train_args(corpus_dir, out) + ["--trace", str(trace),
                                                 "--filters", str(filters)])
        assert rc == 0
        assert out.exists() and trace.exists() and filters.exists()
        model = load_model(out)
        assert model.hyperparams.n_hidden == 12
        with Image.open(filters) as img:
            assert img.mode == "RGB"

    def test_seed_repeatability_checksum(self, small_corpus, tmp_path):
        corpus_dir, _ = small_corpus
        a, b = tmp_path / "a.siq", tmp_path / "b.siq"
        assert main(train_args(corpus_dir, a)) == 0
        assert main(train_args(corpus_dir, b)) == 0
        ha = hashlib.sha256(a.read_bytes()).hexdigest()
        hb = hashlib.sha256(b.read_bytes()).hexdigest()
        # provenance carries the (different) output path, so compare payloads
        ma, mb = load_model(a), load_model(b)
        for name in ("w1", "b1", "w2", "b2"):
            np.testing.assert_array_equal(getattr(ma, name), getattr(mb, name))
        assert (ha == hb) == (str(a) == str(b))

    def test_budget_larger_than_corpus_uses_all(self, small_corpus, tmp_path, capsys):
        corpus_dir, _ = small_corpus
        out = tmp_path / "m.siq"
        rc = main(train_args(corpus_dir, out) + ["--image-budget", "500"])
        assert rc == 0
        err = capsys.readouterr().err
        assert "using all 10 images" in err

    def test_undecodable_files_skipped_with_warning(self, tmp_path, capsys):
        corpus = tmp_path / "corpus"
        make_corpus(corpus, 4, seed=31, height=64, width=64)
        (corpus / "broken.png").write_bytes(b"not an image at all")
        out = tmp_path / "m.siq"
        rc = main(train_args(corpus, out))
        assert rc == 0
        assert "skipping" in capsys.readouterr().err

    def test_empty_corpus_is_usage_error(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(train_args(empty, tmp_path / "m.siq")) == 2

    def test_provenance_echoes_config(self, trained_model_file):
        meta = read_metadata(trained_model_file)
        cfg = meta["provenance"]["config"]
        assert cfg["n_hidden"] == 12
        assert cfg["seed"] == 5
        assert meta["provenance"]["patch_count"] == 400

    def test_config_file_precedence(self, small_corpus, tmp_path):
        corpus_dir, _ = small_corpus
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"n_hidden": 9, "seed": 8,
                                        "patches_per_image": 30,
                                        "max_iterations": 10}))
        out = tmp_path / "m.siq"
        # CLI flag --hidden 11 must beat the config file's 9
        rc = main(["train", "--corpus", str(corpus_dir), "--out", str(out),
                   "--hidden", "11", "--config", str(cfg_file)])
        assert rc == 0
        meta = read_metadata(out)
        assert meta["hyperparams"]["n_hidden"] == 11
        assert meta["provenance"]["config"]["seed"] == 8

    def test_unknown_config_key_rejected(self, small_corpus, tmp_path):
        corpus_dir, _ = small_corpus
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"hidden_units": 9}))
        rc = main(["train", "--corpus", str(corpus_dir),
                   "--out", str(tmp_path / "m.siq"), "--config", str(cfg_file)])
        assert rc == 2


def write_image(path, seed, h=48, w=48):
    Image.fromarray(synth_image(seed, h, w), "RGB").save(path)
    return path


class TestScore:
    def test_self_pair_scores_one(self, trained_model_file, tmp_path, capsys):
        img = write_image(tmp_path / "ref.png", 900)
        rc = main(["score", "--model", str(trained_model_file),
                   "--ref", str(img), "--dist", str(img)])
        assert rc == 0
        lines = [ln for ln in capsys.readouterr().out.splitlines()
                 if ln and not ln.startswith("#")]
        assert lines[0].split("\t") == ["ref", "dist", "spearman_raw", "score", "status"]
        fields = lines[1].split("\t")
        assert float(fields[2]) == 1.0 and float(fields[3]) == 1.0
        assert fields[4] == "ok"

    def test_batch_order_and_error_rows(self, trained_model_file, tmp_path):
        ref = write_image(tmp_path / "ref.png", 901)
        dist = write_image(tmp_path / "dist.png", 902)
        odd = write_image(tmp_path / "odd.png", 903, h=56, w=40)
        listing = tmp_path / "pairs.tsv"
        listing.write_text(f"{ref}\t{dist}\n{ref}\t{odd}\n{ref}\t{ref}\n")
        out = tmp_path / "scores.tsv"
        rc = main(["score", "--model", str(trained_model_file),
                   "--batch", str(listing), "--out", str(out)])
        assert rc == 1  # one row failed
        rows = [ln.split("\t") for ln in out.read_text().splitlines()
                if ln and not ln.startswith("#")][1:]
        assert len(rows) == 3
        assert rows[0][4] == "ok"
        assert rows[1][2] == "NA" and rows[1][4].startswith("error:")
        assert float(rows[2][3]) == 1.0

    def test_jobs_parallel_matches_serial(self, trained_model_file, tmp_path):
        imgs = [write_image(tmp_path / f"i{k}.png", 910 + k) for k in range(4)]
        listing = tmp_path / "pairs.tsv"
        listing.write_text("".join(f"{imgs[0]}\t{img}\n" for img in imgs))
        serial, parallel = tmp_path / "s.tsv", tmp_path / "p.tsv"
        assert main(["score", "--model", str(trained_model_file),
                     "--batch", str(listing), "--out", str(serial)]) == 0
        assert main(["score", "--model", str(trained_model_file),
                     "--batch", str(listing), "--out", str(parallel),
                     "--jobs", "4"]) == 0

        def body(path):
            return [ln for ln in path.read_text().splitlines()
                    if ln and not ln.startswith("#")]

        assert body(serial) == body(parallel)

    def test_tau_and_abs_threshold_flags(self, trained_model_file, tmp_path, capsys):
        ref = write_image(tmp_path / "r.png", 920)
        dist = write_image(tmp_path / "d.png", 921)
        for extra in (["--tau", "0.8"], ["--abs-threshold", "0.05"]):
            rc = main(["score", "--model", str(trained_model_file),
                       "--ref", str(ref), "--dist", str(dist)] + extra)
            assert rc == 0
        capsys.readouterr()

    def test_requires_pair_or_batch(self, trained_model_file):
        assert main(["score", "--model", str(trained_model_file)]) == 2

    def test_missing_model_usage_error(self, tmp_path):
        img = write_image(tmp_path / "r.png", 930)
        rc = main(["score", "--model", str(tmp_path / "nope.siq"),
                   "--ref", str(img), "--dist", str(img)])
        assert rc == 2


class TestEvaluate:
    def test_identity_scores(self, tmp_path, capsys):
        scores = tmp_path / "scores.csv"
        mos = tmp_path / "mos.csv"
        vals = [0.31, 1.27, 2.03, 2.91, 4.13, 0.77]
        scores.write_text("image_id,reference_id,score\n"
                          + "".join(f"i{k},r,{v}\n" for k, v in enumerate(vals)))
        mos.write_text("image_id,mos\n" + "".join(f"i{k},{v}\n" for k, v in enumerate(vals)))
        report = tmp_path / "report.json"
        scatter = tmp_path / "scatter.tsv"
        rc = main(["evaluate", "--scores", str(scores), "--mos", str(mos),
                   "--report", str(report), "--scatter", str(scatter)])
        assert rc == 0
        payload = json.loads(report.read_text())
        assert payload["rmse"] < 1e-8
        assert payload["srcc"] == 1.0
        assert payload["config"]["cli"]["bins"] == 10
        assert len(scatter.read_text().splitlines()) == 7

    def test_missing_file_usage_error(self, tmp_path):
        rc = main(["evaluate", "--scores", str(tmp_path / "a.csv"),
                   "--mos", str(tmp_path / "b.csv"),
                   "--report", str(tmp_path / "r.json")])
        assert rc == 2


class TestExportFilters:
    def test_writes_png(self, trained_model_file, tmp_path, capsys):
        out = tmp_path / "filters.png"
        rc = main(["export-filters", "--model", str(trained_model_file),
                   "--out", str(out)])
        assert rc == 0
        with Image.open(out) as img:
            assert img.mode == "RGB"


class TestHelp:
    @pytest.mark.parametrize("sub,expects", [
        ("train", ["3e-3", "0.1", "0.5", "0.035"]),
        ("evaluate", ["10"]),
        ("score", ["0.5"]),
    ])
    def test_help_documents_paper_gap_defaults(self, sub, expects, capsys):
        with pytest.raises(SystemExit) as exc:
            main([sub, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for token in expects:
            assert token in text

    def test_bad_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--nonsense"])
        assert exc.value.code == 2
        capsys.readouterr()
