import json
import subprocess
import sys

import pytest

from segparse.cli import main, read_config_file, split_config
from segparse.errors import ConfigError
from segparse.treebank import gen_synth_corpus, read_corpus, write_corpus


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def corpora(tmp_path_factory):
    # the pipeline starts from the gen-corpus verb, as users would
    root = tmp_path_factory.mktemp("data")
    train = root / "train.txt"
    dev = root / "dev.txt"
    assert main(["gen-corpus", "--seed", "5", "--count", "80", "--out", str(train)]) == 0
    assert main(["gen-corpus", "--seed", "6", "--count", "20", "--out", str(dev)]) == 0
    assert train.read_text(encoding="utf-8") == write_corpus(gen_synth_corpus(5, 80))
    return train, dev


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, corpora):
    train, dev = corpora
    root = tmp_path_factory.mktemp("run")
    config = root / "run.toml"
    config.write_text(
        "\n".join([
            "mode = joint-multi",
            "embed_dim = 8",
            "hidden = 12",
            "lstm_layers = 1",
            "arc_mlp = 10",
            "label_mlp = 6",
            "min_freq = 1",
            "batch_size = 16",
            "max_epochs = 2",
            "seed = 3",
            f"train_path = {train}",
            f"dev_path = {dev}",
            f"out_dir = {root / 'model'}",
        ]) + "\n", encoding="utf-8")
    code = main(["train", "--config", str(config), "--quiet"])
    assert code == 0
    return root / "model", dev


class TestArgs:
    def test_unknown_verb_exits_nonzero(self):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code != 0

    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["--help"])
        assert err.value.code == 0
        assert "gen-corpus" in capsys.readouterr().out

    def test_unknown_flag_rejected(self):
        with pytest.raises(SystemExit) as err:
            main(["gen-corpus", "--count", "3", "--frobnicate"])
        assert err.value.code != 0

    def test_config_round_trip(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text('mode = "seg-only"\nseed = 9\nclip = 2.5  # comment\nno_ngram = true\n')
        blob = read_config_file(path)
        assert blob == {"mode": "seg-only", "seed": 9, "clip": 2.5, "no_ngram": True}
        train_kw, model_kw, paths = split_config(blob)
        assert train_kw == {"seed": 9, "clip": 2.5}
        assert model_kw == {"mode": "seg-only", "no_ngram": True}

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("bogus = 1\n")
        with pytest.raises(ConfigError):
            split_config(read_config_file(path))


class TestGenCorpus:
    def test_deterministic_output(self, capsys):
        code, out_a, _ = run_cli(capsys, "gen-corpus", "--seed", "4", "--count", "5")
        code_b, out_b, _ = run_cli(capsys, "gen-corpus", "--seed", "4", "--count", "5")
        assert code == code_b == 0
        assert out_a == out_b
        corpus = read_corpus(out_a)
        assert len(corpus) == 5


class TestPipeline:
    def test_parse_eval_analyze(self, trained_run, capsys, tmp_path):
        run_dir, dev = trained_run
        raw = tmp_path / "raw.txt"
        gold = read_corpus(dev.read_text(encoding="utf-8"))
        raw.write_text("\n".join(s.text for s, _ in gold.items) + "\n", encoding="utf-8")
        pred_path = tmp_path / "pred.txt"

        code, out, _ = run_cli(capsys, "parse", "--model", str(run_dir),
                               "--input", str(raw), "--out", str(pred_path))
        assert code == 0
        parsed = read_corpus(pred_path.read_text(encoding="utf-8"))
        assert len(parsed) == len(gold)

        code, out, _ = run_cli(capsys, "eval", "--gold", str(dev), "--pred", str(pred_path))
        assert code == 0
        report = json.loads(out)
        expect_keys = {"seg_p", "seg_r", "seg_f1", "udep_p", "uas", "udep_f1",
                       "ldep_p", "las", "ldep_f1",
                       "correct_pct", "seg_wrong_pct", "head_wrong_pct"}
        assert set(report) == expect_keys
        assert 0.0 <= report["udep_f1"] <= 1.0

        code, out, _ = run_cli(capsys, "analyze", "--gold", str(dev), "--pred", str(pred_path))
        assert code == 0
        analysis = json.loads(out)
        assert analysis["correct_pct"] + analysis["seg_wrong_pct"] + \
            analysis["head_wrong_pct"] == pytest.approx(100.0)

    def test_eval_gold_vs_itself_is_perfect(self, corpora, capsys):
        _, dev = corpora
        code, out, _ = run_cli(capsys, "eval", "--gold", str(dev), "--pred", str(dev))
        assert code == 0
        report = json.loads(out)
        for key in ("seg_f1", "udep_f1", "ldep_f1", "uas", "las"):
            assert report[key] == 1.0
        assert report["correct_pct"] == 100.0

    def test_missing_file_exit_2(self, capsys):
        code, _, err = run_cli(capsys, "eval", "--gold", "/nonexistent/gold.txt",
                               "--pred", "/nonexistent/pred.txt")
        assert code == 2

    def test_corrupted_checkpoint_exit_2(self, trained_run, capsys, tmp_path):
        run_dir, dev = trained_run
        (run_dir / "bad.ckpt").write_bytes(b"NOPE!" + b"\x00" * 32)
        raw = tmp_path / "raw2.txt"
        raw.write_text("这人看书。\n", encoding="utf-8")
        code, _, err = run_cli(capsys, "parse", "--model", str(run_dir),
                               "--checkpoint", "bad.ckpt", "--input", str(raw))
        assert code == 2
        assert "magic" in err

    def test_misaligned_eval_exit_3(self, corpora, capsys, tmp_path):
        train, dev = corpora
        code, _, _ = run_cli(capsys, "eval", "--gold", str(dev), "--pred", str(train))
        assert code == 3

    def test_parse_output_rereads_as_corpus(self, trained_run, capsys, tmp_path):
        run_dir, _ = trained_run
        raw = tmp_path / "raw3.txt"
        raw.write_text("金融业发展。\n这人看书。\n", encoding="utf-8")
        code, out, _ = run_cli(capsys, "parse", "--model", str(run_dir), "--input", str(raw))
        assert code == 0
        corpus = read_corpus(out)
        assert len(corpus) == 2
        assert "".join(corpus.items[0][1].words(corpus.items[0][0])) == "金融业发展。"


class TestConsoleEntry:
    def test_module_invocation(self, tmp_path):
        out = subprocess.run(
            [sys.executable, "-m", "segparse.cli", "gen-corpus", "--count", "2"],
            capture_output=True, text=True)
        assert out.returncode == 0
        assert read_corpus(out.stdout).items
