import pytest
from typer.testing import CliRunner

from mran.cli import app
from mran.data import Vocabulary

runner = CliRunner()

SMALL_RUN = """\
# small synthetic run
synth = true
synth_domains = 3
synth_labeled = 20
synth_unlabeled = 10
synth_dim = 6
extractor_hidden = 8
shared_dim = 4
domain_dim = 3
batch_size = 4
k_d = 1
learning_rate = 0.001
"""


@pytest.fixture
def small_config(tmp_path, monkeypatch):
    monkeypatch.delenv("MRAN_DATA_DIR", raising=False)
    monkeypatch.delenv("MRAN_OUTPUT_DIR", raising=False)
    monkeypatch.chdir(tmp_path)
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_RUN, encoding="utf-8")
    return path


def _train(config, out, *extra):
    return runner.invoke(app, ["train", "--config", str(config), "--out", str(out), "--max-epochs", "1", "-q", *extra])


def test_train_is_reproducible(small_config, tmp_path):
    out = tmp_path / "run"
    first = _train(small_config, out)
    assert first.exit_code == 0, first.output
    summary = (out / "summary.txt").read_bytes()
    metrics = (out / "repeat0" / "fold2" / "metrics.csv").read_bytes()
    checkpoint = (out / "repeat0" / "fold2" / "best.ckpt").read_bytes()

    second = _train(small_config, out)
    assert second.exit_code == 0, second.output
    assert (out / "summary.txt").read_bytes() == summary
    assert (out / "repeat0" / "fold2" / "metrics.csv").read_bytes() == metrics
    assert (out / "repeat0" / "fold2" / "best.ckpt").read_bytes() == checkpoint


def test_train_writes_every_fold_and_prints_the_summary(small_config, tmp_path):
    out = tmp_path / "run"
    result = _train(small_config, out)
    assert result.exit_code == 0, result.output
    for fold in range(5):
        assert (out / "repeat0" / f"fold{fold}" / "metrics.csv").is_file()
        assert (out / "repeat0" / f"fold{fold}" / "best.ckpt").is_file()
    assert (out / "config.echo").is_file()
    assert not (out / "vocab.txt").exists()
    lines = result.stdout.splitlines()
    for name in ("domain0", "domain1", "domain2", "AVG"):
        assert sum(line.startswith(name) for line in lines) == 1
    assert "5-fold rotation x 1 repeat(s)" in result.stdout


def test_train_with_zero_epochs(small_config, tmp_path):
    result = runner.invoke(app, ["train", "--config", str(small_config), "--out", str(tmp_path / "zero"), "--max-epochs", "0", "-q"])
    assert result.exit_code == 0, result.output
    assert "AVG" in result.stdout


def test_flags_override_the_config_file(small_config, tmp_path):
    out = tmp_path / "run"
    result = _train(small_config, out, "--seed", "9", "--ablate", "dm,ucm")
    assert result.exit_code == 0, result.output
    echo = (out / "config.echo").read_text(encoding="utf-8").splitlines()
    assert "seed = 9" in echo
    assert "ablate = dm,ucm" in echo
    assert "MRAN w/o DM w/o UCM" in result.stdout


def test_unknown_ablation_exits_with_error(small_config, tmp_path):
    result = _train(small_config, tmp_path / "run", "--ablate", "everything")
    assert result.exit_code == 1
    assert "ablate" in result.output


def test_bad_config_line_exits_with_error(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("seed = 1\nthis is not a setting\n", encoding="utf-8")
    result = runner.invoke(app, ["train", "--config", str(path), "--synth"])
    assert result.exit_code == 1
    assert ":2:" in result.output


def test_unknown_config_key_exits_with_error(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("epochs = 3\n", encoding="utf-8")
    result = runner.invoke(app, ["train", "--config", str(path), "--synth"])
    assert result.exit_code == 1
    assert "unknown config key 'epochs'" in result.output


def test_missing_data_dir_prints_the_layout(tmp_path, monkeypatch):
    monkeypatch.delenv("MRAN_DATA_DIR", raising=False)
    result = runner.invoke(app, ["train", "--data-dir", str(tmp_path / "nowhere"), "--out", str(tmp_path / "run")])
    assert result.exit_code == 1
    assert "positive.review" in result.output


def test_no_data_source_exits_with_error(tmp_path, monkeypatch):
    monkeypatch.delenv("MRAN_DATA_DIR", raising=False)
    monkeypatch.chdir(tmp_path)
    result = runner.invoke(app, ["train", "--out", str(tmp_path / "run")])
    assert result.exit_code == 1
    assert "--synth" in result.output


def test_train_on_a_written_corpus(tmp_path, monkeypatch):
    monkeypatch.delenv("MRAN_DATA_DIR", raising=False)
    corpus = tmp_path / "corpus"
    made = runner.invoke(app, ["synth", "--out", str(corpus), "--domains", "2", "--labeled", "20", "--unlabeled", "0", "--dim", "4"])
    assert made.exit_code == 0, made.output
    config = tmp_path / "small.cfg"
    config.write_text("extractor_hidden = 6\nshared_dim = 3\ndomain_dim = 2\nbatch_size = 4\nk_d = 1\nvocab_size = 8\n", encoding="utf-8")
    result = runner.invoke(
        app, ["train", "--config", str(config), "--data-dir", str(corpus), "--out", str(tmp_path / "run"), "--max-epochs", "1", "-q"]
    )
    assert result.exit_code == 0, result.output
    assert "corpus: corpus" in result.stdout
    assert "Gap to published averages" in result.stdout
    assert "NOTE: no unlabeled files were found" in result.stdout
    vocab = Vocabulary.load(tmp_path / "run" / "vocab.txt")
    assert 0 < vocab.size <= 8
    assert (tmp_path / "run" / "config.echo").is_file()


def test_gradcheck_passes():
    result = runner.invoke(app, ["gradcheck"])
    assert result.exit_code == 0, result.output
    for term in ("l_adv", "l_c", "mix_x", "mix_y", "l_a", "l_u", "l_adv_mix", "l_total"):
        assert term in result.stdout


def test_gradcheck_single_term():
    result = runner.invoke(app, ["gradcheck", "--term", "l_u"])
    assert result.exit_code == 0, result.output
    assert "l_u" in result.stdout
    for other in ("l_adv", "l_c", "mix_x", "mix_y", "l_a ", "l_total"):
        assert other not in result.stdout


def test_gradcheck_refuses_dropout():
    result = runner.invoke(app, ["gradcheck", "--dropout", "0.4"])
    assert result.exit_code == 1
    assert "dropout" in result.output


def test_gradcheck_unknown_term():
    result = runner.invoke(app, ["gradcheck", "--term", "l_zz"])
    assert result.exit_code == 1


def test_synth_is_deterministic(tmp_path):
    args = ["--domains", "3", "--labeled", "10", "--unlabeled", "5", "--dim", "4", "--seed", "5"]
    for name in ("a", "b"):
        result = runner.invoke(app, ["synth", "--out", str(tmp_path / name), *args])
        assert result.exit_code == 0, result.output
    for domain in ("domain0", "domain1", "domain2"):
        for part in ("positive.review", "negative.review", "unlabeled.review"):
            assert (tmp_path / "a" / domain / part).read_bytes() == (tmp_path / "b" / domain / part).read_bytes()
    assert "domain2" in result.stdout


@pytest.mark.slow
def test_ablate_writes_one_row_per_variant(small_config, tmp_path):
    out = tmp_path / "ablation"
    result = runner.invoke(app, ["ablate", "--config", str(small_config), "--out", str(out), "--max-epochs", "1", "-q"])
    assert result.exit_code == 0, result.output
    for dirname in ("full", "wo_dm", "wo_cm", "wo_lcm", "wo_ucm"):
        assert (out / dirname / "summary.txt").is_file()
    lines = (out / "ablation.txt").read_text(encoding="utf-8").splitlines()
    assert lines[2].split() == ["Model", "domain0", "domain1", "domain2", "AVG"]
    assert [line.split("  ")[0] for line in lines[4:9]] == ["MRAN", "MRAN w/o DM", "MRAN w/o CM", "MRAN w/o LCM", "MRAN w/o UCM"]
