import pytest

from mran.errors import ConfigError
from mran.models.ablation_variant import AblationVariant
from mran.models.config_model import ExperimentConfig, LossWeights, load_config_file


def test_defaults_follow_the_published_setup():
    config = ExperimentConfig(output_dir="runs")
    assert (config.alpha, config.lambda_d, config.lambda_a, config.lambda_u, config.lambda_m) == (0.2, 1.0, 0.001, 0.1, 0.00001)
    assert (config.learning_rate, config.batch_size, config.dropout) == (1e-4, 8, 0.4)
    assert (config.shared_dim, config.domain_dim, config.extractor_hidden) == (128, 64, (1000, 500))


def test_config_file_parsing(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nseed = 3\n\nablate = dm, ucm  # trailing\npatience = none\n", encoding="utf-8")
    assert load_config_file(path) == {"seed": "3", "ablate": "dm, ucm"}
    config = ExperimentConfig.build(load_config_file(path))
    assert config.seed == 3
    assert config.ablate == [AblationVariant.DM, AblationVariant.UCM]


@pytest.mark.parametrize("text, message", [("seed = 1\nseed 3\n", ":2:"), ("colour = red\n", "unknown config key 'colour'")])
def test_config_file_errors_name_the_line(tmp_path, text, message):
    path = tmp_path / "run.cfg"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError, match=message):
        load_config_file(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config_file(tmp_path / "absent.cfg")


def test_later_layers_win_and_none_is_skipped():
    config = ExperimentConfig.build({"seed": "3", "batch_size": "16"}, {"seed": 7, "batch_size": None})
    assert (config.seed, config.batch_size) == (7, 16)


def test_invalid_values_name_the_key():
    with pytest.raises(ConfigError, match="'learning_rate'"):
        ExperimentConfig.build({"learning_rate": "-1"})
    with pytest.raises(ConfigError, match="'folds'"):
        ExperimentConfig.build({"folds": 2})
    with pytest.raises(ConfigError, match="unknown config key"):
        ExperimentConfig.build({"epochs": 3})


def test_environment_supplies_paths(monkeypatch, tmp_path):
    monkeypatch.setenv("MRAN_DATA_DIR", str(tmp_path / "corpus"))
    monkeypatch.setenv("MRAN_OUTPUT_DIR", str(tmp_path / "out"))
    config = ExperimentConfig()
    assert config.data_dir == tmp_path / "corpus"
    assert config.output_dir == tmp_path / "out"


def test_echo_parses_back(tmp_path, monkeypatch):
    monkeypatch.delenv("MRAN_DATA_DIR", raising=False)
    config = ExperimentConfig(
        output_dir=tmp_path, ablate=[AblationVariant.CM], extractor_hidden=(8, 4), grad_clip=2.5, domain_names=["a", "b"]
    )
    path = tmp_path / "config.echo"
    path.write_text("\n".join(config.echo_lines()) + "\n", encoding="utf-8")
    assert ExperimentConfig.build(load_config_file(path)) == config


def test_config_ablation_feeds_loss_weights(tmp_path):
    config = ExperimentConfig(output_dir=tmp_path, ablate=["lcm", "dm"])
    weights = LossWeights.from_config(config)
    assert (weights.lambda_a, weights.lambda_m) == (0.0, 0.0)
    assert (weights.lambda_u, weights.lambda_d) == (0.1, 1.0)
