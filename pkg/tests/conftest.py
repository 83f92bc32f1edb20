import numpy as np
import pytest

from mran.models.config_model import ExperimentConfig
from mran.network import ModelSpec, init_model
from mran.synthetic import synth_generate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_spec():
    return ModelSpec(input_dim=6, extractor_hidden=(8, 5), shared_dim=4, domain_dim=3, dropout=0.0)


@pytest.fixture
def tiny_model(tiny_spec):
    return init_model(3, tiny_spec, seed=7)


@pytest.fixture
def tiny_config(tmp_path, monkeypatch):
    """A fast synthetic run: small widths, few epochs"""
    monkeypatch.delenv("MRAN_DATA_DIR", raising=False)
    monkeypatch.delenv("MRAN_OUTPUT_DIR", raising=False)
    return ExperimentConfig(
        synth=True,
        synth_domains=3,
        synth_labeled=20,
        synth_unlabeled=12,
        synth_dim=6,
        extractor_hidden=(8,),
        shared_dim=4,
        domain_dim=3,
        max_epochs=2,
        batch_size=4,
        k_d=2,
        learning_rate=1e-3,
        output_dir=tmp_path / "runs",
        quiet=True,
    )


@pytest.fixture
def tiny_dataset():
    return synth_generate(num_domains=3, n_labeled=20, n_unlabeled=12, dim=6, seed=3)
