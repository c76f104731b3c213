import os
import sys
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np
import pytest

from config.logging_config import OUTPUT_DIR_ENV
from config.settings import get_settings
from src.models.data_model import ModelConfig, TrainConfig
from src.spritegen.annotations import TaskDef
from src.spritegen.dataset import generate_dataset
from src.trainer.trainer import Trainer


@pytest.fixture(autouse=True)
def output_dir(tmp_path, monkeypatch):
    """Route settings, logs and default outputs into a per-test directory."""
    out = tmp_path / "outputs"
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(out))
    get_settings.cache_clear()
    yield out
    get_settings.cache_clear()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_model_config():
    """Smallest architecture that still exercises every layer kind."""
    return ModelConfig(image_size=16, latent_dim=4, filters=[4, 4], n_annotated=6, n_total=8, hidden=4)


@pytest.fixture(scope="session")
def tiny_train_config(tiny_model_config):
    return TrainConfig(stage_epochs=(1, 1, 1), batch_size=32, seed=5, model=tiny_model_config)


@pytest.fixture(scope="session")
def session_output(tmp_path_factory):
    return tmp_path_factory.mktemp("session_outputs")


@pytest.fixture(scope="session")
def tiny_dataset(session_output):
    """100 sprites at 16x16 for the square-and-right task, generated once per session."""
    with pytest.MonkeyPatch.context() as mp:
        mp.setenv(OUTPUT_DIR_ENV, str(session_output))
        get_settings.cache_clear()
        dataset = generate_dataset(100, 16, TaskDef.parse("shape=square,x>0.5"), seed=3)
    get_settings.cache_clear()
    return dataset


@pytest.fixture(scope="session")
def trained_model(tiny_dataset, tiny_train_config, session_output):
    """A disentangled concept model after one epoch per stage; evaluation tests treat it as read-only."""
    with pytest.MonkeyPatch.context() as mp:
        mp.setenv(OUTPUT_DIR_ENV, str(session_output))
        get_settings.cache_clear()
        trainer = Trainer(tiny_train_config, tiny_dataset, session_output / "run")
        trainer.fit()
    get_settings.cache_clear()
    trainer.model.eval()
    return trainer.model


BIAS_NAMES = ("bias", "beta", "b1", "b2", "b3")


@pytest.fixture
def jitter_biases():
    """Move zero-initialized offsets to N(0, 0.1) so pre-activations sit away from LeakyReLU kinks."""
    def jitter(model, seed=0):
        rng = np.random.default_rng(seed)
        for name, param in model.named_parameters():
            if name.rsplit(".", 1)[-1] in BIAS_NAMES:
                param.data[...] = rng.normal(0.0, 0.1, param.shape)
        return model
    return jitter

