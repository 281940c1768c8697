import time
from dataclasses import dataclass

import pytest

from actionsynth import classifier as clf_mod
from actionsynth import data as dataio
from actionsynth import geometry as geo
from actionsynth import model as model_mod
from actionsynth import training as training_mod


@pytest.fixture(scope="session")
def skeleton():
    return geo.standard_skeleton()


@dataclass
class AcceptanceBundle:
    """The 2-tag, 40-item overfit run shared by the acceptance criteria."""

    dataset: dataio.MotionDataset
    model: object
    classifier: object
    log: list
    train_seconds: float


@pytest.fixture(scope="session")
def acceptance_bundle():
    dataset = dataio.generate_toy_dataset(dataio.ToyDatasetConfig(
        n_tags=2, items_per_tag=20, duration_range=(16, 28), seed=0))
    model_config = model_mod.ModelConfig(
        tag_count=2, n_joints=22, context_len=6, d_model=128, d_ctrl_latent=112,
        n_heads=4, n_encoder_layers=1, n_unroll_layers=2, n_decoder_layers=3,
        ff_mult=4, dropout=0.0, max_duration=256)
    # the published hyperparameters (batch 30, lr 1e-4, activate epoch 250);
    # the accomplish epoch is clamped to the 500-epoch budget of this run
    train_config = training_mod.TrainConfig(
        epochs=500, activate_epoch=250, accomplish_epoch=500, batch_size=30,
        learning_rate=1e-4, seed=0)
    start = time.time()
    result = training_mod.train(dataset, model_config, train_config)
    train_seconds = time.time() - start
    classifier = clf_mod.train_classifier(dataset.items, 2, seed=0)
    return AcceptanceBundle(dataset=dataset, model=result.model,
                            classifier=classifier, log=result.log,
                            train_seconds=train_seconds)
