import numpy as np
import pytest
import torch

from vlsatools.config import RunConfig
from vlsatools.reader import TripletReader
from vlsatools.trainer import build_model
from vlsatools.triplet_data import collate_triplets, generate_synthetic
from vlsatools.tripletfile import TripletFile


@pytest.fixture()
def triplet_file():
    return TripletFile()


@pytest.fixture()
def triplet_reader():
    return TripletReader()


@pytest.fixture()
def tiny_config():
    return RunConfig.from_preset("tiny")


@pytest.fixture()
def desk_config():
    return RunConfig.from_preset("desk")


@pytest.fixture()
def tiny_data(tiny_config):
    return generate_synthetic(
        8, 3, seed=0, mode="correlated", data_config=tiny_config.data
    )


@pytest.fixture()
def tiny_model(tiny_config):
    return build_model(tiny_config, seed=0)


@pytest.fixture()
def tiny_batch(tiny_data):
    return collate_triplets(tiny_data.triplets[:4], dtype=torch.float64)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
