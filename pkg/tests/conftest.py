"""Shared fixtures. Keeps BLAS single-threaded before numpy loads so every
numeric result in the suite is reproducible bit for bit."""

import os

for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import pytest
from hypothesis import settings

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def tiny_dataset():
    """Four small deterministic scenes shared by the slower integration tests."""
    from regioncount.data import SceneConfig, synth_dataset
    return synth_dataset(SceneConfig(seed=7), 4)


@pytest.fixture()
def tiny_model_cfg():
    from regioncount.labeling import LabelConfig
    from regioncount.model import ModelConfig
    from regioncount.rram import RramConfig
    return ModelConfig(channels=(2, 3, 4), head_width=4,
                       rram=RramConfig(nodes=2, dim=4, gcn_layers=1),
                       label=LabelConfig(r=8), init_scheme="fan_in")
