from __future__ import annotations

import numpy as np
import pytest

from tempt import model


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


@pytest.fixture(scope="session")
def tiny_spec():
    return model.ModelSpec(input_hw=8, stages=((4, 1), (8, 1)), num_classes=8, head_hidden=8, head_scale=16.0)


@pytest.fixture(scope="session")
def tiny_params(tiny_spec):
    return model.build_model(tiny_spec, seed=7)
