import numpy as np
import pytest

from texdistill.data import from_spectrograms, split_spectrograms
from texdistill.frontend import featurize, synth_corpus


@pytest.fixture(scope="session")
def tiny_data():
    """Twelve 1-second recordings per class, cut into 1-second log-mel segments."""
    specs = featurize(synth_corpus(12, rng_seed=3, seconds=1.0), seconds=1.0)
    return from_spectrograms(specs, split_spectrograms(specs, seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
