import sys
from pathlib import Path

import numpy as np
import pytest

# Make the sibling oracles module importable from every test file.
sys.path.insert(0, str(Path(__file__).parent))

from crosscam import SynthSpec, generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_corpus():
    """Small three-camera corpus shared by fast tests."""
    spec = SynthSpec(n_identities=24, n_cameras=3, images_per_person=4, seed=11)
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def tiny_train(tiny_corpus):
    return tiny_corpus["train"]
