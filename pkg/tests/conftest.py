import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from _textures import texture_corpus  # noqa: E402

from latent_codec import LatentLayout, LinearCodecModel  # noqa: E402


def identity_model(layout: LatentLayout) -> LinearCodecModel:
    """Orthonormal model with trivial weights; valid for size/format tests."""
    patch_dim = 3 * layout.factor * layout.factor
    comp = np.zeros((layout.channels, patch_dim), dtype=np.float32)
    comp[np.arange(layout.channels), np.arange(layout.channels)] = 1.0
    return LinearCodecModel(layout, np.zeros(patch_dim, dtype=np.float32), comp)


@pytest.fixture(scope="session")
def train_corpus():
    return texture_corpus(seed=101, count=24)


@pytest.fixture(scope="session")
def heldout_corpus():
    return texture_corpus(seed=202, count=20)
