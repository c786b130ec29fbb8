import zlib

import numpy as np
import pytest

from factline.fixtures import generate_fixtures


@pytest.fixture(scope="session")
def corpus():
    return generate_fixtures(0)


class HashEncoder:
    """Deterministic unit vectors keyed by text; stands in for a trained encoder."""

    def encode(self, texts):
        rows = [np.random.default_rng(zlib.crc32(t.encode())).normal(size=16) for t in texts]
        return np.array([r / np.linalg.norm(r) for r in rows]).reshape(len(texts), 16)


@pytest.fixture
def hash_encoder():
    return HashEncoder()
