import numpy as np
import pytest

from bibranch import OpRecorder, make_context


@pytest.fixture
def ctx():
    """Small context: 64 slots, plenty of depth."""
    return make_context(128, 12, 2.0 ** 30)


@pytest.fixture
def big_ctx():
    """Production-sized context (N = 2^14, 8192 slots)."""
    return make_context(1 << 14, 12, 2.0 ** 30)


@pytest.fixture
def rec():
    return OpRecorder()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
