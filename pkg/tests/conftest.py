import numpy as np
import pytest

from fiapsim.model import builtin


@pytest.fixture
def gl2():
    return builtin("gl_excitatory", K=2, mu=1.0, r=1.0, b=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
