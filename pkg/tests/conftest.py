import numpy as np
import pytest

from sedfuse.core import ClassVocabulary


@pytest.fixture
def vocab4():
    return ClassVocabulary(("Cat", "Dog", "Dishes", "Speech"))


@pytest.fixture
def vocab10():
    return ClassVocabulary(tuple(f"event_{i:02d}" for i in range(10)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
