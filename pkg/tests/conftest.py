import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_hurwitz(rng: np.random.Generator, d: int, margin: float = 0.2) -> np.ndarray:
    """Random non-symmetric matrix shifted so every eigenvalue has real part >= margin."""
    M = rng.standard_normal((d, d))
    shift = margin - np.linalg.eigvals(M).real.min()
    return M + max(shift, 0.0) * np.eye(d)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
